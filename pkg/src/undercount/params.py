"""Pooling modes and the flat parameter layout used by the sampler.

The sampler works on one flat vector; the layout names contiguous blocks
and maps them back to coefficients. Block order is fixed per mode so a
draw matrix is meaningful on its own.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np


class Pooling(enum.Enum):
    PARTIAL = "partial"
    COMPLETE = "complete"
    NONE = "none"

    @classmethod
    def from_string(cls, s: str) -> "Pooling":
        key = str(s).strip().lower()
        for mode in cls:
            if mode.value == key:
                return mode
        raise ValueError(f"unknown pooling mode {s!r}; expected partial, complete, or none")


# Blocks sized by school count (S) or record count (R); scalars are 1.
_BLOCKS = {
    Pooling.PARTIAL: (
        ("beta0", 3), ("beta1", 1), ("beta2", 1),
        ("alpha0", 1), ("alpha1", 1), ("alpha2", 1), ("alpha3", 1), ("alpha4", 1),
        ("gamma", "S"), ("epsilon", "S"), ("delta", "R"), ("eta", "R"),
    ),
    Pooling.COMPLETE: (
        ("beta0", 3), ("beta1", 1), ("beta2", 1),
        ("alpha0", 1), ("alpha1", 1), ("alpha2", 1), ("alpha3", 1), ("alpha4", 1),
        ("delta", "R"), ("eta", "R"),
    ),
    Pooling.NONE: (
        ("beta0", "S"), ("beta1", "S"), ("beta2", "S"),
        ("alpha0", "S"), ("alpha3", "S"), ("alpha4", "S"),
        ("delta", "R"), ("eta", "R"),
    ),
}


@dataclass(frozen=True)
class ParameterLayout:
    mode: Pooling
    n_schools: int
    n_records: int
    blocks: tuple  # ((name, offset, size), ...)
    size: int

    @classmethod
    def build(cls, mode: Pooling, n_schools: int, n_records: int) -> "ParameterLayout":
        if n_schools < 1 or n_records < 1:
            raise ValueError("layout needs at least one school and one record")
        blocks = []
        offset = 0
        for name, size in _BLOCKS[mode]:
            size = {"S": n_schools, "R": n_records}.get(size, size)
            blocks.append((name, offset, size))
            offset += size
        return cls(mode=mode, n_schools=n_schools, n_records=n_records,
                   blocks=tuple(blocks), size=offset)

    def block_names(self) -> list[str]:
        return [name for name, _, _ in self.blocks]

    def slice(self, name: str) -> slice:
        for bname, offset, size in self.blocks:
            if bname == name:
                return slice(offset, offset + size)
        raise KeyError(f"no block {name!r} in {self.mode.value} layout")

    def unpack(self, theta: np.ndarray) -> dict:
        """Split a flat vector into named block views (no copies)."""
        theta = np.asarray(theta)
        if theta.shape[-1] != self.size:
            raise ValueError(f"expected vector of length {self.size}, got {theta.shape[-1]}")
        return {name: theta[..., off:off + size] for name, off, size in self.blocks}

    def pack(self, parts: dict) -> np.ndarray:
        """Inverse of unpack; exact bit-for-bit round trip."""
        missing = [name for name, _, _ in self.blocks if name not in parts]
        if missing:
            raise KeyError(f"missing blocks: {', '.join(missing)}")
        out = np.empty(self.size, dtype=np.float64)
        for name, off, size in self.blocks:
            arr = np.asarray(parts[name], dtype=np.float64).reshape(-1)
            if arr.size != size:
                raise ValueError(f"block {name!r} expects size {size}, got {arr.size}")
            out[off:off + size] = arr
        return out

    def component_names(self, school_ids=None, record_keys=None) -> list[str]:
        """Flat per-component names, e.g. beta0[2], gamma[S0007], delta[S0007:2015]."""
        names: list[str] = []
        for name, _, size in self.blocks:
            if size == 1:
                names.append(name)
            elif name == "beta0" and self.mode is not Pooling.NONE:
                names.extend(f"beta0[{k}]" for k in (1, 2, 3))
            elif name in ("delta", "eta"):
                labels = record_keys if record_keys is not None else range(self.n_records)
                names.extend(f"{name}[{lab}]" for lab in labels)
            else:
                labels = school_ids if school_ids is not None else range(self.n_schools)
                names.extend(f"{name}[{lab}]" for lab in labels)
        return names
