"""Small shared helpers: substream seeding and JSON coercion."""

from __future__ import annotations

import numpy as np

# Fixed tags so that every stochastic stage of a run draws from its own
# substream of the user seed. Values are arbitrary but must never change.
TAG_CHAIN = 1
TAG_AUGMENT = 2
TAG_SPLIT = 3
TAG_PPC = 4
TAG_HELDOUT = 5
TAG_CONSTANT_Z = 6
TAG_SIM = 7
TAG_TOY = 8
TAG_PREDICT = 9


def substream(seed: int, *path: int) -> np.random.Generator:
    """Return a Generator for the substream of ``seed`` identified by ``path``.

    Streams with distinct paths are statistically independent, and the
    mapping is deterministic, so parallel consumers can be seeded by
    position instead of by order of execution.
    """
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence([int(seed), *map(int, path)])))


def jsonable(obj):
    """Recursively convert numpy scalars/arrays so json.dump accepts them."""
    if isinstance(obj, dict):
        return {str(k): jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, np.integer, np.bool_)):
        return obj.item()
    return obj


def chunk_slices(n: int, size: int):
    """Yield slices covering range(n) in blocks of at most ``size``."""
    for start in range(0, n, size):
        yield slice(start, min(start + size, n))
