"""Latent-count recovery and posterior summaries.

Conditional on a coefficient draw and the observed count x, the
unreported remainder u = z - x is Poisson((1 - p) * lambda) and does not
depend on x, so recovering the latent totals is a single exact draw per
record rather than an MCMC step. Augmenting every posterior draw this
way yields joint draws of (lambda, p, z) that all record-level and
yearly summaries are built from.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import pandas as pd
from scipy.special import expit

from .data import Dataset
from .diagnostics import summarize
from .hmc import SampleBatch
from .model import predictor_matrix
from .params import Pooling
from .util import TAG_AUGMENT, chunk_slices, substream

GLOBAL_COEFFS = (
    "beta1", "beta2", "beta0[1]", "beta0[2]", "beta0[3]",
    "alpha0", "alpha1", "alpha2", "alpha3", "alpha4",
)


def sample_unreported(x: int, lam: float, p: float, rng: np.random.Generator) -> int:
    """Draw the unreported remainder for one record given (x, lambda, p).

    The conditional of u = z - x is Poisson((1 - p) * lambda); x enters
    the signature only because callers naturally hold it alongside.
    """
    if x < 0:
        raise ValueError("x must be >= 0")
    if not np.isfinite(lam) or lam <= 0:
        raise ValueError("lam must be finite and positive")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    return int(rng.poisson((1.0 - p) * lam))


@dataclass
class AugmentedBatch:
    """Per-draw, per-record latent quantities aligned with a SampleBatch."""

    lam: np.ndarray  # (n_draws, n_records)
    p: np.ndarray
    u: np.ndarray    # unreported remainders
    z: np.ndarray    # x + u
    batch: SampleBatch
    data: Dataset

    @property
    def n_draws(self) -> int:
        return self.lam.shape[0]


def augment_batch(batch: SampleBatch, data: Dataset, seed: int | None = None,
                  chunk: int = 256) -> AugmentedBatch:
    """Recover latent totals for every posterior draw.

    Each draw gets its own seed substream, so the result is independent
    of chunking and of any parallel execution order.
    """
    if batch.layout is None:
        raise ValueError("batch carries no layout; fit it with run_chains")
    if seed is None:
        seed = batch.seed
    n = batch.n_draws
    R = data.n_records
    lam = np.empty((n, R))
    p = np.empty((n, R))
    u = np.empty((n, R), dtype=np.int64)
    x = data.x
    for sl in chunk_slices(n, chunk):
        L, M = predictor_matrix(batch.draws[sl], batch.layout, data)
        lam[sl] = np.exp(L)
        p[sl] = expit(M)
        for i in range(sl.start, sl.stop):
            rng = substream(seed, TAG_AUGMENT, i)
            u[i] = rng.poisson((1.0 - p[i]) * lam[i])
    z = x[None, :] + u
    return AugmentedBatch(lam=lam, p=p, u=u, z=z, batch=batch, data=data)


def coefficient_summary(batch: SampleBatch) -> pd.DataFrame:
    """Mean, quartiles, and R-hat for the population-level coefficients.

    Under no pooling every school has its own coefficients, so the table
    lists each school-specific component instead.
    """
    if batch.mode is Pooling.NONE:
        names = [n for n in batch.names
                 if n.split("[")[0] in ("beta0", "beta1", "beta2", "alpha0", "alpha3", "alpha4")]
    else:
        names = list(GLOBAL_COEFFS)
    return summarize(batch, names)


def percapita_scaling(beta1: float, size_ratio: float) -> float:
    """Per-capita incidence ratio between schools whose sizes differ by size_ratio.

    lambda scales as students**beta1, so per-student incidence scales as
    size_ratio**(beta1 - 1); the crowd-dilution factor reported here is
    the reciprocal, size_ratio**(1 - beta1). beta1 = 1 returns exactly 1.
    """
    if size_ratio <= 0:
        raise ValueError("size_ratio must be positive")
    return float(size_ratio ** (1.0 - beta1))


@dataclass
class YearlyAggregate:
    """Pooled draws for one calendar year."""

    year: int
    incidence_per_1000: np.ndarray  # one value per posterior draw
    reporting_rate: np.ndarray

    def summary(self) -> dict:
        out = {"year": self.year}
        for label, draws in (("incidence_per_1000", self.incidence_per_1000),
                             ("reporting_rate", self.reporting_rate)):
            qs = np.quantile(draws, [0.025, 0.25, 0.5, 0.75, 0.975])
            out[f"{label}_mean"] = float(np.mean(draws))
            for q, v in zip(("q025", "q25", "median", "q75", "q975"), qs):
                out[f"{label}_{q}"] = float(v)
        return out


def yearly_aggregates(aug: AugmentedBatch, years=None) -> list[YearlyAggregate]:
    """Per-year pooled incidence (per 1000 students) and reporting rate.

    Incidence pools latent totals over that year's records against total
    enrollment; the reporting rate is total reported over total latent.
    ``years`` defaults to the years present; a requested year with no
    records is skipped with a warning.
    """
    data = aug.data
    out = []
    for year in (data.years if years is None else years):
        idx = np.flatnonzero(data.year == year)
        if idx.size == 0:
            warnings.warn(f"year {year} has no records; skipped", stacklevel=2)
            continue
        students = float(data.students[idx].sum())
        x_total = float(data.x[idx].sum())
        z_total = aug.z[:, idx].sum(axis=1).astype(np.float64)
        incidence = 1000.0 * z_total / students
        with np.errstate(invalid="ignore"):
            reporting = np.where(z_total > 0, x_total / np.maximum(z_total, 1.0), 1.0)
        out.append(YearlyAggregate(year=year, incidence_per_1000=incidence,
                                   reporting_rate=reporting))
    return out


def yearly_frame(aggregates: list[YearlyAggregate]) -> pd.DataFrame:
    return pd.DataFrame([agg.summary() for agg in aggregates])


def record_medians(aug: AugmentedBatch) -> pd.DataFrame:
    """Per-record posterior medians of incidence and reporting rate."""
    data = aug.data
    inc = 1000.0 * np.median(aug.z / data.students[None, :], axis=0)
    rep = np.median(aug.p, axis=0)
    return pd.DataFrame({
        "school_id": [r.school_id for r in data.records],
        "year": [r.year for r in data.records],
        "reported": data.x,
        "students": data.students.astype(np.int64),
        "incidence_per_1000_median": inc,
        "reporting_rate_median": rep,
    })
