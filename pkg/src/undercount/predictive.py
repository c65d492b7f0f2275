"""Predictive checks, counterfactual reporting, held-out likelihood.

Prediction for a record re-noises the fitted coefficient draws: fresh
record noise (delta, eta) always, and fresh school offsets (gamma,
epsilon) when the school was not in the training data. The fresh-noise
scales come from the ``pred_*`` block of the PriorSpec.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.special import expit, gammaln, logsumexp

from .data import Dataset
from .hmc import SampleBatch
from .model import marginal_log_pmf
from .params import Pooling
from .priors import PriorSpec
from .util import TAG_CONSTANT_Z, TAG_HELDOUT, TAG_PPC, TAG_SPLIT, substream


@dataclass(frozen=True)
class HeldoutSplit:
    train: Dataset
    heldout: Dataset
    train_indices: np.ndarray
    heldout_indices: np.ndarray
    fraction: float
    seed: int


def split_heldout(data: Dataset, fraction: float = 0.2, seed: int = 0,
                  allow_new_schools: bool = False, n_new_schools: int = 0) -> HeldoutSplit:
    """Randomly hold out a fraction of records.

    By default every school keeps at least one training record (if a
    school would be held out entirely, its lowest-index record moves
    back), so the held-out slice exercises the known-school predictive
    path. Set ``allow_new_schools`` to skip that repair, or move
    ``n_new_schools`` whole schools into the held-out slice to exercise
    the fresh-school path. The held-out dataset reuses the training
    Pell median as its centering constant.
    """
    if not 0.0 < fraction <= 0.5:
        raise ValueError("fraction must lie in (0, 0.5]")
    rng = substream(seed, TAG_SPLIT)
    n = data.n_records
    k = max(1, int(round(fraction * n)))
    held = np.zeros(n, dtype=bool)
    held[rng.permutation(n)[:k]] = True

    school_idx = data.school_idx
    if n_new_schools > 0:
        if n_new_schools >= data.n_schools:
            raise ValueError("n_new_schools must leave at least one training school")
        chosen = rng.choice(data.n_schools, size=n_new_schools, replace=False)
        held[np.isin(school_idx, chosen)] = True
        protect = np.isin(school_idx, chosen)
    else:
        protect = np.zeros(n, dtype=bool)
    if not allow_new_schools:
        for s in range(data.n_schools):
            recs = np.flatnonzero(school_idx == s)
            if protect[recs].any():
                continue
            if held[recs].all():
                held[recs[0]] = False
    if held.all() or not held.any():
        raise ValueError("split left train or heldout empty; adjust fraction")

    train_idx = np.flatnonzero(~held)
    held_idx = np.flatnonzero(held)
    train_records = [data.records[i] for i in train_idx]
    pell_median = float(np.median([r.pell_frac for r in train_records]))
    train = Dataset.from_records(train_records, pell_median=pell_median)
    heldout = Dataset.from_records([data.records[i] for i in held_idx], pell_median=pell_median)
    return HeldoutSplit(train=train, heldout=heldout, train_indices=train_idx,
                        heldout_indices=held_idx, fraction=fraction, seed=seed)


def _school_map(batch: SampleBatch, heldout: Dataset) -> np.ndarray:
    """Heldout school -> training school index, -1 where the school is new."""
    if batch.school_ids is None:
        raise ValueError("batch carries no school ids; fit it with run_chains")
    index = {sid: i for i, sid in enumerate(batch.school_ids)}
    return np.array([index.get(sid, -1) for sid in heldout.school_ids], dtype=np.int64)


def _base_predictors(batch: SampleBatch, heldout: Dataset, draws: np.ndarray | None = None):
    """Predictors for held-out records without any record/fresh-school noise.

    Returns (Lbase, Mbase) of shape (n_draws, n_heldout) plus the list of
    new schools as (school_position, record_indices) pairs, in heldout
    school order.
    """
    if batch.layout is None:
        raise ValueError("batch carries no layout; fit it with run_chains")
    if draws is None:
        draws = batch.draws
    draws = np.atleast_2d(draws)
    parts = batch.layout.unpack(draws)
    smap = _school_map(batch, heldout)
    rec_map = smap[heldout.school_idx]
    known = rec_map >= 0
    safe = np.where(known, rec_map, 0)
    mode = batch.layout.mode
    if mode is Pooling.NONE:
        if not known.all():
            missing = [heldout.school_ids[s] for s in np.flatnonzero(smap < 0)]
            raise ValueError(
                "no-pooling fits have no coefficients for unseen schools: "
                + ", ".join(missing)
            )
        L = (parts["beta0"][:, rec_map] + parts["beta1"][:, rec_map] * heldout.v2
             + parts["beta2"][:, rec_map] * heldout.v3)
        M = (parts["alpha0"][:, rec_map] + parts["alpha3"][:, rec_map] * heldout.w3
             + parts["alpha4"][:, rec_map] * heldout.w4)
        return L, M, []
    L = (parts["beta0"][:, heldout.urb - 1] + parts["beta1"] * heldout.v2
         + parts["beta2"] * heldout.v3)
    M = (parts["alpha0"] + parts["alpha1"] * heldout.w1 + parts["alpha2"] * heldout.w2
         + parts["alpha3"] * heldout.w3 + parts["alpha4"] * heldout.w4)
    if mode is Pooling.PARTIAL:
        L = L + parts["epsilon"][:, safe] * known
        M = M + parts["gamma"][:, safe] * known
    new_schools = [(s, np.flatnonzero(heldout.school_idx == s))
                   for s in np.flatnonzero(smap < 0)]
    return L, M, new_schools


def _simulate_counts(l_base, m_base, new_schools, priors: PriorSpec,
                     rng: np.random.Generator, mode: Pooling) -> np.ndarray:
    """Fresh noise + thinning on top of one draw's base predictors.

    Noise order is fixed (delta, eta, then per new school gamma and
    epsilon, then z, then x) so results are reproducible per rng stream.
    """
    n = l_base.size
    m = m_base + rng.normal(0.0, priors.pred_delta_scale, n)
    l = l_base + rng.normal(0.0, priors.pred_eta_scale, n)
    if mode is Pooling.PARTIAL:
        for _, recs in new_schools:
            m[recs] += rng.normal(0.0, priors.pred_gamma_scale)
            l[recs] += rng.normal(0.0, priors.pred_epsilon_scale)
    z = rng.poisson(np.exp(l))
    return rng.binomial(z, expit(m))


def predictive_sample(batch: SampleBatch, draw_index: int, heldout: Dataset,
                      priors: PriorSpec, rng: np.random.Generator) -> np.ndarray:
    """Simulate reported counts for held-out records from one posterior draw."""
    if not 0 <= draw_index < batch.n_draws:
        raise IndexError(f"draw_index {draw_index} out of range [0, {batch.n_draws})")
    L, M, new_schools = _base_predictors(batch, heldout, batch.draws[draw_index])
    return _simulate_counts(L[0], M[0], new_schools, priors, rng, batch.layout.mode)


def _within_school_variance(x: np.ndarray, school_idx: np.ndarray, n_schools: int) -> float:
    xf = x.astype(np.float64)
    cnt = np.bincount(school_idx, minlength=n_schools)
    s1 = np.bincount(school_idx, weights=xf, minlength=n_schools)
    s2 = np.bincount(school_idx, weights=xf * xf, minlength=n_schools)
    mask = cnt >= 2
    if not mask.any():
        return 0.0
    var = (s2[mask] - s1[mask] ** 2 / cnt[mask]) / (cnt[mask] - 1)
    return float(np.sum(np.maximum(var, 0.0)))


def ppc_statistics(x: np.ndarray, school_idx: np.ndarray, n_schools: int) -> dict:
    """The four check statistics for one (real or simulated) dataset."""
    x = np.asarray(x)
    return {
        "prop_zero": float(np.mean(x == 0)),
        "prop_leq1": float(np.mean(x <= 1)),
        "total_reports": float(np.sum(x)),
        "within_school_variance": _within_school_variance(x, school_idx, n_schools),
    }


@dataclass
class PpcStat:
    name: str
    observed: float
    q025: float
    q975: float
    tail_prob: float
    draws: np.ndarray = field(repr=False)

    @property
    def inside(self) -> bool:
        return self.q025 <= self.observed <= self.q975

    def to_dict(self) -> dict:
        return {
            "observed": self.observed,
            "q025": self.q025,
            "q975": self.q975,
            "tail_prob": self.tail_prob,
            "inside_95": bool(self.inside),
            "mean": float(np.mean(self.draws)),
        }


@dataclass
class PpcReport:
    stats: dict
    n_datasets: int
    seed: int

    def to_dict(self) -> dict:
        return {
            "n_datasets": self.n_datasets,
            "seed": self.seed,
            "statistics": {name: st.to_dict() for name, st in self.stats.items()},
        }


def _tail_prob(draws: np.ndarray, observed: float) -> float:
    p_le = float(np.mean(draws <= observed))
    p_ge = float(np.mean(draws >= observed))
    return min(1.0, 2.0 * min(p_le, p_ge))


def ppc_run(batch: SampleBatch, heldout: Dataset, priors: PriorSpec,
            n_datasets: int = 1000, seed: int = 0) -> PpcReport:
    """Posterior predictive check of held-out records.

    Each replicate reuses a uniformly resampled posterior draw (with
    replacement) and fresh predictive noise, then the four statistics of
    the simulated records are compared against the observed ones.
    """
    if heldout.n_records == 0:
        raise ValueError("held-out dataset is empty")
    if n_datasets < 2:
        raise ValueError("n_datasets must be >= 2")
    L, M, new_schools = _base_predictors(batch, heldout)
    mode = batch.layout.mode
    pick = substream(seed, TAG_PPC)
    chosen = pick.integers(0, batch.n_draws, size=n_datasets)
    sims = {name: np.empty(n_datasets) for name in
            ("prop_zero", "prop_leq1", "total_reports", "within_school_variance")}
    for r in range(n_datasets):
        rng = substream(seed, TAG_PPC, r)
        s = chosen[r]
        x_sim = _simulate_counts(L[s], M[s], new_schools, priors, rng, mode)
        for name, val in ppc_statistics(x_sim, heldout.school_idx, heldout.n_schools).items():
            sims[name][r] = val
    observed = ppc_statistics(heldout.x, heldout.school_idx, heldout.n_schools)
    stats = {}
    for name, draws in sims.items():
        q025, q975 = np.quantile(draws, [0.025, 0.975])
        stats[name] = PpcStat(
            name=name, observed=observed[name], q025=float(q025), q975=float(q975),
            tail_prob=_tail_prob(draws, observed[name]), draws=draws,
        )
    return PpcReport(stats=stats, n_datasets=n_datasets, seed=seed)


@dataclass
class ConstantZReport:
    """Counterfactual: same latent totals, reporting climate re-drawn."""

    school_id: str
    base_year: int
    observed: int
    support: np.ndarray
    pmf: np.ndarray
    prob_increase: float
    prob_at_least_double: float
    mean_count: float

    def to_dict(self) -> dict:
        return {
            "school_id": self.school_id,
            "base_year": self.base_year,
            "observed": self.observed,
            "prob_increase": self.prob_increase,
            "prob_at_least_double": self.prob_at_least_double,
            "mean_count": self.mean_count,
        }


def constant_z_predictive(school_id: str, base_year: int, aug, priors: PriorSpec,
                          seed: int = 0) -> ConstantZReport:
    """Distribution of next-cycle reported counts holding latent totals fixed.

    For each posterior draw the latent total z stays at its augmented
    value while the reporting rate is re-noised (fresh delta on the
    fitted reporting predictor). The pmf is the exact Binomial mixture
    over draws, so it sums to one by construction; the degenerate case of
    a single draw is exactly Binomial(z, p_new).
    """
    data = aug.data
    batch = aug.batch
    rec = data.record_index(school_id, base_year)
    z_draws = aug.z[:, rec]
    n = z_draws.size

    parts = batch.layout.unpack(batch.draws)
    s = data.school_idx[rec]
    if batch.layout.mode is Pooling.NONE:
        m_base = (parts["alpha0"][:, s] + parts["alpha3"][:, s] * data.w3[rec]
                  + parts["alpha4"][:, s] * data.w4[rec])
    else:
        m_base = (parts["alpha0"][:, 0] + parts["alpha1"][:, 0] * data.w1[rec]
                  + parts["alpha2"][:, 0] * data.w2[rec]
                  + parts["alpha3"][:, 0] * data.w3[rec]
                  + parts["alpha4"][:, 0] * data.w4[rec])
        if batch.layout.mode is Pooling.PARTIAL:
            m_base = m_base + parts["gamma"][:, s]
    rng = substream(seed, TAG_CONSTANT_Z)
    p_new = expit(m_base + rng.normal(0.0, priors.pred_delta_scale, n))

    z_max = int(z_draws.max())
    support = np.arange(z_max + 1)
    k = support[None, :].astype(np.float64)
    zf = z_draws[:, None].astype(np.float64)
    with np.errstate(invalid="ignore"):
        log_pmf = (gammaln(zf + 1.0) - gammaln(k + 1.0) - gammaln(zf - k + 1.0)
                   + k * np.log(p_new[:, None]) + (zf - k) * np.log1p(-p_new[:, None]))
    log_pmf[k > zf] = -np.inf
    pmf = np.exp(log_pmf).mean(axis=0)

    x_obs = int(data.x[rec])
    prob_increase = float(pmf[x_obs + 1:].sum()) if x_obs + 1 <= z_max else 0.0
    dbl = 2 * x_obs
    prob_double = float(pmf[dbl:].sum()) if dbl <= z_max else 0.0
    return ConstantZReport(
        school_id=school_id, base_year=base_year, observed=x_obs,
        support=support, pmf=pmf,
        prob_increase=prob_increase, prob_at_least_double=prob_double,
        mean_count=float(np.dot(support, pmf)),
    )


@dataclass
class HeldoutLogLik:
    value: float
    mc_se: float
    per_draw: np.ndarray = field(repr=False)


def heldout_log_likelihood(batch: SampleBatch, heldout: Dataset, priors: PriorSpec,
                           n_inner: int = 8, seed: int = 0) -> HeldoutLogLik:
    """log p(held-out counts | training counts) by nested Monte Carlo.

    Outer average over posterior draws; inner average over fresh
    predictive noise, unbiased per record in the integrand. Every draw
    uses its own substream, so the result does not depend on evaluation
    order. The MC standard error comes from the delta method on the
    outer average.
    """
    if heldout.n_records == 0:
        raise ValueError("held-out dataset is empty")
    if n_inner < 1:
        raise ValueError("n_inner must be >= 1")
    L, M, new_schools = _base_predictors(batch, heldout)
    mode = batch.layout.mode
    n, r = L.shape
    x = heldout.x[None, :]
    per_draw = np.empty(n)
    for s in range(n):
        rng = substream(seed, TAG_HELDOUT, s)
        m = M[s][None, :] + rng.normal(0.0, priors.pred_delta_scale, (n_inner, r))
        l = L[s][None, :] + rng.normal(0.0, priors.pred_eta_scale, (n_inner, r))
        if mode is Pooling.PARTIAL:
            for _, recs in new_schools:
                m[:, recs] += rng.normal(0.0, priors.pred_gamma_scale, (n_inner, 1))
                l[:, recs] += rng.normal(0.0, priors.pred_epsilon_scale, (n_inner, 1))
        log_p_rec = marginal_log_pmf(x, np.exp(l), expit(m))
        per_draw[s] = float(np.sum(logsumexp(log_p_rec, axis=0) - np.log(n_inner)))
    value = float(logsumexp(per_draw) - np.log(n))
    ratios = np.exp(per_draw - per_draw.max())
    mc_se = float(np.std(ratios, ddof=1) / np.sqrt(n) / np.mean(ratios))
    return HeldoutLogLik(value=value, mc_se=mc_se, per_draw=per_draw)
