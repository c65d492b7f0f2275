"""Convergence diagnostics: split R-hat, autocorrelation-based ESS, summaries."""

from __future__ import annotations

import numpy as np
import pandas as pd

from .hmc import SampleBatch


def split_rhat(chains: np.ndarray) -> float:
    """Potential scale reduction with each chain split in half.

    Input shape (n_chains, n_iters). Identical constant chains have no
    within variance; that degenerate case returns +inf as a sentinel
    rather than dividing by zero.
    """
    arr = np.asarray(chains, dtype=np.float64)
    if arr.ndim != 2:
        raise ValueError("expected a 2-D array (chains, iterations)")
    m, n = arr.shape
    if n < 4:
        raise ValueError("need at least 4 iterations per chain to split")
    half = n // 2
    halves = np.concatenate([arr[:, :half], arr[:, half:2 * half]], axis=0)
    within = np.mean(np.var(halves, axis=1, ddof=1))
    between = half * np.var(np.mean(halves, axis=1), ddof=1)
    if within == 0.0:
        return float("inf")
    var_hat = (half - 1) / half * within + between / half
    return float(np.sqrt(var_hat / within))


def ess(draws: np.ndarray) -> float:
    """Effective sample size of one sequence via Geyer-truncated autocovariance.

    Pairs of autocorrelations are summed while the pair sums stay
    positive (and are forced non-increasing), then ESS = n / tau. A
    constant sequence returns 0.0 as a sentinel.
    """
    x = np.asarray(draws, dtype=np.float64).reshape(-1)
    n = x.size
    if n < 4:
        raise ValueError("need at least 4 draws")
    x = x - x.mean()
    if np.all(x == 0.0):
        return 0.0
    nfft = int(2 ** np.ceil(np.log2(2 * n)))
    f = np.fft.rfft(x, nfft)
    acov = np.fft.irfft(f * np.conjugate(f), nfft)[:n].real / n
    rho = acov / acov[0]
    # Geyer initial positive, monotone sequence over lag pairs
    max_pairs = n // 2
    tau = 0.0
    prev = np.inf
    for k in range(max_pairs):
        pair = rho[2 * k] + (rho[2 * k + 1] if 2 * k + 1 < n else 0.0)
        if pair <= 0.0:
            break
        pair = min(pair, prev)
        prev = pair
        tau += pair
    tau = max(2.0 * tau - 1.0, 1e-12)
    return float(n / tau)


def batch_ess(chains: np.ndarray) -> float:
    """Sum of per-chain ESS for a (n_chains, n_iters) array."""
    arr = np.atleast_2d(np.asarray(chains, dtype=np.float64))
    return float(sum(ess(row) for row in arr))


def summarize(batch: SampleBatch, names=None) -> pd.DataFrame:
    """Per-parameter table: mean, quartiles, split R-hat, ESS.

    ``names`` defaults to every named component in the batch.
    """
    if names is None:
        if not batch.names:
            raise ValueError("batch has no component names; pass names explicitly")
        names = list(batch.names)
    chains3 = batch.chain_array()
    rows = []
    for name in names:
        idx = batch.index_of(name)
        per_chain = chains3[:, :, idx]
        flat = per_chain.reshape(-1)
        q25, q50, q75 = np.quantile(flat, [0.25, 0.5, 0.75])
        rows.append({
            "parameter": name,
            "mean": float(flat.mean()),
            "q25": float(q25),
            "median": float(q50),
            "q75": float(q75),
            "rhat": split_rhat(per_chain),
            "ess": batch_ess(per_chain),
        })
    return pd.DataFrame(rows)


def max_rhat(batch: SampleBatch) -> float:
    """Largest split R-hat across every parameter in the batch."""
    chains3 = batch.chain_array()
    worst = 0.0
    for idx in range(batch.dim):
        worst = max(worst, split_rhat(chains3[:, :, idx]))
    return worst
