"""Hamiltonian Monte Carlo with dual-averaging step size and diagonal mass.

The integrator is plain leapfrog with a jittered step count. Warmup
follows the usual three-phase schedule: an initial fast window adapting
only the step size, a sequence of doubling windows that also estimate a
diagonal mass matrix from the warmup draws, and a final fast window to
settle the step size against the last mass update. A transition whose
energy error exceeds ``max_energy_error`` nats (or goes non-finite) is a
divergence and is rejected outright.

Chains are seeded from per-chain substreams of the run seed, so running
them in a thread pool gives bit-identical results to running them one by
one.
"""

from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .model import CountModel
from .params import ParameterLayout, Pooling
from .priors import PriorSpec
from .util import TAG_CHAIN, substream


class SamplingError(RuntimeError):
    """Raised when a chain cannot produce usable draws (e.g. all divergent)."""


@dataclass
class HmcConfig:
    chains: int = 4
    warmup_iters: int = 1000
    sampling_iters: int = 1000
    leapfrog_steps: int = 32
    step_jitter: float = 0.2
    target_accept: float = 0.8
    max_energy_error: float = 1000.0
    init_scale: float = 0.1
    seed: int = 0
    parallel: bool = True

    def __post_init__(self):
        if self.chains < 1:
            raise ValueError("chains must be >= 1")
        if self.warmup_iters < 20:
            raise ValueError("warmup_iters must be >= 20")
        if self.sampling_iters < 1:
            raise ValueError("sampling_iters must be >= 1")
        if self.leapfrog_steps < 1:
            raise ValueError("leapfrog_steps must be >= 1")
        if not 0.0 <= self.step_jitter < 1.0:
            raise ValueError("step_jitter must lie in [0, 1)")
        if not 0.0 < self.target_accept < 1.0:
            raise ValueError("target_accept must lie in (0, 1)")
        if self.seed < 0:
            raise ValueError("seed must be non-negative")


@dataclass
class ChainState:
    position: np.ndarray
    logp: float
    step_size: float
    inv_mass: np.ndarray
    rng: np.random.Generator
    divergent: bool = False
    accept_prob: float = 0.0
    energy_error: float = 0.0


def leapfrog(position, momentum, step_size, inv_mass, n_steps, grad_fn):
    """Integrate Hamilton's equations; returns (q, p, ok).

    ok is False when a non-finite gradient or state is hit, in which case
    the returned point is wherever the trajectory broke.
    """
    q = np.array(position, dtype=np.float64, copy=True)
    p = np.array(momentum, dtype=np.float64, copy=True)
    with np.errstate(over="ignore", invalid="ignore"):
        g = grad_fn(q)
        if not np.all(np.isfinite(g)):
            return q, p, False
        p += 0.5 * step_size * g
        for i in range(n_steps):
            q += step_size * (inv_mass * p)
            if not np.all(np.isfinite(q)):
                return q, p, False
            g = grad_fn(q)
            if not np.all(np.isfinite(g)):
                return q, p, False
            p += (step_size if i < n_steps - 1 else 0.5 * step_size) * g
    return q, p, True


def hmc_transition(state: ChainState, target, n_steps: int, max_energy_error: float = 1000.0) -> ChainState:
    """One Metropolis-corrected HMC transition; mutates and returns state."""
    rng = state.rng
    inv_mass = state.inv_mass
    momentum = rng.standard_normal(state.position.size) / np.sqrt(inv_mass)
    h0 = -state.logp + 0.5 * np.dot(inv_mass, momentum ** 2)

    def grad_fn(q):
        return target.logp_and_grad(q)[1]

    q1, p1, ok = leapfrog(state.position, momentum, state.step_size, inv_mass, n_steps, grad_fn)
    state.divergent = False
    state.energy_error = math.inf
    if ok:
        logp1, _ = target.logp_and_grad(q1)
        if np.isfinite(logp1):
            with np.errstate(over="ignore", invalid="ignore"):
                h1 = -logp1 + 0.5 * np.dot(inv_mass, p1 ** 2)
            state.energy_error = float(h1 - h0)
    if not math.isfinite(state.energy_error) or state.energy_error > max_energy_error:
        state.divergent = True
        state.accept_prob = 0.0
        return state
    state.accept_prob = min(1.0, math.exp(-max(0.0, state.energy_error)))
    if rng.random() < state.accept_prob:
        state.position = q1
        state.logp = logp1
    return state


class DualAveraging:
    """Nesterov dual averaging of log step size toward a target acceptance."""

    def __init__(self, step0: float, target_accept: float,
                 gamma: float = 0.05, t0: float = 10.0, kappa: float = 0.75):
        self.mu = math.log(10.0 * step0)
        self.target = target_accept
        self.gamma = gamma
        self.t0 = t0
        self.kappa = kappa
        self.t = 0
        self.h_bar = 0.0
        self.log_step = math.log(step0)
        self.log_step_bar = math.log(step0)

    def update(self, accept_prob: float) -> float:
        self.t += 1
        frac = 1.0 / (self.t + self.t0)
        self.h_bar = (1.0 - frac) * self.h_bar + frac * (self.target - accept_prob)
        self.log_step = self.mu - math.sqrt(self.t) / self.gamma * self.h_bar
        w = self.t ** (-self.kappa)
        self.log_step_bar = w * self.log_step + (1.0 - w) * self.log_step_bar
        return math.exp(self.log_step)

    @property
    def adapted_step(self) -> float:
        return math.exp(self.log_step_bar)


def find_initial_step(target, position, logp, inv_mass, rng, step0: float = 1.0) -> float:
    """Double/halve the step until one leapfrog step crosses ~50% acceptance."""

    def grad_fn(q):
        return target.logp_and_grad(q)[1]

    momentum = rng.standard_normal(position.size) / np.sqrt(inv_mass)
    h0 = -logp + 0.5 * np.dot(inv_mass, momentum ** 2)

    def log_ratio(step):
        q1, p1, ok = leapfrog(position, momentum, step, inv_mass, 1, grad_fn)
        if not ok:
            return -math.inf
        logp1, _ = target.logp_and_grad(q1)
        if not np.isfinite(logp1):
            return -math.inf
        # oversized trial steps overflow the kinetic term; that is just -inf
        with np.errstate(over="ignore"):
            return -(-logp1 + 0.5 * np.dot(inv_mass, p1 ** 2)) + h0

    step = step0
    direction = 1.0 if log_ratio(step) > math.log(0.5) else -1.0
    for _ in range(100):
        if direction * log_ratio(step) <= direction * math.log(0.5):
            break
        step *= 2.0 ** direction
        if not 1e-10 < step < 1e7:
            break
    return step


def _adaptation_schedule(warmup: int):
    """(init_end, window_ends, term_start): step-only, mass windows, step-only."""
    if warmup < 40:
        return warmup, [], warmup
    init = max(10, int(round(0.15 * warmup))) if warmup < 150 else 75
    # the terminal step-size phase restarts dual averaging under the final
    # metric, so it needs room to re-converge, not a fixed stub
    term = max(5, int(round(0.10 * warmup))) if warmup < 150 else max(50, int(round(0.15 * warmup)))
    term_start = warmup - term
    window_ends = []
    size = 25
    pos = init
    while pos < term_start:
        end = pos + size
        # absorb the tail into the last window rather than leaving a stub
        if end + 2 * size > term_start:
            end = term_start
        window_ends.append(end)
        pos = end
        size *= 2
    return init, window_ends, term_start


def _regularized_inv_mass(draws: list[np.ndarray]) -> np.ndarray:
    arr = np.asarray(draws)
    n = arr.shape[0]
    if n < 2:
        return np.ones(arr.shape[1])
    var = np.var(arr, axis=0, ddof=1)
    # shrink toward a small constant exactly as the window size warrants
    return (n / (n + 5.0)) * var + (5.0 / (n + 5.0)) * 1e-3


@dataclass
class ChainResult:
    draws: np.ndarray
    accept_rate: float
    divergences: int
    step_size: float
    inv_mass: np.ndarray


@dataclass
class SampleBatch:
    """Posterior draws from all chains, stacked chain-major.

    ``draws`` has shape (n_chains * iters_per_chain, dim); row i belongs
    to chain i // iters_per_chain. Metadata is carried so downstream
    stages (augmentation, prediction, diagnostics) need no extra context.
    """

    draws: np.ndarray
    n_chains: int
    iters_per_chain: int
    accept_rate: np.ndarray
    divergences: np.ndarray
    step_sizes: np.ndarray
    seed: int
    inv_mass: np.ndarray | None = None
    names: list[str] | None = None
    layout: ParameterLayout | None = None
    mode: Pooling | None = None
    school_ids: tuple | None = None
    _name_index: dict = field(default_factory=dict, repr=False)

    @property
    def n_draws(self) -> int:
        return self.draws.shape[0]

    @property
    def dim(self) -> int:
        return self.draws.shape[1]

    def chain_array(self) -> np.ndarray:
        return self.draws.reshape(self.n_chains, self.iters_per_chain, self.dim)

    def index_of(self, name: str) -> int:
        if not self.names:
            raise KeyError("batch has no component names")
        if not self._name_index:
            self._name_index.update({n: i for i, n in enumerate(self.names)})
        try:
            return self._name_index[name]
        except KeyError:
            raise KeyError(f"no parameter named {name!r}") from None

    def column(self, name: str) -> np.ndarray:
        return self.draws[:, self.index_of(name)]

    def per_chain(self, name: str) -> np.ndarray:
        return self.column(name).reshape(self.n_chains, self.iters_per_chain)

    def block(self, name: str) -> np.ndarray:
        if self.layout is None:
            raise KeyError("batch has no layout")
        return self.draws[:, self.layout.slice(name)]


def _run_chain(target, config: HmcConfig, chain_index: int) -> ChainResult:
    rng = substream(config.seed, TAG_CHAIN, chain_index)
    dim = target.dim
    if hasattr(target, "initial_point"):
        position = np.asarray(target.initial_point(rng, config.init_scale), dtype=np.float64)
    else:
        position = rng.normal(0.0, config.init_scale, dim)
    logp, _ = target.logp_and_grad(position)
    if not np.isfinite(logp):
        raise SamplingError(f"chain {chain_index}: non-finite log density at the initial point")
    inv_mass = np.ones(dim)
    state = ChainState(position=position, logp=logp, step_size=1.0, inv_mass=inv_mass, rng=rng)

    def jittered_steps() -> int:
        if config.step_jitter == 0.0:
            return config.leapfrog_steps
        lo, hi = 1.0 - config.step_jitter, 1.0 + config.step_jitter
        return max(1, int(round(config.leapfrog_steps * rng.uniform(lo, hi))))

    state.step_size = find_initial_step(target, state.position, state.logp, inv_mass, rng)
    averager = DualAveraging(state.step_size, config.target_accept)
    init_end, window_ends, term_start = _adaptation_schedule(config.warmup_iters)
    window: list[np.ndarray] = []
    for t in range(config.warmup_iters):
        state = hmc_transition(state, target, jittered_steps(), config.max_energy_error)
        state.step_size = averager.update(state.accept_prob)
        if init_end <= t < term_start:
            window.append(state.position)
        if window_ends and t + 1 == window_ends[0]:
            window_ends.pop(0)
            state.inv_mass = _regularized_inv_mass(window)
            window = []
            # restart step-size averaging against the new metric
            state.step_size = averager.adapted_step
            state.step_size = find_initial_step(
                target, state.position, state.logp, state.inv_mass, rng, state.step_size)
            averager = DualAveraging(state.step_size, config.target_accept)
    state.step_size = averager.adapted_step

    draws = np.empty((config.sampling_iters, dim), dtype=np.float64)
    divergences = 0
    accept_sum = 0.0
    for s in range(config.sampling_iters):
        state = hmc_transition(state, target, jittered_steps(), config.max_energy_error)
        divergences += int(state.divergent)
        accept_sum += state.accept_prob
        draws[s] = state.position
    if divergences == config.sampling_iters:
        raise SamplingError(
            f"chain {chain_index}: every sampling transition diverged "
            f"(step size {state.step_size:.3g}); the posterior is likely ill-conditioned"
        )
    return ChainResult(
        draws=draws,
        accept_rate=accept_sum / config.sampling_iters,
        divergences=divergences,
        step_size=state.step_size,
        inv_mass=state.inv_mass.copy(),
    )


def sample(target, config: HmcConfig, names: list[str] | None = None) -> SampleBatch:
    """Run HMC chains against any target exposing dim and logp_and_grad."""
    results: list[ChainResult] = [None] * config.chains  # type: ignore[list-item]
    if config.parallel and config.chains > 1:
        with ThreadPoolExecutor(max_workers=config.chains) as pool:
            futures = [pool.submit(_run_chain, target, config, c) for c in range(config.chains)]
            results = [f.result() for f in futures]
    else:
        results = [_run_chain(target, config, c) for c in range(config.chains)]
    draws = np.concatenate([r.draws for r in results], axis=0)
    return SampleBatch(
        draws=draws,
        n_chains=config.chains,
        iters_per_chain=config.sampling_iters,
        accept_rate=np.array([r.accept_rate for r in results]),
        divergences=np.array([r.divergences for r in results]),
        step_sizes=np.array([r.step_size for r in results]),
        seed=config.seed,
        inv_mass=np.stack([r.inv_mass for r in results]),
        names=names,
    )


def run_chains(data: Dataset, priors: PriorSpec | None = None,
               mode: Pooling = Pooling.PARTIAL,
               config: HmcConfig | None = None) -> SampleBatch:
    """Fit the count model and return a batch annotated with its layout."""
    config = config if config is not None else HmcConfig()
    model = CountModel(data, priors, mode)
    batch = sample(model, config, names=model.component_names())
    batch.layout = model.layout
    batch.mode = mode
    batch.school_ids = data.school_ids
    return batch
