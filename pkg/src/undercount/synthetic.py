"""Synthetic data generators and small identifiability test beds.

The full simulator draws covariates for a panel of schools, builds
latent incidence and reporting rates through the same linear predictors
the model fits, and thins latent counts into reported ones. Reporting
can deviate from record-level independence through two alternative
schemes (exchangeably correlated decisions, or strictly pairwise
reporting) that keep the marginal reporting probability at p while
breaking the Binomial assumption.

The two toy generators strip the model to its identifiable core: an
i.i.d. Poisson-thinning pair (lambda0, p0) whose product is the only
well-identified function of the parameters, and a covariate pair whose
slopes are identified while the intercepts stay entangled.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import trapezoid
from scipy.special import betaln, expit, gammaln, log_expit, logit

from .data import Dataset, SchoolYearRecord
from .priors import PriorSpec
from .util import TAG_SIM, TAG_TOY, substream


# ---------------------------------------------------------------------------
# reporting schemes
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Independent:
    """Each of the z events reports independently with probability p."""

    name = "independent"


@dataclass(frozen=True)
class Exchangeable:
    """Reporting decisions are exchangeably correlated with pairwise corr rho."""

    rho: float = 0.05
    name = "exchangeable"

    def __post_init__(self):
        if not 0.0 <= self.rho <= 1.0:
            raise ValueError("rho must lie in [0, 1]")


@dataclass(frozen=True)
class Pairwise:
    """Events report in pairs: both or neither of each pair, singleton alone."""

    name = "pairwise"


def correlated_bernoulli_sum(n: int, p: float, rho: float, rng: np.random.Generator) -> int:
    """Sum of n exchangeable Bernoulli(p) with pairwise correlation exactly rho.

    One-factor construction: Y_k = B_k * W + (1 - B_k) * X_k with a shared
    W ~ Bern(p), independent X_k ~ Bern(p), and mixing B_k ~ Bern(sqrt(rho)).
    Each Y_k is Bernoulli(p) marginally and cov(Y_j, Y_k) = rho * p * (1 - p).
    rho = 0 reduces to Binomial(n, p), rho = 1 to n * W.
    """
    if n < 0:
        raise ValueError("n must be >= 0")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    if not 0.0 <= rho <= 1.0:
        raise ValueError("rho must lie in [0, 1]")
    if n == 0:
        return 0
    w = rng.random() < p
    b = rng.random(n) < math.sqrt(rho)
    x = rng.random(n) < p
    return int(np.where(b, w, x).sum())


def pairwise_report(z: int, p: float, rng: np.random.Generator) -> int:
    """Reported count when events arrive in pairs that report jointly.

    floor(z / 2) pairs each report both members with probability p; a
    leftover singleton reports alone with probability p. The marginal
    per-event reporting probability stays p, but reported counts move in
    steps of two.
    """
    if z < 0:
        raise ValueError("z must be >= 0")
    if not 0.0 <= p <= 1.0:
        raise ValueError("p must lie in [0, 1]")
    pairs = z // 2
    out = 2 * int(rng.binomial(pairs, p)) if pairs else 0
    if z % 2:
        out += int(rng.binomial(1, p))
    return out


# ---------------------------------------------------------------------------
# full-model simulator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class SimCoeffs:
    """True coefficient values; defaults sit at a realistic campus scale."""

    beta0: tuple = (-4.54, -4.40, -4.32)  # urban, suburban, rural
    beta1: float = 0.82
    beta2: float = -4.05
    alpha0: float = -1.43
    alpha1: float = -1.97
    alpha2: float = -2.48
    alpha3: float = 0.49
    alpha4: float = -3.00


@dataclass(frozen=True)
class SimSpec:
    n_schools: int = 50
    years: tuple = (2014, 2015, 2016, 2017, 2018, 2019)
    seed: int = 0
    coeffs: SimCoeffs = field(default_factory=SimCoeffs)
    offsets: PriorSpec = field(default_factory=PriorSpec)
    scheme: object = field(default_factory=Independent)
    # covariate generators
    students_range: tuple = (250, 40000)       # log-uniform
    frac_women_center: float = 0.57
    frac_women_sd: float = 0.12
    pell_beta: tuple = (2.0, 3.5)
    urbanization_probs: tuple = (0.45, 0.35, 0.20)
    assoc_rate: float = 0.13
    religious_rate: float = 0.07
    # Subtract the sampled mean from the school effects so the realized
    # panel-wide levels equal the nominal intercepts. Recovery studies want
    # this: otherwise the luck of 50-200 effect draws shifts the global
    # incidence/reporting split by O(scale/sqrt(S)) and that, not the model,
    # dominates the spread of whatever is being measured.
    center_school_effects: bool = False

    def __post_init__(self):
        if self.n_schools < 1:
            raise ValueError("n_schools must be >= 1")
        if not self.years:
            raise ValueError("years must be non-empty")
        if abs(sum(self.urbanization_probs) - 1.0) > 1e-9:
            raise ValueError("urbanization_probs must sum to 1")


@dataclass
class SimOutput:
    """Simulated records plus the ground truth behind them."""

    data: Dataset
    lam: np.ndarray
    p: np.ndarray
    z: np.ndarray
    spec: SimSpec

    def truth_frame(self):
        import pandas as pd
        return pd.DataFrame({
            "school_id": [r.school_id for r in self.data.records],
            "year": [r.year for r in self.data.records],
            "lambda_true": self.lam,
            "p_true": self.p,
            "z_true": self.z,
        })


def _simulate_panel(spec: SimSpec, rng: np.random.Generator):
    """Covariates, latent rates, and latent counts; reporting comes later."""
    S, years = spec.n_schools, spec.years
    width = max(4, len(str(S)))
    lo, hi = spec.students_range
    urb_s = rng.choice([1, 2, 3], size=S, p=list(spec.urbanization_probs))
    assoc_s = (rng.random(S) < spec.assoc_rate).astype(int)
    relig_s = (rng.random(S) < spec.religious_rate).astype(int)
    pop_s = np.exp(rng.uniform(math.log(lo), math.log(hi), S))
    fw_s = np.clip(rng.normal(spec.frac_women_center, spec.frac_women_sd, S), 0.01, 0.99)
    pell_s = rng.beta(*spec.pell_beta, size=S)
    gamma_s = rng.normal(0.0, spec.offsets.gamma_scale, S)
    eps_s = rng.normal(0.0, spec.offsets.epsilon_scale, S)
    if spec.center_school_effects and S > 1:
        gamma_s = gamma_s - gamma_s.mean()
        eps_s = eps_s - eps_s.mean()

    rows = []
    for i in range(S):
        sid = f"S{i:0{width}d}"
        for year in years:
            students = max(5, int(round(pop_s[i] * math.exp(rng.normal(0.0, 0.05)))))
            fw = float(np.clip(fw_s[i] + rng.normal(0.0, 0.01), 0.0, 1.0))
            pell = float(np.clip(pell_s[i] + rng.normal(0.0, 0.02), 0.0, 1.0))
            delta = rng.normal(0.0, spec.offsets.delta_scale)
            eta = rng.normal(0.0, spec.offsets.eta_scale)
            rows.append((sid, i, year, students, fw, pell, delta, eta))
    pell_median = float(np.median([r[5] for r in rows]))

    c = spec.coeffs
    lam = np.empty(len(rows))
    p = np.empty(len(rows))
    for j, (sid, i, year, students, fw, pell, delta, eta) in enumerate(rows):
        L = (c.beta0[urb_s[i] - 1] + c.beta1 * math.log(students)
             + c.beta2 * (fw - 0.5) ** 2 + eps_s[i] + eta)
        M = (c.alpha0 + c.alpha1 * assoc_s[i] + c.alpha2 * relig_s[i]
             + c.alpha3 * (fw - 0.5) + c.alpha4 * (pell - pell_median)
             + gamma_s[i] + delta)
        lam[j] = math.exp(L)
        p[j] = expit(M)
    z = rng.poisson(lam)
    meta = {
        "rows": rows,
        "urb_s": urb_s, "assoc_s": assoc_s, "relig_s": relig_s,
    }
    return meta, lam, p, z


def _report_counts(z: np.ndarray, p: np.ndarray, scheme, rng: np.random.Generator) -> np.ndarray:
    if isinstance(scheme, Independent):
        return rng.binomial(z, p)
    if isinstance(scheme, Exchangeable):
        return np.array([correlated_bernoulli_sum(int(zi), float(pi), scheme.rho, rng)
                         for zi, pi in zip(z, p)], dtype=np.int64)
    if isinstance(scheme, Pairwise):
        return np.array([pairwise_report(int(zi), float(pi), rng)
                         for zi, pi in zip(z, p)], dtype=np.int64)
    raise TypeError(f"unknown reporting scheme {scheme!r}")


def _build_output(meta, lam, p, z, x, spec: SimSpec) -> SimOutput:
    records = []
    for (sid, i, year, students, fw, pell, _, _), xi in zip(meta["rows"], x):
        records.append(SchoolYearRecord(
            school_id=sid, year=year, reported=int(xi),
            urbanization=int(meta["urb_s"][i]), students=students,
            frac_women=fw, pell_frac=pell,
            assoc_only=int(meta["assoc_s"][i]), religious=int(meta["relig_s"][i]),
        ))
    data = Dataset.from_records(records)
    return SimOutput(data=data, lam=lam, p=p, z=z.astype(np.int64), spec=spec)


def simulate_full(spec: SimSpec | None = None) -> SimOutput:
    """Simulate a full panel under the spec's reporting scheme."""
    spec = spec if spec is not None else SimSpec()
    rng = substream(spec.seed, TAG_SIM)
    meta, lam, p, z = _simulate_panel(spec, rng)
    x = _report_counts(z, p, spec.scheme, rng)
    return _build_output(meta, lam, p, z, x, spec)


def _scheme_key(scheme) -> str:
    if isinstance(scheme, Exchangeable):
        return f"exchangeable_{scheme.rho:g}"
    return scheme.name


def simulate_reporting_study(spec: SimSpec, schemes) -> dict:
    """One shared panel (same lambda, p, z), reported under several schemes.

    Holding the latent side fixed isolates the effect of the reporting
    mechanism; each scheme gets its own reporting substream.
    """
    rng = substream(spec.seed, TAG_SIM)
    meta, lam, p, z = _simulate_panel(spec, rng)
    out = {}
    for k, scheme in enumerate(schemes):
        scheme_rng = substream(spec.seed, TAG_SIM, k + 1)
        x = _report_counts(z, p, scheme, scheme_rng)
        out[_scheme_key(scheme)] = _build_output(
            meta, lam, p, z, x, replace(spec, scheme=scheme))
    return out


def reporting_study_from_truth(data: Dataset, z, p, schemes, seed: int = 0) -> dict:
    """Reported datasets for a fixed latent panel under several schemes.

    Counterpart of simulate_reporting_study for the case where the true
    counts and reporting rates are taken as given, typically posterior
    estimates from an earlier fit, rather than drawn fresh. Covariates
    come from `data`; only the reported column changes.
    """
    z = np.asarray(z)
    p = np.asarray(p, dtype=np.float64)
    if z.shape != (data.n_records,) or p.shape != (data.n_records,):
        raise ValueError("z and p must have one entry per record")
    if not np.issubdtype(z.dtype, np.integer) or np.any(z < 0):
        raise ValueError("z must be non-negative integers")
    if np.any((p < 0.0) | (p > 1.0)) or not np.all(np.isfinite(p)):
        raise ValueError("p must lie in [0, 1]")
    out = {}
    for k, scheme in enumerate(schemes):
        rng = substream(seed, TAG_SIM, k + 1)
        x = _report_counts(z, p, scheme, rng)
        records = [replace(r, reported=int(xi)) for r, xi in zip(data.records, x)]
        out[_scheme_key(scheme)] = Dataset.from_records(records)
    return out


def default_benchmark(seed: int = 0) -> SimOutput:
    """The bundled 50-school, 6-year benchmark panel."""
    return simulate_full(SimSpec(seed=seed))


# ---------------------------------------------------------------------------
# toys
# ---------------------------------------------------------------------------

def toy_iid(lam0: float, p0: float, n: int, seed: int = 0):
    """n i.i.d. records: z ~ Poisson(lam0) thinned by p0. Returns (x, z)."""
    if lam0 <= 0:
        raise ValueError("lam0 must be positive")
    if not 0.0 <= p0 <= 1.0:
        raise ValueError("p0 must lie in [0, 1]")
    rng = substream(seed, TAG_TOY)
    z = rng.poisson(lam0, n)
    x = rng.binomial(z, p0)
    return x, z


@dataclass
class ToyData:
    v: np.ndarray
    w: np.ndarray
    x: np.ndarray
    z: np.ndarray
    lam: np.ndarray
    p: np.ndarray


def toy_covariate(beta0: float, beta: float, alpha0: float, alpha: float,
                  n: int, seed: int = 0, covariate_rng=None) -> ToyData:
    """n records with one incidence covariate v and one reporting covariate w.

    log lambda = beta0 + beta * v, logit p = alpha0 + alpha * w, with
    v, w i.i.d. standard normal unless ``covariate_rng`` supplies them as
    a callable (rng, n) -> (v, w).
    """
    rng = substream(seed, TAG_TOY)
    if covariate_rng is None:
        v = rng.standard_normal(n)
        w = rng.standard_normal(n)
    else:
        v, w = covariate_rng(rng, n)
    lam = np.exp(beta0 + beta * v)
    p = expit(alpha0 + alpha * w)
    z = rng.poisson(lam)
    x = rng.binomial(z, p)
    return ToyData(v=v, w=w, x=x, z=z, lam=lam, p=p)


@dataclass(frozen=True)
class ToyPrior:
    """Priors for the toys: lognormal rate, Beta-pushforward reporting."""

    log_rate_loc: float = math.log(5.0)
    log_rate_scale: float = 0.5
    report_a: float = 2.0
    report_b: float = 6.0
    slope_scale: float = 1.0  # used by the covariate toy only

    def __post_init__(self):
        if self.log_rate_scale <= 0 or self.report_a <= 0 or self.report_b <= 0 or self.slope_scale <= 0:
            raise ValueError("prior scales and Beta parameters must be positive")


def _logit_beta_logpdf(m, a: float, b: float):
    """Density of logit(p) when p ~ Beta(a, b): a log sig(m) + b log sig(-m) - log B(a, b)."""
    return a * log_expit(m) + b * log_expit(-m) - betaln(a, b)


class ToyIidTarget:
    """Posterior for (log lam0, logit p0) given i.i.d. thinned counts.

    Works off the sufficient statistics (n, sum x), so the gradient cost
    is independent of n.
    """

    dim = 2

    def __init__(self, x, prior: ToyPrior | None = None):
        x = np.asarray(x)
        if np.any(x < 0):
            raise ValueError("counts must be non-negative")
        self.n = x.size
        self.sum_x = float(x.sum())
        self.prior = prior if prior is not None else ToyPrior()
        self._lgamma = float(np.sum(gammaln(x + 1.0)))

    def logp_and_grad(self, theta):
        # numpy scalars: extreme points overflow to inf instead of raising
        l, m = np.asarray(theta, dtype=np.float64)
        pr = self.prior
        with np.errstate(over="ignore", invalid="ignore"):
            sig = expit(m)
            rate_total = self.n * np.exp(l) * sig
            loglik = self.sum_x * (l + log_expit(m)) - rate_total - self._lgamma
            d_l = self.sum_x - rate_total
            d_m = (self.sum_x - rate_total) * (1.0 - sig)
            zl = (l - pr.log_rate_loc) / pr.log_rate_scale
            logp = (loglik - 0.5 * zl * zl - math.log(pr.log_rate_scale)
                    - 0.5 * math.log(2 * math.pi)
                    + _logit_beta_logpdf(m, pr.report_a, pr.report_b))
            d_l += -zl / pr.log_rate_scale
            d_m += pr.report_a * (1.0 - sig) - pr.report_b * sig
        return float(logp), np.array([d_l, d_m])

    def initial_point(self, rng, scale: float = 0.1):
        pr = self.prior
        center = np.array([pr.log_rate_loc, float(logit(pr.report_a / (pr.report_a + pr.report_b)))])
        return center + rng.normal(0.0, scale, 2)

    @staticmethod
    def lam_p(draws):
        """Map draws (n, 2) back to (lam0, p0)."""
        return np.exp(draws[:, 0]), expit(draws[:, 1])


class ToyCovariateTarget:
    """Posterior for (beta0, beta, alpha0, alpha) in the covariate toy."""

    dim = 4

    def __init__(self, data: ToyData, prior: ToyPrior | None = None):
        self.v = np.asarray(data.v, dtype=np.float64)
        self.w = np.asarray(data.w, dtype=np.float64)
        self.x = np.asarray(data.x, dtype=np.float64)
        self.prior = prior if prior is not None else ToyPrior()
        self._lgamma = float(np.sum(gammaln(self.x + 1.0)))

    def logp_and_grad(self, theta):
        b0, b, a0, a = np.asarray(theta, dtype=np.float64)
        pr = self.prior
        L = b0 + b * self.v
        M = a0 + a * self.w
        sig = expit(M)
        with np.errstate(over="ignore", invalid="ignore"):
            rate = np.exp(L) * sig
            loglik = float(np.dot(self.x, L + log_expit(M)) - rate.sum() - self._lgamma)
            gL = self.x - rate
            gM = gL * (1.0 - sig)
            zb = (b0 - pr.log_rate_loc) / pr.log_rate_scale
            logp = (loglik
                    - 0.5 * zb * zb - math.log(pr.log_rate_scale) - 0.5 * math.log(2 * math.pi)
                    - 0.5 * (b / pr.slope_scale) ** 2 - math.log(pr.slope_scale) - 0.5 * math.log(2 * math.pi)
                    + float(_logit_beta_logpdf(a0, pr.report_a, pr.report_b))
                    - 0.5 * (a / pr.slope_scale) ** 2 - math.log(pr.slope_scale) - 0.5 * math.log(2 * math.pi))
            sig0 = expit(a0)
            grad = np.array([
                gL.sum() - zb / pr.log_rate_scale,
                float(np.dot(gL, self.v)) - b / pr.slope_scale ** 2,
                gM.sum() + pr.report_a * (1.0 - sig0) - pr.report_b * sig0,
                float(np.dot(gM, self.w)) - a / pr.slope_scale ** 2,
            ])
        return logp, grad

    def initial_point(self, rng, scale: float = 0.1):
        pr = self.prior
        center = np.array([pr.log_rate_loc, 0.0,
                           float(logit(pr.report_a / (pr.report_a + pr.report_b))), 0.0])
        return center + rng.normal(0.0, scale, 4)


def conditional_report_sd(product: float, prior: ToyPrior | None = None,
                          n_grid: int = 20001) -> float:
    """Posterior-floor sd of p0 under the prior conditioned on lam0 * p0 = product.

    Large samples pin the product but nothing else, so the conditional
    prior p(p0 | lam0 * p0 = c) is the best any amount of data can do.
    Change of variables (lam0, p0) -> (c, p0) carries a 1/p0 Jacobian;
    the density on p0 is prior_p(p0) * prior_lam(c / p0) / p0, computed on
    a grid and normalized by quadrature.
    """
    if product <= 0:
        raise ValueError("product must be positive")
    pr = prior if prior is not None else ToyPrior()
    eps = 1e-7
    p = np.linspace(eps, 1.0 - eps, n_grid)
    lam = product / p
    log_f = (
        (pr.report_a - 1.0) * np.log(p) + (pr.report_b - 1.0) * np.log1p(-p) - betaln(pr.report_a, pr.report_b)
        - np.log(lam) - math.log(pr.log_rate_scale) - 0.5 * math.log(2 * math.pi)
        - 0.5 * ((np.log(lam) - pr.log_rate_loc) / pr.log_rate_scale) ** 2
        - np.log(p)
    )
    f = np.exp(log_f - log_f.max())
    norm = trapezoid(f, p)
    mean = trapezoid(f * p, p) / norm
    second = trapezoid(f * p * p, p) / norm
    return float(math.sqrt(max(second - mean * mean, 0.0)))


def recovery_regression(z_hat: np.ndarray, z_true: np.ndarray):
    """OLS of true latent counts on their posterior-mean estimates.

    Returns (slope, intercept). Slope near 1 and intercept near 0 mean
    the recovery is calibrated at the record level.
    """
    z_hat = np.asarray(z_hat, dtype=np.float64)
    z_true = np.asarray(z_true, dtype=np.float64)
    if z_hat.shape != z_true.shape or z_hat.ndim != 1:
        raise ValueError("z_hat and z_true must be 1-D arrays of equal length")
    if z_hat.size < 2 or np.var(z_hat) == 0.0:
        raise ValueError("estimates are degenerate; regression is undefined")
    slope, intercept = np.polyfit(z_hat, z_true, 1)
    return float(slope), float(intercept)
