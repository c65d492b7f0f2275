"""Marginalized thinning model: likelihood, prior, posterior, gradient.

The generative story per record is z ~ Poisson(lambda), x | z ~
Binomial(z, p). Summing z out gives x ~ Poisson(lambda * p) exactly, so
the posterior over coefficients never touches the latent z. With
L = log(lambda) and M = logit(p), each record contributes

    x * (L + log sigma(M)) - exp(L) * sigma(M) - log(x!)

and the partials are dL = x - exp(L) sigma(M) and dM = dL * (1 - sigma(M)),
which accumulate into coefficient gradients by the linearity of the
predictors. Everything here is exact; no quadrature, no truncation.
"""

from __future__ import annotations

import numpy as np
from scipy.special import expit, gammaln, log_expit

from .data import Dataset
from .params import ParameterLayout, Pooling
from .priors import PriorSpec

_LOG_2PI = float(np.log(2.0 * np.pi))


def marginal_log_pmf(x, lam, p):
    """log P(x) for x ~ Poisson(lam * p), elementwise over broadcast inputs.

    Stable in log space for counts up to at least 1e6. p = 0 is the
    degenerate no-reporting limit: mass 1 at x = 0. p = 1 is plain
    Poisson(lam).
    """
    x_arr = np.asarray(x)
    lam_arr = np.asarray(lam, dtype=np.float64)
    p_arr = np.asarray(p, dtype=np.float64)
    if np.any(x_arr < 0) or np.any(x_arr != np.floor(x_arr)):
        raise ValueError("x must contain non-negative integers")
    if not np.all(np.isfinite(lam_arr)) or np.any(lam_arr <= 0):
        raise ValueError("lam must be finite and positive")
    if np.any(p_arr < 0) or np.any(p_arr > 1) or not np.all(np.isfinite(p_arr)):
        raise ValueError("p must lie in [0, 1]")
    xf = x_arr.astype(np.float64)
    mu_b, xf_b = np.broadcast_arrays(lam_arr * p_arr, xf)
    out = np.full(mu_b.shape, -np.inf, dtype=np.float64)
    pos = mu_b > 0
    out[pos] = xf_b[pos] * np.log(mu_b[pos]) - mu_b[pos] - gammaln(xf_b[pos] + 1.0)
    out[~pos & (xf_b == 0)] = 0.0
    if out.ndim == 0:
        return float(out)
    return out


def predictor_matrix(thetas: np.ndarray, layout: ParameterLayout, data: Dataset):
    """Linear predictors (L, M) for a matrix of draws, shape (n, n_records) each."""
    thetas = np.atleast_2d(np.asarray(thetas, dtype=np.float64))
    parts = layout.unpack(thetas)
    sidx = data.school_idx
    urb0 = data.urb - 1
    if layout.mode is Pooling.NONE:
        L = (parts["beta0"][:, sidx]
             + parts["beta1"][:, sidx] * data.v2
             + parts["beta2"][:, sidx] * data.v3
             + parts["eta"])
        M = (parts["alpha0"][:, sidx]
             + parts["alpha3"][:, sidx] * data.w3
             + parts["alpha4"][:, sidx] * data.w4
             + parts["delta"])
        return L, M
    L = (parts["beta0"][:, urb0]
         + parts["beta1"] * data.v2
         + parts["beta2"] * data.v3
         + parts["eta"])
    M = (parts["alpha0"]
         + parts["alpha1"] * data.w1
         + parts["alpha2"] * data.w2
         + parts["alpha3"] * data.w3
         + parts["alpha4"] * data.w4
         + parts["delta"])
    if layout.mode is Pooling.PARTIAL:
        L = L + parts["epsilon"][:, sidx]
        M = M + parts["gamma"][:, sidx]
    return L, M


class CountModel:
    """Posterior target for one dataset, prior spec, and pooling mode.

    Exposes log_prior / log_likelihood / log_posterior plus the fused
    logp_and_grad the sampler consumes. The gradient is analytic and is
    checked against central differences in the test suite.
    """

    def __init__(self, data: Dataset, priors: PriorSpec | None = None,
                 mode: Pooling = Pooling.PARTIAL):
        self.data = data
        self.priors = priors if priors is not None else PriorSpec()
        self.mode = mode
        self.layout = ParameterLayout.build(mode, data.n_schools, data.n_records)
        self.prior_loc, self.prior_scale = _prior_vectors(self.layout, self.priors)
        self._prior_var = self.prior_scale ** 2
        self._prior_log_norm = float(np.sum(np.log(self.prior_scale)) + 0.5 * _LOG_2PI * self.layout.size)
        self._lgamma_x = float(np.sum(gammaln(data.x + 1.0)))
        self._xf = data.x.astype(np.float64)

    @property
    def dim(self) -> int:
        return self.layout.size

    # -- scalar link functions (single record) ---------------------------
    def log_lambda(self, record_index: int, theta: np.ndarray) -> float:
        L, _ = self._predictors(np.asarray(theta, dtype=np.float64))
        return float(L[record_index])

    def logit_p(self, record_index: int, theta: np.ndarray) -> float:
        _, M = self._predictors(np.asarray(theta, dtype=np.float64))
        return float(M[record_index])

    def _predictors(self, theta):
        # 1-D twin of predictor_matrix; kept separate because this is the
        # sampler's hot path and the two are cross-checked in tests.
        data = self.data
        parts = self.layout.unpack(theta)
        sidx = data.school_idx
        if self.layout.mode is Pooling.NONE:
            L = (parts["beta0"][sidx] + parts["beta1"][sidx] * data.v2
                 + parts["beta2"][sidx] * data.v3 + parts["eta"])
            M = (parts["alpha0"][sidx] + parts["alpha3"][sidx] * data.w3
                 + parts["alpha4"][sidx] * data.w4 + parts["delta"])
            return L, M
        L = (parts["beta0"][data.urb - 1] + parts["beta1"][0] * data.v2
             + parts["beta2"][0] * data.v3 + parts["eta"])
        M = (parts["alpha0"][0] + parts["alpha1"][0] * data.w1
             + parts["alpha2"][0] * data.w2 + parts["alpha3"][0] * data.w3
             + parts["alpha4"][0] * data.w4 + parts["delta"])
        if self.layout.mode is Pooling.PARTIAL:
            L = L + parts["epsilon"][sidx]
            M = M + parts["gamma"][sidx]
        return L, M

    # -- densities --------------------------------------------------------
    def log_prior(self, theta) -> float:
        theta = np.asarray(theta, dtype=np.float64)
        z = (theta - self.prior_loc) / self.prior_scale
        return float(-0.5 * np.dot(z, z) - self._prior_log_norm)

    def log_likelihood(self, theta) -> float:
        with np.errstate(over="ignore", invalid="ignore"):
            L, M = self._predictors(np.asarray(theta, dtype=np.float64))
            rate = np.exp(L) * expit(M)
            return float(np.dot(self._xf, L + log_expit(M)) - np.sum(rate) - self._lgamma_x)

    def log_posterior(self, theta) -> float:
        return self.log_likelihood(theta) + self.log_prior(theta)

    def grad_log_posterior(self, theta):
        return self.logp_and_grad(theta)[1]

    def logp_and_grad(self, theta):
        """Unnormalized log posterior and its gradient, one fused pass.

        Overflow from extreme trajectory points propagates as inf/nan,
        which the sampler treats as a divergence; no warnings are raised.
        """
        theta = np.asarray(theta, dtype=np.float64)
        data = self.data
        layout = self.layout
        with np.errstate(over="ignore", invalid="ignore"):
            return self._logp_and_grad(theta, data, layout)

    def _logp_and_grad(self, theta, data, layout):
        L, M = self._predictors(theta)
        sig = expit(M)
        rate = np.exp(L) * sig
        logp = np.dot(self._xf, L + log_expit(M)) - np.sum(rate) - self._lgamma_x
        gL = self._xf - rate
        gM = gL * (1.0 - sig)

        grad = (self.prior_loc - theta) / self._prior_var
        z = (theta - self.prior_loc) / self.prior_scale
        logp += -0.5 * np.dot(z, z) - self._prior_log_norm

        g = layout.unpack(grad)
        sidx = data.school_idx
        if layout.mode is Pooling.NONE:
            S = layout.n_schools
            g["beta0"] += np.bincount(sidx, weights=gL, minlength=S)
            g["beta1"] += np.bincount(sidx, weights=gL * data.v2, minlength=S)
            g["beta2"] += np.bincount(sidx, weights=gL * data.v3, minlength=S)
            g["alpha0"] += np.bincount(sidx, weights=gM, minlength=S)
            g["alpha3"] += np.bincount(sidx, weights=gM * data.w3, minlength=S)
            g["alpha4"] += np.bincount(sidx, weights=gM * data.w4, minlength=S)
        else:
            g["beta0"] += np.bincount(data.urb - 1, weights=gL, minlength=3)
            g["beta1"] += np.sum(gL * data.v2)
            g["beta2"] += np.sum(gL * data.v3)
            g["alpha0"] += np.sum(gM)
            g["alpha1"] += np.sum(gM * data.w1)
            g["alpha2"] += np.sum(gM * data.w2)
            g["alpha3"] += np.sum(gM * data.w3)
            g["alpha4"] += np.sum(gM * data.w4)
            if layout.mode is Pooling.PARTIAL:
                S = layout.n_schools
                g["gamma"] += np.bincount(sidx, weights=gM, minlength=S)
                g["epsilon"] += np.bincount(sidx, weights=gL, minlength=S)
        g["delta"] += gM
        g["eta"] += gL
        return float(logp), grad

    def initial_point(self, rng: np.random.Generator, scale: float = 0.1) -> np.ndarray:
        """Prior locations plus a small jitter; one vector per call."""
        return self.prior_loc + rng.normal(0.0, scale, self.layout.size)

    def component_names(self) -> list[str]:
        return self.layout.component_names(
            school_ids=self.data.school_ids, record_keys=self.data.record_keys()
        )


def _prior_vectors(layout: ParameterLayout, priors: PriorSpec):
    """Per-component prior location and scale vectors for a layout."""
    loc_by_block = {
        "beta0": priors.beta0_loc, "beta1": priors.beta1_loc, "beta2": priors.beta2_loc,
        "alpha0": priors.alpha0_loc, "alpha1": 0.0, "alpha2": 0.0,
        "alpha3": 0.0, "alpha4": 0.0,
        "gamma": 0.0, "epsilon": 0.0, "delta": 0.0, "eta": 0.0,
    }
    scale_by_block = {
        "beta0": priors.beta0_scale, "beta1": priors.beta1_scale, "beta2": priors.beta2_scale,
        "alpha0": priors.alpha0_scale, "alpha1": priors.alpha_school_scale,
        "alpha2": priors.alpha_school_scale, "alpha3": priors.alpha_year_scale,
        "alpha4": priors.alpha_year_scale,
        "gamma": priors.gamma_scale, "epsilon": priors.epsilon_scale,
        "delta": priors.delta_scale, "eta": priors.eta_scale,
    }
    loc = np.empty(layout.size, dtype=np.float64)
    scale = np.empty(layout.size, dtype=np.float64)
    for name, off, size in layout.blocks:
        loc[off:off + size] = loc_by_block[name]
        scale[off:off + size] = scale_by_block[name]
    return loc, scale
