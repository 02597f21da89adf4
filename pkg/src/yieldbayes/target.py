"""Log prior, log likelihood, and joint log posterior with gradients.

The error-variance parameter ``sigma`` is the VARIANCE of the normal
likelihood, not its standard deviation: the kernel is
exp(-(y - mu)^2 / (2 sigma)) with a sigma^(-n/2) normaliser, which is only
coherent under the variance reading.

Sampling happens on an unconstrained vector z: positive-support coordinates
carry log(theta), real-support factor effects carry theta directly. The
log-Jacobian of the transform is added to the joint density so that gamma
support is enforced exactly. All densities keep their full normalising
constants, which keeps marginal likelihoods (and hence Bayes factors)
comparable across models.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Mapping

import numpy as np
from scipy.special import gammaln

from .data import Dataset
from .models import MeanSpec, ModelKind, ResponseVariant, mean_values, mean_values_grad

LOG_2PI = math.log(2.0 * math.pi)


class TargetError(ValueError):
    """Invalid prior/parameter configuration or non-finite model output."""


@dataclass(frozen=True)
class GammaPrior:
    """Gamma(shape, rate) on the strictly positive reals."""

    shape: float
    rate: float

    def __post_init__(self):
        if self.shape <= 0 or self.rate <= 0:
            raise TargetError(f"gamma prior needs positive shape/rate, got {self}")

    def logpdf(self, x: float) -> float:
        if x <= 0:
            return -math.inf
        return (
            self.shape * math.log(self.rate)
            - gammaln(self.shape)
            + (self.shape - 1.0) * math.log(x)
            - self.rate * x
        )

    def dlogpdf(self, x: float) -> float:
        return (self.shape - 1.0) / x - self.rate

    @property
    def mean(self) -> float:
        return self.shape / self.rate


@dataclass(frozen=True)
class PriorSpec:
    """Gamma priors per positive-support parameter (incl. sigma).

    Factor effects (gamma1_*) always get standard normal priors and need no
    entry here.
    """

    gammas: Mapping[str, GammaPrior]

    def gamma_for(self, name: str) -> GammaPrior:
        if name not in self.gammas:
            raise TargetError(f"no gamma prior declared for parameter {name!r}")
        return self.gammas[name]


def section5_priors(y_max: float) -> PriorSpec:
    """The weakly informative gamma prior set used for the crop fits."""
    return PriorSpec(
        gammas={
            "beta0": GammaPrior(y_max, 1.0),
            "gamma0": GammaPrior(y_max, 1.0),
            "beta1": GammaPrior(3.43, 1.0),
            "beta2": GammaPrior(1.0, 20.0),
            "beta3": GammaPrior(4.24, 1.0),
            "beta4": GammaPrior(1.0, 40.0),
            "sigma": GammaPrior(1.0, 10.0),
        }
    )


@dataclass(eq=False)
class ParamVector:
    """Ordered free parameters of a mean spec plus sigma, with positivity mask."""

    names: tuple[str, ...]
    values: np.ndarray
    positive: np.ndarray

    @classmethod
    def for_spec(cls, spec: MeanSpec, values) -> "ParamVector":
        names = spec.param_names + ("sigma",)
        values = np.asarray(values, dtype=float)
        if values.shape != (len(names),):
            raise TargetError(f"expected {len(names)} values for {names}, got {values.shape}")
        positive = np.append(spec.positive_mask, True)
        return cls(names=names, values=values, positive=positive)

    @property
    def mean_params(self) -> np.ndarray:
        return self.values[:-1]

    @property
    def sigma(self) -> float:
        return float(self.values[-1])

    def unconstrain(self) -> np.ndarray:
        z = self.values.copy()
        z[self.positive] = np.log(z[self.positive])
        return z

    def with_values(self, values) -> "ParamVector":
        return ParamVector(self.names, np.asarray(values, dtype=float), self.positive)


def constrain(spec: MeanSpec, z) -> ParamVector:
    """Map an unconstrained vector back to the parameter scale."""
    z = np.asarray(z, dtype=float)
    positive = np.append(spec.positive_mask, True)
    theta = z.copy()
    theta[positive] = np.exp(z[positive])
    return ParamVector(names=spec.param_names + ("sigma",), values=theta, positive=positive)


def log_likelihood(data: Dataset, spec: MeanSpec, params: ParamVector) -> float:
    """Normal log likelihood with sigma as the variance."""
    if data.n_rows == 0:
        raise TargetError("log_likelihood needs a nonempty dataset")
    sigma = params.sigma
    if sigma <= 0:
        raise TargetError("sigma must be positive")
    mu = mean_values(spec, params.mean_params, data.n, data.p)
    bad = ~np.isfinite(mu)
    if np.any(bad):
        raise TargetError(f"non-finite mean at data row {int(np.argmax(bad))}")
    resid = data.y - mu
    return float(-0.5 * data.n_rows * (LOG_2PI + math.log(sigma)) - resid @ resid / (2.0 * sigma))


def log_prior(params: ParamVector, priors: PriorSpec) -> float:
    """Sum of gamma log densities plus standard normals for factor effects.

    Returns -inf (no exception) when a positive-support coordinate is out of
    support.
    """
    total = 0.0
    for name, value, pos in zip(params.names, params.values, params.positive):
        if pos:
            if value <= 0:
                return -math.inf
            total += priors.gamma_for(name).logpdf(value)
        else:
            total += -0.5 * LOG_2PI - 0.5 * value * value
    return total


class Posterior:
    """Immutable joint log-posterior target over unconstrained coordinates.

    Exposes the interface the sampler consumes: ``dim``, ``logpdf_grad``,
    ``logpdf``, ``constrain``, and ``sample_init``. Shared read-only across
    chains.
    """

    def __init__(self, data: Dataset, spec: MeanSpec, priors: PriorSpec):
        self.data = data
        self.spec = spec
        self.priors = priors
        self.param_names = spec.param_names + ("sigma",)
        self.positive = np.append(spec.positive_mask, True)
        self.dim = len(self.param_names)

        if spec.factor is not None and spec.factor.matrix.shape[0] != data.n_rows:
            raise TargetError(
                "factor design matrix rows do not match the dataset"
            )

        self._y = np.asarray(data.y, dtype=float)
        self._n = np.asarray(data.n, dtype=float)
        self._p = np.asarray(data.p, dtype=float)
        self._nobs = data.n_rows

        pos_idx = np.flatnonzero(self.positive)
        self._pos_idx = pos_idx
        self._free_idx = np.flatnonzero(~self.positive)
        gammas = [priors.gamma_for(self.param_names[i]) for i in pos_idx]
        self._alpha = np.array([g.shape for g in gammas])
        self._rate = np.array([g.rate for g in gammas])
        # Constant part of the log prior (normalisers).
        self._prior_const = float(
            np.sum(self._alpha * np.log(self._rate) - gammaln(self._alpha))
            - 0.5 * LOG_2PI * len(self._free_idx)
        )
        self._ll_const = -0.5 * self._nobs * LOG_2PI

        # Closed-form fast paths for the MB hierarchy: these are the models
        # the sampler spends essentially all of its time in, so their density
        # and gradient are fused into single functions (verified against the
        # generic path by the gradient test suite).
        self._mode = "generic"
        if spec.kind is ModelKind.MITSCHERLICH_BAULE and self._nobs:
            if spec.factor is not None:
                self._mode = "factor"
                self._X = np.asarray(spec.factor.matrix, dtype=float)
                self._XT = np.ascontiguousarray(self._X.T)
            elif spec.variant is ResponseVariant.NP:
                self._mode = "np"
            elif spec.variant is ResponseVariant.N_ONLY:
                self._mode = "n"
            else:
                self._mode = "p"

    # -- parameter-scale helpers -------------------------------------------

    def constrain(self, z) -> np.ndarray:
        z = np.asarray(z, dtype=float)
        theta = z.copy()
        theta[self.positive] = np.exp(z[self.positive])
        return theta

    def unconstrain(self, theta) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        z = theta.copy()
        z[self.positive] = np.log(z[self.positive])
        return z

    def param_vector(self, z) -> ParamVector:
        return ParamVector(self.param_names, self.constrain(z), self.positive)

    def sample_init(self, rng, jitter: float = 1.0) -> np.ndarray:
        """Prior draw mapped to z, jittered for over-dispersed chain starts."""
        theta = np.empty(self.dim)
        for i, name in enumerate(self.param_names):
            if self.positive[i]:
                g = self.priors.gamma_for(name)
                theta[i] = max(rng.gamma(g.shape) / g.rate, 1e-8)
            else:
                theta[i] = rng.standard_normal()
        z = self.unconstrain(theta)
        return z + jitter * rng.standard_normal(self.dim)

    # -- densities -----------------------------------------------------------

    def logpdf_grad(self, z):
        """Joint log density (likelihood + prior + log-Jacobian) and its
        gradient in z. Never raises on a finite z: floating-point overflow
        far out in the tails maps to -inf, which the sampler treats as an
        immediate divergence."""
        z = np.asarray(z, dtype=float)
        mode = self._mode
        if mode == "np":
            return self._fused_np(z)
        if mode == "n":
            return self._fused_axis(z, self._n)
        if mode == "p":
            return self._fused_axis(z, self._p)
        if mode == "factor":
            return self._fused_factor(z)
        return self._logpdf_grad_impl(z)

    def _all_positive_tail(self, ll, like, z, theta):
        """Finish a fused all-positive-parameter evaluation: gamma priors and
        the log-Jacobian, folded algebraically into the z-scale gradient."""
        grad_z = like * theta + self._alpha - self._rate * theta
        value = ll + self._prior_const + float(self._alpha @ z) - float(self._rate @ theta)
        if not math.isfinite(value):
            return -math.inf, grad_z
        return value, grad_z

    def _fused_np(self, z):
        theta = np.exp(z)
        b0, b1, b2, b3, b4, sigma = theta
        en = np.exp(-b1 - b2 * self._n)
        ep = np.exp(-b3 - b4 * self._p)
        gn = 1.0 - en
        gp = 1.0 - ep
        gg = gn * gp
        r = self._y - b0 * gg
        rss = float(r @ r)
        ll = self._ll_const - 0.5 * self._nobs * z[-1] - rss / (2.0 * sigma)
        enp = en * gp
        gpe = gn * ep
        like = np.empty(6)
        like[0] = gg @ r
        like[1] = b0 * (enp @ r)
        like[2] = b0 * ((enp * self._n) @ r)
        like[3] = b0 * (gpe @ r)
        like[4] = b0 * ((gpe * self._p) @ r)
        like[:5] /= sigma
        like[5] = -0.5 * self._nobs / sigma + rss / (2.0 * sigma * sigma)
        return self._all_positive_tail(ll, like, z, theta)

    def _fused_axis(self, z, x):
        theta = np.exp(z)
        b0, b1, b2, sigma = theta
        e = np.exp(-b1 - b2 * x)
        g = 1.0 - e
        r = self._y - b0 * g
        rss = float(r @ r)
        ll = self._ll_const - 0.5 * self._nobs * z[-1] - rss / (2.0 * sigma)
        like = np.empty(4)
        like[0] = g @ r
        like[1] = b0 * (e @ r)
        like[2] = b0 * ((e * x) @ r)
        like[:3] /= sigma
        like[3] = -0.5 * self._nobs / sigma + rss / (2.0 * sigma * sigma)
        return self._all_positive_tail(ll, like, z, theta)

    def _fused_factor(self, z):
        tg = np.exp(z[:3])
        sigma = float(np.exp(z[-1]))
        gam = z[3:-1]
        g0, b1, b2 = tg
        e = np.exp(-b1 - b2 * self._n)
        g = 1.0 - e
        amax = g0 + self._X @ gam
        r = self._y - amax * g
        rss = float(r @ r)
        ll = self._ll_const - 0.5 * self._nobs * z[-1] - rss / (2.0 * sigma)
        gr = g * r
        ae = amax * e
        like3 = np.empty(3)
        like3[0] = gr.sum()
        like3[1] = ae @ r
        like3[2] = (ae * self._n) @ r
        like3 /= sigma
        grad_z = np.empty(self.dim)
        grad_z[:3] = like3 * tg + self._alpha[:3] - self._rate[:3] * tg
        grad_z[3:-1] = (self._XT @ gr) / sigma - gam
        like_s = -0.5 * self._nobs / sigma + rss / (2.0 * sigma * sigma)
        grad_z[-1] = like_s * sigma + self._alpha[3] - self._rate[3] * sigma
        value = (
            ll
            + self._prior_const
            + float(self._alpha[:3] @ z[:3])
            + self._alpha[3] * z[-1]
            - float(self._rate[:3] @ tg)
            - self._rate[3] * sigma
            - 0.5 * float(gam @ gam)
        )
        if not math.isfinite(value):
            return -math.inf, grad_z
        return value, grad_z

    def _logpdf_grad_impl(self, z):
        pos = self.positive
        theta = z.copy()
        theta[pos] = np.exp(z[pos])
        sigma = theta[-1]

        grad_theta = np.empty(self.dim)
        if self._nobs:
            mu, gmat, _ = mean_values_grad(self.spec, theta[:-1], self._n, self._p)
            resid = self._y - mu
            rss = float(resid @ resid)
            ll = self._ll_const - 0.5 * self._nobs * z[-1] - rss / (2.0 * sigma)
            grad_theta[:-1] = (gmat @ resid) / sigma
            grad_theta[-1] = -0.5 * self._nobs / sigma + rss / (2.0 * sigma * sigma)
        else:
            ll = 0.0
            grad_theta[:] = 0.0

        # Gamma priors on positive coordinates; standard normals on the rest.
        th_pos = theta[pos]
        z_pos = z[pos]
        lp = self._prior_const + float(
            np.sum((self._alpha - 1.0) * z_pos - self._rate * th_pos)
        )
        grad_theta[self._pos_idx] += (self._alpha - 1.0) / th_pos - self._rate
        if len(self._free_idx):
            th_free = theta[self._free_idx]
            lp -= 0.5 * float(th_free @ th_free)
            grad_theta[self._free_idx] -= th_free

        value = ll + lp + float(np.sum(z_pos))
        grad_z = grad_theta.copy()
        grad_z[pos] = grad_theta[pos] * th_pos + 1.0
        if not math.isfinite(value):
            # Floating-point overflow far out in the tails; the sampler
            # treats -inf as an immediate divergence.
            return -math.inf, grad_z
        return value, grad_z

    def logpdf(self, z) -> float:
        return self.logpdf_grad(z)[0]


def log_posterior_grad(z, data: Dataset, spec: MeanSpec, priors: PriorSpec):
    """One-shot evaluation of the unconstrained joint density and gradient."""
    return Posterior(data, spec, priors).logpdf_grad(z)
