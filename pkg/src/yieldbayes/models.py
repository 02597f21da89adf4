"""Closed-form crop yield response curves and their parameter gradients.

All nine mean functions map fertiliser levels (n, p) on the native [0, 100]
scale to expected yield. Every function is pure; the vectorised variants
(`mean_values`, `mean_values_grad`) operate on row arrays and are the hot
path for the samplers and optimisers.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np


class ModelKind(Enum):
    LINEAR = "linear"
    QUADRATIC = "quadratic"
    SQUARE_ROOT = "square-root"
    POWER = "power"
    GOMPERTZ = "gompertz"
    LOGISTIC = "logistic"
    MITSCHERLICH_BAULE = "mb"
    LINEAR_VON_LIEBIG = "linear-von-liebig"
    NONLINEAR_VON_LIEBIG = "nonlinear-von-liebig"


class ResponseVariant(Enum):
    N_ONLY = "n"
    P_ONLY = "p"
    NP = "np"


# Parameter names as printed in the source formulas. The square-root model
# keeps the beta4/beta5 labels (there is no beta3 term).
_PARAM_NAMES = {
    ModelKind.LINEAR: ("beta0", "beta1", "beta2"),
    ModelKind.QUADRATIC: ("beta0", "beta1", "beta2", "beta3", "beta4", "beta5"),
    ModelKind.SQUARE_ROOT: ("beta0", "beta1", "beta2", "beta4", "beta5"),
    ModelKind.POWER: ("beta0", "beta1", "beta2"),
    ModelKind.GOMPERTZ: ("beta0", "beta1", "beta2"),
    ModelKind.LOGISTIC: ("beta0", "beta1", "beta2"),
    ModelKind.MITSCHERLICH_BAULE: ("beta0", "beta1", "beta2", "beta3", "beta4"),
    ModelKind.LINEAR_VON_LIEBIG: ("beta0", "beta1", "beta2", "beta3", "beta4"),
    ModelKind.NONLINEAR_VON_LIEBIG: ("beta0", "beta1", "beta2", "beta3", "beta4"),
}

# Which models have strictly positive parameters (log-transformed when
# optimising or sampling). Purely linear-in-parameters models stay free.
_ALL_POSITIVE = {
    ModelKind.POWER,
    ModelKind.GOMPERTZ,
    ModelKind.LOGISTIC,
    ModelKind.MITSCHERLICH_BAULE,
    ModelKind.NONLINEAR_VON_LIEBIG,
}

_MB_VARIANT_NAMES = {
    ResponseVariant.N_ONLY: ("beta0", "beta1", "beta2"),
    ResponseVariant.P_ONLY: ("beta0", "beta3", "beta4"),
    ResponseVariant.NP: ("beta0", "beta1", "beta2", "beta3", "beta4"),
}


class ModelSpecError(ValueError):
    """Invalid model specification or parameter block."""


@dataclass(frozen=True, eq=False)
class FactorDesign:
    """Baseline-referenced dummy coding of a single categorical factor.

    The first declared level is the baseline; a row of all zeros encodes it.
    `matrix` has one 0/1 column per non-baseline level, ordered as declared.
    """

    factor_name: str
    levels: tuple[str, ...]
    matrix: np.ndarray

    @property
    def n_effects(self) -> int:
        return len(self.levels) - 1

    def __post_init__(self):
        if len(self.levels) < 2:
            raise ModelSpecError("factor needs at least two levels")
        m = np.asarray(self.matrix)
        if m.ndim != 2 or m.shape[1] != self.n_effects:
            raise ModelSpecError(
                f"design matrix must have {self.n_effects} columns, got shape {m.shape}"
            )
        row_sums = m.sum(axis=1)
        if not np.all((row_sums == 0) | (row_sums == 1)):
            raise ModelSpecError("each design row must be all-zero or a single dummy")


def build_design(levels_column, declared_levels, name: str = "factor") -> FactorDesign:
    """Dummy-code a factor column against an ordered declared level set."""
    declared = tuple(declared_levels)
    if not declared:
        raise ModelSpecError("declared_levels must be nonempty")
    if len(declared) < 2:
        raise ModelSpecError(f"factor '{name}' has a single level; no effect estimable")
    index = {lvl: i for i, lvl in enumerate(declared)}
    rows = np.zeros((len(levels_column), len(declared) - 1))
    for r, label in enumerate(levels_column):
        if label not in index:
            raise ModelSpecError(f"unknown factor label {label!r} for '{name}'")
        i = index[label]
        if i > 0:
            rows[r, i - 1] = 1.0
    return FactorDesign(factor_name=name, levels=declared, matrix=rows)


@dataclass(frozen=True, eq=False)
class MeanSpec:
    """Which mean function to evaluate: model family, response variant
    (Mitscherlich-Baule only), and an optional factor design shifting the
    maximum-yield parameter."""

    kind: ModelKind
    variant: ResponseVariant | None = None
    factor: FactorDesign | None = None

    def __post_init__(self):
        if self.kind is ModelKind.MITSCHERLICH_BAULE:
            if self.variant is None:
                object.__setattr__(self, "variant", ResponseVariant.NP)
        elif self.variant is not None:
            raise ModelSpecError("response variants apply to the Mitscherlich-Baule model only")
        if self.factor is not None:
            if self.kind is not ModelKind.MITSCHERLICH_BAULE or self.variant is not ResponseVariant.N_ONLY:
                raise ModelSpecError("factor designs require the MB model with the N-only variant")

    @property
    def param_names(self) -> tuple[str, ...]:
        if self.kind is ModelKind.MITSCHERLICH_BAULE:
            base = _MB_VARIANT_NAMES[self.variant]
            if self.factor is not None:
                gammas = tuple(f"gamma1_{j}" for j in range(1, self.factor.n_effects + 1))
                return ("gamma0",) + base[1:] + gammas
            return base
        return _PARAM_NAMES[self.kind]

    @property
    def n_params(self) -> int:
        return len(self.param_names)

    @property
    def positive_mask(self) -> np.ndarray:
        """True where the parameter has strictly positive support."""
        names = self.param_names
        if self.kind is ModelKind.MITSCHERLICH_BAULE:
            return np.array([not n.startswith("gamma1") for n in names])
        if self.kind in _ALL_POSITIVE:
            return np.ones(len(names), dtype=bool)
        return np.zeros(len(names), dtype=bool)


def _check_eval_args(spec: MeanSpec, params, n, p, row_dummies):
    params = np.asarray(params, dtype=float)
    if params.shape != (spec.n_params,):
        raise ModelSpecError(
            f"expected {spec.n_params} parameters for {spec.kind.value}, got {params.shape}"
        )
    for name, v in (("n", n), ("p", p)):
        if not np.all(np.isfinite(v)):
            raise ModelSpecError(f"fertiliser level {name} must be finite")
        if np.any(np.asarray(v) < 0):
            raise ModelSpecError(f"fertiliser level {name} must be nonnegative")
    if (row_dummies is not None) != (spec.factor is not None):
        raise ModelSpecError("row_dummies must be supplied exactly when spec.factor is set")
    return params


def eval_mean(spec: MeanSpec, params, n, p, row_dummies=None) -> float:
    """Evaluate the mean yield at a single design point."""
    params = _check_eval_args(spec, params, n, p, row_dummies)
    dummies = None if row_dummies is None else np.atleast_2d(np.asarray(row_dummies, dtype=float))
    mu = mean_values(spec, params, np.atleast_1d(float(n)), np.atleast_1d(float(p)), dummies)
    return float(mu[0])


def mean_grad(spec: MeanSpec, params, n, p, row_dummies=None):
    """Gradient of the mean with respect to every free parameter.

    Returns (grad, at_kink) where at_kink marks an evaluation at a Von Liebig
    tie point (the first min() argument is taken there).
    """
    params = _check_eval_args(spec, params, n, p, row_dummies)
    dummies = None if row_dummies is None else np.atleast_2d(np.asarray(row_dummies, dtype=float))
    _, grad, tie = mean_values_grad(
        spec, params, np.atleast_1d(float(n)), np.atleast_1d(float(p)), dummies
    )
    return grad[:, 0].copy(), tie


def mean_values(spec: MeanSpec, params, n, p, dummies=None) -> np.ndarray:
    """Vectorised mean over row arrays n, p (and factor dummies)."""
    mu, _, _ = _dispatch(spec, np.asarray(params, dtype=float), n, p, dummies, want_grad=False)
    return mu


def mean_values_grad(spec: MeanSpec, params, n, p, dummies=None):
    """Vectorised mean and gradient; grad has shape (n_params, n_rows)."""
    return _dispatch(spec, np.asarray(params, dtype=float), n, p, dummies, want_grad=True)


def _dispatch(spec, b, n, p, dummies, want_grad):
    kind = spec.kind
    if kind is ModelKind.MITSCHERLICH_BAULE:
        return _mb(spec, b, n, p, dummies, want_grad)
    return _PLAIN_FORMS[kind](b, n, p, want_grad)


def _mb(spec, b, n, p, dummies, want_grad):
    variant = spec.variant
    if spec.factor is not None:
        g0 = b[0]
        b1, b2 = b[1], b[2]
        gam = b[3:]
        X = spec.factor.matrix if dummies is None else dummies
        amax = g0 + X @ gam
        e_n = np.exp(-b1 - b2 * n)
        g_n = 1.0 - e_n
        mu = amax * g_n
        if not want_grad:
            return mu, None, False
        grad = np.empty((len(b), len(mu)))
        grad[0] = g_n
        ae = amax * e_n
        grad[1] = ae
        grad[2] = ae * n
        grad[3:] = X.T * g_n
        return mu, grad, False

    b0 = b[0]
    if variant is ResponseVariant.N_ONLY:
        e_n = np.exp(-b[1] - b[2] * n)
        g_n = 1.0 - e_n
        mu = b0 * g_n
        if not want_grad:
            return mu, None, False
        be = b0 * e_n
        grad = np.empty((3, len(np.atleast_1d(mu))))
        grad[0] = g_n
        grad[1] = be
        grad[2] = be * n
        return mu, grad, False
    if variant is ResponseVariant.P_ONLY:
        e_p = np.exp(-b[1] - b[2] * p)
        g_p = 1.0 - e_p
        mu = b0 * g_p
        if not want_grad:
            return mu, None, False
        be = b0 * e_p
        grad = np.empty((3, len(np.atleast_1d(mu))))
        grad[0] = g_p
        grad[1] = be
        grad[2] = be * p
        return mu, grad, False
    # NP
    e_n = np.exp(-b[1] - b[2] * n)
    e_p = np.exp(-b[3] - b[4] * p)
    g_n = 1.0 - e_n
    g_p = 1.0 - e_p
    mu = b0 * g_n * g_p
    if not want_grad:
        return mu, None, False
    grad = np.empty((5, len(np.atleast_1d(mu))))
    grad[0] = g_n * g_p
    t_n = b0 * e_n * g_p
    t_p = b0 * g_n * e_p
    grad[1] = t_n
    grad[2] = t_n * n
    grad[3] = t_p
    grad[4] = t_p * p
    return mu, grad, False


def _linear(b, n, p, want_grad):
    mu = b[0] + b[1] * n + b[2] * p
    if not want_grad:
        return mu, None, False
    grad = np.empty((3, len(mu)))
    grad[0] = 1.0
    grad[1] = n
    grad[2] = p
    return mu, grad, False


def _quadratic(b, n, p, want_grad):
    mu = b[0] + b[1] * n + b[2] * p + b[3] * n**2 + b[4] * p**2 + b[5] * n * p
    if not want_grad:
        return mu, None, False
    grad = np.empty((6, len(mu)))
    grad[0] = 1.0
    grad[1] = n
    grad[2] = p
    grad[3] = n**2
    grad[4] = p**2
    grad[5] = n * p
    return mu, grad, False


def _square_root(b, n, p, want_grad):
    # Printed form: no sqrt(N) term; coefficients beta0,beta1,beta2,beta4,beta5.
    sp = np.sqrt(p)
    snp = np.sqrt(n * p)
    mu = b[0] + b[1] * n + b[2] * p + b[3] * sp + b[4] * snp
    if not want_grad:
        return mu, None, False
    grad = np.empty((5, len(mu)))
    grad[0] = 1.0
    grad[1] = n
    grad[2] = p
    grad[3] = sp
    grad[4] = snp
    return mu, grad, False


def _power(b, n, p, want_grad):
    # Evaluates to 0 at n=0 or p=0 for positive exponents.
    with np.errstate(divide="ignore"):
        npow = np.where(n > 0, np.power(n, b[1]), 0.0)
        ppow = np.where(p > 0, np.power(p, b[2]), 0.0)
    mu = b[0] * npow * ppow
    if not want_grad:
        return mu, None, False
    grad = np.empty((3, len(mu)))
    grad[0] = npow * ppow
    with np.errstate(divide="ignore", invalid="ignore"):
        grad[1] = np.where(n > 0, mu * np.log(np.where(n > 0, n, 1.0)), 0.0)
        grad[2] = np.where(p > 0, mu * np.log(np.where(p > 0, p, 1.0)), 0.0)
    return mu, grad, False


def _gompertz(b, n, p, want_grad):
    e2 = np.exp(-b[2] * n)
    inner = np.exp(-b[1] * e2)
    mu = b[0] * inner
    if not want_grad:
        return mu, None, False
    grad = np.empty((3, len(mu)))
    grad[0] = inner
    grad[1] = -b[0] * inner * e2
    grad[2] = b[0] * inner * b[1] * e2 * n
    return mu, grad, False


def _logistic(b, n, p, want_grad):
    e2 = np.exp(-b[2] * n)
    den = 1.0 + b[1] * e2
    mu = b[0] / den
    if not want_grad:
        return mu, None, False
    grad = np.empty((3, len(mu)))
    grad[0] = 1.0 / den
    grad[1] = -b[0] * e2 / den**2
    grad[2] = b[0] * b[1] * n * e2 / den**2
    return mu, grad, False


def _linear_von_liebig(b, n, p, want_grad):
    n = np.atleast_1d(np.asarray(n, dtype=float))
    p = np.atleast_1d(np.asarray(p, dtype=float))
    c0 = np.full(np.broadcast(n, p).shape, b[0])
    c1 = b[1] + b[3] * n
    c2 = b[2] + b[4] * p
    stacked = np.stack([c0, c1, c2])
    idx = np.argmin(stacked, axis=0)  # first min wins at ties
    mu = np.take_along_axis(stacked, idx[None, :], axis=0)[0]
    tie = bool(np.any((stacked == mu).sum(axis=0) > 1))
    if not want_grad:
        return mu, None, tie
    grad = np.zeros((5, len(mu)))
    grad[0] = idx == 0
    grad[1] = idx == 1
    grad[3] = (idx == 1) * n
    grad[2] = idx == 2
    grad[4] = (idx == 2) * p
    return mu, grad, tie


def _nonlinear_von_liebig(b, n, p, want_grad):
    e_n = np.exp(-b[2] * n)
    e_p = np.exp(-b[4] * p)
    arm_n = b[0] * (1.0 - b[1] * e_n)
    arm_p = b[0] * (1.0 - b[3] * e_p)
    take_n = arm_n <= arm_p  # ties resolve to the first (N) arm
    mu = np.where(take_n, arm_n, arm_p)
    tie = bool(np.any(arm_n == arm_p))
    if not want_grad:
        return mu, None, tie
    grad = np.zeros((5, len(mu)))
    grad[0] = np.where(take_n, 1.0 - b[1] * e_n, 1.0 - b[3] * e_p)
    grad[1] = np.where(take_n, -b[0] * e_n, 0.0)
    grad[2] = np.where(take_n, b[0] * b[1] * n * e_n, 0.0)
    grad[3] = np.where(take_n, 0.0, -b[0] * e_p)
    grad[4] = np.where(take_n, 0.0, b[0] * b[3] * p * e_p)
    return mu, grad, tie


_PLAIN_FORMS = {
    ModelKind.LINEAR: _linear,
    ModelKind.QUADRATIC: _quadratic,
    ModelKind.SQUARE_ROOT: _square_root,
    ModelKind.POWER: _power,
    ModelKind.GOMPERTZ: _gompertz,
    ModelKind.LOGISTIC: _logistic,
    ModelKind.LINEAR_VON_LIEBIG: _linear_von_liebig,
    ModelKind.NONLINEAR_VON_LIEBIG: _nonlinear_von_liebig,
}
