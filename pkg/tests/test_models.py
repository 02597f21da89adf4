"""Mean-function oracles, gradients, and structural properties."""

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from yieldbayes.models import (
    FactorDesign,
    MeanSpec,
    ModelKind,
    ModelSpecError,
    ResponseVariant,
    build_design,
    eval_mean,
    mean_grad,
    mean_values,
)

MB = ModelKind.MITSCHERLICH_BAULE

PARAM_COUNTS = {
    ModelKind.LINEAR: 3,
    ModelKind.QUADRATIC: 6,
    ModelKind.SQUARE_ROOT: 5,
    ModelKind.POWER: 3,
    ModelKind.GOMPERTZ: 3,
    ModelKind.LOGISTIC: 3,
    MB: 5,
    ModelKind.LINEAR_VON_LIEBIG: 5,
    ModelKind.NONLINEAR_VON_LIEBIG: 5,
}

# Random interior parameter draws per model kind, scaled to keep the curves
# well conditioned on the [0, 100] input range.
def _random_params(kind, rng):
    if kind is ModelKind.LINEAR:
        return rng.uniform(-2, 2, 3)
    if kind is ModelKind.QUADRATIC:
        return rng.uniform(-0.5, 0.5, 6) * np.array([10, 1, 1, 0.01, 0.01, 0.01])
    if kind is ModelKind.SQUARE_ROOT:
        return rng.uniform(-1, 1, 5)
    if kind is ModelKind.POWER:
        return np.array([rng.uniform(0.01, 1), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9)])
    if kind in (ModelKind.GOMPERTZ, ModelKind.LOGISTIC):
        return np.array([rng.uniform(1, 20), rng.uniform(0.2, 4), rng.uniform(0.005, 0.08)])
    if kind is MB:
        return np.array(
            [rng.uniform(1, 20), rng.uniform(0.2, 3), rng.uniform(0.005, 0.05),
             rng.uniform(0.2, 3), rng.uniform(0.005, 0.05)]
        )
    if kind is ModelKind.LINEAR_VON_LIEBIG:
        return np.array([rng.uniform(5, 15), rng.uniform(0, 2), rng.uniform(0, 2),
                         rng.uniform(0.01, 0.3), rng.uniform(0.01, 0.3)])
    # nonlinear von Liebig
    return np.array([rng.uniform(5, 15), rng.uniform(0.3, 0.95), rng.uniform(0.01, 0.1),
                     rng.uniform(0.3, 0.95), rng.uniform(0.01, 0.1)])


def _fd_grad(spec, params, n, p, dummies=None):
    params = np.asarray(params, dtype=float)
    g = np.empty(len(params))
    for j in range(len(params)):
        h = 1e-6 * max(abs(params[j]), 1e-3)
        up, dn = params.copy(), params.copy()
        up[j] += h
        dn[j] -= h
        g[j] = (eval_mean(spec, up, n, p, dummies) - eval_mean(spec, dn, n, p, dummies)) / (2 * h)
    return g


def test_param_counts():
    for kind, count in PARAM_COUNTS.items():
        assert MeanSpec(kind).n_params == count


def test_square_root_param_names_skip_beta3():
    assert MeanSpec(ModelKind.SQUARE_ROOT).param_names == (
        "beta0", "beta1", "beta2", "beta4", "beta5"
    )


def test_mb_saturation_limit():
    spec = MeanSpec(MB)
    for n, p in [(1.0, 1.0), (50.0, 7.0), (100.0, 100.0)]:
        assert eval_mean(spec, (10, 50, 0.0, 50, 0.0), n, p) == pytest.approx(10.0, abs=1e-15)


def test_mb_zero_intercepts():
    spec = MeanSpec(MB)
    for n, p in [(1.0, 1.0), (33.0, 90.0)]:
        # The zero-slope, zero-intercept exponent makes each bracket exactly 0.
        assert eval_mean(spec, (10, 0.0, 0.0, 0.0, 0.0), n, p) == 0.0


def test_mb_spring_barley_substitution_oracle():
    # Frozen value from an independent scalar evaluation of the closed form.
    spec = MeanSpec(MB)
    mu = eval_mean(spec, (5.005, 0.4778, 0.019, 7.610, 0.00009), 100.0, 50.0)
    assert mu == pytest.approx(4.538524443937048, rel=1e-15)


def test_mb_n_only_beta0_gradient_independent_of_beta0():
    spec = MeanSpec(MB, ResponseVariant.N_ONLY)
    for b0 in (1.0, 4.0, 9.0):
        g, tie = mean_grad(spec, (b0, 1.1, 0.02), 40.0, 0.0)
        assert not tie
        assert g[0] == pytest.approx(1.0 - math.exp(-1.1 - 0.02 * 40.0), rel=1e-15)


def test_mb_np_gradient_finite_difference_point():
    spec = MeanSpec(MB)
    params = np.array([5.0, 1.0, 0.02, 1.0, 0.01])
    g, tie = mean_grad(spec, params, 40.0, 40.0)
    fd = _fd_grad(spec, params, 40.0, 40.0)
    assert not tie
    np.testing.assert_allclose(g, fd, rtol=1e-6)


def test_factor_gradient_is_dummy_times_bracket():
    design = build_design(["st2"], ("st1", "st2", "st3"), name="steepness")
    spec = MeanSpec(MB, ResponseVariant.N_ONLY, design)
    params = np.array([8.0, 1.1, 0.02, 0.5, -0.3])
    g, _ = mean_grad(spec, params, 30.0, 0.0, row_dummies=[1.0, 0.0])
    bracket = 1.0 - math.exp(-1.1 - 0.02 * 30.0)
    assert g[3] == pytest.approx(bracket, rel=1e-14)
    assert g[4] == 0.0


@pytest.mark.parametrize("kind", list(PARAM_COUNTS))
def test_gradients_match_finite_differences(kind):
    spec = MeanSpec(kind)
    rng = np.random.default_rng(20)
    checked = 0
    while checked < 30:
        params = _random_params(kind, rng)
        n, p = rng.uniform(5, 95, 2)
        g, tie = mean_grad(spec, params, n, p)
        if tie:
            continue
        if kind in (ModelKind.LINEAR_VON_LIEBIG, ModelKind.NONLINEAR_VON_LIEBIG):
            # Skip near-kink points where finite differences straddle the min().
            mu = eval_mean(spec, params, n, p)
            arms = _von_liebig_arms(kind, params, n, p)
            arms.remove(min(arms))
            if min(arms) - mu < 1e-3:
                continue
        fd = _fd_grad(spec, params, n, p)
        scale = np.maximum(np.abs(fd), 1e-6)
        assert np.max(np.abs(g - fd) / scale) < 1e-5
        checked += 1


def _von_liebig_arms(kind, b, n, p):
    if kind is ModelKind.LINEAR_VON_LIEBIG:
        return [b[0], b[1] + b[3] * n, b[2] + b[4] * p]
    return [b[0] * (1 - b[1] * math.exp(-b[2] * n)), b[0] * (1 - b[3] * math.exp(-b[4] * p))]


def test_von_liebig_tie_flag():
    spec = MeanSpec(ModelKind.LINEAR_VON_LIEBIG)
    # beta0 = beta1 + beta3*n at n=10: 5 = 3 + 0.2*10
    _, tie = mean_grad(spec, (5.0, 3.0, 100.0, 0.2, 0.1), 10.0, 10.0)
    assert tie
    g, _ = mean_grad(spec, (5.0, 3.0, 100.0, 0.2, 0.1), 10.0, 10.0)
    # First min() argument (the plateau) wins the subgradient at the tie.
    assert g[0] == 1.0 and g[1] == 0.0


def test_build_design_textbook_example():
    d = build_design(["A", "B", "A", "C"], ["A", "B", "C"])
    np.testing.assert_array_equal(d.matrix, [[0, 0], [1, 0], [0, 0], [0, 1]])
    assert d.levels == ("A", "B", "C")


def test_build_design_level_counts():
    steep = build_design(["st1"] * 4, ("st1", "st2", "st3", "st4"))
    assert steep.matrix.shape[1] == 3
    weather = build_design(["w1"], ("w1", "w2", "w3", "w4", "w5", "w6"))
    assert weather.matrix.shape[1] == 5


def test_build_design_errors():
    with pytest.raises(ModelSpecError, match="single level"):
        build_design(["A", "A"], ["A"])
    with pytest.raises(ModelSpecError, match="'D'"):
        build_design(["A", "D"], ["A", "B"])


def test_factor_requires_mb_n_only():
    design = build_design(["st1", "st2"], ("st1", "st2"))
    with pytest.raises(ModelSpecError):
        MeanSpec(MB, ResponseVariant.NP, design)
    with pytest.raises(ModelSpecError):
        MeanSpec(ModelKind.LINEAR, factor=design)
    spec = MeanSpec(MB, ResponseVariant.N_ONLY, design)
    assert spec.param_names == ("gamma0", "beta1", "beta2", "gamma1_1")


def test_variant_rejected_off_mb():
    with pytest.raises(ModelSpecError):
        MeanSpec(ModelKind.LOGISTIC, ResponseVariant.N_ONLY)


def test_design_row_sum_validation():
    with pytest.raises(ModelSpecError):
        FactorDesign("f", ("a", "b", "c"), np.array([[1.0, 1.0]]))


positive_mb = st.tuples(
    st.floats(0.5, 20), st.floats(0.05, 3), st.floats(0.001, 0.1),
    st.floats(0.05, 3), st.floats(0.001, 0.1),
)


@settings(max_examples=50, deadline=None)
@given(beta=positive_mb)
def test_mb_monotone_and_bounded(beta):
    spec = MeanSpec(MB)
    grid = np.linspace(1.0, 100.0, 25)
    fixed = np.full_like(grid, 37.0)
    along_n = mean_values(spec, beta, grid, fixed)
    along_p = mean_values(spec, beta, fixed, grid)
    assert np.all(np.diff(along_n) >= -1e-12)
    assert np.all(np.diff(along_p) >= -1e-12)
    assert np.all(along_n >= 0) and np.all(along_n <= beta[0] + 1e-12)
    assert np.all(along_p >= 0) and np.all(along_p <= beta[0] + 1e-12)


@settings(max_examples=50, deadline=None)
@given(beta=positive_mb, p=st.floats(1.0, 100.0))
def test_mb_plateau(beta, p):
    spec = MeanSpec(MB)
    limit = beta[0] * (1.0 - math.exp(-beta[3] - beta[4] * p))
    mu = eval_mean(spec, beta, 1e6, p)
    assert abs(mu - limit) < 1e-9 * beta[0]


@settings(max_examples=50, deadline=None)
@given(b0=st.floats(0.5, 20), b1=st.floats(0.05, 3), b2=st.floats(0.001, 0.1),
       n=st.floats(1.0, 100.0), p=st.floats(1.0, 100.0))
def test_mb_variant_consistency(b0, b1, b2, n, p):
    # With the P bracket saturated (== 1), NP reduces to N-only.
    np_spec = MeanSpec(MB, ResponseVariant.NP)
    n_spec = MeanSpec(MB, ResponseVariant.N_ONLY)
    full = eval_mean(np_spec, (b0, b1, b2, 60.0, 0.0), n, p)
    reduced = eval_mean(n_spec, (b0, b1, b2), n, p)
    assert abs(full - reduced) < 1e-12


def test_param_count_mismatch_rejected():
    with pytest.raises(ModelSpecError):
        eval_mean(MeanSpec(MB), (1.0, 2.0), 1.0, 1.0)


def test_negative_input_rejected():
    with pytest.raises(ModelSpecError):
        eval_mean(MeanSpec(ModelKind.LINEAR), (1.0, 2.0, 3.0), -1.0, 1.0)
