"""Predictive model comparison: WAIC, PSIS-LOO, ELPD, and Bayes factors.

The pointwise log-likelihood matrix is the shared input: entry (s, i) is the
normal log density of observation i under posterior draw s. Log-mean-exp
reductions are max-shifted, so log likelihoods anywhere in the
representable range cannot overflow.

Bayes factors come from bridge sampling with a moment-matched normal
proposal in unconstrained space. The targets carry full normalising
constants, so the bridge estimates are genuine log marginal likelihoods and
ratios are comparable across models with different parameter counts.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .data import Dataset
from .models import MeanSpec, ResponseVariant, mean_values
from .nuts import PosteriorSamples
from .target import LOG_2PI, Posterior, PriorSpec


class SelectionError(ValueError):
    pass


@dataclass(eq=False)
class LogLikMatrix:
    """S draws x n observations of pointwise log likelihood with provenance."""

    values: np.ndarray
    chain: np.ndarray
    iteration: np.ndarray

    @property
    def n_draws(self) -> int:
        return self.values.shape[0]

    @property
    def n_obs(self) -> int:
        return self.values.shape[1]


def pointwise_loglik(samples: PosteriorSamples, data: Dataset, spec: MeanSpec) -> LogLikMatrix:
    """Normal log density of every observation under every kept draw."""
    if data.n_rows == 0:
        raise SelectionError("dataset is empty")
    draws = samples.flat()
    out = np.empty((draws.shape[0], data.n_rows))
    for s, theta in enumerate(draws):
        mu = mean_values(spec, theta[:-1], data.n, data.p)
        sigma = theta[-1]
        out[s] = -0.5 * (LOG_2PI + math.log(sigma)) - (data.y - mu) ** 2 / (2.0 * sigma)
    bad = ~np.isfinite(out)
    if np.any(bad):
        s, i = np.unravel_index(int(np.argmax(bad)), out.shape)
        raise SelectionError(f"non-finite log likelihood at draw {s}, observation {i}")
    chain, iteration = samples.provenance()
    return LogLikMatrix(values=out, chain=chain, iteration=iteration)


@dataclass
class WaicResult:
    elpd: float
    p_eff: float
    waic: float
    se: float
    pointwise: np.ndarray


def waic(m: LogLikMatrix) -> WaicResult:
    """Widely applicable information criterion on the -2 ELPD scale."""
    if m.n_draws < 2:
        raise SelectionError("WAIC needs at least 2 draws (pointwise variance)")
    ll = m.values
    lppd_i = logsumexp(ll, axis=0) - math.log(m.n_draws)
    p_i = np.var(ll, axis=0, ddof=1)
    elpd_i = lppd_i - p_i
    elpd = float(np.sum(elpd_i))
    se = float(math.sqrt(m.n_obs * np.var(elpd_i, ddof=1))) if m.n_obs > 1 else 0.0
    return WaicResult(
        elpd=elpd,
        p_eff=float(np.sum(p_i)),
        waic=-2.0 * elpd,
        se=se,
        pointwise=elpd_i,
    )


@dataclass
class LooResult:
    elpd: float
    p_eff: float
    looic: float
    se: float
    pareto_k: np.ndarray
    pointwise: np.ndarray
    plain_is: bool = False  # True when S was too small for PSIS

    @property
    def n_high_k(self) -> int:
        return int(np.sum(self.pareto_k > 0.7))


def _gpd_fit(x: np.ndarray):
    """Generalised Pareto fit (Zhang & Stephens 2009 profile posterior)."""
    x = np.sort(np.asarray(x, dtype=float))
    n = len(x)
    prior_bs = 3.0
    m_grid = 30 + int(math.sqrt(n))
    ks = np.arange(1, m_grid + 1)
    b = 1.0 - np.sqrt(m_grid / (ks - 0.5))
    b /= prior_bs * x[int(n / 4 + 0.5) - 1]
    b += 1.0 / x[-1]
    k_b = np.mean(np.log1p(-b[:, None] * x[None, :]), axis=1)
    log_lik = n * (np.log(-b / k_b) - k_b - 1.0)
    # Overflow in the exp maps to weight 0, the correct limit.
    with np.errstate(over="ignore"):
        weights = 1.0 / np.sum(np.exp(log_lik[None, :] - log_lik[:, None]), axis=1)
    b_post = float(np.sum(b * weights))
    k_post = float(np.mean(np.log1p(-b_post * x)))
    sigma = -k_post / b_post
    # Weak prior pulling k toward 0.5 stabilises small tails.
    k_post = k_post * n / (n + 10.0) + 0.5 * 10.0 / (n + 10.0)
    return k_post, sigma


def _psis_smooth(log_w: np.ndarray):
    """Pareto-smooth one column of log importance ratios; returns
    (smoothed log weights, k-hat)."""
    s = len(log_w)
    log_w = log_w - np.max(log_w)
    n_tail = int(math.ceil(0.2 * s))
    if n_tail < 5:
        return log_w, math.nan
    order = np.argsort(log_w)
    tail_idx = order[-n_tail:]
    cutoff = log_w[order[-n_tail - 1]]
    exceed = np.exp(log_w[tail_idx]) - math.exp(cutoff)
    if np.all(exceed <= 0):
        return log_w, math.nan
    k_hat, sigma = _gpd_fit(np.maximum(exceed, 1e-300))
    if not math.isfinite(k_hat):
        return log_w, k_hat
    # Replace tail values by GPD quantiles at expected plotting positions.
    probs = (np.arange(1, n_tail + 1) - 0.5) / n_tail
    if abs(k_hat) < 1e-12:
        quant = -sigma * np.log1p(-probs)
    else:
        quant = sigma / k_hat * (np.power(1.0 - probs, -k_hat) - 1.0)
    # tail_idx ascends in raw weight, matching the ascending quantiles.
    new = log_w.copy()
    new[tail_idx] = np.log(quant + math.exp(cutoff))
    # Never exceed the largest raw weight (raw max is 0 after shifting).
    return np.minimum(new, 0.0), k_hat


def loo(m: LogLikMatrix) -> LooResult:
    """PSIS leave-one-out ELPD. Falls back to plain importance sampling
    below 100 draws (PSIS tail fits are unreliable there)."""
    ll = m.values
    s, n = ll.shape
    plain = s < 100
    elpd_i = np.empty(n)
    k_hat = np.full(n, math.nan)
    for i in range(n):
        raw_lw = -ll[:, i]
        if plain:
            lw = raw_lw - np.max(raw_lw)
        else:
            lw, k_hat[i] = _psis_smooth(raw_lw)
        lw = lw - logsumexp(lw)
        elpd_i[i] = logsumexp(lw + ll[:, i])
    lppd_i = logsumexp(ll, axis=0) - math.log(s)
    elpd = float(np.sum(elpd_i))
    se = float(math.sqrt(n * np.var(elpd_i, ddof=1))) if n > 1 else 0.0
    return LooResult(
        elpd=elpd,
        p_eff=float(np.sum(lppd_i - elpd_i)),
        looic=-2.0 * elpd,
        se=se,
        pareto_k=k_hat,
        pointwise=elpd_i,
        plain_is=plain,
    )


@dataclass(eq=False)
class FittedModel:
    """A candidate mean structure with its posterior target and draws."""

    name: str
    spec: MeanSpec
    priors: PriorSpec
    target: Posterior
    samples: PosteriorSamples


class BridgeError(RuntimeError):
    def __init__(self, message, running_estimates=None):
        super().__init__(message)
        self.running_estimates = running_estimates


def log_marginal_likelihood(
    target,
    draws_z: np.ndarray,
    seed: int = 0,
    tol: float = 1e-6,
    max_rounds: int = 1000,
) -> float:
    """Bridge-sampling estimate with a moment-matched normal proposal."""
    z1 = np.asarray(draws_z, dtype=float)
    n1 = z1.shape[0]
    mean = z1.mean(axis=0)
    cov = np.cov(z1, rowvar=False)
    cov = np.atleast_2d(cov) + 1e-10 * np.eye(z1.shape[1])
    chol = np.linalg.cholesky(cov)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    dim = z1.shape[1]

    def prop_logpdf(z):
        diff = solve_triangular(chol, (z - mean).T, lower=True)
        return -0.5 * (dim * LOG_2PI + log_det + np.sum(diff * diff, axis=0))

    rng = np.random.default_rng(seed)
    n2 = n1
    z2 = mean + (chol @ rng.standard_normal((dim, n2))).T

    def target_logpdf_many(z):
        return np.array([target.logpdf(row) for row in z])

    l1 = target_logpdf_many(z1) - prop_logpdf(z1)
    l2 = target_logpdf_many(z2) - prop_logpdf(z2)

    log_s1 = math.log(n1 / (n1 + n2))
    log_s2 = math.log(n2 / (n1 + n2))

    log_r = float(logsumexp(l2) - math.log(n2))  # importance-sampling start
    history = [log_r]
    for _ in range(max_rounds):
        log_num = logsumexp(l2 - np.logaddexp(log_s1 + l2, log_s2 + log_r)) - math.log(n2)
        log_den = logsumexp(-np.logaddexp(log_s1 + l1, log_s2 + log_r)) - math.log(n1)
        log_r_new = float(log_num - log_den)
        history.append(log_r_new)
        if abs(log_r_new - log_r) < tol:
            return log_r_new
        log_r = log_r_new
    raise BridgeError(
        f"bridge iteration did not converge in {max_rounds} rounds",
        running_estimates=history[-2:],
    )


def bayes_factor(alt: FittedModel, null: FittedModel, seed: int = 0, tol: float = 1e-6) -> float:
    """BF = m_alt / m_null via bridge-sampled log marginal likelihoods."""
    log_m_alt = log_marginal_likelihood(alt.target, alt.samples.flat_z(), seed=seed, tol=tol)
    log_m_null = log_marginal_likelihood(null.target, null.samples.flat_z(), seed=seed, tol=tol)
    return math.exp(log_m_alt - log_m_null)


@dataclass
class ComparisonRow:
    name: str
    elpd: float
    elpd_se: float
    p_loo: float
    looic: float
    elpd_waic: float
    p_waic: float
    waic: float
    max_pareto_k: float
    n_high_k: int
    bayes_factor: float | None
    favored_elpd: bool = False
    favored_looic: bool = False
    favored_waic: bool = False


@dataclass
class ComparisonReport:
    rows: list[ComparisonRow]
    null_model: str | None

    def by_name(self, name: str) -> ComparisonRow:
        for r in self.rows:
            if r.name == name:
                return r
        raise KeyError(name)

    def favored(self, criterion: str) -> str:
        flag = f"favored_{criterion}"
        for r in self.rows:
            if getattr(r, flag):
                return r.name
        raise KeyError(criterion)

    def to_json(self) -> str:
        payload = {
            "null_model": self.null_model,
            "models": [
                {
                    "name": r.name,
                    "elpd": r.elpd,
                    "elpd_se": r.elpd_se,
                    "p_loo": r.p_loo,
                    "looic": r.looic,
                    "elpd_waic": r.elpd_waic,
                    "p_waic": r.p_waic,
                    "waic": r.waic,
                    "max_pareto_k": None if math.isnan(r.max_pareto_k) else r.max_pareto_k,
                    "n_high_k": r.n_high_k,
                    "bayes_factor": r.bayes_factor,
                    "favored_elpd": r.favored_elpd,
                    "favored_looic": r.favored_looic,
                    "favored_waic": r.favored_waic,
                }
                for r in self.rows
            ],
        }
        return json.dumps(payload, indent=2)

    def write_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            cols = [
                "model", "elpd", "elpd_se", "p_loo", "looic", "elpd_waic", "p_waic",
                "waic", "max_pareto_k", "n_high_k", "bayes_factor",
                "favored_elpd", "favored_looic", "favored_waic",
            ]
            w.writerow(cols)
            for r in self.rows:
                w.writerow([
                    r.name, repr(r.elpd), repr(r.elpd_se), repr(r.p_loo), repr(r.looic),
                    repr(r.elpd_waic), repr(r.p_waic), repr(r.waic), repr(r.max_pareto_k),
                    r.n_high_k,
                    "" if r.bayes_factor is None else repr(r.bayes_factor),
                    int(r.favored_elpd), int(r.favored_looic), int(r.favored_waic),
                ])

    def format_table(self) -> str:
        header = f"{'Model':<10} {'ELPD':>10} {'LOOIC':>10} {'WAIC':>10} {'BF':>10}"
        lines = [header, "-" * len(header)]
        for r in self.rows:
            bf = "" if r.bayes_factor is None else f"{r.bayes_factor:.3g}"
            star = " *" if r.favored_elpd else ""
            lines.append(
                f"{r.name:<10} {r.elpd:>10.1f} {r.looic:>10.1f} {r.waic:>10.1f} {bf:>10}{star}"
            )
        return "\n".join(lines)


def compare(candidates: list[FittedModel], data: Dataset, seed: int = 0) -> ComparisonReport:
    """Assemble the comparison table across candidate mean structures.

    Bayes factors are computed against the N-only candidate as the null
    (omitted when absent or when there is a single candidate).
    """
    if not candidates:
        raise SelectionError("no candidates to compare")
    for cand in candidates:
        if cand.target.data.n_rows != data.n_rows or not np.array_equal(cand.target.data.y, data.y):
            raise SelectionError(f"candidate {cand.name!r} was fitted on different data")

    null = None
    if len(candidates) > 1:
        for cand in candidates:
            if cand.spec.variant is ResponseVariant.N_ONLY and cand.spec.factor is None:
                null = cand
                break

    log_ml = {}
    if null is not None:
        for cand in candidates:
            log_ml[cand.name] = log_marginal_likelihood(
                cand.target, cand.samples.flat_z(), seed=seed
            )

    rows = []
    for cand in candidates:
        m = pointwise_loglik(cand.samples, data, cand.spec)
        w = waic(m)
        l = loo(m)
        bf = None
        if null is not None and cand.name != null.name:
            bf = math.exp(log_ml[cand.name] - log_ml[null.name])
        rows.append(
            ComparisonRow(
                name=cand.name,
                elpd=l.elpd,
                elpd_se=l.se,
                p_loo=l.p_eff,
                looic=l.looic,
                elpd_waic=w.elpd,
                p_waic=w.p_eff,
                waic=w.waic,
                max_pareto_k=float(np.nanmax(l.pareto_k)) if np.any(np.isfinite(l.pareto_k)) else math.nan,
                n_high_k=l.n_high_k,
                bayes_factor=bf,
            )
        )

    rows[int(np.argmax([r.elpd for r in rows]))].favored_elpd = True
    rows[int(np.argmin([r.looic for r in rows]))].favored_looic = True
    rows[int(np.argmin([r.waic for r in rows]))].favored_waic = True
    return ComparisonReport(rows=rows, null_model=None if null is None else null.name)
