"""Convergence diagnostics and tidy plot-data export.

R-hat is computed over split half-chains (more conservative than the classic
statistic). Effective sample size combines autocorrelations across chains
and truncates the lag sum by Geyer's initial-monotone pair rule.
Autocorrelations are computed by direct summation; at desk-scale chain
lengths the O(n k) cost is negligible and trivial to verify.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import gaussian_kde

from .nuts import PosteriorSamples


def _as_chain_matrix(chains) -> np.ndarray:
    arr = np.asarray(chains, dtype=float)
    if arr.ndim != 2:
        raise ValueError("chains must be a 2-D (n_chains, n_draws) array")
    return arr


def split_rhat(chains) -> float:
    """Potential scale reduction factor over split half-chains.

    Returns NaN for degenerate (zero within-variance) inputs.
    """
    arr = _as_chain_matrix(chains)
    m, n = arr.shape
    if m < 2 or n < 4:
        raise ValueError("need at least 2 chains of at least 4 draws")
    half = n // 2
    halves = np.concatenate([arr[:, :half], arr[:, half : 2 * half]], axis=0)
    n_h = half
    w = float(np.mean(np.var(halves, axis=1, ddof=1)))
    b = n_h * float(np.var(np.mean(halves, axis=1), ddof=1))
    if w == 0.0:
        return math.nan
    return math.sqrt(((n_h - 1) / n_h * w + b / n_h) / w)


def autocorrelation(x, max_lag: int) -> np.ndarray:
    """Lag 0..max_lag autocorrelation of one sequence, direct summation."""
    x = np.asarray(x, dtype=float)
    n = len(x)
    xc = x - x.mean()
    c0 = float(xc @ xc) / n
    if c0 == 0.0:
        return np.full(max_lag + 1, math.nan)
    out = np.empty(max_lag + 1)
    out[0] = 1.0
    for k in range(1, max_lag + 1):
        out[k] = float(xc[:-k] @ xc[k:]) / n / c0 if k < n else 0.0
    return out


def effective_sample_size(chains) -> float:
    """Multi-chain ESS with Geyer initial-monotone truncation.

    Antithetic chains may legitimately report more effective draws than
    actual draws; the value is not clamped. Degenerate chains give NaN.
    """
    arr = _as_chain_matrix(chains)
    m, n = arr.shape
    means = arr.mean(axis=1)
    variances = arr.var(axis=1, ddof=1)
    w = float(variances.mean())
    if w == 0.0:
        return math.nan
    b_over_n = float(np.var(means, ddof=1)) if m > 1 else 0.0
    var_plus = w * (n - 1) / n + b_over_n

    centered = arr - means[:, None]

    def mean_autocov(k: int) -> float:
        if k >= n:
            return 0.0
        return float(np.mean(np.sum(centered[:, :-k] * centered[:, k:], axis=1) / n)) if k else float(
            np.mean(np.sum(centered * centered, axis=1) / n)
        )

    def rho(k: int) -> float:
        return 1.0 - (w - mean_autocov(k)) / var_plus

    tau_pairs = 0.0
    prev_pair = math.inf
    t = 0
    while 2 * t + 1 < n:
        pair = rho(2 * t) + rho(2 * t + 1)
        if pair <= 0.0:
            break
        pair = min(pair, prev_pair)  # initial-monotone correction
        tau_pairs += pair
        prev_pair = pair
        t += 1
    tau = max(2.0 * tau_pairs - 1.0, 1.0 / (10.0 * m * n))
    return m * n / tau


@dataclass
class ParamDiagnostics:
    name: str
    mean: float
    q2_5: float
    q97_5: float
    rhat: float
    ess: float
    degenerate: bool


@dataclass
class DiagnosticsReport:
    params: list[ParamDiagnostics]

    def by_name(self, name: str) -> ParamDiagnostics:
        for row in self.params:
            if row.name == name:
                return row
        raise KeyError(name)

    def format_table(self) -> str:
        header = f"{'Coefficient':<12} {'Mean':>12} {'2.5%':>12} {'97.5%':>12} {'n_eff':>8} {'R-hat':>7}"
        lines = [header, "-" * len(header)]
        for r in self.params:
            lines.append(
                f"{r.name:<12} {r.mean:>12.5g} {r.q2_5:>12.5g} {r.q97_5:>12.5g} "
                f"{r.ess:>8.0f} {r.rhat:>7.3f}"
            )
        return "\n".join(lines)

    def write_csv(self, path, header_lines=()) -> None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            for line in header_lines:
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["parameter", "mean", "q2.5", "q97.5", "rhat", "n_eff", "degenerate"])
            for r in self.params:
                w.writerow([r.name, repr(r.mean), repr(r.q2_5), repr(r.q97_5), repr(r.rhat), repr(r.ess), int(r.degenerate)])


def summarize(samples: PosteriorSamples) -> DiagnosticsReport:
    """Posterior mean, central 95% interval, R-hat, and ESS per parameter.

    Quantiles use linear interpolation between order statistics.
    """
    if samples.n_kept == 0:
        raise ValueError("no kept draws to summarise")
    rows = []
    for j, name in enumerate(samples.param_names):
        chains = samples.draws[:, :, j]
        flat = chains.ravel()
        if samples.n_chains >= 2 and samples.n_kept >= 4:
            rhat = split_rhat(chains)
            ess = effective_sample_size(chains)
        else:
            rhat, ess = math.nan, math.nan
        rows.append(
            ParamDiagnostics(
                name=name,
                mean=float(flat.mean()),
                q2_5=float(np.quantile(flat, 0.025)),
                q97_5=float(np.quantile(flat, 0.975)),
                rhat=rhat,
                ess=ess,
                degenerate=bool(math.isnan(rhat) or math.isnan(ess)),
            )
        )
    return DiagnosticsReport(params=rows)


def export_trace(samples: PosteriorSamples, path, header_lines=()) -> None:
    """Tidy trace export: chain, iteration, parameter, value."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["chain", "iteration", "parameter", "value"])
        for c in range(samples.n_chains):
            for j, name in enumerate(samples.param_names):
                col = samples.draws[c, :, j]
                for i, v in enumerate(col):
                    w.writerow([c, i, name, repr(float(v))])


def export_autocorrelation(samples: PosteriorSamples, path, header_lines=()) -> None:
    """Chain-averaged autocorrelations up to lag min(n-1, 10 log10 n, 50)."""
    n = samples.n_kept
    max_lag = int(min(n - 1, 10 * math.log10(max(n, 2)), 50))
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["lag", "parameter", "rho"])
        for j, name in enumerate(samples.param_names):
            acs = np.array(
                [autocorrelation(samples.draws[c, :, j], max_lag) for c in range(samples.n_chains)]
            )
            rho = np.nanmean(acs, axis=0)
            for k in range(max_lag + 1):
                w.writerow([k, name, repr(float(rho[k]))])


def export_density(samples: PosteriorSamples, path, header_lines=(), grid_size: int = 128) -> None:
    """Gaussian-KDE posterior density on a uniform grid per parameter."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["parameter", "grid", "density"])
        for j, name in enumerate(samples.param_names):
            flat = samples.draws[:, :, j].ravel()
            lo, hi = float(flat.min()), float(flat.max())
            if lo == hi:
                w.writerow([name, repr(lo), repr(math.inf)])
                continue
            pad = 0.05 * (hi - lo)
            grid = np.linspace(lo - pad, hi + pad, grid_size)
            dens = gaussian_kde(flat)(grid)
            for g, d in zip(grid, dens):
                w.writerow([name, repr(float(g)), repr(float(d))])
