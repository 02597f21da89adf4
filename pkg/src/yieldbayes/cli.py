"""Command-line workflow: generate/ingest -> elicit -> sample -> diagnose ->
compare -> predict.

Every command is deterministic given its flags (including --seed), and every
emitted file starts with '#'-prefixed provenance lines (command line, seed,
version). Exit codes: 0 success, 2 usage or configuration error,
3 inference-quality gate failure (too many divergences).
"""

from __future__ import annotations

import argparse
import csv
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .data import (
    FACTOR_LEVELS,
    DataError,
    Dataset,
    GeneratorConfig,
    PRESETS,
    generate,
    load_csv,
    parse_generator_config,
    split,
    write_csv,
)
from .diagnostics import (
    export_autocorrelation,
    export_density,
    export_trace,
    summarize,
)
from .models import (
    MeanSpec,
    ModelKind,
    ModelSpecError,
    ResponseVariant,
    build_design,
    mean_values,
)
from .nls import elicit_priors, fit_nls
from .nuts import PosteriorSamples, SamplerConfig, SamplerError, run_chains
from .selection import FittedModel, compare
from .target import Posterior, TargetError

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_QUALITY = 3

DIVERGENCE_GATE = 0.10

_VARIANTS = {"n": ResponseVariant.N_ONLY, "p": ResponseVariant.P_ONLY, "np": ResponseVariant.NP}


class QualityGateError(RuntimeError):
    pass


class UsageError(RuntimeError):
    pass


def _provenance(args, seed) -> list[str]:
    argv = " ".join(getattr(args, "_argv", []))
    return [
        f"command: yieldbayes {argv}",
        f"seed: {seed}",
        f"version: {__version__}",
    ]


def _out_dir(args) -> Path:
    out = args.out_dir or os.environ.get("YIELDBAYES_OUT_DIR") or "."
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _build_spec(variant_key: str, factor_name: str, data: Dataset) -> MeanSpec:
    variant = _VARIANTS[variant_key]
    if factor_name == "none":
        return MeanSpec(ModelKind.MITSCHERLICH_BAULE, variant)
    design = build_design(
        data.factors[factor_name], FACTOR_LEVELS[factor_name], name=factor_name
    )
    return MeanSpec(ModelKind.MITSCHERLICH_BAULE, variant, design)


def _fit_pipeline(data: Dataset, variant_key: str, factor_name: str, config: SamplerConfig):
    """Split -> elicit priors -> sample. Returns (train, spec, elicited,
    target, samples)."""
    elicitation, train = split(data, ratio=0.10, seed=config.seed)
    spec = _build_spec(variant_key, factor_name, train)
    elicited = elicit_priors(elicitation, spec)
    target = Posterior(train, spec, elicited.priors)
    samples = run_chains(target, config)
    return train, spec, elicited, target, samples


def _write_samples_csv(path, samples: PosteriorSamples, header_lines, meta: dict) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        fh.write("# " + " ".join(f"{k}={v}" for k, v in meta.items()) + "\n")
        w = csv.writer(fh)
        w.writerow(["chain", "iter", "param", "value"])
        for c in range(samples.n_chains):
            for i in range(samples.n_kept):
                for j, name in enumerate(samples.param_names):
                    w.writerow([c, i, name, repr(float(samples.draws[c, i, j]))])


def _read_samples_csv(path):
    """Returns (draw matrix (S, k) in file parameter order, names, meta)."""
    meta = {}
    records = []
    with open(path, newline="", encoding="utf-8") as fh:
        header = None
        for raw in csv.reader(fh):
            if not raw:
                continue
            if raw[0].startswith("#"):
                text = raw[0].lstrip("# ")
                if "=" in text and ":" not in text.split("=")[0]:
                    for tok in " ".join([text] + raw[1:]).split():
                        if "=" in tok:
                            k, _, v = tok.partition("=")
                            meta[k] = v
                continue
            if header is None:
                header = raw
                continue
            records.append(raw)
    if header != ["chain", "iter", "param", "value"]:
        raise UsageError(f"{path}: not a samples file")
    if not records:
        raise UsageError(f"{path}: samples file has no draws")
    names = []
    for c, i, p, v in records:
        if p not in names:
            names.append(p)
        if (c, i) != (records[0][0], records[0][1]):
            break
    k = len(names)
    if len(records) % k:
        raise UsageError(f"{path}: truncated samples file")
    values = np.array([float(r[3]) for r in records]).reshape(-1, k)
    return values, tuple(names), meta


def _parse_grid(text: str):
    """'n=10:100:10,p=50' -> dict of axis arrays; a:b:k is k equally spaced
    points, a single number is a fixed level."""
    axes = {}
    for part in text.split(","):
        if "=" not in part:
            raise UsageError(f"bad grid component {part!r}")
        key, _, val = part.partition("=")
        key = key.strip().lower()
        if key not in ("n", "p"):
            raise UsageError(f"grid axes are n and p, got {key!r}")
        if ":" in val:
            pieces = val.split(":")
            if len(pieces) != 3:
                raise UsageError(f"grid range must be start:stop:count, got {val!r}")
            start, stop, count = float(pieces[0]), float(pieces[1]), int(pieces[2])
            axes[key] = np.linspace(start, stop, count)
        else:
            axes[key] = np.array([float(val)])
    if "n" not in axes:
        axes["n"] = np.array([0.0])
    if "p" not in axes:
        axes["p"] = np.array([0.0])
    return axes


# ---------------------------------------------------------------------------
# subcommands


def cmd_generate(args) -> int:
    if args.config:
        config = parse_generator_config(args.config)
        config.seed = args.seed
    else:
        preset = PRESETS[args.preset]
        config = GeneratorConfig(
            beta=preset.beta,
            sigma2=preset.sigma2,
            crop=preset.crop,
            factor=preset.factor,
            factor_shifts=preset.factor_shifts,
            beta1_shifts=preset.beta1_shifts,
            grid_points=preset.grid_points,
            replicates=args.replicates,
            seed=args.seed,
        )
    data = generate(config)
    out = _out_dir(args) / args.out
    write_csv(data, out, header_lines=_provenance(args, args.seed))
    print(f"wrote {data.n_rows} rows to {out}")
    return EXIT_OK


def cmd_fit(args) -> int:
    data = load_csv(args.data)
    config = SamplerConfig(
        n_chains=args.chains,
        n_iter=args.iter,
        n_warmup=args.warmup,
        seed=args.seed,
    )
    train, spec, elicited, target, samples = _fit_pipeline(
        data, args.variant, args.factor, config
    )
    for note in elicited.warnings:
        print(f"warning: {note}", file=sys.stderr)

    out_dir = _out_dir(args)
    header = _provenance(args, args.seed)
    report = summarize(samples)
    stem = f"fit_{data.crop}_{args.variant}_{args.factor}"
    report.write_csv(out_dir / f"{stem}_diagnostics.csv", header)
    meta = {
        "model": "mb",
        "variant": args.variant,
        "factor": args.factor,
        "crop": data.crop,
    }
    if spec.factor is not None:
        meta["levels"] = ";".join(spec.factor.levels)
    _write_samples_csv(out_dir / f"{stem}_samples.csv", samples, header, meta)
    export_trace(samples, out_dir / f"{stem}_trace.csv", header)
    export_autocorrelation(samples, out_dir / f"{stem}_autocorr.csv", header)
    export_density(samples, out_dir / f"{stem}_density.csv", header)

    print(report.format_table())
    if samples.n_kept < 100:
        print("warning: too few kept draws; R-hat and n_eff are unreliable", file=sys.stderr)
    frac = samples.divergence_fraction()
    if frac > DIVERGENCE_GATE:
        raise QualityGateError(
            f"divergence fraction {frac:.1%} exceeds {DIVERGENCE_GATE:.0%}; "
            f"diagnostics at {out_dir / (stem + '_diagnostics.csv')}"
        )
    return EXIT_OK


def cmd_compare(args) -> int:
    data = load_csv(args.data)
    variants = [v.strip() for v in args.variants.split(",") if v.strip()]
    for v in variants:
        if v not in _VARIANTS:
            raise UsageError(f"unknown variant {v!r} (choose from n, p, np)")
    config_kwargs = dict(n_chains=args.chains, n_iter=args.iter, n_warmup=args.warmup)

    candidates = []
    train_ref = None
    for v in variants:
        config = SamplerConfig(seed=args.seed, **config_kwargs)
        train, spec, elicited, target, samples = _fit_pipeline(data, v, "none", config)
        train_ref = train
        frac = samples.divergence_fraction()
        if frac > DIVERGENCE_GATE:
            raise QualityGateError(
                f"variant {v!r}: divergence fraction {frac:.1%} exceeds {DIVERGENCE_GATE:.0%}"
            )
        candidates.append(
            FittedModel(name=v, spec=spec, priors=elicited.priors, target=target, samples=samples)
        )

    report = compare(candidates, train_ref, seed=args.seed)
    out_dir = _out_dir(args)
    header = _provenance(args, args.seed)
    if args.format == "json":
        out = out_dir / f"compare_{data.crop}.json"
        with open(out, "w", encoding="utf-8") as fh:
            # Readers should strip the leading '#' provenance lines before
            # parsing the JSON body.
            for line in header:
                fh.write(f"# {line}\n")
            fh.write(report.to_json())
            fh.write("\n")
    else:
        out = out_dir / f"compare_{data.crop}.csv"
        report.write_csv(out, header)
    print(report.format_table())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_predict(args) -> int:
    values, names, meta = _read_samples_csv(args.samples)
    data = load_csv(args.data)
    variant_key = meta.get("variant", "np")
    factor_name = meta.get("factor", "none")
    spec = _build_spec(variant_key, factor_name, data)
    expected = spec.param_names + ("sigma",)
    if tuple(names) != expected:
        raise UsageError(
            f"samples/spec mismatch: file has parameters {names}, spec needs {expected}"
        )
    axes = _parse_grid(args.grid)
    if variant_key in ("n", "np") and np.all(axes["n"] == 0):
        raise UsageError("model responds to N; supply a grid for n")
    q_lo, q_hi = (float(q) for q in args.level.split(","))

    n_grid, p_grid = [a.ravel() for a in np.meshgrid(axes["n"], axes["p"], indexing="ij")]
    sigma = values[:, -1]
    rng = np.random.default_rng(args.seed)

    if spec.factor is not None:
        level_list = list(spec.factor.levels)
    else:
        level_list = [""]

    out = _out_dir(args) / args.out
    with open(out, "w", newline="", encoding="utf-8") as fh:
        for line in _provenance(args, args.seed):
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(["n", "p", "level", "mean", "mu_lo", "mu_hi", "pred_lo", "pred_hi"])
        for li, level in enumerate(level_list):
            dummies = None
            if spec.factor is not None:
                row = np.zeros(spec.factor.n_effects)
                if li > 0:
                    row[li - 1] = 1.0
                dummies = np.tile(row, (len(n_grid), 1))
            mu = np.empty((values.shape[0], len(n_grid)))
            for s in range(values.shape[0]):
                mu[s] = mean_values(spec, values[s, :-1], n_grid, p_grid, dummies)
            noise = np.sqrt(sigma)[:, None] * rng.standard_normal(mu.shape)
            pred = mu + noise
            mean_curve = mu.mean(axis=0)
            mu_lo = np.quantile(mu, q_lo, axis=0)
            mu_hi = np.quantile(mu, q_hi, axis=0)
            pred_lo = np.quantile(pred, q_lo, axis=0)
            pred_hi = np.quantile(pred, q_hi, axis=0)
            for g in range(len(n_grid)):
                w.writerow(
                    [
                        repr(float(n_grid[g])),
                        repr(float(p_grid[g])),
                        level,
                        repr(float(mean_curve[g])),
                        repr(float(mu_lo[g])),
                        repr(float(mu_hi[g])),
                        repr(float(pred_lo[g])),
                        repr(float(pred_hi[g])),
                    ]
                )
    print(f"wrote predictions to {out}")
    return EXIT_OK


def cmd_nls(args) -> int:
    data = load_csv(args.data)
    kind = ModelKind(args.model)
    spec = MeanSpec(kind)
    result = fit_nls(data, spec, init=None)
    print(f"model: {kind.value}  converged: {result.converged}  iterations: {result.iterations}")
    print(f"RSE: {result.rse:.6g}")
    for name, value in zip(result.names, result.estimates):
        print(f"  {name:<8} {value:.6g}")
    if args.out:
        out = _out_dir(args) / args.out
        with open(out, "w", newline="", encoding="utf-8") as fh:
            for line in _provenance(args, 0):
                fh.write(f"# {line}\n")
            w = csv.writer(fh)
            w.writerow(["model", "parameter", "estimate", "rse", "converged"])
            for name, value in zip(result.names, result.estimates):
                w.writerow([kind.value, name, repr(float(value)), repr(result.rse), int(result.converged)])
        print(f"wrote {out}")
    return EXIT_OK


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="yieldbayes",
        description="Bayesian crop-yield response modelling and model selection.",
    )
    parser.add_argument("--version", action="version", version=f"yieldbayes {__version__}")
    sub = parser.add_subparsers(dest="subcommand", required=True)

    p_gen = sub.add_parser("generate", help="write a synthetic yield table")
    group = p_gen.add_mutually_exclusive_group(required=True)
    group.add_argument("--preset", choices=sorted(PRESETS))
    group.add_argument("--config", help="key=value generator config file")
    p_gen.add_argument("--seed", type=int, required=True)
    p_gen.add_argument("--replicates", type=int, default=1)
    p_gen.add_argument("--out", default="dataset.csv")
    p_gen.add_argument("--out-dir", default=None)
    p_gen.set_defaults(func=cmd_generate)

    p_fit = sub.add_parser("fit", help="split, elicit priors, and sample the posterior")
    p_fit.add_argument("--data", required=True)
    p_fit.add_argument("--model", choices=["mb"], default="mb")
    p_fit.add_argument("--variant", choices=["n", "p", "np"], default="np")
    p_fit.add_argument("--factor", choices=["none", "steepness", "soil", "weather"], default="none")
    p_fit.add_argument("--chains", type=int, default=4)
    p_fit.add_argument("--iter", type=int, default=10000)
    p_fit.add_argument("--warmup", type=int, default=5000)
    p_fit.add_argument("--seed", type=int, required=True)
    p_fit.add_argument("--out-dir", default=None)
    p_fit.add_argument("--format", choices=["csv", "json"], default="csv")
    p_fit.set_defaults(func=cmd_fit)

    p_cmp = sub.add_parser("compare", help="fit several response variants and rank them")
    p_cmp.add_argument("--data", required=True)
    p_cmp.add_argument("--variants", default="n,p,np")
    p_cmp.add_argument("--chains", type=int, default=4)
    p_cmp.add_argument("--iter", type=int, default=10000)
    p_cmp.add_argument("--warmup", type=int, default=5000)
    p_cmp.add_argument("--seed", type=int, required=True)
    p_cmp.add_argument("--out-dir", default=None)
    p_cmp.add_argument("--format", choices=["csv", "json"], default="csv")
    p_cmp.set_defaults(func=cmd_compare)

    p_pred = sub.add_parser("predict", help="posterior mean curve with credible bands")
    p_pred.add_argument("--samples", required=True)
    p_pred.add_argument("--data", required=True)
    p_pred.add_argument("--grid", required=True, help="e.g. n=10:100:19,p=50")
    p_pred.add_argument("--level", default="0.025,0.975")
    p_pred.add_argument("--seed", type=int, default=0)
    p_pred.add_argument("--out", default="predictions.csv")
    p_pred.add_argument("--out-dir", default=None)
    p_pred.set_defaults(func=cmd_predict)

    p_nls = sub.add_parser("nls", help="classical least-squares fit of any yield model")
    p_nls.add_argument("--data", required=True)
    p_nls.add_argument("--model", choices=[k.value for k in ModelKind], required=True)
    p_nls.add_argument("--out", default=None)
    p_nls.add_argument("--out-dir", default=None)
    p_nls.set_defaults(func=cmd_nls)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    effective_argv = list(argv) if argv is not None else sys.argv[1:]
    args = parser.parse_args(effective_argv)
    args._argv = effective_argv
    try:
        return args.func(args)
    except QualityGateError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_QUALITY
    except (UsageError, DataError, ModelSpecError, TargetError, SamplerError, OSError, KeyError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    raise SystemExit(main())
