"""Yield-table ingestion, train/elicitation splitting, and synthetic data.

The CSV schema is: crop,N,P,steepness,soil,weather,yield (comma-separated,
'.' decimal, UTF-8). Rows at fertiliser level 0 are dropped on load; the
synthetic generator never produces them. Lines starting with '#' are
provenance comments and are ignored on read.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field

import numpy as np

CSV_COLUMNS = ("crop", "N", "P", "steepness", "soil", "weather", "yield")

FACTOR_LEVELS = {
    "steepness": ("st1", "st2", "st3", "st4"),
    "soil": ("so1", "so2", "so3", "so4", "so5"),
    "weather": ("w1", "w2", "w3", "w4", "w5", "w6"),
}


class DataError(ValueError):
    """Malformed input file or invalid dataset request."""


@dataclass(eq=False)
class Dataset:
    """Rows of (N, P, factor labels, yield) for one crop."""

    crop: str
    n: np.ndarray
    p: np.ndarray
    y: np.ndarray
    factors: dict[str, np.ndarray] = field(default_factory=dict)
    provenance: str = "unknown"
    dropped_zero_rows: int = 0

    @property
    def n_rows(self) -> int:
        return len(self.y)

    def subset(self, idx) -> "Dataset":
        return Dataset(
            crop=self.crop,
            n=self.n[idx],
            p=self.p[idx],
            y=self.y[idx],
            factors={k: v[idx] for k, v in self.factors.items()},
            provenance=self.provenance,
        )


def load_csv(path, factor_levels=FACTOR_LEVELS) -> Dataset:
    """Read a yield table, validating against the schema.

    Rows with N=0 or P=0 are dropped; the count lands in
    ``Dataset.dropped_zero_rows``.
    """
    rows = []
    dropped = 0
    with open(path, newline="", encoding="utf-8") as fh:
        lineno = 0
        header = None
        for raw in csv.reader(fh):
            lineno += 1
            if not raw or raw[0].startswith("#"):
                continue
            if header is None:
                header = tuple(c.strip() for c in raw)
                if header != CSV_COLUMNS:
                    raise DataError(
                        f"{path}: header {header} does not match schema {CSV_COLUMNS}"
                    )
                continue
            if len(raw) != len(CSV_COLUMNS):
                raise DataError(f"{path}:{lineno}: expected {len(CSV_COLUMNS)} fields")
            crop, n_s, p_s, st, so, we, y_s = raw
            try:
                n_v, p_v, y_v = float(n_s), float(p_s), float(y_s)
            except ValueError as exc:
                raise DataError(f"{path}:{lineno}: non-numeric value ({exc})") from None
            if not math.isfinite(y_v):
                raise DataError(f"{path}:{lineno}: non-finite yield")
            for fname, label in (("steepness", st), ("soil", so), ("weather", we)):
                if label not in factor_levels[fname]:
                    raise DataError(
                        f"{path}:{lineno}: unknown {fname} label {label!r}"
                    )
            if n_v == 0 or p_v == 0:
                dropped += 1
                continue
            rows.append((crop, n_v, p_v, st, so, we, y_v))
        if header is None:
            raise DataError(f"{path}: empty file")
    crop_names = {r[0] for r in rows}
    crop = rows[0][0] if rows else "unknown"
    if len(crop_names) > 1:
        raise DataError(f"{path}: multiple crops in one file: {sorted(crop_names)}")
    return Dataset(
        crop=crop,
        n=np.array([r[1] for r in rows]),
        p=np.array([r[2] for r in rows]),
        y=np.array([r[6] for r in rows]),
        factors={
            "steepness": np.array([r[3] for r in rows], dtype=object),
            "soil": np.array([r[4] for r in rows], dtype=object),
            "weather": np.array([r[5] for r in rows], dtype=object),
        },
        provenance=f"file({path})",
        dropped_zero_rows=dropped,
    )


def write_csv(data: Dataset, path, header_lines=()) -> None:
    """Write a dataset in the canonical schema with '#' provenance lines."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        for line in header_lines:
            fh.write(f"# {line}\n")
        w = csv.writer(fh)
        w.writerow(CSV_COLUMNS)
        st = data.factors.get("steepness", np.array(["st1"] * data.n_rows, dtype=object))
        so = data.factors.get("soil", np.array(["so1"] * data.n_rows, dtype=object))
        we = data.factors.get("weather", np.array(["w1"] * data.n_rows, dtype=object))
        for i in range(data.n_rows):
            w.writerow(
                [
                    data.crop,
                    repr(float(data.n[i])),
                    repr(float(data.p[i])),
                    st[i],
                    so[i],
                    we[i],
                    repr(float(data.y[i])),
                ]
            )


def split(data: Dataset, ratio: float = 0.10, seed: int = 0):
    """Deterministic seeded partition into (elicitation, train).

    The elicitation part gets ceil(ratio * n) rows; every row appears in
    exactly one part.
    """
    if not 0 < ratio < 1:
        raise DataError(f"split ratio must be in (0, 1), got {ratio}")
    rng = np.random.default_rng(seed)
    order = rng.permutation(data.n_rows)
    k = math.ceil(ratio * data.n_rows)
    elicit = data.subset(np.sort(order[:k]))
    train = data.subset(np.sort(order[k:]))
    return elicit, train


def grid_levels(n_points: int = 13, top: float = 100.0) -> np.ndarray:
    """Equally spaced fertiliser levels on (0, top]; level 0 is excluded."""
    return top * np.arange(1, n_points + 1) / n_points


@dataclass
class GeneratorConfig:
    """Truth values for the synthetic stand-in data.

    `beta` is the 5-vector of MB parameters; factor shifts move the maximum
    yield per non-baseline level. `beta1_shifts`, when set, additionally move
    the nitrogen intercept per level to create deliberate misfit for negative
    testing. `sigma2` is the noise variance.
    """

    beta: tuple[float, float, float, float, float]
    sigma2: float
    crop: str = "synthetic"
    factor: str | None = None
    factor_shifts: tuple[float, ...] = ()
    beta1_shifts: tuple[float, ...] | None = None
    grid_points: int = 13
    replicates: int = 1
    seed: int = 0

    def __post_init__(self):
        if any(b <= 0 for b in self.beta):
            raise DataError("true MB parameters must be positive")
        if self.sigma2 <= 0:
            raise DataError("noise variance must be positive")
        if self.factor is not None:
            if self.factor not in FACTOR_LEVELS:
                raise DataError(f"unknown factor {self.factor!r}")
            want = len(FACTOR_LEVELS[self.factor]) - 1
            if len(self.factor_shifts) != want:
                raise DataError(
                    f"factor '{self.factor}' needs {want} shifts, got {len(self.factor_shifts)}"
                )
            if self.beta1_shifts is not None and len(self.beta1_shifts) != want:
                raise DataError("beta1_shifts length must match factor_shifts")


# Truth presets: MB posterior means per crop, and the steepness factor block
# (baseline maximum yield with per-level shifts on an effectively N-only
# surface).
PRESETS = {
    "spring-barley": GeneratorConfig(
        beta=(5.005, 0.4778, 0.019, 7.610, 0.00009), sigma2=0.17, crop="spring-barley"
    ),
    "winter-barley": GeneratorConfig(
        beta=(8.948, 1.102, 0.011, 7.617, 0.0002), sigma2=0.071, crop="winter-barley"
    ),
    "silage": GeneratorConfig(
        beta=(16.271, 0.838, 0.016, 13.03, 0.005), sigma2=0.127, crop="silage"
    ),
    "steepness": GeneratorConfig(
        beta=(7.916, 2.361, 0.035, 20.0, 1e-6),
        sigma2=0.145,
        crop="winter-barley",
        factor="steepness",
        factor_shifts=(-0.083, 0.006, 0.281),
    ),
}


def generate(config: GeneratorConfig) -> Dataset:
    """Full-factorial synthetic yield table from a MB truth surface."""
    levels = grid_levels(config.grid_points)
    n_grid, p_grid = [a.ravel() for a in np.meshgrid(levels, levels, indexing="ij")]
    b0, b1, b2, b3, b4 = config.beta

    if config.factor is None:
        level_labels = [None]
    else:
        level_labels = list(FACTOR_LEVELS[config.factor])

    n_all, p_all, mu_all, labels = [], [], [], []
    for li, label in enumerate(level_labels):
        shift = 0.0 if (label is None or li == 0) else config.factor_shifts[li - 1]
        b1_shift = 0.0
        if config.beta1_shifts is not None and label is not None and li > 0:
            b1_shift = config.beta1_shifts[li - 1]
        mu = (
            (b0 + shift)
            * (1.0 - np.exp(-(b1 + b1_shift) - b2 * n_grid))
            * (1.0 - np.exp(-b3 - b4 * p_grid))
        )
        for _ in range(config.replicates):
            n_all.append(n_grid)
            p_all.append(p_grid)
            mu_all.append(mu)
            labels.extend([label] * len(mu))

    n_col = np.concatenate(n_all)
    p_col = np.concatenate(p_all)
    mu_col = np.concatenate(mu_all)
    rng = np.random.default_rng(config.seed)
    y = mu_col + math.sqrt(config.sigma2) * rng.standard_normal(len(mu_col))

    factors = {}
    for fname, fls in FACTOR_LEVELS.items():
        if fname == config.factor:
            factors[fname] = np.array(labels, dtype=object)
        else:
            factors[fname] = np.array([fls[0]] * len(y), dtype=object)
    return Dataset(
        crop=config.crop,
        n=n_col,
        p=p_col,
        y=y,
        factors=factors,
        provenance=f"synthetic(seed={config.seed})",
    )


def parse_generator_config(path) -> GeneratorConfig:
    """Read a key=value preset file (documented in the README)."""
    values: dict[str, str] = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, raw in enumerate(fh, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise DataError(f"{path}:{lineno}: expected key=value")
            key, _, val = line.partition("=")
            values[key.strip()] = val.strip()

    def floats(key):
        return tuple(float(v) for v in values[key].split(","))

    try:
        kwargs = {
            "beta": floats("beta"),
            "sigma2": float(values["sigma2"]),
        }
    except KeyError as exc:
        raise DataError(f"{path}: missing required key {exc}") from None
    if "crop" in values:
        kwargs["crop"] = values["crop"]
    if "factor" in values:
        kwargs["factor"] = values["factor"]
        kwargs["factor_shifts"] = floats("factor_shifts")
    if "beta1_shifts" in values:
        kwargs["beta1_shifts"] = floats("beta1_shifts")
    for key in ("grid_points", "replicates", "seed"):
        if key in values:
            kwargs[key] = int(values[key])
    if len(kwargs["beta"]) != 5:
        raise DataError(f"{path}: beta must have 5 components")
    return GeneratorConfig(**kwargs)
