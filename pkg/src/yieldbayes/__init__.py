"""Bayesian crop-yield response modelling: yield curves, NUTS sampling,
convergence diagnostics, and predictive model selection."""

from .data import Dataset, GeneratorConfig, generate, load_csv, split, write_csv
from .diagnostics import DiagnosticsReport, effective_sample_size, split_rhat, summarize
from .models import (
    FactorDesign,
    MeanSpec,
    ModelKind,
    ResponseVariant,
    build_design,
    eval_mean,
    mean_grad,
)
from .nls import ElicitedPriors, NlsResult, elicit_priors, fit_nls
from .nuts import PosteriorSamples, SamplerConfig, run_chains
from .selection import (
    ComparisonReport,
    FittedModel,
    bayes_factor,
    compare,
    loo,
    pointwise_loglik,
    waic,
)
from .target import GammaPrior, ParamVector, Posterior, PriorSpec, section5_priors

__version__ = "0.1.0"

__all__ = [
    "Dataset",
    "GeneratorConfig",
    "generate",
    "load_csv",
    "split",
    "write_csv",
    "DiagnosticsReport",
    "effective_sample_size",
    "split_rhat",
    "summarize",
    "FactorDesign",
    "MeanSpec",
    "ModelKind",
    "ResponseVariant",
    "build_design",
    "eval_mean",
    "mean_grad",
    "ElicitedPriors",
    "NlsResult",
    "elicit_priors",
    "fit_nls",
    "PosteriorSamples",
    "SamplerConfig",
    "run_chains",
    "ComparisonReport",
    "FittedModel",
    "bayes_factor",
    "compare",
    "loo",
    "pointwise_loglik",
    "waic",
    "GammaPrior",
    "ParamVector",
    "Posterior",
    "PriorSpec",
    "section5_priors",
    "__version__",
]
