"""MCMC inference for the chance model."""

from .diagnostics import ChainDiagnostics, ParameterSummary, effective_sample_size, split_rhat, summarise
from .draws import PosteriorDraws, read_draws, write_draws, write_trace_csv
from .kernels import AdaptiveScale, RWMStep, rwm_update, tau_log_conditional, update_tau
from .sampler import FitResult, SamplerConfig, diagnostics, fit, group_rng

__all__ = [
    "AdaptiveScale",
    "ChainDiagnostics",
    "FitResult",
    "ParameterSummary",
    "PosteriorDraws",
    "RWMStep",
    "SamplerConfig",
    "diagnostics",
    "effective_sample_size",
    "fit",
    "group_rng",
    "read_draws",
    "rwm_update",
    "split_rhat",
    "summarise",
    "tau_log_conditional",
    "update_tau",
    "write_draws",
    "write_trace_csv",
]
