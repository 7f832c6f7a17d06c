from .diagnostics import DegenerateChainWarning, ess, r_hat, summarize
from .hmc import DivergenceWarning, HmcConfig, HmcRun, hmc_sample, leapfrog
from .models import (
    BinomialObs,
    CallableTarget,
    DecoderField,
    ExactGpField,
    GaussianObs,
    NegBinObs,
    NonFiniteDensityError,
    Posterior,
    binary_condition_relaxation,
    binom_spatial_model,
    gp_exact_model,
    log_posterior,
    negbin_logpmf,
    prior_cvae_model,
    prior_vae_model,
    scale_field,
    sir_cvae_model,
)

__all__ = [
    "BinomialObs",
    "CallableTarget",
    "DecoderField",
    "DegenerateChainWarning",
    "DivergenceWarning",
    "ExactGpField",
    "GaussianObs",
    "HmcConfig",
    "HmcRun",
    "NegBinObs",
    "NonFiniteDensityError",
    "Posterior",
    "binary_condition_relaxation",
    "binom_spatial_model",
    "ess",
    "gp_exact_model",
    "hmc_sample",
    "leapfrog",
    "log_posterior",
    "negbin_logpmf",
    "prior_cvae_model",
    "prior_vae_model",
    "r_hat",
    "scale_field",
    "sir_cvae_model",
    "summarize",
]
