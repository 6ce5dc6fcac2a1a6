"""Exponentially tilted Gaussian prior for VAEs.

The package is organized around the prior itself (`tilted`), the log-domain
special functions it needs (`specfn`), samplers (`sampler`), a small numpy
VAE with manual reverse-mode gradients (`vae`), out-of-distribution scoring
(`ood`), dataset loaders/generators (`data`), and a reproducible CLI (`cli`).
"""

__version__ = "0.1.0"

from .specfn import LogScaled, chi_mean, laguerre_half, log_gamma_ratio, log_kummer_m
from .tilted import (
    GammaSolverConfig,
    SweepReport,
    TiltedPrior,
    exact_kld,
    log_density,
    log_normalizer,
    quadratic_kld,
    solve_gamma,
    verify_bound_sweep,
)

__all__ = [
    "LogScaled",
    "chi_mean",
    "laguerre_half",
    "log_gamma_ratio",
    "log_kummer_m",
    "TiltedPrior",
    "GammaSolverConfig",
    "SweepReport",
    "log_density",
    "log_normalizer",
    "exact_kld",
    "quadratic_kld",
    "solve_gamma",
    "verify_bound_sweep",
    "__version__",
]
