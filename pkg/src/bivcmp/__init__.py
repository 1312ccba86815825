"""Bivariate Conway-Maxwell-Poisson regression for paired sports scores.

Fits home and away scores jointly with CMP margins, team attack, defense
and shape effects, and correlated game-level random effects, using an
Exchange-algorithm MCMC with exact CMP rejection sampling.
"""

__version__ = "0.1.0"

from .cmp import (CmpParams, NonConvergenceError, RejectionStats, SamplerStallError,  # noqa: E402
                  log_kernel, log_normalizing_constant, sample, sample_many)
from .model import (Design, GameRecord, ModelParameters, PriorSpec, build_design,  # noqa: E402
                    ha_functionals)
from .exchange import ChainConfig, CmpSampler, PosteriorDraws, run_chain, run_chains  # noqa: E402

__all__ = [
    "CmpParams", "RejectionStats", "SamplerStallError", "NonConvergenceError",
    "log_kernel", "log_normalizing_constant", "sample", "sample_many",
    "Design", "GameRecord", "ModelParameters", "PriorSpec", "build_design", "ha_functionals",
    "ChainConfig", "CmpSampler", "PosteriorDraws", "run_chain", "run_chains",
]
