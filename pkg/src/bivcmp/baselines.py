"""Poisson and Negative Binomial GLMM competitors.

Same centering predictor and bivariate game random effects as the CMP
model, fitted with the same RAM random-walk machinery but with exact
Metropolis-Hastings ratios.  The Negative Binomial uses the (mean, size)
parameterization ``Var = mu + mu**2 / kappa`` with one size per outcome and
a Normal(0, 10) prior on ``log kappa``.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import betaln, gammaln

from .exchange import (OUTCOME_NAMES, ChainConfig, GlmmSampler, PosteriorDraws, RamState,
                       run_chains)
from .model import Design, PriorSpec

KINDS = ("poisson", "negative_binomial")
LOG_KAPPA_PRIOR_VAR = 10.0


@dataclass(frozen=True)
class BaselineKind:
    kind: str
    nb_dispersion: tuple[float, float] | None = None

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"kind must be one of {KINDS}")
        if self.kind == "negative_binomial":
            if self.nb_dispersion is not None and min(self.nb_dispersion) <= 0:
                raise ValueError("nb_dispersion must be positive")
        elif self.nb_dispersion is not None:
            raise ValueError("nb_dispersion only applies to the negative binomial")


def poisson_logpmf(y, mu):
    y = np.asarray(y, float)
    mu = np.asarray(mu, float)
    return y * np.log(mu) - mu - gammaln(y + 1.0)


def nb_logpmf(y, mu, kappa):
    """log NB(y | mean mu, size kappa); stable as ``kappa`` grows."""
    y = np.asarray(y, float)
    mu = np.asarray(mu, float)
    kappa = np.asarray(kappa, float)
    # log C(y + kappa - 1, y) = -log(y + kappa) - log B(kappa, y + 1)
    comb = np.where(y > 0, -np.log(y + kappa) - betaln(kappa, y + 1.0), 0.0)
    return comb - kappa * np.log1p(mu / kappa) + y * (np.log(mu) - np.log(kappa + mu))


class PoissonSampler(GlmmSampler):
    model = "poisson"

    def _centering_log_ratio(self, cols, log_mu, log_mu_prop):
        y = self.y[:, list(cols)]
        return y * (log_mu_prop - log_mu) - (np.exp(log_mu_prop) - np.exp(log_mu))

    def log_likelihood(self, log_mu):
        return poisson_logpmf(self.y, np.exp(log_mu))


class NegBinSampler(GlmmSampler):
    model = "negative_binomial"

    def __init__(self, design, priors, config, rng, use_likelihood=True, kappa_init=(10.0, 10.0)):
        super().__init__(design, priors, config, rng, use_likelihood)
        self.log_kappa = np.log(np.asarray(kappa_init, float))
        for who in OUTCOME_NAMES:
            self.ram[f"kappa_{who}"] = RamState.initial(1, 0.3)

    def _centering_log_ratio(self, cols, log_mu, log_mu_prop):
        cols = list(cols)
        y = self.y[:, cols]
        kappa = np.exp(self.log_kappa[cols])
        return nb_logpmf(y, np.exp(log_mu_prop), kappa) - nb_logpmf(y, np.exp(log_mu), kappa)

    def update_kappa(self, j: int):
        key = f"kappa_{OUTCOME_NAMES[j]}"
        st = self.ram[key]
        u = self.rng.standard_normal(1)
        cur = self.log_kappa[j]
        prop = cur + float(st.S[0, 0] * u[0])
        lr = -0.5 * (prop ** 2 - cur ** 2) / LOG_KAPPA_PRIOR_VAR
        if self.use_likelihood:
            y, mu = self.y[:, j], np.exp(self.log_mu[:, j])
            lr += float(np.sum(nb_logpmf(y, mu, np.exp(prop)) - nb_logpmf(y, mu, np.exp(cur))))
        accept, alpha = self._accept(lr)
        if accept:
            self.log_kappa[j] = prop
        st.record(accept)
        self._adapt(key, u, alpha)
        return bool(accept)

    def sweep(self):
        self.update_random_effects()
        for j in range(2):
            self.update_centering(j)
        for j in range(2):
            self.update_kappa(j)
        self.update_covariance()

    def _extra_storage(self, N):
        return {"kappa": np.zeros((N, 2))}

    def _store_extra(self, store, k):
        store["kappa"][k] = np.exp(self.log_kappa)


SAMPLERS = {"poisson": PoissonSampler, "negative_binomial": NegBinSampler}


def fit_baseline(kind: BaselineKind | str, design: Design, priors: PriorSpec,
                 config: ChainConfig, n_jobs: int = 1) -> PosteriorDraws:
    if isinstance(kind, str):
        kind = BaselineKind(kind)
    kwargs = {}
    if kind.nb_dispersion is not None:
        kwargs["kappa_init"] = kind.nb_dispersion
    return run_chains(config, design, priors, SAMPLERS[kind.kind], n_jobs=n_jobs, **kwargs)
