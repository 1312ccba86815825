"""Exchange-algorithm MCMC for the bivariate CMP regression.

One sweep updates, in order: every game's random effect, the centering
block of each outcome, the shape block of each outcome, and the random
effect covariance.  Coefficient and random-effect moves are Gaussian
random walks whose proposal factors are tuned by robust adaptive
Metropolis (RAM) during burn-in and frozen afterwards.

Exchange moves draw auxiliary data exactly from the likelihood at the
proposed parameters, so the intractable normalizing constants cancel.  With
``log q(y) = nu * (y log mu - log y!)`` the log kernel ratios reduce to

* centering move:  ``nu * (y - y_aux) * (log mu' - log mu)``
* shape move:      ``(nu' - nu) * (s(y) - s(y_aux))``, ``s(y) = y log mu - log y!``

summed over the observations involved.
"""

from __future__ import annotations

import logging
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import stats
from scipy.special import gammaln

from .cmp import sample_many
from .model import Design, PriorSpec

log = logging.getLogger(__name__)

OUTCOME_NAMES = ("home", "away")


@dataclass(frozen=True)
class ChainConfig:
    n_iterations: int = 30_000
    burn_in: int = 10_000
    thin: int = 1
    target_acceptance: float = 0.40
    seed: int = 0
    n_chains: int = 1
    adaptation_decay_exponent: float = 2.0 / 3.0
    random_effect_thin: int = 10
    store_random_effects: bool = True

    def __post_init__(self):
        if not 0 <= self.burn_in < self.n_iterations:
            raise ValueError("need 0 <= burn_in < n_iterations")
        if self.thin < 1 or self.random_effect_thin < 1:
            raise ValueError("thinning factors must be >= 1")
        if not 0 < self.target_acceptance < 1:
            raise ValueError("target_acceptance must lie in (0, 1)")
        if self.n_chains < 1:
            raise ValueError("n_chains must be >= 1")

    @property
    def n_retained(self) -> int:
        return -(-(self.n_iterations - self.burn_in) // self.thin)


# ---------------------------------------------------------------------------
# robust adaptive Metropolis


def ram_adapt(S, u, alpha, n: int, target: float = 0.40, decay: float = 2.0 / 3.0):
    """One RAM update of the lower-triangular proposal factor ``S``.

    ``S S^T <- S (I + eta (alpha - target) u u^T / |u|^2) S^T`` with
    ``eta = min(1, d n^-decay)``.  Passing a batch ``u`` of shape ``(k, d)``
    with ``alpha`` of shape ``(k,)`` applies the average of the ``k``
    rank-one terms.
    """
    S = np.asarray(S, float)
    d = S.shape[0]
    u = np.atleast_2d(np.asarray(u, float))
    alpha = np.atleast_1d(np.asarray(alpha, float))
    norms = np.einsum("ki,ki->k", u, u)
    keep = norms > 0
    if not keep.any():
        return S
    eta = min(1.0, d * float(n) ** (-decay))
    w = (alpha[keep] - target) / norms[keep]
    M = np.einsum("k,ki,kj->ij", w, u[keep], u[keep]) / u.shape[0]
    while True:
        A = S @ (np.eye(d) + eta * M) @ S.T
        try:
            return np.linalg.cholesky(0.5 * (A + A.T))
        except np.linalg.LinAlgError:
            warnings.warn("RAM factor update lost positive definiteness; halving step")
            eta *= 0.5
            if eta < 1e-12:
                return S


@dataclass
class RamState:
    """Proposal factor plus acceptance counters for one block."""

    S: np.ndarray
    proposed: int = 0
    accepted: float = 0

    @classmethod
    def initial(cls, dim: int, scale: float = 0.1) -> "RamState":
        return cls(scale * np.eye(dim))

    def record(self, accepted, count: int = 1):
        self.proposed += count
        self.accepted += float(np.sum(accepted))

    @property
    def rate(self) -> float:
        return self.accepted / self.proposed if self.proposed else float("nan")


# ---------------------------------------------------------------------------
# Exchange acceptance ratios (pure functions)


def log_ratio_centering(y, y_aux, log_mu, log_mu_prop, nu):
    """Elementwise Z-free log ratio for a move of ``log mu``."""
    return nu * (y - y_aux) * (log_mu_prop - log_mu)


def log_ratio_shape(y, y_aux, log_mu, nu, nu_prop, lgy=None, lgy_aux=None):
    """Elementwise Z-free log ratio for a move of ``nu``."""
    lgy = gammaln(y + 1.0) if lgy is None else lgy
    lgy_aux = gammaln(y_aux + 1.0) if lgy_aux is None else lgy_aux
    s_obs = y * log_mu - lgy
    s_aux = y_aux * log_mu - lgy_aux
    return (nu_prop - nu) * (s_obs - s_aux)


def log_ratio_random_effect_prior(b, b_prop, Dinv):
    """Row-wise ``log N2(b'|0,D) - log N2(b|0,D)``."""
    q = np.einsum("ki,ij,kj->k", b_prop, Dinv, b_prop) - np.einsum("ki,ij,kj->k", b, Dinv, b)
    return -0.5 * q


def log_ratio_normal_prior(x, x_prop, mean, precision):
    d1, d0 = x_prop - mean, x - mean
    return -0.5 * (d1 @ precision @ d1 - d0 @ precision @ d0)


def sample_covariance(b, priors: PriorSpec, rng):
    """Draw ``D`` from its Wishart full conditional.

    ``D^{-1} | b ~ Wishart(n + v0, [R0^{-1} + sum b b^T]^{-1})``.
    Returns ``(D, D_inverse)``.
    """
    b = np.asarray(b, float).reshape(-1, 2)
    scale = np.linalg.inv(np.linalg.inv(priors.scale_matrix) + b.T @ b)
    scale = 0.5 * (scale + scale.T)
    Dinv = stats.wishart.rvs(df=b.shape[0] + priors.wishart_df, scale=scale, random_state=rng)
    Dinv = 0.5 * (Dinv + Dinv.T)
    try:
        np.linalg.cholesky(Dinv)
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("Wishart draw is not invertible; degenerate random effects") from exc
    D = np.linalg.inv(Dinv)
    return 0.5 * (D + D.T), Dinv


# ---------------------------------------------------------------------------
# draw storage


@dataclass
class ChainDraws:
    chain_id: int
    model: str
    seed: int
    spawn_key: tuple
    columns: tuple[str, ...]
    beta: np.ndarray                  # (N, 2, p)
    cov: np.ndarray                   # (N, 2, 2)
    gamma: np.ndarray | None = None   # (N, 2, p)
    kappa: np.ndarray | None = None   # (N, 2)
    b: np.ndarray | None = None       # (Nb, n, 2)
    b_index: np.ndarray | None = None  # retained-draw positions of b
    acceptance: dict = field(default_factory=dict)

    @property
    def n_draws(self) -> int:
        return self.beta.shape[0]

    def scalar_table(self) -> tuple[list[str], np.ndarray]:
        """Flat ``(names, values)`` with one column per scalar parameter."""
        names, cols = [], []
        p = len(self.columns)
        arrays = [("beta", self.beta)]
        if self.gamma is not None:
            arrays.append(("gamma", self.gamma))
        for stem, arr in arrays:
            for j, who in enumerate(OUTCOME_NAMES):
                for k in range(p):
                    names.append(f"{stem}_{who}[{k}]")
                    cols.append(arr[:, j, k])
        for (a, c) in ((0, 0), (0, 1), (1, 1)):
            names.append(f"cov[{a},{c}]")
            cols.append(self.cov[:, a, c])
        if self.kappa is not None:
            for j, who in enumerate(OUTCOME_NAMES):
                names.append(f"kappa_{who}")
                cols.append(self.kappa[:, j])
        return names, np.column_stack(cols)


@dataclass
class PosteriorDraws:
    chains: list[ChainDraws]
    model: str
    columns: tuple[str, ...]
    config: ChainConfig

    def stack(self, name: str) -> np.ndarray:
        return np.concatenate([getattr(c, name) for c in self.chains], axis=0)

    @property
    def n_chains(self) -> int:
        return len(self.chains)

    def random_effect_draws(self):
        """Retained positions (into :meth:`stack` arrays) and ``b`` draws."""
        idx, bs, offset = [], [], 0
        for c in self.chains:
            if c.b is not None:
                idx.append(c.b_index + offset)
                bs.append(c.b)
            offset += c.n_draws
        if not bs:
            return None, None
        return np.concatenate(idx), np.concatenate(bs)


# ---------------------------------------------------------------------------
# samplers


class GlmmSampler:
    """Shared machinery: bivariate random effects, centering blocks, D.

    Subclasses provide :meth:`_centering_log_ratio`, which scores a move of
    ``log mu`` for a set of observations, and may add blocks by extending
    :meth:`sweep`.
    """

    model = "glmm"

    def __init__(self, design: Design, priors: PriorSpec, config: ChainConfig,
                 rng: np.random.Generator, use_likelihood: bool = True):
        self.design = design
        self.priors = priors
        self.config = config
        self.rng = rng
        self.use_likelihood = use_likelihood
        self.y = design.y.astype(float)
        self.lgy = gammaln(self.y + 1.0)
        n, p = design.n_games, design.n_coef
        self.p = p
        means = self.y.mean(axis=0)
        self.beta = [np.zeros(p), np.zeros(p)]
        for j in range(2):
            self.beta[j][design.column_index("intercept")] = np.log(max(means[j], 0.1))
        self.b = np.zeros((n, 2))
        self.D = np.eye(2)
        self.Dinv = np.eye(2)
        self._refresh_log_mu()
        self.beta_mean = priors.mean("centering", p)
        self.beta_prec = priors.precision("centering", p)
        self.ram = {"b": RamState.initial(2)}
        for who in OUTCOME_NAMES:
            self.ram[f"beta_{who}"] = RamState.initial(p)
        self.iteration = 0
        self.adapting = True

    # predictors -----------------------------------------------------------
    def _refresh_log_mu(self):
        X = self.design.X
        self.log_mu = np.column_stack([X[j] @ self.beta[j] for j in range(2)]) + self.b

    def nu(self) -> np.ndarray:
        return np.ones_like(self.log_mu)

    # model hook -----------------------------------------------------------
    def _centering_log_ratio(self, cols, log_mu, log_mu_prop):
        """Per-observation log acceptance contribution, shape like ``log_mu``."""
        raise NotImplementedError

    # blocks ---------------------------------------------------------------
    def _accept(self, log_ratio):
        log_ratio = np.asarray(log_ratio, float)
        u = self.rng.random(log_ratio.shape)
        accept = np.log(u) < log_ratio
        alpha = np.exp(np.minimum(0.0, log_ratio))
        return accept, alpha

    def _adapt(self, key, u, alpha):
        if self.adapting:
            st = self.ram[key]
            st.S = ram_adapt(st.S, u, alpha, self.iteration, self.config.target_acceptance,
                             self.config.adaptation_decay_exponent)

    def update_random_effects(self):
        st = self.ram["b"]
        n = self.b.shape[0]
        u = self.rng.standard_normal((n, 2))
        b_prop = self.b + u @ st.S.T
        log_mu_prop = self.log_mu + (b_prop - self.b)
        lr = log_ratio_random_effect_prior(self.b, b_prop, self.Dinv)
        if self.use_likelihood:
            lr = lr + self._centering_log_ratio((0, 1), self.log_mu, log_mu_prop).sum(axis=1)
        accept, alpha = self._accept(lr)
        self.b[accept] = b_prop[accept]
        self.log_mu[accept] = log_mu_prop[accept]
        st.record(accept, n)
        self._adapt("b", u, alpha)
        return accept

    def update_centering(self, j: int):
        key = f"beta_{OUTCOME_NAMES[j]}"
        st = self.ram[key]
        u = self.rng.standard_normal(self.p)
        prop = self.beta[j] + st.S @ u
        lmj = self.log_mu[:, j]
        lmj_prop = lmj + self.design.X[j] @ (prop - self.beta[j])
        lr = log_ratio_normal_prior(self.beta[j], prop, self.beta_mean, self.beta_prec)
        if self.use_likelihood:
            lr += float(self._centering_log_ratio((j,), lmj[:, None], lmj_prop[:, None]).sum())
        accept, alpha = self._accept(lr)
        if accept:
            self.beta[j] = prop
            self.log_mu[:, j] = lmj_prop
        st.record(accept)
        self._adapt(key, u, alpha)
        return bool(accept)

    def update_coefficient_block(self, j: int, family: str = "centering"):
        if family == "centering":
            return self.update_centering(j)
        raise ValueError(f"{type(self).__name__} has no {family!r} block")

    def update_covariance(self):
        self.D, self.Dinv = sample_covariance(self.b, self.priors, self.rng)
        return self.D

    def sweep(self):
        self.update_random_effects()
        for j in range(2):
            self.update_centering(j)
        self.update_covariance()

    # chain ----------------------------------------------------------------
    def _extra_storage(self, N):
        return {}

    def _store_extra(self, store, k):
        pass

    def run(self, chain_id: int = 0, seed: int = 0, spawn_key: tuple = ()) -> ChainDraws:
        cfg = self.config
        N = cfg.n_retained
        beta = np.empty((N, 2, self.p))
        cov = np.empty((N, 2, 2))
        extra = self._extra_storage(N)
        b_every = cfg.random_effect_thin if cfg.store_random_effects else None
        b_draws, b_index = [], []
        k = 0
        for it in range(cfg.n_iterations):
            self.iteration = it + 1
            self.adapting = it < cfg.burn_in
            if it == cfg.burn_in:
                for st in self.ram.values():
                    st.proposed, st.accepted = 0, 0
            self.sweep()
            if it >= cfg.burn_in and (it - cfg.burn_in) % cfg.thin == 0:
                beta[k] = self.beta
                cov[k] = self.D
                self._store_extra(extra, k)
                if b_every is not None and k % b_every == 0:
                    b_draws.append(self.b.copy())
                    b_index.append(k)
                k += 1
        acceptance = {key: st.rate for key, st in self.ram.items()}
        return ChainDraws(
            chain_id=chain_id, model=self.model, seed=seed, spawn_key=tuple(spawn_key),
            columns=self.design.columns, beta=beta, cov=cov,
            b=np.array(b_draws) if b_draws else None,
            b_index=np.array(b_index, dtype=np.int64) if b_index else None,
            acceptance=acceptance, **extra)


class CmpSampler(GlmmSampler):
    """Exchange updates for the CMP model.

    ``fix_shape=True`` pins every shape parameter at 1 (``gamma = 0``) and
    skips the shape blocks, which turns the model into a Poisson GLMM while
    keeping the Exchange machinery for the centering moves.
    """

    model = "cmp"

    def __init__(self, design, priors, config, rng, use_likelihood=True, fix_shape=False):
        super().__init__(design, priors, config, rng, use_likelihood)
        self.fix_shape = fix_shape
        self.gamma = [np.zeros(self.p), np.zeros(self.p)]
        self.log_nu = np.zeros_like(self.log_mu)
        self.gamma_mean = priors.mean("shape", self.p)
        self.gamma_prec = priors.precision("shape", self.p)
        if not fix_shape:
            for who in OUTCOME_NAMES:
                self.ram[f"gamma_{who}"] = RamState.initial(self.p)

    def nu(self):
        return np.exp(self.log_nu)

    def _refresh_log_nu(self):
        X = self.design.X
        self.log_nu = np.column_stack([X[j] @ self.gamma[j] for j in range(2)])

    def set_state(self, beta=None, gamma=None, b=None, D=None):
        if beta is not None:
            self.beta = [np.array(v, float) for v in beta]
        if gamma is not None:
            self.gamma = [np.array(v, float) for v in gamma]
        if b is not None:
            self.b = np.array(b, float)
        if D is not None:
            self.D = np.array(D, float)
            self.Dinv = np.linalg.inv(self.D)
        self._refresh_log_mu()
        self._refresh_log_nu()

    def _centering_log_ratio(self, cols, log_mu, log_mu_prop):
        nu = np.exp(self.log_nu[:, list(cols)])
        y = self.y[:, list(cols)]
        y_aux = sample_many(np.exp(log_mu_prop), nu, self.rng)
        return log_ratio_centering(y, y_aux, log_mu, log_mu_prop, nu)

    def update_shape(self, j: int):
        key = f"gamma_{OUTCOME_NAMES[j]}"
        st = self.ram[key]
        u = self.rng.standard_normal(self.p)
        prop = self.gamma[j] + st.S @ u
        lnj = self.log_nu[:, j]
        lnj_prop = lnj + self.design.X[j] @ (prop - self.gamma[j])
        lr = log_ratio_normal_prior(self.gamma[j], prop, self.gamma_mean, self.gamma_prec)
        if self.use_likelihood:
            nu_prop = np.exp(lnj_prop)
            lmj = self.log_mu[:, j]
            y_aux = sample_many(np.exp(lmj), nu_prop, self.rng).astype(float)
            lr += float(log_ratio_shape(self.y[:, j], y_aux, lmj, np.exp(lnj), nu_prop,
                                        lgy=self.lgy[:, j]).sum())
        accept, alpha = self._accept(lr)
        if accept:
            self.gamma[j] = prop
            self.log_nu[:, j] = lnj_prop
        st.record(accept)
        self._adapt(key, u, alpha)
        return bool(accept)

    def update_coefficient_block(self, j, family="centering"):
        if family == "shape":
            if self.fix_shape:
                raise ValueError("shape blocks are pinned")
            return self.update_shape(j)
        return super().update_coefficient_block(j, family)

    def sweep(self):
        self.update_random_effects()
        for j in range(2):
            self.update_centering(j)
        if not self.fix_shape:
            for j in range(2):
                self.update_shape(j)
        self.update_covariance()

    def _extra_storage(self, N):
        return {"gamma": np.zeros((N, 2, self.p))}

    def _store_extra(self, store, k):
        store["gamma"][k] = self.gamma


# ---------------------------------------------------------------------------
# orchestration


def chain_seeds(seed: int, n_chains: int):
    return np.random.SeedSequence(seed).spawn(n_chains)


def run_chain(config: ChainConfig, design: Design, priors: PriorSpec,
              sampler_cls=CmpSampler, chain_id: int = 0, **sampler_kwargs) -> ChainDraws:
    """Run chain ``chain_id`` of ``config`` from its own seed substream."""
    ss = chain_seeds(config.seed, chain_id + 1)[chain_id]
    rng = np.random.default_rng(ss)
    sampler = sampler_cls(design, priors, config, rng, **sampler_kwargs)
    draws = sampler.run(chain_id=chain_id, seed=config.seed, spawn_key=ss.spawn_key)
    log.info("chain %d (%s) acceptance: %s", chain_id, sampler.model,
             {k: round(v, 3) for k, v in draws.acceptance.items()})
    return draws


def _run_chain_job(args):
    config, design, priors, cls, cid, kwargs = args
    return run_chain(config, design, priors, cls, cid, **kwargs)


def run_chains(config: ChainConfig, design: Design, priors: PriorSpec,
               sampler_cls=CmpSampler, n_jobs: int = 1, **sampler_kwargs) -> PosteriorDraws:
    """All ``config.n_chains`` chains; identical output for any ``n_jobs``."""
    jobs = [(config, design, priors, sampler_cls, c, sampler_kwargs)
            for c in range(config.n_chains)]
    if n_jobs > 1 and config.n_chains > 1:
        with ProcessPoolExecutor(max_workers=n_jobs) as pool:
            chains = list(pool.map(_run_chain_job, jobs))
    else:
        chains = [_run_chain_job(j) for j in jobs]
    return PosteriorDraws(chains, sampler_cls.model, design.columns, config)
