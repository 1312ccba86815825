"""Model assessment: DIC, convergence, predictive checks, dispersion and
simple descriptive statistics."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from scipy import stats
from scipy.special import gammaln

from .baselines import nb_logpmf, poisson_logpmf
from .cmp import count_attempts, log_normalizing_constant, sample_many
from .exchange import OUTCOME_NAMES, PosteriorDraws
from .model import Design


@dataclass(frozen=True)
class DicReport:
    mean_deviance: float
    deviance_at_mean: float
    effective_parameters: float
    dic: float
    n_posterior_samples_used: int
    estimator: str

    @classmethod
    def from_deviances(cls, deviances, deviance_at_mean, estimator):
        dbar = float(np.mean(deviances))
        pd_ = dbar - float(deviance_at_mean)
        return cls(dbar, float(deviance_at_mean), pd_, dbar + pd_, len(deviances), estimator)


# ---------------------------------------------------------------------------
# pieces of the posterior needed by the deviance


def _subsample(draws: PosteriorDraws, n_samples, rng):
    idx, b = draws.random_effect_draws()
    if idx is None:
        raise ValueError("DIC needs stored random-effect draws")
    if n_samples is not None and n_samples < idx.size:
        pick = np.sort(rng.choice(idx.size, size=n_samples, replace=False))
        idx, b = idx[pick], b[pick]
    out = {"beta": draws.stack("beta")[idx], "b": b}
    if draws.chains[0].gamma is not None:
        out["gamma"] = draws.stack("gamma")[idx]
    if draws.chains[0].kappa is not None:
        out["kappa"] = draws.stack("kappa")[idx]
    return out


def _predictors(design, beta, b, gamma=None):
    log_mu = np.column_stack([design.X[j] @ beta[j] for j in range(2)]) + b
    if gamma is None:
        return log_mu, np.zeros_like(log_mu)
    log_nu = np.column_stack([design.X[j] @ gamma[j] for j in range(2)])
    return log_mu, log_nu


def _split(dev_pairs, dev_mean_pair, estimator):
    dev_pairs = np.asarray(dev_pairs)
    reports = {}
    for j, who in enumerate(OUTCOME_NAMES):
        reports[who] = DicReport.from_deviances(dev_pairs[:, j], dev_mean_pair[j], estimator)
    reports["total"] = DicReport.from_deviances(dev_pairs.sum(axis=1), sum(dev_mean_pair),
                                                estimator)
    return reports


def _exact_loglik(model, design, log_mu, kappa=None, log_nu=None):
    y = design.y
    if model == "poisson":
        return poisson_logpmf(y, np.exp(log_mu))
    if model == "negative_binomial":
        return nb_logpmf(y, np.exp(log_mu), np.asarray(kappa)[None, :])
    if model == "cmp":
        # series evaluation; only sensible for validation-size problems
        mu, nu = np.exp(log_mu), np.exp(log_nu)
        logz = np.vectorize(log_normalizing_constant)(mu, nu)
        return nu * (y * log_mu - gammaln(y + 1.0)) - logz
    raise ValueError(f"unknown model {model!r}")


def dic_exact(draws: PosteriorDraws, design: Design, model: str | None = None,
              n_samples: int | None = 100, rng=None, allow_series: bool = False
              ) -> dict[str, DicReport]:
    """Conditional DIC with the exact likelihood, reported per outcome.

    ``model`` defaults to ``draws.model``.  CMP draws are refused unless
    ``allow_series`` is set, in which case ``Z`` is evaluated by truncated
    series (meant for small validation problems).
    """
    model = model or draws.model
    if model != draws.model:
        raise ValueError(f"draws come from {draws.model!r}, not {model!r}")
    if model == "cmp" and not allow_series:
        raise ValueError("the CMP likelihood is intractable; use dic_cmp")
    rng = np.random.default_rng(0) if rng is None else rng
    sub = _subsample(draws, n_samples, rng)
    devs = []
    for k in range(sub["beta"].shape[0]):
        gamma = sub["gamma"][k] if "gamma" in sub else None
        log_mu, log_nu = _predictors(design, sub["beta"][k], sub["b"][k], gamma)
        kappa = sub["kappa"][k] if "kappa" in sub else None
        devs.append(-2.0 * _exact_loglik(model, design, log_mu, kappa, log_nu).sum(axis=0))
    means = {k: v.mean(axis=0) for k, v in sub.items()}
    log_mu, log_nu = _predictors(design, means["beta"], means["b"], means.get("gamma"))
    dev_mean = -2.0 * _exact_loglik(model, design, log_mu, means.get("kappa"), log_nu).sum(axis=0)
    return _split(devs, dev_mean, "exact")


def likelihood_estimate(y, mu, nu, r: int, rng) -> np.ndarray:
    """Log of an unbiased estimate of each CMP likelihood term.

    Returns ``log f_hat`` where ``f_hat = q(y) * (M / r) / (B * Z_g)`` and
    ``M`` is the number of proposals the rejection sampler needs for ``r``
    acceptances.  ``M / r`` is unbiased for ``1 / P(accept)`` and
    ``P(accept) = Z / (B * Z_g)``.
    """
    if r < 1:
        raise ValueError("r must be >= 1")
    y = np.asarray(y, float)
    M, log_b, log_zg = count_attempts(mu, nu, r, rng)
    log_q = nu * (y * np.log(mu) - gammaln(y + 1.0))
    return log_q + np.log(M / r) - log_b - log_zg


def dic_cmp(draws: PosteriorDraws, design: Design, r: int = 1000, n_samples: int | None = 100,
            rng=None) -> dict[str, DicReport]:
    """Conditional DIC for the CMP model with the rejection-count likelihood
    estimator plugged in at every posterior sample and at the posterior mean."""
    if r < 2:
        raise ValueError("r must be >= 2")
    if draws.model != "cmp":
        raise ValueError("dic_cmp needs CMP draws")
    rng = np.random.default_rng(0) if rng is None else rng
    sub = _subsample(draws, n_samples, rng)
    y = design.y
    devs = []
    for k in range(sub["beta"].shape[0]):
        log_mu, log_nu = _predictors(design, sub["beta"][k], sub["b"][k], sub["gamma"][k])
        devs.append(-2.0 * likelihood_estimate(y, np.exp(log_mu), np.exp(log_nu), r, rng).sum(axis=0))
    means = {k: v.mean(axis=0) for k, v in sub.items()}
    log_mu, log_nu = _predictors(design, means["beta"], means["b"], means["gamma"])
    dev_mean = -2.0 * likelihood_estimate(y, np.exp(log_mu), np.exp(log_nu), r, rng).sum(axis=0)
    return _split(devs, dev_mean, "unbiased_rejection")


def dic(draws: PosteriorDraws, design: Design, r: int = 1000, n_samples: int | None = 100,
        rng=None) -> dict[str, DicReport]:
    if draws.model == "cmp":
        return dic_cmp(draws, design, r, n_samples, rng)
    return dic_exact(draws, design, None, n_samples, rng)


# ---------------------------------------------------------------------------
# convergence


def psrf(chains) -> float:
    """Brooks-Gelman multivariate potential scale reduction factor.

    ``chains`` has shape ``(m, n)`` or ``(m, n, k)``.
    """
    x = np.asarray(chains, float)
    if x.ndim == 2:
        x = x[..., None]
    m, n, k = x.shape
    if m < 2 or n < 10:
        raise ValueError("psrf needs at least 2 chains of length >= 10")
    W = np.mean([np.atleast_2d(np.cov(c, rowvar=False)) for c in x], axis=0)
    means = x.mean(axis=1)
    B_n = np.atleast_2d(np.cov(means, rowvar=False))
    try:
        lam = scipy.linalg.eigh(B_n, W, eigvals_only=True)[-1]
    except np.linalg.LinAlgError as exc:
        raise np.linalg.LinAlgError("within-chain covariance is singular") from exc
    return float((n - 1) / n + (m + 1) / m * lam)


def _autocorr(x):
    n = x.size
    xc = x - x.mean()
    f = np.fft.rfft(xc, n=2 * n)
    acov = np.fft.irfft(f * np.conj(f))[:n] / n
    return acov / acov[0]


def ess(chain) -> float:
    """Effective sample size with Geyer's initial monotone sequence, capped
    at the chain length."""
    x = np.asarray(chain, float).ravel()
    n = x.size
    if n < 10:
        raise ValueError("ess needs a chain of length >= 10")
    if np.ptp(x) == 0:
        warnings.warn("constant chain; effective sample size set to 0")
        return 0.0
    rho = _autocorr(x)
    n_pairs = n // 2
    gam = rho[0:2 * n_pairs:2] + rho[1:2 * n_pairs:2]
    neg = np.flatnonzero(gam <= 0)
    gam = gam[: neg[0]] if neg.size else gam
    gam = np.minimum.accumulate(gam)
    tau = -1.0 + 2.0 * gam.sum()
    return float(min(n, n / tau))


# ---------------------------------------------------------------------------
# predictive checks


def posterior_predictive(draws: PosteriorDraws, design: Design, rng, n_replicates: int | None = 200,
                         max_count: int | None = None):
    """Replicated data sets with fresh random effects.

    Returns ``(values, freqs)`` where ``freqs[r, j, k]`` is the number of
    games in replicate ``r`` whose outcome ``j`` equals ``values[k]``.  The
    last value bin also collects everything above it.
    """
    beta = draws.stack("beta")
    cov = draws.stack("cov")
    gamma = draws.stack("gamma") if draws.chains[0].gamma is not None else None
    kappa = draws.stack("kappa") if draws.chains[0].kappa is not None else None
    N = beta.shape[0]
    pick = np.arange(N) if n_replicates is None or n_replicates >= N else \
        np.sort(rng.choice(N, size=n_replicates, replace=False))
    if max_count is None:
        max_count = int(design.y.max()) + 5
    values = np.arange(max_count + 1)
    freqs = np.zeros((pick.size, 2, max_count + 1), dtype=np.int64)
    n = design.n_games
    for r, k in enumerate(pick):
        b = rng.multivariate_normal(np.zeros(2), cov[k], size=n)
        log_mu, log_nu = _predictors(design, beta[k], b, None if gamma is None else gamma[k])
        mu = np.exp(log_mu)
        if draws.model == "cmp":
            y = sample_many(mu, np.exp(log_nu), rng)
        elif draws.model == "poisson":
            y = rng.poisson(mu)
        else:
            kap = kappa[k][None, :]
            y = rng.negative_binomial(kap, kap / (kap + mu))
        y = np.minimum(y, max_count)
        for j in range(2):
            freqs[r, j] = np.bincount(y[:, j], minlength=max_count + 1)
    return values, freqs


def observed_frequencies(design: Design, max_count: int):
    y = np.minimum(design.y, max_count)
    return np.stack([np.bincount(y[:, j], minlength=max_count + 1) for j in range(2)])


def rootogram_data(observed, expected):
    """Hanging rootogram: curve ``sqrt(expected)``, bars of height
    ``sqrt(observed)`` hanging from it; a perfect fit has bottoms at 0."""
    observed = np.asarray(observed, float)
    expected = np.asarray(expected, float)
    if observed.shape != expected.shape:
        raise ValueError("observed and expected must share the support grid")
    curve = np.sqrt(expected)
    return {"value": np.arange(observed.size), "sqrt_expected": curve,
            "sqrt_observed": np.sqrt(observed), "bar_bottom": curve - np.sqrt(observed)}


# ---------------------------------------------------------------------------
# dispersion and descriptives


@dataclass(frozen=True)
class DispersionSummary:
    teams: tuple[str, ...]
    index: np.ndarray     # (T, T) rows = home team, cols = away team; NaN = absent
    counts: np.ndarray
    sigma_p: float | None = None

    @property
    def absent(self) -> np.ndarray:
        return np.isnan(self.index)


def index_of_dispersion(design: Design, outcome: int, with_sigma_p: bool = True) -> DispersionSummary:
    """Variance-to-mean ratio of outcome ``outcome`` per (home team, away team) cell."""
    T = len(design.teams)
    y = design.y[:, outcome].astype(float)
    idx = np.full((T, T), np.nan)
    counts = np.zeros((T, T), dtype=np.int64)
    np.add.at(counts, (design.home_index, design.away_index), 1)
    for h, a in zip(*np.nonzero(counts >= 2)):
        cell = y[(design.home_index == h) & (design.away_index == a)]
        m = cell.mean()
        if m > 0:
            idx[h, a] = cell.var(ddof=1) / m
    sp = dispersion_stat(design, outcome) if with_sigma_p else None
    return DispersionSummary(design.teams, idx, counts, sp)


def dispersion_stat(design: Design, outcome: int) -> float:
    """Pearson chi-square of a Poisson GLM fit over residual degrees of freedom."""
    import statsmodels.api as sm

    X = design.X[outcome]
    y = design.y[:, outcome]
    res = sm.GLM(y, X, family=sm.families.Poisson()).fit()
    return float(res.pearson_chi2 / res.df_resid)


def spearman(x, y) -> float:
    x, y = np.asarray(x, float), np.asarray(y, float)
    if x.size < 3 or x.size != y.size:
        raise ValueError("spearman needs two equal-length samples of size >= 3")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        warnings.warn("constant sample; rank correlation undefined")
        return float("nan")
    return float(stats.spearmanr(x, y).statistic)


def anova_oneway(values, groups) -> tuple[float, float]:
    """One-way ANOVA of ``values`` split by the labels ``groups``."""
    values = np.asarray(values, float)
    groups = np.asarray(groups)
    samples = [values[groups == g] for g in np.unique(groups)]
    samples = [s for s in samples if s.size >= 2]
    if len(samples) < 2:
        raise ValueError("anova needs at least two groups with two members")
    if all(np.ptp(s) == 0 for s in samples):
        warnings.warn("zero within-group variance; F statistic undefined")
        return float("nan"), float("nan")
    res = stats.f_oneway(*samples)
    return float(res.statistic), float(res.pvalue)


def posterior_summary(x) -> dict[str, float]:
    x = np.asarray(x, float)
    q = np.percentile(x, [2.5, 50, 97.5])
    return {"mean": float(x.mean()), "sd": float(x.std(ddof=1)) if x.size > 1 else 0.0,
            "q2.5": float(q[0]), "q50": float(q[1]), "q97.5": float(q[2])}


def mu_mse(draws: PosteriorDraws, design: Design, true_mu) -> np.ndarray:
    """Per-outcome mean squared error of the posterior mean of ``mu_ij``."""
    idx, b = draws.random_effect_draws()
    if idx is None:
        raise ValueError("needs stored random-effect draws")
    beta = draws.stack("beta")[idx]
    log_mu = np.einsum("jnp,sjp->snj", np.stack(design.X), beta) + b
    post = np.exp(log_mu).mean(axis=0)
    return ((post - np.asarray(true_mu)) ** 2).mean(axis=0)
