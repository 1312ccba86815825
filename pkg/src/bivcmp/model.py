"""Bivariate CMP regression: data records, design matrices, priors and
likelihood kernels.

Each game contributes two outcomes (home score, away score).  Both the
centering and the shape predictors of outcome ``j`` share one design
matrix ``X_j`` whose columns are

    intercept | attack[team ...] | defense[team ...] | phase[...]

where ``attack`` refers to the scoring team and ``defense`` to the
conceding team.  Team blocks use sum-to-zero coding: the last team of the
roster has no column and its effect is minus the sum of the others.  Phase
offsets are indicator columns relative to the ``during`` reference level.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy import stats
from scipy.special import gammaln

PHASES = ("before", "during", "after")
REFERENCE_PHASE = "during"
OUTCOMES = ("home", "away")


@dataclass(frozen=True)
class GameRecord:
    game_id: str
    season: str
    home_team: str
    away_team: str
    home_score: int
    away_score: int
    phase: str = REFERENCE_PHASE

    def __post_init__(self):
        if self.home_team == self.away_team:
            raise ValueError(f"game {self.game_id}: a team cannot play itself")
        if self.home_score < 0 or self.away_score < 0:
            raise ValueError(f"game {self.game_id}: scores must be nonnegative")
        if self.phase not in PHASES:
            raise ValueError(f"game {self.game_id}: unknown phase {self.phase!r}")


@dataclass(frozen=True)
class Design:
    """Dense design bundle for ``n`` games.

    ``X[j]`` is the ``(n, p)`` design of outcome ``j`` (0 = home, 1 = away);
    ``y`` is the ``(n, 2)`` score matrix.
    """

    X: tuple[np.ndarray, np.ndarray]
    y: np.ndarray
    columns: tuple[str, ...]
    teams: tuple[str, ...]
    phase_levels: tuple[str, ...]
    home_index: np.ndarray
    away_index: np.ndarray

    @property
    def n_games(self) -> int:
        return self.y.shape[0]

    @property
    def n_coef(self) -> int:
        return len(self.columns)

    def column_index(self, name: str) -> int:
        return self.columns.index(name)

    def metadata(self) -> dict:
        return {
            "columns": list(self.columns),
            "teams": list(self.teams),
            "reference_team": self.teams[-1],
            "phase_levels": list(self.phase_levels),
            "reference_phase": REFERENCE_PHASE,
            "coding": "sum-to-zero team effects; phase indicators vs reference",
            "outcome_roles": {
                "home": "attack = home team, defense = away team",
                "away": "attack = away team, defense = home team",
            },
        }


def _phase_levels(games, phases):
    if phases == "all":
        return tuple(p for p in PHASES if p != REFERENCE_PHASE)
    if phases == "auto":
        seen = {g.phase for g in games}
        return tuple(p for p in PHASES if p != REFERENCE_PHASE and p in seen)
    raise ValueError(f"phases must be 'auto' or 'all', got {phases!r}")


def _sum_to_zero(index: np.ndarray, n_teams: int) -> np.ndarray:
    n = index.size
    out = np.zeros((n, n_teams - 1))
    last = index == n_teams - 1
    rows = np.flatnonzero(~last)
    out[rows, index[rows]] = 1.0
    out[last, :] = -1.0
    return out


def build_design(games: Sequence[GameRecord], teams: Sequence[str] | None = None,
                 phases: str = "auto") -> Design:
    """Assemble the two outcome designs.

    ``teams`` fixes the roster order (the last team is the sum-to-zero
    reference); by default teams are sorted by name.  With ``phases="auto"``
    only non-reference phases present in ``games`` get a column; ``"all"``
    always includes both ``before`` and ``after``.
    """
    if len(games) == 0:
        raise ValueError("build_design needs at least one game")
    if teams is None:
        teams = sorted({g.home_team for g in games} | {g.away_team for g in games})
    teams = tuple(teams)
    if len(teams) < 2:
        raise ValueError("roster must contain at least two teams")
    if len(set(teams)) != len(teams):
        raise ValueError("roster contains duplicates")
    pos = {t: k for k, t in enumerate(teams)}
    try:
        home = np.array([pos[g.home_team] for g in games])
        away = np.array([pos[g.away_team] for g in games])
    except KeyError as exc:
        raise ValueError(f"unknown team id {exc.args[0]!r}") from None
    levels = _phase_levels(games, phases)
    n, T = len(games), len(teams)
    phase_cols = np.array([[g.phase == lv for lv in levels] for g in games],
                          dtype=float).reshape(n, len(levels))
    ones = np.ones((n, 1))
    a_home, a_away = _sum_to_zero(home, T), _sum_to_zero(away, T)
    X_home = np.hstack([ones, a_home, a_away, phase_cols])
    X_away = np.hstack([ones, a_away, a_home, phase_cols])
    columns = (("intercept",)
               + tuple(f"attack[{t}]" for t in teams[:-1])
               + tuple(f"defense[{t}]" for t in teams[:-1])
               + tuple(f"phase[{lv}]" for lv in levels))
    y = np.array([[g.home_score, g.away_score] for g in games], dtype=np.int64)
    for M in (X_home, X_away):
        M.setflags(write=False)
    y.setflags(write=False)
    return Design((X_home, X_away), y, columns, teams, levels, home, away)


def team_effects(coef: np.ndarray, design: Design, kind: str) -> np.ndarray:
    """Full per-team effect vector (length ``T``) for ``kind`` in
    {"attack", "defense"}, reconstructing the reference team."""
    T = len(design.teams)
    start = 1 if kind == "attack" else T
    free = np.asarray(coef)[..., start:start + T - 1]
    return np.concatenate([free, -free.sum(axis=-1, keepdims=True)], axis=-1)


def coefficients_from_effects(intercept: float, attack, defense, phase=()) -> np.ndarray:
    """Inverse of :func:`team_effects`: drop the reference team's entries.

    ``attack`` and ``defense`` must each sum to zero.
    """
    attack, defense = np.asarray(attack, float), np.asarray(defense, float)
    for v in (attack, defense):
        if abs(v.sum()) > 1e-9:
            raise ValueError("team effects must sum to zero under sum-to-zero coding")
    return np.concatenate([[intercept], attack[:-1], defense[:-1], np.asarray(phase, float)])


# ---------------------------------------------------------------------------
# parameters and priors


@dataclass
class ModelParameters:
    beta_home: np.ndarray
    beta_away: np.ndarray
    gamma_home: np.ndarray
    gamma_away: np.ndarray
    random_effects: np.ndarray
    cov: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        self.cov = np.asarray(self.cov, float)
        if not _is_spd(self.cov):
            raise ValueError("cov must be symmetric positive definite")

    @property
    def beta(self):
        return (np.asarray(self.beta_home, float), np.asarray(self.beta_away, float))

    @property
    def gamma(self):
        return (np.asarray(self.gamma_home, float), np.asarray(self.gamma_away, float))

    @classmethod
    def zeros(cls, design: Design) -> "ModelParameters":
        p = design.n_coef
        return cls(np.zeros(p), np.zeros(p), np.zeros(p), np.zeros(p),
                   np.zeros((design.n_games, 2)), np.eye(2))


def _is_spd(M) -> bool:
    M = np.asarray(M, float)
    if M.ndim != 2 or M.shape[0] != M.shape[1] or not np.allclose(M, M.T):
        return False
    try:
        np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        return False
    return True


def _as_matrix(x, dim):
    x = np.asarray(x, float)
    if x.ndim == 0:
        return float(x) * np.eye(dim)
    return x


@dataclass(frozen=True)
class PriorSpec:
    """Hyperparameters.  Means and precisions may be scalars, read as
    ``value * ones`` and ``value * I`` respectively."""

    beta_mean: float | np.ndarray = 0.0
    beta_precision: float | np.ndarray = 0.1
    gamma_mean: float | np.ndarray = 0.0
    gamma_precision: float | np.ndarray = 0.1
    wishart_df: float = 50.0
    wishart_scale: np.ndarray = field(default_factory=lambda: np.eye(2))

    def __post_init__(self):
        if not self.wishart_df > 1:
            raise ValueError("wishart_df must exceed 1 for a 2x2 Wishart")
        if not _is_spd(_as_matrix(self.wishart_scale, 2)):
            raise ValueError("wishart_scale must be positive definite")
        for name in ("beta_precision", "gamma_precision"):
            v = np.asarray(getattr(self, name), float)
            if v.ndim == 0 and not v > 0:
                raise ValueError(f"{name} must be positive")
            if v.ndim == 2 and not _is_spd(v):
                raise ValueError(f"{name} must be positive definite")

    def mean(self, family: str, dim: int) -> np.ndarray:
        m = np.asarray(self.beta_mean if family == "centering" else self.gamma_mean, float)
        return np.broadcast_to(m, (dim,)).copy()

    def precision(self, family: str, dim: int) -> np.ndarray:
        return _as_matrix(self.beta_precision if family == "centering"
                          else self.gamma_precision, dim)

    @property
    def scale_matrix(self) -> np.ndarray:
        return _as_matrix(self.wishart_scale, 2)


def mvn_log_density(x, mean, precision) -> float:
    """Log N(x | mean, precision^{-1})."""
    d = np.asarray(x, float) - mean
    sign, logdet = np.linalg.slogdet(precision)
    k = d.shape[-1]
    return 0.5 * (logdet - k * np.log(2 * np.pi)) - 0.5 * d @ precision @ d


# ---------------------------------------------------------------------------
# predictors and kernels


def linear_predictors(params: ModelParameters, design: Design, game_index=None):
    """``(mu_home, mu_away, nu_home, nu_away)`` for one game or all games."""
    b = np.asarray(params.random_effects, float)
    if b.shape != (design.n_games, 2):
        raise ValueError(f"random_effects must have shape {(design.n_games, 2)}, got {b.shape}")
    out = []
    for fam, coefs in (("mu", params.beta), ("nu", params.gamma)):
        for j in range(2):
            if coefs[j].shape != (design.n_coef,):
                raise ValueError(f"coefficient vector has shape {coefs[j].shape}, "
                                 f"expected {(design.n_coef,)}")
            eta = design.X[j] @ coefs[j]
            if fam == "mu":
                eta = eta + b[:, j]
            out.append(np.exp(eta))
    if game_index is not None:
        return tuple(float(v[game_index]) for v in out)
    return tuple(out)


def log_prior(params: ModelParameters, design: Design, priors: PriorSpec) -> float:
    p = design.n_coef
    total = 0.0
    for family, coefs in (("centering", params.beta), ("shape", params.gamma)):
        m, P = priors.mean(family, p), priors.precision(family, p)
        total += sum(mvn_log_density(c, m, P) for c in coefs)
    D = params.cov
    total += stats.wishart.logpdf(np.linalg.inv(D), df=priors.wishart_df,
                                  scale=priors.scale_matrix)
    b = np.asarray(params.random_effects, float)
    if b.size:
        total += np.sum(np.atleast_1d(stats.multivariate_normal(np.zeros(2), D).logpdf(b)))
    return float(total)


def log_kernel_sum(params: ModelParameters, design: Design) -> float:
    """Sum of ``log q(y_ij | mu_ij, nu_ij)`` over all observations."""
    mu1, mu2, nu1, nu2 = linear_predictors(params, design)
    y = design.y
    mu = np.column_stack([mu1, mu2])
    nu = np.column_stack([nu1, nu2])
    return float(np.sum(nu * (y * np.log(mu) - gammaln(y + 1.0))))


def log_joint_kernel(params: ModelParameters, design: Design, priors: PriorSpec) -> float:
    """Unnormalized log posterior without the ``log Z`` terms.

    Only differences of this quantity between states that share the same
    normalizing constants are meaningful.
    """
    if not _is_spd(params.cov):
        raise ValueError("cov must be symmetric positive definite")
    return log_prior(params, design, priors) + log_kernel_sum(params, design)


def ha_functionals(beta_home, beta_away, columns: Sequence[str]) -> dict[str, np.ndarray]:
    """Home-advantage draws from coefficient draws of shape ``(..., p)``.

    ``HA_D`` (reference phase) is always returned; ``HA_B`` and ``HA_A`` are
    included when the corresponding phase column exists.
    """
    beta_home, beta_away = np.asarray(beta_home, float), np.asarray(beta_away, float)
    columns = list(columns)
    if "intercept" not in columns:
        raise KeyError("coefficient layout has no intercept")
    i0 = columns.index("intercept")
    base = beta_home[..., i0] - beta_away[..., i0]
    out = {"HA_D": base}
    for key, level in (("HA_B", "before"), ("HA_A", "after")):
        name = f"phase[{level}]"
        if name in columns:
            k = columns.index(name)
            out[key] = base + beta_home[..., k] - beta_away[..., k]
    return out


def model_covariance(params: ModelParameters, design: Design, game_index: int) -> float:
    """Approximate ``cov(y_i1, y_i2)`` induced by the lognormal random effects."""
    lam = [float(np.exp(design.X[j][game_index] @ params.beta[j])) for j in range(2)]
    D = params.cov
    return covariance_formula(lam[0], lam[1], D)


def covariance_formula(lam_home: float, lam_away: float, D) -> float:
    D = np.asarray(D, float)
    return (lam_home * np.exp(0.5 * D[0, 0]) * np.expm1(D[0, 1])
            * lam_away * np.exp(0.5 * D[1, 1]))
