"""Synthetic 20-team league with known attack, defense and shape effects."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .cmp import sample_many
from .model import GameRecord, ModelParameters, build_design, coefficients_from_effects

N_TEAMS = 20
TEAMS = tuple(f"Team{k}" for k in range(1, N_TEAMS + 1))
DISPERSION_INTERCEPT = {"equi": 0.0, "over": -0.5, "under": 0.5}

# rows: home attack, home defense, away attack, away defense
_TABLE1 = np.array([
    [0.50, 0.45, 0.40, 0.34, 0.29, 0.24, 0.18, 0.13, 0.08, 0.03,
     -0.03, -0.08, -0.13, -0.18, -0.24, -0.29, -0.34, -0.40, -0.45, -0.5],
    [0.50, 0.45, 0.40, 0.34, 0.29, 0.24, 0.18, 0.13, 0.08, 0.03,
     -0.03, -0.08, -0.13, -0.18, -0.24, -0.29, -0.34, -0.40, -0.45, -0.5],
    [0.42, 0.38, 0.34, 0.29, 0.25, -0.20, -0.16, -0.11, -0.07, -0.02,
     0.02, 0.07, 0.11, 0.16, 0.20, -0.25, -0.29, -0.34, -0.38, -0.42],
    [0.60, 0.54, 0.47, 0.41, 0.35, 0.28, 0.22, 0.16, 0.10, 0.03,
     -0.03, -0.10, -0.16, -0.22, -0.28, -0.35, -0.41, -0.47, -0.54, -0.60],
])


def table1_strengths() -> np.ndarray:
    """``(20, 4)`` array: attack at home, defense at home, attack away,
    defense away, one row per team."""
    return _TABLE1.T.copy()


def shape_strengths() -> np.ndarray:
    return np.linspace(0.35, -0.35, N_TEAMS)


@dataclass(frozen=True)
class ScenarioSpec:
    dispersion: str = "equi"
    n_seasons: int = 1
    seed: int = 0
    beta_h: float = 0.6
    beta_a: float = 0.1
    random_effect_cov: tuple | None = None

    def __post_init__(self):
        if self.dispersion not in DISPERSION_INTERCEPT:
            raise ValueError(f"dispersion must be one of {sorted(DISPERSION_INTERCEPT)}")
        if self.n_seasons < 1:
            raise ValueError("n_seasons must be >= 1")

    @property
    def gamma_intercept(self) -> float:
        return DISPERSION_INTERCEPT[self.dispersion]


def fixtures(n_seasons: int):
    """Double round robin: every ordered pair once per season."""
    for s in range(1, n_seasons + 1):
        for h in TEAMS:
            for a in TEAMS:
                if h != a:
                    yield s, h, a


def true_coefficients(spec: ScenarioSpec):
    """True ``(beta_home, beta_away, gamma_home, gamma_away)`` in the design's
    coefficient layout (roster order Team1..Team20, no phase columns)."""
    t1 = table1_strengths()
    att_h, def_h, att_a, def_a = t1.T
    shp = shape_strengths()
    # home score: home team's home attack, away team's away defense
    beta_home = coefficients_from_effects(spec.beta_h, att_h, def_a)
    beta_away = coefficients_from_effects(spec.beta_a, att_a, def_h)
    g = spec.gamma_intercept
    gamma_home = coefficients_from_effects(g, shp, shp)
    gamma_away = coefficients_from_effects(g, shp, shp)
    return beta_home, beta_away, gamma_home, gamma_away


def generate_seasons(spec: ScenarioSpec, rng: np.random.Generator | None = None):
    """Simulated games plus the true parameters used to generate them."""
    if rng is None:
        rng = np.random.default_rng(spec.seed)
    fx = list(fixtures(spec.n_seasons))
    placeholder = [GameRecord(str(i), str(s), h, a, 0, 0, "during")
                   for i, (s, h, a) in enumerate(fx)]
    design = build_design(placeholder, teams=TEAMS)
    bh, ba, gh, ga = true_coefficients(spec)
    n = len(fx)
    if spec.random_effect_cov is None:
        b = np.zeros((n, 2))
        cov = np.eye(2)
    else:
        cov = np.asarray(spec.random_effect_cov, float)
        b = rng.multivariate_normal(np.zeros(2), cov, size=n)
    truth = ModelParameters(bh, ba, gh, ga, b, cov)
    log_mu = np.column_stack([design.X[0] @ bh, design.X[1] @ ba]) + b
    log_nu = np.column_stack([design.X[0] @ gh, design.X[1] @ ga])
    y = sample_many(np.exp(log_mu), np.exp(log_nu), rng)
    games = [GameRecord(str(i + 1), str(s), h, a, int(y[i, 0]), int(y[i, 1]), "during")
             for i, (s, h, a) in enumerate(fx)]
    return games, truth


def true_means(spec: ScenarioSpec, truth: ModelParameters):
    """True centering parameters ``mu_ij`` of a generated data set."""
    design = build_design([GameRecord(str(i), str(s), h, a, 0, 0, "during")
                           for i, (s, h, a) in enumerate(fixtures(spec.n_seasons))], teams=TEAMS)
    return np.column_stack([np.exp(design.X[j] @ truth.beta[j] + truth.random_effects[:, j])
                            for j in range(2)])
