"""End-to-end runs behind the command line: fit, simulate, compare,
sensitivity.  Functions here return plain data; writing happens in
:mod:`bivcmp.cli`."""

from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from . import diagnostics as dg
from .baselines import fit_baseline
from .config import SENSITIVITY_SCENARIOS, RunConfig
from .exchange import OUTCOME_NAMES, ChainConfig, CmpSampler, PosteriorDraws, run_chains
from .model import Design, PriorSpec, build_design, ha_functionals
from .simgen import TEAMS, ScenarioSpec, generate_seasons, true_means

log = logging.getLogger(__name__)

MODEL_LABELS = {"cmp": "CMP", "poisson": "Poisson", "negative_binomial": "NB"}


def fit_model(model: str, design: Design, priors: PriorSpec, config: ChainConfig,
              n_jobs: int = 1) -> PosteriorDraws:
    if model == "cmp":
        return run_chains(config, design, priors, CmpSampler, n_jobs=n_jobs)
    return fit_baseline(model, design, priors, config, n_jobs=n_jobs)


def replicate_seed(seed: int, replicate: int) -> int:
    """Independent integer seed for replicate ``replicate`` of a run."""
    return int(np.random.SeedSequence([seed, replicate]).generate_state(1)[0])


# ---------------------------------------------------------------------------
# convergence summaries


def _chains_of(draws: PosteriorDraws, name: str, j: int) -> np.ndarray | None:
    """``(m, N, k)`` chain array for block ``name`` of outcome ``j``."""
    if name == "b":
        if draws.chains[0].b is None:
            return None
        return np.stack([c.b[:, :, j] for c in draws.chains])
    arr = getattr(draws.chains[0], name)
    if arr is None:
        return None
    return np.stack([getattr(c, name)[:, j, :] for c in draws.chains])


def block_psrf(chains: np.ndarray) -> float:
    """Multivariate PSRF of a block, or the mean univariate PSRF when there
    are too few draws for a well-conditioned within-chain covariance."""
    m, n, k = chains.shape
    varying = np.ptp(chains.reshape(-1, k), axis=0) > 0
    chains = chains[..., varying]
    k = chains.shape[2]
    if k == 0:
        return float("nan")
    if n > 2 * k:
        try:
            return dg.psrf(chains)
        except np.linalg.LinAlgError:
            pass
    return float(np.mean([dg.psrf(chains[..., i]) for i in range(k)]))


def block_ess(chains: np.ndarray) -> float:
    """Mean over the block's components of the ESS summed across chains."""
    m, n, k = chains.shape
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        per = [sum(dg.ess(chains[c, :, i]) for c in range(m)) for i in range(k)]
    return float(np.mean(per))


def convergence_blocks(draws: PosteriorDraws) -> dict[str, dict[str, float]]:
    """PSRF and ESS per (block, outcome), for blocks beta, gamma, b."""
    out = {}
    for name in ("beta", "gamma", "b"):
        for j, who in enumerate(OUTCOME_NAMES):
            ch = _chains_of(draws, name, j)
            if ch is None:
                continue
            key = f"{name}_{who}"
            out[key] = {"psrf": block_psrf(ch) if draws.n_chains > 1 else float("nan"),
                        "ess": block_ess(ch)}
    return out


def scalar_convergence(draws: PosteriorDraws):
    names, _ = draws.chains[0].scalar_table()
    tables = np.stack([c.scalar_table()[1] for c in draws.chains])  # (m, N, k)
    rows = []
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        for i, name in enumerate(names):
            x = tables[:, :, i]
            if draws.n_chains > 1 and np.ptp(x) > 0:
                try:
                    r = dg.psrf(x)
                except np.linalg.LinAlgError:
                    r = float("nan")
            else:
                r = float("nan")
            rows.append((name, r, sum(dg.ess(x[c]) for c in range(x.shape[0]))))
    return rows


# ---------------------------------------------------------------------------
# fit report


@dataclass
class FitReport:
    model: str
    summary: list = field(default_factory=list)        # (name, column, mean, sd, q2.5, q50, q97.5)
    ha_draws: dict = field(default_factory=dict)
    ha_summary: dict = field(default_factory=dict)
    probabilities: dict = field(default_factory=dict)
    dic: dict = field(default_factory=dict)
    convergence: list = field(default_factory=list)    # (name, psrf, ess)
    blocks: dict = field(default_factory=dict)
    rootogram: list = field(default_factory=list)
    predictive: list = field(default_factory=list)
    acceptance: dict = field(default_factory=dict)


def _column_of(name: str, columns) -> str:
    if "[" in name and name.startswith(("beta_", "gamma_")):
        return columns[int(name[name.index("[") + 1:-1])]
    return ""


def build_report(draws: PosteriorDraws, design: Design, cfg: RunConfig, rng) -> FitReport:
    rep = FitReport(model=draws.model)
    names, _ = draws.chains[0].scalar_table()
    values = np.concatenate([c.scalar_table()[1] for c in draws.chains])
    for i, name in enumerate(names):
        s = dg.posterior_summary(values[:, i])
        rep.summary.append((name, _column_of(name, design.columns), s["mean"], s["sd"],
                            s["q2.5"], s["q50"], s["q97.5"]))
    beta = draws.stack("beta")
    rep.ha_draws = ha_functionals(beta[:, 0, :], beta[:, 1, :], design.columns)
    rep.ha_summary = {k: dg.posterior_summary(v) for k, v in rep.ha_draws.items()}
    d = rep.ha_draws["HA_D"]
    for key in ("HA_B", "HA_A"):
        if key in rep.ha_draws:
            rep.probabilities[f"P(HA_D < {key})"] = float(np.mean(d < rep.ha_draws[key]))
    if draws.chains[0].b is not None:
        rep.dic = dg.dic(draws, design, r=cfg.dic_r, n_samples=cfg.dic_samples, rng=rng)
    rep.convergence = scalar_convergence(draws)
    rep.blocks = convergence_blocks(draws)
    values_grid, freqs = dg.posterior_predictive(draws, design, rng, cfg.predictive_replicates)
    K = values_grid.size - 1
    observed = dg.observed_frequencies(design, K)
    expected = freqs.mean(axis=0)
    lo, hi = np.percentile(freqs, [2.5, 97.5], axis=0)
    for j, who in enumerate(OUTCOME_NAMES):
        root = dg.rootogram_data(observed[j], expected[j])
        for k in range(K + 1):
            rep.rootogram.append((who, k, int(observed[j, k]), float(expected[j, k]),
                                  float(root["sqrt_expected"][k]), float(root["bar_bottom"][k])))
            rep.predictive.append((who, k, int(observed[j, k]), float(expected[j, k]),
                                   float(lo[j, k]), float(hi[j, k])))
    rep.acceptance = {f"chain{c.chain_id}.{k}": v for c in draws.chains
                      for k, v in c.acceptance.items()}
    return rep


# ---------------------------------------------------------------------------
# simulation studies


def simulate_replicates(cfg: RunConfig, random_effect_cov=None):
    """``cfg.replicates`` data sets of the configured scenario."""
    out = []
    for r in range(cfg.replicates):
        spec = ScenarioSpec(cfg.dispersion, cfg.n_seasons, seed=replicate_seed(cfg.seed, r),
                            random_effect_cov=random_effect_cov)
        games, truth = generate_seasons(spec)
        out.append((spec, games, truth))
    return out


def compare_dic(cfg: RunConfig, progress=None):
    """DIC per replicate, model and outcome on simulated data.

    Returns ``(per_replicate, table)``: ``per_replicate`` rows are
    ``(replicate, model, dic_home, dic_away)``; ``table`` maps each model to
    ``(mean_home, sd_home, mean_away, sd_away)``.
    """
    priors = cfg.prior_spec()
    per = []
    for r, (spec, games, _) in enumerate(simulate_replicates(cfg)):
        design = build_design(games, teams=TEAMS)
        for model in cfg.model_list:
            chain_cfg = cfg.chain_config(seed=spec.seed)
            draws = fit_model(model, design, priors, chain_cfg, cfg.n_jobs)
            rng = np.random.default_rng(replicate_seed(spec.seed, 1))
            rep = dg.dic(draws, design, r=cfg.dic_r, n_samples=cfg.dic_samples, rng=rng)
            per.append((r, model, rep["home"].dic, rep["away"].dic))
            if progress:
                progress(f"replicate {r} {model}: DIC {rep['home'].dic:.2f} {rep['away'].dic:.2f}")
    table = {}
    for model in cfg.model_list:
        h = np.array([p[2] for p in per if p[1] == model])
        a = np.array([p[3] for p in per if p[1] == model])
        sd = (lambda x: float(x.std(ddof=1)) if x.size > 1 else float("nan"))
        table[model] = (float(h.mean()), sd(h), float(a.mean()), sd(a))
    return per, table


def format_compare_table(table: dict, cfg: RunConfig) -> str:
    """Fixed-width text in the layout: Data, Model, then y1 and y2 as
    ``mean (sd)``; each ``mean (sd)`` is a single cell."""
    n_games = 380 * cfg.n_seasons
    seasons = f"{cfg.n_seasons} Season" + ("s" if cfg.n_seasons > 1 else "")
    head = f"{'Data':<8}{'Model':<10}{seasons + f' (n = {n_games})':^44}\n"
    head += f"{'':<8}{'':<10}{'y_1':^22}{'y_2':^22}\n"
    lines = [head]
    data = cfg.dispersion.capitalize()
    for k, (model, (mh, sh, ma, sa)) in enumerate(table.items()):
        cell1 = f"{mh:.2f} ({sh:.2f})"
        cell2 = f"{ma:.2f} ({sa:.2f})"
        lines.append(f"{data if k == 0 else '':<8}{MODEL_LABELS[model]:<10}{cell1:^22}{cell2:^22}\n")
    return "".join(lines)


def sensitivity_priors(label: str, base: RunConfig) -> PriorSpec:
    prec, df, scale = SENSITIVITY_SCENARIOS[label]
    return PriorSpec(beta_mean=base.beta_mean, beta_precision=prec,
                     gamma_mean=base.gamma_mean, gamma_precision=prec,
                     wishart_df=df, wishart_scale=scale * np.eye(2))


def prior_sensitivity(cfg: RunConfig, progress=None):
    """Prior-grid runs on one simulated data set.

    Returns ``{label: {"psrf": {...}, "ess": {...}, "mse": (mse_home, mse_away)}}``
    where the PSRF/ESS dictionaries are keyed ``beta_home``, ``gamma_away``,
    ``b_home`` and so on.
    """
    spec = ScenarioSpec(cfg.dispersion, cfg.n_seasons, seed=replicate_seed(cfg.seed, 0))
    games, truth = generate_seasons(spec)
    design = build_design(games, teams=TEAMS)
    mu_true = true_means(spec, truth)
    out = {}
    for label in cfg.scenario_list:
        priors = sensitivity_priors(label, cfg)
        draws = fit_model("cmp", design, priors, cfg.chain_config(seed=spec.seed), cfg.n_jobs)
        blocks = convergence_blocks(draws)
        mse = dg.mu_mse(draws, design, mu_true)
        out[label] = {"psrf": {k: v["psrf"] for k, v in blocks.items()},
                      "ess": {k: v["ess"] for k, v in blocks.items()},
                      "mse": (float(mse[0]), float(mse[1]))}
        if progress:
            progress(f"scenario {label}: mse {mse[0]:.3f} {mse[1]:.3f}")
    return out
