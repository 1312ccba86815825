"""Run configuration: defaults, config files, flag overrides."""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

import numpy as np

from .exchange import ChainConfig
from .model import PriorSpec

COMMANDS = ("fit", "simulate", "compare", "sensitivity")
MODELS = ("cmp", "poisson", "negative_binomial")

# chain lengths: simulated data vs real data
SIM_CHAIN = (30_000, 10_000)
DATA_CHAIN = (180_000, 50_000)

# prior-sensitivity grid: (B0 = G0 multiplier of I, Wishart df, R0 multiplier of I)
SENSITIVITY_SCENARIOS = {
    "A": (0.1, 30.0, 1.0),
    "B": (1.0, 10.0, 1.0),
    "C": (3.0, 10.0, 0.1),
    "D": (10.0, 5.0, 0.1),
}


class ConfigError(ValueError):
    pass


@dataclass(frozen=True)
class RunConfig:
    """Settings for one command.  ``n_iterations`` and ``burn_in`` left at
    ``None`` resolve to 180K/50K for ``fit`` and 30K/10K otherwise."""

    command: str = "fit"
    input: str | None = None
    output: str = "bivcmp-out"
    model: str = "cmp"
    models: str = "cmp,poisson,negative_binomial"
    # chains
    n_iterations: int | None = None
    burn_in: int | None = None
    thin: int = 1
    n_chains: int = 3
    seed: int = 0
    target_acceptance: float = 0.40
    adaptation_decay: float = 2.0 / 3.0
    random_effect_thin: int = 10
    n_jobs: int = 1
    # priors
    beta_mean: float = 0.0
    beta_precision: float = 0.1
    gamma_mean: float = 0.0
    gamma_precision: float = 0.1
    wishart_df: float = 50.0
    wishart_scale: float = 1.0
    # design
    phases: str = "auto"
    # simulation
    dispersion: str = "over"
    n_seasons: int = 1
    replicates: int = 5
    scenarios: str = "A,B,C,D"
    # reports
    dic_r: int = 1000
    dic_samples: int = 100
    predictive_replicates: int = 200

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ConfigError(f"command must be one of {COMMANDS}")
        if self.model not in MODELS:
            raise ConfigError(f"model must be one of {MODELS}")
        bad = [m for m in self.model_list if m not in MODELS]
        if bad:
            raise ConfigError(f"unknown model(s) {bad}")
        bad = [s for s in self.scenario_list if s not in SENSITIVITY_SCENARIOS]
        if bad:
            raise ConfigError(f"unknown sensitivity scenario(s) {bad}")
        if self.command == "fit" and not self.input:
            raise ConfigError("fit needs an input file")
        for name in ("thin", "n_chains", "replicates", "n_seasons", "n_jobs",
                     "random_effect_thin", "predictive_replicates"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be >= 1")
        if self.phases not in ("auto", "all"):
            raise ConfigError("phases must be 'auto' or 'all'")
        if self.dic_r < 2:
            raise ConfigError("dic_r must be >= 2")
        try:
            self.chain_config()
            self.prior_spec()
        except ValueError as exc:
            raise ConfigError(str(exc)) from None

    @property
    def model_list(self) -> list[str]:
        return [m.strip() for m in self.models.split(",") if m.strip()]

    @property
    def scenario_list(self) -> list[str]:
        return [s.strip() for s in self.scenarios.split(",") if s.strip()]

    def chain_lengths(self) -> tuple[int, int]:
        default = DATA_CHAIN if self.command == "fit" else SIM_CHAIN
        n = self.n_iterations if self.n_iterations is not None else default[0]
        b = self.burn_in if self.burn_in is not None else default[1]
        return n, b

    def chain_config(self, seed: int | None = None, n_chains: int | None = None) -> ChainConfig:
        n, b = self.chain_lengths()
        return ChainConfig(n_iterations=n, burn_in=b, thin=self.thin,
                           target_acceptance=self.target_acceptance,
                           seed=self.seed if seed is None else seed,
                           n_chains=self.n_chains if n_chains is None else n_chains,
                           adaptation_decay_exponent=self.adaptation_decay,
                           random_effect_thin=self.random_effect_thin)

    def prior_spec(self) -> PriorSpec:
        return PriorSpec(beta_mean=self.beta_mean, beta_precision=self.beta_precision,
                         gamma_mean=self.gamma_mean, gamma_precision=self.gamma_precision,
                         wishart_df=self.wishart_df,
                         wishart_scale=self.wishart_scale * np.eye(2))

    def to_dict(self) -> dict:
        return asdict(self)

    def result_settings(self) -> dict:
        """Settings that affect results; the basis of the provenance hash."""
        d = asdict(self)
        for k in ("output", "n_jobs"):
            d.pop(k)
        return d

    def updated(self, **changes) -> "RunConfig":
        return replace(self, **changes)


def load_config_file(path) -> dict:
    """Flat mapping from a YAML (``.yml``/``.yaml``) or JSON file."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() in (".yml", ".yaml"):
        import yaml

        data = yaml.safe_load(text) or {}
    else:
        data = json.loads(text)
    if not isinstance(data, dict):
        raise ConfigError(f"{path}: expected a mapping at top level")
    known = {f.name for f in fields(RunConfig)}
    unknown = sorted(set(data) - known)
    if unknown:
        raise ConfigError(f"{path}: unknown key(s) {', '.join(unknown)}")
    return data


def resolve(command: str, file_values: dict | None = None, overrides: dict | None = None) -> RunConfig:
    """Defaults, then config-file values, then flags (flags win)."""
    values = dict(file_values or {})
    values.update({k: v for k, v in (overrides or {}).items() if v is not None})
    values["command"] = command
    try:
        return RunConfig(**values)
    except TypeError as exc:
        raise ConfigError(str(exc)) from None
