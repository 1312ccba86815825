"""Command line: ``bivcmp {fit,simulate,compare,sensitivity}``.

Exit codes: 0 success, 1 usage error, 2 data error, 3 sampler failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__
from . import io
from .cmp import NonConvergenceError, SamplerStallError
from .config import COMMANDS, MODELS, ConfigError, RunConfig, load_config_file, resolve
from .model import build_design
from .workflow import (MODEL_LABELS, build_report, compare_dic, fit_model, format_compare_table,
                       prior_sensitivity, replicate_seed, simulate_replicates)

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_SAMPLER = 0, 1, 2, 3

log = logging.getLogger("bivcmp")


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


_HELP = {
    "input": "game CSV (fit)",
    "output": "output directory",
    "model": "model to fit",
    "models": "comma-separated models for compare",
    "n_iterations": "total iterations per chain (fit: 180000, others: 30000)",
    "burn_in": "burn-in iterations (fit: 50000, others: 10000)",
    "dispersion": "simulation scenario: equi, over or under",
    "scenarios": "comma-separated prior scenarios from A,B,C,D",
    "phases": "'auto' (phases present in the data) or 'all'",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bivcmp", description="Bivariate CMP regression for paired scores.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    for cmd in COMMANDS:
        p = sub.add_parser(cmd)
        p.add_argument("--config", help="YAML or JSON file of settings; flags override it")
        p.add_argument("-v", "--verbose", action="store_true")
        for f in fields(RunConfig):
            if f.name == "command":
                continue
            flag = "--" + f.name.replace("_", "-")
            if f.name in ("n_iterations", "burn_in") or isinstance(f.default, int):
                kind = int
            elif isinstance(f.default, float):
                kind = float
            else:
                kind = str
            kw = {"type": kind, "default": None, "help": _HELP.get(f.name)}
            if f.name == "model":
                kw["choices"] = MODELS
            p.add_argument(flag, dest=f.name, **kw)
    return parser


def _config_from_args(args) -> RunConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {f.name: getattr(args, f.name) for f in fields(RunConfig) if f.name != "command"}
    return resolve(args.command, file_values, overrides)


# ---------------------------------------------------------------------------
# commands


def _out(cfg: RunConfig) -> Path:
    out = Path(cfg.output)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_fit(cfg: RunConfig) -> int:
    games = io.parse_games(cfg.input)
    design = build_design(games, phases=cfg.phases)
    prov = io.provenance(cfg.seed, cfg.result_settings())
    out = _out(cfg)
    draws = fit_model(cfg.model, design, cfg.prior_spec(), cfg.chain_config(), cfg.n_jobs)
    rng = np.random.default_rng(replicate_seed(cfg.seed, 1))
    rep = build_report(draws, design, cfg, rng)

    io.write_chains(out / "chains.csv", draws, prov)
    io.write_json(out / "chains.json", io.chain_metadata(draws, design, prov))
    io.write_table(out / "posterior_summary.csv",
                   ["parameter", "column", "mean", "sd", "q2.5", "q50", "q97.5"], rep.summary, prov)
    ha_names = list(rep.ha_draws)
    io.write_table(out / "ha_draws.csv", ha_names,
                   np.column_stack([rep.ha_draws[k] for k in ha_names]), prov)
    io.write_table(out / "convergence.csv", ["parameter", "psrf", "ess"], rep.convergence, prov)
    io.write_table(out / "convergence_blocks.csv", ["block", "psrf", "ess"],
                   [(k, v["psrf"], v["ess"]) for k, v in rep.blocks.items()], prov)
    if rep.dic:
        io.write_table(out / "dic.csv",
                       ["outcome", "mean_deviance", "deviance_at_mean", "effective_parameters",
                        "dic", "n_posterior_samples_used", "estimator"],
                       [(k, d.mean_deviance, d.deviance_at_mean, d.effective_parameters, d.dic,
                         d.n_posterior_samples_used, d.estimator) for k, d in rep.dic.items()],
                       prov)
    io.write_table(out / "rootogram.csv",
                   ["outcome", "value", "observed", "expected", "sqrt_expected", "bar_bottom"],
                   rep.rootogram, prov)
    io.write_table(out / "predictive.csv",
                   ["outcome", "value", "observed", "expected", "q2.5", "q97.5"],
                   rep.predictive, prov)

    sections = {"run": {"command": "fit", "model": cfg.model, "input": cfg.input,
                        "n_games": design.n_games, "n_chains": draws.n_chains,
                        "n_iterations": draws.config.n_iterations,
                        "burn_in": draws.config.burn_in, "thin": draws.config.thin}}
    for k, s in rep.ha_summary.items():
        sections[k] = s
    if rep.probabilities:
        sections["probabilities"] = rep.probabilities
    for k, d in rep.dic.items():
        sections[f"dic.{k}"] = {"mean_deviance": d.mean_deviance,
                                "deviance_at_mean": d.deviance_at_mean,
                                "effective_parameters": d.effective_parameters, "dic": d.dic,
                                "estimator": d.estimator}
    sections["convergence"] = {f"{k}.{m}": v[m] for k, v in rep.blocks.items() for m in ("psrf", "ess")}
    sections["acceptance"] = rep.acceptance
    io.write_summary(out / "report.txt", sections, prov)
    log.info("wrote fit bundle to %s", out)
    return EXIT_OK


def cmd_simulate(cfg: RunConfig) -> int:
    out = _out(cfg)
    prov = io.provenance(cfg.seed, cfg.result_settings())
    for r, (spec, games, truth) in enumerate(simulate_replicates(cfg)):
        io.write_games(out / f"replicate_{r + 1:03d}.csv", games,
                       {**prov, "replicate": r + 1, "replicate_seed": spec.seed,
                        "dispersion": spec.dispersion, "n_seasons": spec.n_seasons})
    log.info("wrote %d replicate(s) to %s", cfg.replicates, out)
    return EXIT_OK


def cmd_compare(cfg: RunConfig) -> int:
    out = _out(cfg)
    prov = io.provenance(cfg.seed, cfg.result_settings())
    per, table = compare_dic(cfg, progress=log.info)
    io.write_table(out / "compare_replicates.csv", ["replicate", "model", "dic_y1", "dic_y2"],
                   per, prov)
    io.write_table(out / "compare.csv",
                   ["data", "model", "y1_mean", "y1_sd", "y2_mean", "y2_sd"],
                   [(cfg.dispersion, MODEL_LABELS[m], *v) for m, v in table.items()], prov)
    text = format_compare_table(table, cfg)
    with open(out / "compare_table.txt", "w") as fh:
        fh.writelines(f"# {k}: {v}\n" for k, v in prov.items())
        fh.write(text)
    sys.stdout.write(text)
    return EXIT_OK


def cmd_sensitivity(cfg: RunConfig) -> int:
    out = _out(cfg)
    prov = io.provenance(cfg.seed, cfg.result_settings())
    res = prior_sensitivity(cfg, progress=log.info)
    labels = list(res)
    cols = [f"{s}_{y}" for s in labels for y in ("y1", "y2")]
    io.write_table(out / "sensitivity_mse.csv", ["quantity", *labels],
                   [("mu_1", *[res[s]["mse"][0] for s in labels]),
                    ("mu_2", *[res[s]["mse"][1] for s in labels])], prov)
    for stat in ("psrf", "ess"):
        rows = []
        for block in ("beta", "gamma", "b"):
            rows.append((block, *[res[s][stat].get(f"{block}_{w}", float("nan"))
                                  for s in labels for w in ("home", "away")]))
        io.write_table(out / f"sensitivity_{stat}.csv", ["block", *cols], rows, prov)
    sections = {f"scenario.{s}": {"mse_mu_1": r["mse"][0], "mse_mu_2": r["mse"][1],
                                  **{f"psrf.{k}": v for k, v in r["psrf"].items()},
                                  **{f"ess.{k}": v for k, v in r["ess"].items()}}
                for s, r in res.items()}
    io.write_summary(out / "report.txt", sections, prov)
    return EXIT_OK


COMMAND_FUNCS = {"fit": cmd_fit, "simulate": cmd_simulate, "compare": cmd_compare,
                 "sensitivity": cmd_sensitivity}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config_from_args(args)
    except (ConfigError, OSError) as exc:
        print(f"bivcmp: configuration error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    try:
        return COMMAND_FUNCS[cfg.command](cfg)
    except io.DataError as exc:
        print(f"bivcmp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except ValueError as exc:
        # design validation problems surface as ValueError
        print(f"bivcmp: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (SamplerStallError, NonConvergenceError, np.linalg.LinAlgError) as exc:
        print(f"bivcmp: sampler failure: {exc}", file=sys.stderr)
        return EXIT_SAMPLER


if __name__ == "__main__":
    sys.exit(main())
