"""Game-file parsing, output writers and run configuration."""

import json

import numpy as np
import pytest

from bivcmp import __version__, io
from bivcmp.config import (DATA_CHAIN, SIM_CHAIN, ConfigError, RunConfig, load_config_file,
                           resolve)
from bivcmp.model import GameRecord
from bivcmp.simgen import ScenarioSpec, generate_seasons

HEADER = "season,home_team,away_team,home_score,away_score,phase\n"


def write(tmp_path, text, name="games.csv"):
    p = tmp_path / name
    p.write_text(text)
    return p


class TestParseGames:
    def test_two_rows(self, tmp_path):
        p = write(tmp_path, HEADER + "2020,A,B,2,1,before\n2020,B,A,0,0,during\n")
        games = io.parse_games(p)
        assert len(games) == 2
        assert games[0] == GameRecord("1", "2020", "A", "B", 2, 1, "before")
        assert games[1].game_id == "2" and games[1].phase == "during"

    def test_unknown_phase_names_line(self, tmp_path):
        p = write(tmp_path, HEADER + "2020,A,B,2,1,before\n2020,B,A,0,0,covid\n")
        with pytest.raises(io.DataError, match=r":3: unknown phase 'covid'"):
            io.parse_games(p)

    def test_comments_and_column_order(self, tmp_path):
        text = ("# seed: 1\n"
                "phase,away_score,home_score,away_team,home_team,season,game_id\n"
                "after,3,1,B,A,2021,g7\n")
        (g,) = io.parse_games(write(tmp_path, text))
        assert (g.game_id, g.home_team, g.home_score, g.away_score) == ("g7", "A", 1, 3)

    def test_preserves_order(self, tmp_path):
        rows = "".join(f"1,T{k},T{k + 1},{k},0,during\n" for k in range(5))
        games = io.parse_games(write(tmp_path, HEADER + rows))
        assert [g.home_score for g in games] == list(range(5))

    @pytest.mark.parametrize("text, pattern", [
        ("season,home_team,away_team,home_score,phase\n", "missing column"),
        (HEADER + "2020,A,B,two,1,during\n", r":2: home_score is not an integer"),
        (HEADER + "2020,A,B,2,-1,during\n", r":2: away_score must be nonnegative"),
        (HEADER + "2020,A,B,2,1\n", r":2: expected 6 fields"),
        (HEADER + "2020,A,A,2,1,during\n", r":2: .*cannot play itself"),
        ("game_id," + HEADER + "x,1,A,B,1,1,during\nx,1,B,A,1,1,during\n",
         r":3: duplicate game id 'x' \(first seen on line 2\)"),
        ("", "missing header"),
    ])
    def test_errors(self, tmp_path, text, pattern):
        with pytest.raises(io.DataError, match=pattern):
            io.parse_games(write(tmp_path, text))

    def test_missing_file(self, tmp_path):
        with pytest.raises(io.DataError):
            io.parse_games(tmp_path / "nope.csv")

    def test_simulated_round_trip(self, tmp_path):
        games, _ = generate_seasons(ScenarioSpec("over", 1, seed=2))
        p = tmp_path / "sim.csv"
        io.write_games(p, games, io.provenance(2, {"a": 1}))
        assert io.parse_games(p) == games


class TestProvenance:
    def test_fields(self):
        prov = io.provenance(7, {"x": 1})
        assert prov["seed"] == "7" and prov["version"] == __version__
        assert len(prov["config_hash"]) == 16

    def test_hash_is_order_independent(self):
        assert io.config_hash({"a": 1, "b": 2}) == io.config_hash({"b": 2, "a": 1})
        assert io.config_hash({"a": 1}) != io.config_hash({"a": 2})

    def test_header_round_trip(self, tmp_path):
        prov = io.provenance(3, {"k": "v"})
        p = tmp_path / "t.csv"
        io.write_table(p, ["a", "b"], [(1, 0.5), ("x", float("nan"))], prov)
        assert io.read_provenance(p) == prov
        header, rows = io.read_table(p)
        assert header == ["a", "b"] and rows == [["1", "0.5"], ["x", "nan"]]

    def test_float_format_is_exact(self, tmp_path):
        p = tmp_path / "t.csv"
        x = 0.1 + 0.2
        io.write_table(p, ["x"], [(np.float64(x),)])
        assert float(io.read_table(p)[1][0][0]) == x


class TestSummary:
    def test_round_trip(self, tmp_path):
        p = tmp_path / "report.txt"
        io.write_summary(p, {"run": {"model": "cmp", "n": 3}, "HA_D": {"mean": 0.25}},
                         io.provenance(0, {}))
        text = p.read_text()
        assert text.startswith("# seed: 0\n") and "[HA_D]\nmean: 0.25\n" in text
        assert io.read_summary(p) == {"run": {"model": "cmp", "n": "3"},
                                      "HA_D": {"mean": "0.25"}}


class TestJson:
    def test_numpy_values(self, tmp_path):
        p = tmp_path / "m.json"
        io.write_json(p, {"a": np.arange(3), "b": np.float64(1.5), "c": (1, 2)})
        assert json.loads(p.read_text()) == {"a": [0, 1, 2], "b": 1.5, "c": [1, 2]}


class TestRunConfig:
    def test_documented_defaults(self):
        c = RunConfig(command="simulate")
        p = c.prior_spec()
        np.testing.assert_array_equal(p.precision("centering", 3), 0.1 * np.eye(3))
        np.testing.assert_array_equal(p.precision("shape", 3), 0.1 * np.eye(3))
        np.testing.assert_array_equal(p.mean("centering", 3), 0.0)
        assert p.wishart_df == 50.0
        np.testing.assert_array_equal(p.scale_matrix, np.eye(2))
        assert c.chain_config().target_acceptance == 0.40
        assert c.chain_lengths() == SIM_CHAIN
        assert RunConfig(command="fit", input="x.csv").chain_lengths() == DATA_CHAIN

    @pytest.mark.parametrize("kw", [
        {"command": "plot"}, {"model": "zip"}, {"models": "cmp,zip"}, {"scenarios": "A,E"},
        {"thin": 0}, {"phases": "covid"}, {"dic_r": 1}, {"wishart_df": 0.5},
        {"n_iterations": 10, "burn_in": 10}, {"target_acceptance": 1.5},
    ])
    def test_invalid(self, kw):
        with pytest.raises(ConfigError):
            RunConfig(**{"command": "simulate", **kw})

    def test_fit_needs_input(self):
        with pytest.raises(ConfigError):
            RunConfig(command="fit")

    def test_hash_ignores_output_location(self):
        a = RunConfig(command="simulate", output="x", n_jobs=1)
        b = RunConfig(command="simulate", output="y", n_jobs=4)
        assert io.config_hash(a.result_settings()) == io.config_hash(b.result_settings())
        assert a.result_settings() != RunConfig(command="simulate", seed=1).result_settings()


class TestConfigFiles:
    def test_yaml_then_flags(self, tmp_path):
        p = write(tmp_path, "seed: 4\nn_chains: 2\nmodel: poisson\n", "c.yaml")
        cfg = resolve("simulate", load_config_file(p), {"seed": 9, "model": None})
        assert (cfg.seed, cfg.n_chains, cfg.model) == (9, 2, "poisson")

    def test_json(self, tmp_path):
        p = write(tmp_path, json.dumps({"replicates": 2}), "c.json")
        assert resolve("simulate", load_config_file(p)).replicates == 2

    def test_unknown_key(self, tmp_path):
        with pytest.raises(ConfigError, match="unknown key"):
            load_config_file(write(tmp_path, "sede: 4\n", "c.yml"))

    def test_not_a_mapping(self, tmp_path):
        with pytest.raises(ConfigError):
            load_config_file(write(tmp_path, "[1, 2]", "c.json"))

    def test_bad_type(self):
        with pytest.raises(ConfigError):
            resolve("simulate", {"command": "fit", "nonsense": 1})
