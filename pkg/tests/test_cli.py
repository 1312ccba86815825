"""End-to-end command runs on short chains."""

import numpy as np
import pytest

from bivcmp import cli, io
from bivcmp.cli import EXIT_DATA, EXIT_OK, EXIT_SAMPLER, EXIT_USAGE, main
from bivcmp.cmp import SamplerStallError

SHORT = ["--n-iterations", "200", "--burn-in", "100", "--dic-r", "20", "--dic-samples", "5",
         "--predictive-replicates", "10"]


def outputs(path):
    return sorted(p.name for p in path.iterdir())


@pytest.fixture(scope="module")
def sim_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("sim")
    assert main(["simulate", "--output", str(out), "--replicates", "2", "--seed", "5",
                 "--dispersion", "equi"]) == EXIT_OK
    return out


@pytest.fixture(scope="module")
def fit_dir(sim_dir, tmp_path_factory):
    out = tmp_path_factory.mktemp("fit")
    rc = main(["fit", "--input", str(sim_dir / "replicate_001.csv"), "--output", str(out),
               "--n-chains", "2", *SHORT])
    assert rc == EXIT_OK
    return out


class TestSimulate:
    def test_files_and_provenance(self, sim_dir):
        assert outputs(sim_dir) == ["replicate_001.csv", "replicate_002.csv"]
        prov = io.read_provenance(sim_dir / "replicate_001.csv")
        assert prov["seed"] == "5" and prov["replicate"] == "1"
        assert {"config_hash", "version", "replicate_seed", "dispersion"} <= set(prov)
        assert len(io.parse_games(sim_dir / "replicate_002.csv")) == 380

    def test_rerun_is_identical(self, sim_dir, tmp_path):
        assert main(["simulate", "--output", str(tmp_path), "--replicates", "2", "--seed", "5",
                     "--dispersion", "equi"]) == EXIT_OK
        for name in outputs(sim_dir):
            assert (tmp_path / name).read_bytes() == (sim_dir / name).read_bytes()

    def test_replicates_differ(self, sim_dir):
        a = io.parse_games(sim_dir / "replicate_001.csv")
        b = io.parse_games(sim_dir / "replicate_002.csv")
        assert a != b


class TestFit:
    def test_bundle(self, fit_dir):
        assert outputs(fit_dir) == sorted([
            "chains.csv", "chains.json", "convergence.csv", "convergence_blocks.csv", "dic.csv",
            "ha_draws.csv", "posterior_summary.csv", "predictive.csv", "report.txt",
            "rootogram.csv"])
        for name in outputs(fit_dir):
            if name != "chains.json":
                assert io.read_provenance(fit_dir / name)["seed"] == "0"

    def test_chain_file(self, fit_dir):
        names, chain, values = io.read_chains(fit_dir / "chains.csv")
        assert names[0] == "beta_home[0]" and "gamma_away[0]" in names and "cov[0,1]" in names
        assert values.shape == (200, len(names))
        np.testing.assert_array_equal(np.bincount(chain), [100, 100])

    def test_percentiles_monotone(self, fit_dir):
        header, rows = io.read_table(fit_dir / "posterior_summary.csv")
        q = np.array([[float(r[header.index(c)]) for c in ("q2.5", "q50", "q97.5")]
                      for r in rows])
        assert len(rows) > 80
        assert np.all(np.diff(q, axis=1) >= 0)

    def test_report_sections(self, fit_dir):
        rep = io.read_summary(fit_dir / "report.txt")
        assert rep["run"]["model"] == "cmp" and rep["run"]["n_games"] == "380"
        assert "HA_D" in rep
        for who in ("home", "away", "total"):
            d = rep[f"dic.{who}"]
            np.testing.assert_allclose(float(d["dic"]),
                                       float(d["mean_deviance"]) + float(d["effective_parameters"]))
        assert "beta_home.psrf" in rep["convergence"]

    def test_rootogram_table(self, fit_dir):
        header, rows = io.read_table(fit_dir / "rootogram.csv")
        assert header == ["outcome", "value", "observed", "expected", "sqrt_expected",
                          "bar_bottom"]
        for r in rows:
            obs, exp_, curve, bottom = map(float, r[2:])
            np.testing.assert_allclose(curve - bottom, np.sqrt(obs), atol=1e-12)
            np.testing.assert_allclose(curve, np.sqrt(exp_))
        home = [float(r[2]) for r in rows if r[0] == "home"]
        assert sum(home) == 380

    def test_sidecar(self, fit_dir):
        import json

        meta = json.loads((fit_dir / "chains.json").read_text())
        assert meta["parameters"]["beta_home[0]"] == "intercept"
        assert meta["design"]["reference_team"] == "Team9"
        assert len(meta["chains"]) == 2

    def test_deterministic(self, sim_dir, fit_dir, tmp_path):
        rc = main(["fit", "--input", str(sim_dir / "replicate_001.csv"), "--output",
                   str(tmp_path), "--n-chains", "2", *SHORT])
        assert rc == EXIT_OK
        for name in ("chains.csv", "posterior_summary.csv", "dic.csv", "report.txt"):
            assert (tmp_path / name).read_bytes() == (fit_dir / name).read_bytes()

    def test_poisson_model(self, sim_dir, tmp_path):
        rc = main(["fit", "--input", str(sim_dir / "replicate_002.csv"), "--output",
                   str(tmp_path), "--model", "poisson", "--n-chains", "1", *SHORT])
        assert rc == EXIT_OK
        rep = io.read_summary(tmp_path / "report.txt")
        assert rep["dic.home"]["estimator"] == "exact"

    def test_phase_probabilities(self, tmp_path):
        rng = np.random.default_rng(0)
        teams = [f"T{k}" for k in range(4)]
        lines = ["season,home_team,away_team,home_score,away_score,phase"]
        for phase in ("before", "during", "after"):
            for _ in range(4):
                for h in teams:
                    for a in teams:
                        if h != a:
                            lines.append(f"1,{h},{a},{rng.poisson(1.5)},{rng.poisson(1.1)},{phase}")
        p = tmp_path / "league.csv"
        p.write_text("\n".join(lines) + "\n")
        out = tmp_path / "out"
        assert main(["fit", "--input", str(p), "--output", str(out), "--n-chains", "1",
                     "--model", "poisson", *SHORT]) == EXIT_OK
        rep = io.read_summary(out / "report.txt")
        assert {"HA_B", "HA_D", "HA_A"} <= set(rep)
        probs = {k: float(v) for k, v in rep["probabilities"].items()}
        assert len(probs) == 2 and all(0 <= v <= 1 for v in probs.values())


class TestCompare:
    ARGS = ["--replicates", "2", "--dispersion", "equi", "--n-chains", "1", *SHORT]

    def test_table_is_byte_stable(self, tmp_path, capsys):
        assert main(["compare", "--output", str(tmp_path / "a"), *self.ARGS]) == EXIT_OK
        printed = capsys.readouterr().out
        assert main(["compare", "--output", str(tmp_path / "b"), *self.ARGS]) == EXIT_OK
        a = (tmp_path / "a" / "compare_table.txt").read_bytes()
        assert a == (tmp_path / "b" / "compare_table.txt").read_bytes()
        text = a.decode()
        assert printed in text
        for label in ("CMP", "Poisson", "NB", "Equi", "380"):
            assert label in text
        header, rows = io.read_table(tmp_path / "a" / "compare_replicates.csv")
        assert header == ["replicate", "model", "dic_y1", "dic_y2"] and len(rows) == 6


class TestSensitivity:
    def test_tables(self, tmp_path):
        rc = main(["sensitivity", "--output", str(tmp_path), "--scenarios", "A,D",
                   "--n-chains", "2", *SHORT])
        assert rc == EXIT_OK
        header, rows = io.read_table(tmp_path / "sensitivity_mse.csv")
        assert header == ["quantity", "A", "D"] and [r[0] for r in rows] == ["mu_1", "mu_2"]
        assert all(float(v) > 0 for r in rows for v in r[1:])
        header, rows = io.read_table(tmp_path / "sensitivity_psrf.csv")
        assert header == ["block", "A_y1", "A_y2", "D_y1", "D_y2"]
        assert [r[0] for r in rows] == ["beta", "gamma", "b"]


class TestExitCodes:
    def test_usage_error(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["fit", "--n-chains", "many"])
        assert exc.value.code == EXIT_USAGE

    def test_unknown_command(self):
        with pytest.raises(SystemExit) as exc:
            main(["plot"])
        assert exc.value.code == EXIT_USAGE

    def test_config_error(self, capsys):
        assert main(["fit"]) == EXIT_USAGE
        assert "needs an input" in capsys.readouterr().err

    def test_bad_config_file(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("colour: red\n")
        assert main(["simulate", "--config", str(p)]) == EXIT_USAGE

    def test_data_error(self, tmp_path, capsys):
        p = tmp_path / "g.csv"
        p.write_text("season,home_team,away_team,home_score,away_score,phase\n"
                     "1,A,B,1,0,covid\n")
        assert main(["fit", "--input", str(p), "--output", str(tmp_path / "o")]) == EXIT_DATA
        assert ":2: unknown phase" in capsys.readouterr().err

    def test_sampler_failure(self, sim_dir, tmp_path, monkeypatch, capsys):
        def stall(*args, **kwargs):
            raise SamplerStallError("attempt cap reached")

        monkeypatch.setattr(cli, "fit_model", stall)
        rc = main(["fit", "--input", str(sim_dir / "replicate_001.csv"), "--output",
                   str(tmp_path)])
        assert rc == EXIT_SAMPLER
        assert "sampler failure" in capsys.readouterr().err

    def test_config_file_with_flag_override(self, tmp_path):
        p = tmp_path / "c.yaml"
        p.write_text("replicates: 3\nseed: 1\ndispersion: under\n")
        out = tmp_path / "o"
        assert main(["simulate", "--config", str(p), "--seed", "2", "--output",
                     str(out)]) == EXIT_OK
        assert len(outputs(out)) == 3
        prov = io.read_provenance(out / "replicate_001.csv")
        assert prov["seed"] == "2" and prov["dispersion"] == "under"
