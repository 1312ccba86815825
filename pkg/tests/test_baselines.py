"""Poisson and Negative Binomial competitors."""

import math

import mpmath
import numpy as np
import pytest
from scipy import stats

from bivcmp.baselines import (BaselineKind, NegBinSampler, PoissonSampler, fit_baseline,
                              nb_logpmf, poisson_logpmf)
from bivcmp.exchange import ChainConfig
from bivcmp.model import PriorSpec, build_design, ha_functionals
from bivcmp.simgen import TEAMS, ScenarioSpec, generate_seasons


def nb_direct(y, mu, kappa):
    """Negative binomial pmf by direct product, in 50-digit arithmetic."""
    mpmath.mp.dps = 50
    y, mu, kappa = int(y), mpmath.mpf(mu), mpmath.mpf(kappa)
    coef = mpmath.mpf(1)
    for i in range(y):
        coef *= (kappa + i) / (i + 1)
    return float(mpmath.log(coef * (kappa / (kappa + mu)) ** kappa * (mu / (kappa + mu)) ** y))


@pytest.fixture(scope="module")
def equi_design():
    games, _ = generate_seasons(ScenarioSpec("equi", 1, seed=0))
    return build_design(games, teams=TEAMS)


class TestLogPmf:
    def test_poisson_matches_scipy(self):
        y = np.arange(30)
        np.testing.assert_allclose(poisson_logpmf(y, 3.3), stats.poisson.logpmf(y, 3.3),
                                   rtol=1e-13)

    @pytest.mark.parametrize("mu", [0.3, 2.0, 9.5])
    @pytest.mark.parametrize("kappa", [0.05, 1.0, 7.5, 300.0])
    def test_negative_binomial_matches_scipy(self, mu, kappa):
        y = np.arange(60)
        ref = stats.nbinom.logpmf(y, kappa, kappa / (kappa + mu))
        np.testing.assert_allclose(nb_logpmf(y, mu, kappa), ref, rtol=1e-10, atol=1e-10)

    @pytest.mark.parametrize("y, mu, kappa", [(0, 2.0, 0.5), (7, 3.0, 2.0), (25, 0.7, 12.0),
                                              (3, 40.0, 1e4)])
    def test_negative_binomial_direct_summation(self, y, mu, kappa):
        np.testing.assert_allclose(nb_logpmf(y, mu, kappa), nb_direct(y, mu, kappa),
                                   rtol=1e-10, atol=1e-10)

    def test_poisson_limit(self):
        y = np.arange(16)
        gap = nb_logpmf(y, 4.0, 1e8) - stats.poisson.logpmf(y, 4.0)
        assert np.max(np.abs(gap)) < 1e-6

    def test_poisson_limit_gap_is_analytic(self):
        # the remaining gap is the true O(y^2 / kappa) difference, not rounding
        mpmath.mp.dps = 60
        k, mu, y = mpmath.mpf(10) ** 8, mpmath.mpf(4), 39
        po = y * mpmath.log(mu) - mu - mpmath.loggamma(y + 1)
        gap = float(nb_direct(y, 4.0, 1e8) - po)
        np.testing.assert_allclose(gap, 5.929999078116849e-06, rtol=1e-6)
        np.testing.assert_allclose(nb_logpmf(39, 4.0, 1e8), nb_direct(39, 4.0, 1e8),
                                   rtol=1e-13)

    def test_finite_everywhere(self):
        y = np.array([0, 1, 50, 10_000])[:, None]
        mu = np.array([1e-8, 1.0, 1e4])[None, :]
        for kappa in (1e-6, 1.0, 1e12):
            assert np.all(np.isfinite(nb_logpmf(y, mu, kappa)))

    def test_normalizes(self):
        total = np.exp(nb_logpmf(np.arange(2000), 5.0, 0.8)).sum()
        np.testing.assert_allclose(total, 1.0, rtol=1e-10)


class TestBaselineKind:
    def test_valid(self):
        assert BaselineKind("negative_binomial", (2.0, 3.0)).nb_dispersion == (2.0, 3.0)

    @pytest.mark.parametrize("args", [("cmp",), ("poisson", (1.0, 1.0)),
                                      ("negative_binomial", (0.0, 1.0))])
    def test_invalid(self, args):
        with pytest.raises(ValueError):
            BaselineKind(*args)


class TestSamplers:
    def test_log_ratio_matches_likelihood(self, equi_design):
        s = PoissonSampler(equi_design, PriorSpec(), ChainConfig(10, 0),
                           np.random.default_rng(0))
        lm = np.full((equi_design.n_games, 2), 0.4)
        lp = lm + 0.1
        np.testing.assert_allclose(s._centering_log_ratio((0, 1), lm, lp),
                                   s.log_likelihood(lp) - s.log_likelihood(lm), rtol=1e-12)

    def test_size_prior_without_likelihood(self, equi_design):
        s = NegBinSampler(equi_design, PriorSpec(), ChainConfig(20_000, 5000),
                          np.random.default_rng(1), use_likelihood=False)
        lk = []
        for it in range(20_000):
            s.iteration, s.adapting = it + 1, it < 5000
            s.update_kappa(0)
            lk.append(s.log_kappa[0])
        lk = np.array(lk[5000:])
        assert abs(lk.mean()) < 0.6
        np.testing.assert_allclose(lk.var(), 10.0, rtol=0.3)

    def test_initial_size(self, equi_design):
        s = NegBinSampler(equi_design, PriorSpec(), ChainConfig(10, 0),
                          np.random.default_rng(2), kappa_init=(2.0, 4.0))
        np.testing.assert_allclose(np.exp(s.log_kappa), [2.0, 4.0])


class TestFitBaseline:
    @pytest.fixture(scope="class")
    @staticmethod
    def poisson_fit(equi_design):
        return fit_baseline("poisson", equi_design, PriorSpec(),
                            ChainConfig(4000, 2000, seed=1))

    def test_home_advantage_covers_truth(self, poisson_fit, equi_design):
        beta = poisson_fit.stack("beta")
        ha = ha_functionals(beta[:, 0], beta[:, 1], equi_design.columns)["HA_D"]
        lo, hi = np.percentile(ha, [2.5, 97.5])
        assert lo < 0.5 < hi

    def test_draw_shapes(self, poisson_fit, equi_design):
        ch = poisson_fit.chains[0]
        assert poisson_fit.model == "poisson"
        assert ch.beta.shape == (2000, 2, equi_design.n_coef)
        assert ch.gamma is None and ch.kappa is None
        assert ch.b.shape == (200, equi_design.n_games, 2)

    def test_negative_binomial_fit(self, equi_design):
        dr = fit_baseline(BaselineKind("negative_binomial"), equi_design, PriorSpec(),
                          ChainConfig(1500, 500, seed=2))
        kappa = dr.stack("kappa")
        assert kappa.shape == (1000, 2) and np.all(kappa > 0)
        # equi-dispersed data pushes the size upward from its start of 10
        assert np.all(np.median(kappa, axis=0) > 10)
        names, values = dr.chains[0].scalar_table()
        assert "kappa_home" in names and values.shape[1] == len(names)

    def test_reproducible(self, equi_design):
        cfg = ChainConfig(60, 20, seed=5)
        a = fit_baseline("poisson", equi_design, PriorSpec(), cfg)
        b = fit_baseline("poisson", equi_design, PriorSpec(), cfg)
        np.testing.assert_array_equal(a.stack("beta"), b.stack("beta"))
        assert not math.isnan(a.stack("cov").sum())
