import csv
import io
import math

import numpy as np
import pytest
from scipy import integrate, stats

from soccerchance.errors import DomainError, NumericError
from soccerchance.ingest import BlockPanel, ChanceObservation, DeltaLocation, PanelRow, PitchLocation, PlayerKey
from soccerchance.inference import (
    AdaptiveScale,
    SamplerConfig,
    diagnostics,
    effective_sample_size,
    fit,
    read_draws,
    rwm_update,
    split_rhat,
    summarise,
    tau_log_conditional,
    update_tau,
    write_draws,
    write_trace_csv,
)
from soccerchance.spatial import Centroids


def std_normal(v):
    return -0.5 * float(np.dot(v, v))


class TestRWM:
    def test_zero_step_always_accepted(self):
        rng = np.random.default_rng(0)
        x = np.array([0.3, -1.2])
        for _ in range(100):
            res = rwm_update(x, 0.0, std_normal, rng)
            assert res.accepted
            np.testing.assert_array_equal(res.value, x)

    def test_non_finite_current(self):
        with pytest.raises(NumericError):
            rwm_update(np.zeros(1), 1.0, lambda v: -math.inf, np.random.default_rng(0))

    def test_reproducible(self):
        a = rwm_update(np.zeros(3), 1.0, std_normal, np.random.default_rng(5))
        b = rwm_update(np.zeros(3), 1.0, std_normal, np.random.default_rng(5))
        np.testing.assert_array_equal(a.value, b.value)

    def test_normal_variance(self):
        rng = np.random.default_rng(1)
        x, lp = np.zeros(1), 0.0
        out = np.empty(50_000)
        for i in range(len(out)):
            x, _, lp = rwm_update(x, 2.4, std_normal, rng, lp)
            out[i] = x[0]
        assert out.var() == pytest.approx(1.0, rel=0.05)

    def test_adaptation_reaches_target(self):
        rng = np.random.default_rng(2)
        scale = AdaptiveScale(step=0.1)
        x, lp = np.zeros(10), 0.0
        for _ in range(20_000):
            x, acc, lp = rwm_update(x, scale.step, std_normal, rng, lp)
            scale.record(acc)
        scale.freeze()
        scale.reset_counts()
        for _ in range(10_000):
            x, acc, lp = rwm_update(x, scale.step, std_normal, rng, lp)
            scale.record(acc)
        assert abs(scale.acceptance_rate - 0.234) < 0.05

    def test_detailed_balance_chi_square(self):
        # skewed target: Gamma(3, 1); thinned draws binned into 20 equiprobable cells
        target = stats.gamma(3.0)
        rng = np.random.default_rng(3)
        x = np.array([2.0])
        lp = target.logpdf(2.0)
        draws = []
        for i in range(200_000):
            x, _, lp = rwm_update(x, 2.5, lambda v: float(target.logpdf(v[0])), rng, lp)
            if i % 50 == 0:
                draws.append(x[0])
        edges = target.ppf(np.linspace(0, 1, 21))
        counts, _ = np.histogram(draws, edges)
        assert stats.chisquare(counts).pvalue > 0.01


class TestTau:
    @staticmethod
    def quadrature_mean(theta, shape=1.0, rate=0.01):
        ss, d = float(np.sum(np.square(theta))), np.size(theta)
        c = tau_log_conditional(100.0, ss, d, shape, rate)

        def f(t):
            return math.exp(tau_log_conditional(t, ss, d, shape, rate) - c)

        pts = [1e-3, 1, 10, 100, 1000, 5000]
        z = sum(integrate.quad(f, a, b, limit=200)[0] for a, b in zip([0] + pts, pts + [np.inf]))
        m = sum(integrate.quad(lambda t: t * f(t), a, b, limit=200)[0] for a, b in zip([0] + pts, pts + [np.inf]))
        return m / z

    @staticmethod
    def chain(theta, n=40_000, seed=0):
        rng = np.random.default_rng(seed)
        tau, out = 1.0, np.empty(n)
        for i in range(n):
            tau, _ = update_tau(theta, tau, rng)
            out[i] = tau
        return out[1000:]

    def check(self, theta):
        expected = self.quadrature_mean(theta)
        draws = self.chain(theta)
        mcse = draws.std() / math.sqrt(effective_sample_size(draws))
        assert abs(draws.mean() - expected) < 3 * mcse
        return expected

    def test_zero_theta(self):
        # one free coordinate at zero: the conditional is Gamma(1/2, 0.01), mean 50
        assert self.check(np.zeros(1)) == pytest.approx(50.0, rel=1e-6)

    def test_scaled_theta(self):
        theta = np.array([3.0, -4.0, 5.0, 8.0, -2.0])
        m1 = self.check(theta)
        m2 = self.check(2 * theta)
        assert m2 > m1

    def test_no_coordinates_is_prior(self):
        draws = self.chain(np.zeros(0), n=60_000)
        mcse = draws.std() / math.sqrt(effective_sample_size(draws))
        assert abs(draws.mean() - 100.0) < 3 * mcse


class TestDiagnostics:
    def test_white_noise(self):
        x = np.random.default_rng(4).normal(size=1000)
        assert 800 <= effective_sample_size(x) <= 1000

    def test_ar1(self):
        rng = np.random.default_rng(5)
        rho, n = 0.9, 20_000
        x = np.empty(n)
        x[0] = rng.normal()
        for t in range(1, n):
            x[t] = rho * x[t - 1] + rng.normal() * math.sqrt(1 - rho**2)
        assert effective_sample_size(x) == pytest.approx(n * (1 - rho) / (1 + rho), rel=0.3)

    def test_constant_chain(self):
        with pytest.warns(UserWarning):
            d = summarise(["c"], np.full(50, 2.0))
        assert d["c"].sd == 0 and d["c"].ess == 50

    def test_quantiles_ordered_and_ess_bounded(self):
        x = np.random.default_rng(6).normal(size=(200, 3))
        d = summarise(["a", "b", "c"], x)
        for s in d.summaries.values():
            assert s.q025 <= s.mean <= s.q975 and s.ess <= 200

    def test_too_few(self):
        with pytest.raises(ValueError):
            summarise(["a"], np.zeros(5))

    def test_rhat_same_distribution(self):
        x = np.random.default_rng(7).normal(size=(4, 500, 2))
        assert np.all(np.abs(split_rhat(x) - 1) < 0.02)
        x[0] += 3
        assert np.all(split_rhat(x) > 1.2)


class TestConfig:
    def test_default_run_shape(self):
        assert SamplerConfig(iterations=2000, burn_in=100, thin=1).n_stored == 1900

    @pytest.mark.parametrize("kw", [dict(iterations=0), dict(burn_in=-1), dict(thin=0), dict(burn_in=10, iterations=10)])
    def test_invalid(self, kw):
        with pytest.raises(DomainError):
            SamplerConfig(**kw)

    def test_dict_round_trip(self):
        c = SamplerConfig(iterations=50, burn_in=5, seed=3)
        assert SamplerConfig.from_dict(c.to_dict()) == c
        with pytest.raises(DomainError):
            SamplerConfig.from_dict({"bogus": 1})


def two_team_problem(n_fixtures=3, chances=True):
    """Two teams, fixed far-apart centroids, chances sitting exactly on them."""
    rows, obs = [], []
    a1, a2, b1 = PlayerKey("a1", "A"), PlayerKey("a2", "A"), PlayerKey("b1", "B")
    for f in range(n_fixtures):
        for team, opp, home in (("A", "B", True), ("B", "A", False)):
            for b in range(1, 7):
                n = 0
                if chances and team == "A" and b == 1:
                    # a1 assists from component 1 twice, a2 from component 2 once
                    for who, loc in ((a1, (-100.0, 50.0)), (a1, (-100.0, 50.0)), (a2, (100.0, 50.0))):
                        obs.append(ChanceObservation(f"F{f}", "A", 1, who, a2, PitchLocation(*loc), DeltaLocation(0.0, 0.0)))
                        n += 1
                rows.append(PanelRow(f"F{f}", team, opp, b, home, n, 0, 0))
    cents = {
        "assist": Centroids([(-100.0, 50.0), (100.0, 50.0), (0.0, 300.0)], "assist"),
        "delta": Centroids([(0.0, 0.0), (0.0, 200.0), (200.0, 0.0)], "delta"),
    }
    return BlockPanel.from_rows(rows), obs, cents, {"A": ["a1", "a2"], "B": ["b1"]}


class TestFit:
    def test_conjugate_marginals(self):
        panel, obs, cents, rosters = two_team_problem()
        res = fit(panel, obs, SamplerConfig(iterations=5100, burn_in=100, seed=1), centroids=cents, rosters=rosters)
        d = res.draws
        assert len(d) == 5000
        i = d.roster.index(PlayerKey("a1", "A"))
        # phi^a for a1 in block 1: 6 of 9 assists -> Beta(1 + 6, 1 + 3)
        ks = stats.kstest(d.phi_assist[:, i, 0], stats.beta(7, 4).cdf).statistic
        assert ks < 0.05
        # kappa^a for a1 in block 1: 6 points on component 1 -> marginal Beta(7, 2)
        ks = stats.kstest(d.kappa["assist"][:, i, 0, 0], stats.beta(7, 2).cdf).statistic
        assert ks < 0.05
        # b1 has no observations: prior Dirichlet(1, 1, 1) marginal Beta(1, 2)
        j = d.roster.index(PlayerKey("b1", "B"))
        assert stats.kstest(d.kappa["assist"][:, j, 2, 0], stats.beta(1, 2).cdf).statistic < 0.05
        np.testing.assert_array_equal(d.phi_assist[:, j], 1.0)

    def test_zero_chances_prior_recovery(self):
        panel, _, cents, rosters = two_team_problem(n_fixtures=10, chances=False)
        res = fit(panel, (), SamplerConfig(iterations=3000, burn_in=500, seed=2), centroids=cents, rosters=rosters)
        d = res.draws
        i = d.roster.index(PlayerKey("a1", "A"))
        assert d.phi_assist[:, i].mean() == pytest.approx(0.5, abs=0.03)
        assert d.kappa["delta"][:, i].mean() == pytest.approx(1 / 3, abs=0.03)
        # every row is empty: the fitted rate sits far below the prior mean of lambda (which is > 1)
        lam = np.exp(d.theta[:, 0, :] - d.theta[:, 1, :] + d.gamma)
        assert np.median(lam) < 0.2

    def test_sum_to_zero_and_shape(self, small_season):
        res = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=80, burn_in=20, thin=3, seed=4))
        d = res.draws
        assert len(d) == SamplerConfig(iterations=80, burn_in=20, thin=3).n_stored == 20
        assert np.all(d.iteration >= 20)
        assert np.max(np.abs(d.theta.sum(axis=1))) < 1e-12
        np.testing.assert_allclose(d.kappa["assist"].sum(axis=-1), 1.0, atol=1e-12)
        np.testing.assert_allclose(np.linalg.eigvalsh(d.sigma["delta"])[..., 0] > 0, True)

    def test_reproducible_across_workers(self, small_season):
        cfg = dict(iterations=40, burn_in=10, seed=9)
        a = fit(small_season.panel, small_season.chances, SamplerConfig(workers=1, **cfg)).draws
        b = fit(small_season.panel, small_season.chances, SamplerConfig(workers=4, **cfg)).draws
        for name in ("theta", "gamma", "alpha", "beta", "tau", "phi_assist", "phi_chance"):
            np.testing.assert_array_equal(getattr(a, name), getattr(b, name))
        for k in a.kappa:
            np.testing.assert_array_equal(a.kappa[k], b.kappa[k])
            np.testing.assert_array_equal(a.sigma[k], b.sigma[k])

    def test_seed_changes_draws(self, small_season):
        a = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=20, burn_in=5, seed=1)).draws
        b = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=20, burn_in=5, seed=2)).draws
        assert not np.array_equal(a.theta, b.theta)

    def test_chains_pool_and_report_rhat(self, small_season):
        res = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=60, burn_in=10, chains=2, seed=3))
        assert len(res.draws) == 100 and len(res.chains) == 2
        assert res.diagnostics["alpha"].rhat is not None

    def test_empty_panel(self):
        with pytest.raises(DomainError):
            fit(BlockPanel.from_rows([]))

    def test_draws_io_round_trip(self, small_season):
        d = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=30, burn_in=5, seed=0)).draws
        buf = io.StringIO()
        write_draws(d, buf)
        buf.seek(0)
        back = read_draws(buf)
        np.testing.assert_array_equal(back.theta, d.theta)
        np.testing.assert_array_equal(back.kappa["assist"], d.kappa["assist"])
        np.testing.assert_array_equal(back.sigma["delta"], d.sigma["delta"])
        assert back.players == d.players
        assert back.manifest["data_checksum"] == d.manifest["data_checksum"]
        buf2 = io.StringIO()
        write_draws(back, buf2)
        assert buf2.getvalue() == buf.getvalue()

    def test_trace_csv(self, small_season):
        d = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=15, burn_in=5, seed=0)).draws
        buf = io.StringIO()
        write_trace_csv(d, buf)
        rows = list(csv.reader(io.StringIO(buf.getvalue())))
        assert rows[0] == ["iteration", "parameter", "value"]
        names, _ = d.rate_matrix()
        assert len(rows) == 1 + len(d) * len(names)
        it, name, val = rows[1]
        assert int(it) == 5 and name == "theta[T0,t1]" and float(val) == d.theta[0, 0, 0]

    def test_diagnostics_entry_point(self, small_season):
        d = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=40, burn_in=10, seed=0)).draws
        diag = diagnostics(d)
        assert diag.n_draws == 30
        assert "sigma_assist[1][0,0]" in diag.summaries
        assert set(diag.group_mcse()) >= {"theta", "gamma", "alpha", "beta", "tau"}
        assert 0 < diag.acceptance["theta_t1"] < 1 and "tau" in diag.acceptance
