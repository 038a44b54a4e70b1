import io
import json
import math
from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from soccerchance.errors import DomainError
from soccerchance.ingest import Fixture, derive_game_state, derive_red_card_state, ingest
from soccerchance.rate_model import RateParams
from soccerchance.sbc import ToySpec
from soccerchance.simulate import (
    GroundTruth,
    SimConfig,
    draw_ground_truth,
    posterior_predictive_counts,
    round_robin,
    sample_block,
    simulate_season,
    write_season,
)
from soccerchance.spatial import Centroids

from conftest import make_draws, toy_season

TOY = ToySpec(n_teams=2, roster_size=3)


def fixed_truth(theta_diff=0.0, seed=0):
    truth = draw_ground_truth(TOY.roster(), TOY.centroids(), np.random.default_rng(seed), TOY.rate_priors, TOY.composition_priors)
    theta = np.zeros((2, 6))
    theta[0], theta[1] = theta_diff / 2, -theta_diff / 2
    truth.rate = RateParams(truth.teams, theta, np.zeros(6), 0.0, 0.0, 1.0)
    return truth


class TestSampleBlock:
    def test_vanishing_rate(self):
        truth = fixed_truth(-30.0)
        rng = np.random.default_rng(0)
        assert all(sample_block(truth, "T0", "T1", 1, False, seed=rng) == [] for _ in range(1000))

    def test_poisson_mean(self):
        truth = fixed_truth(0.0)
        rng = np.random.default_rng(1)
        n = [len(sample_block(truth, "T0", "T1", 2, False, seed=rng)) for _ in range(100_000)]
        assert np.mean(n) == pytest.approx(1.0, rel=0.01)

    def test_degenerate_phi(self):
        truth = fixed_truth(1.0)
        pa = truth.players.phi_assist
        members = truth.roster.members("T0")
        pa[members, :] = 0.0
        pa[members[1], :] = 1.0
        rng = np.random.default_rng(2)
        obs = [o for _ in range(300) for o in sample_block(truth, "T0", "T1", 4, True, seed=rng)]
        assert obs and {o.assist_player for o in obs} == {truth.roster.players[members[1]]}

    def test_locations_on_pitch(self):
        truth = fixed_truth(1.5)
        rng = np.random.default_rng(3)
        for _ in range(300):
            for o in sample_block(truth, "T1", "T0", 3, False, seed=rng):
                assert -136 <= o.assist_loc.x <= 136 and 0 <= o.assist_loc.y <= 420
                c = o.chance_loc
                assert -136 <= c.x <= 136 and 0 <= c.y <= 420

    def test_kappa_component_frequencies(self):
        truth = fixed_truth(2.0)
        cents = {
            "assist": Centroids([(-100, 100), (0, 100), (100, 100), (0, 300)], "assist"),
            "delta": Centroids([(0, 0), (0, 10)], "delta"),
        }
        truth.centroids = cents
        kappa = np.array([0.5, 0.3, 0.2, 0.0])
        truth.mixtures["assist"].kappa = np.broadcast_to(kappa, (6, 6, 4)).copy()
        truth.mixtures["assist"].sigma = np.tile(4 * np.eye(2), (4, 1, 1))
        truth.mixtures["delta"].kappa = np.full((6, 6, 2), 0.5)
        truth.mixtures["delta"].sigma = np.tile(np.eye(2), (2, 1, 1))
        rng = np.random.default_rng(4)
        pts = np.array([[o.assist_loc.x, o.assist_loc.y] for _ in range(800) for o in sample_block(truth, "T0", "T1", 1, True, seed=rng)])
        comp = np.argmin(((pts[:, None, :] - cents["assist"].mu[None]) ** 2).sum(axis=2), axis=1)
        freq = np.bincount(comp, minlength=4) / len(pts)
        se = np.sqrt(kappa * (1 - kappa) / len(pts))
        assert np.all(np.abs(freq - kappa) <= 3 * se + 1e-12)


class TestSeason:
    def test_bookkeeping(self):
        truth = fixed_truth(0.5)
        season = simulate_season(SimConfig([Fixture("F1", "T0", "T1")], truth=truth, seed=5))
        assert len(season.panel) == 12
        assert season.panel.N.sum() == len(season.events) == len(season.chances)
        assert np.all(season.panel.G == 0) and np.all(season.panel.R == 0)

    def test_goal_coupled_state_matches_ingest(self):
        season = toy_season(seed=6, state_dynamics="goal-coupled", conversion=1.0, red_card_rate=0.1)
        fx = {f.fixture_id: f for f in season.fixtures}
        assert np.any(season.panel.G != 0) and np.any(season.panel.R != 0)
        for row in season.panel.rows():
            f = fx[row.fixture_id]
            assert row.G == derive_game_state(season.events, row.fixture_id, row.team_id, row.block, f)
            assert row.R == derive_red_card_state(season.events, row.fixture_id, row.team_id, row.block, f)

    def test_deterministic(self):
        a = toy_season(seed=7, state_dynamics="goal-coupled", red_card_rate=0.1)
        b = toy_season(seed=7, state_dynamics="goal-coupled", red_card_rate=0.1)
        assert list(a.events) == list(b.events)
        assert a.panel.records() == b.panel.records()

    @settings(max_examples=8, deadline=None)
    @given(st.integers(0, 10_000), st.sampled_from(["static", "goal-coupled"]))
    def test_ingest_round_trip(self, seed, dynamics):
        season = toy_season(seed=seed, n_fixtures=6, state_dynamics=dynamics, red_card_rate=0.1)
        ev, fx, tr = io.StringIO(), io.StringIO(), io.StringIO()
        write_season(season, ev, fx, tr)
        res = ingest(ev.getvalue(), fx.getvalue())
        assert list(res.events) == list(season.events)
        assert res.panel.records() == season.panel.records()
        assert res.chances == season.chances
        back = GroundTruth.from_dict(json.loads(tr.getvalue()))
        np.testing.assert_array_equal(back.rate.theta, season.truth.rate.theta)
        np.testing.assert_array_equal(back.mixtures["delta"].sigma, season.truth.mixtures["delta"].sigma)

    def test_predictive_mode_uses_one_draw(self, small_season):
        from soccerchance.inference import SamplerConfig, fit

        d = fit(small_season.panel, small_season.chances, SamplerConfig(iterations=30, burn_in=10, seed=0)).draws
        fixtures = small_season.fixtures[:3]
        a = simulate_season(SimConfig(fixtures, draws=d, seed=1))
        b = simulate_season(SimConfig(fixtures, draws=d, seed=1))
        assert 0 <= a.draw_index < len(d) and a.draw_index == b.draw_index
        np.testing.assert_array_equal(a.truth.rate.theta, d.theta[a.draw_index])
        assert list(a.events) == list(b.events)

    def test_unknown_fixture_team(self):
        with pytest.raises(DomainError):
            SimConfig([Fixture("F", "T0", "X")], truth=fixed_truth())

    def test_config_requires_one_source(self):
        with pytest.raises(DomainError):
            SimConfig([], truth=None, draws=None)


class TestRoundRobin:
    def test_double_round_robin(self):
        teams = [f"T{i}" for i in range(20)]
        fx = round_robin(teams)
        assert len(fx) == 380
        pairs = Counter((f.home, f.away) for f in fx)
        assert len(pairs) == 380 and set(pairs.values()) == {1}
        # every team plays once per round
        by_date = Counter((f.date, t) for f in fx for t in f.teams)
        assert set(by_date.values()) == {1}

    def test_odd_and_truncated(self):
        fx = round_robin(["A", "B", "C"], 5)
        assert len(fx) == 5 and all(f.home != f.away for f in fx)


class TestPredictive:
    def test_poisson_one(self):
        d = make_draws(S=1)
        pc = posterior_predictive_counts(d, "A", "B", 1)
        assert pc.mean == 1.0
        assert pc.modes == (0, 1)
        assert pc.pmf[0] == pytest.approx(math.exp(-1), rel=1e-14)

    def test_two_draw_mixture(self):
        theta = np.zeros((2, 2, 6))
        theta[0, 0, 2], theta[0, 1, 2] = math.log(0.5) / 2, -math.log(0.5) / 2
        theta[1, 0, 2], theta[1, 1, 2] = math.log(1.5) / 2, -math.log(1.5) / 2
        pc = posterior_predictive_counts(make_draws(S=2, theta=theta), "A", "B", 3)
        assert pc.mean == pytest.approx(1.0, rel=1e-14)
        assert pc.pmf[0] == pytest.approx((math.exp(-0.5) + math.exp(-1.5)) / 2, rel=1e-12)
        assert pc.pmf[0] == pytest.approx(0.4148, abs=1e-4)

    def test_identical_draws_match_poisson(self):
        from scipy.stats import poisson

        gamma = np.full((5, 6), 0.7)
        pc = posterior_predictive_counts(make_draws(S=5, gamma=gamma), "A", "B", 2, is_home=True)
        np.testing.assert_allclose(pc.pmf, poisson.pmf(np.arange(len(pc.pmf)), math.exp(0.7)), rtol=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.lists(st.floats(-2, 2), min_size=1, max_size=6))
    def test_pmf_mass(self, alphas):
        S = len(alphas)
        pc = posterior_predictive_counts(make_draws(S=S, alpha=alphas), "A", "B", 5, G=1)
        assert pc.pmf.sum() >= 0.999
        assert pc.quantiles[0.025] <= pc.quantiles[0.5] <= pc.quantiles[0.975]

    def test_unknown_team(self):
        with pytest.raises(KeyError):
            posterior_predictive_counts(make_draws(), "A", "Z", 1)
