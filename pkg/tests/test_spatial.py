import io
import math
import warnings

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats
from scipy.special import logsumexp

from soccerchance.errors import DataIntegrityError, DomainError, NumericError
from soccerchance.ingest import ChanceObservation, DeltaLocation, PitchLocation, PlayerKey
from soccerchance.spatial import (
    Centroids,
    CompositionPriors,
    MixtureParams,
    PlayerDist,
    Roster,
    assignment_probabilities,
    component_log_densities,
    composition_log_likelihood_terms,
    composition_log_posterior,
    composition_log_prior,
    gmm_log_density,
    kmeans,
    responsibilities,
    sample_inverse_wishart,
    sigma_posterior,
    update_kappa,
    update_phi,
    update_sigma,
)

I2 = np.eye(2)


class TestKMeans:
    def test_symmetric_pairs(self):
        c = kmeans([(0, 0), (0, 2), (10, 0), (10, 2)], M=2)
        np.testing.assert_allclose(sorted(map(tuple, c.mu)), [(0, 1), (10, 1)])

    def test_m_equals_n(self):
        pts = np.array([(3.0, 1.0), (0.0, 5.0), (7.0, 2.0)])
        c = kmeans(pts, M=3)
        assert sorted(map(tuple, c.mu)) == sorted(map(tuple, pts))

    def test_blobs(self):
        rng = np.random.default_rng(0)
        centers = np.array([(0, 0), (100, 0), (0, 100), (100, 100)], float)
        pts = np.concatenate([c + rng.normal(0, 0.1, (50, 2)) for c in centers])
        c = kmeans(pts, M=4, seed=3)
        for target in centers:
            assert np.min(np.linalg.norm(c.mu - target, axis=1)) < 0.1

    def test_sorted_by_y_then_x(self):
        rng = np.random.default_rng(1)
        c = kmeans(rng.uniform(0, 100, (300, 2)), M=8)
        keys = [(y, x) for x, y in c.mu]
        assert keys == sorted(keys)

    def test_too_few_points(self):
        with pytest.raises(DomainError):
            kmeans([(0, 0)], M=2)

    def test_duplicates_do_not_fail(self):
        pts = [(0, 0)] * 10 + [(1, 1)]
        c = kmeans(pts, M=3)
        assert c.M == 3 and np.all(np.isfinite(c.mu))

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 2**31 - 1), st.integers(1, 6))
    def test_deterministic(self, seed, M):
        pts = np.random.default_rng(seed).normal(0, 10, (40, 2))
        np.testing.assert_array_equal(kmeans(pts, M, seed).mu, kmeans(pts, M, seed).mu)

    def test_centroids_frozen_and_csv(self):
        c = Centroids(np.array([[1.5, 2.0], [-3.0, 4.25]]), "delta")
        with pytest.raises(ValueError):
            c.mu[0, 0] = 9.0
        buf = io.StringIO()
        c.to_csv(buf)
        back = Centroids.from_csv(buf.getvalue())["delta"]
        np.testing.assert_array_equal(back.mu, c.mu)
        assert back.checksum() == c.checksum()

    def test_csv_gap(self):
        with pytest.raises(DataIntegrityError):
            Centroids.from_csv("component,x,y,space_tag\n1,0,0,assist\n3,1,1,assist\n")


class TestDensity:
    def test_standard_normal(self):
        v = gmm_log_density((0, 0), [1.0], [(0, 0)], [I2])
        assert v == pytest.approx(-math.log(2 * math.pi), abs=1e-12)
        assert math.exp(v) == pytest.approx(0.15915, abs=1e-5)

    def test_collapse(self):
        a = gmm_log_density((1, 2), [0.5, 0.5], [(0, 0), (0, 0)], [I2, I2])
        b = gmm_log_density((1, 2), [1.0], [(0, 0)], [I2])
        assert a == pytest.approx(b, abs=1e-14)

    def test_hand_value(self):
        v = gmm_log_density((2, 0), [0.3, 0.7], [(0, 0), (4, 0)], [I2, I2])
        assert v == pytest.approx(math.log(0.15915494309189535 * math.exp(-2)), abs=1e-12)
        assert v == pytest.approx(-3.8379, abs=1e-4)

    def test_matches_scipy(self):
        rng = np.random.default_rng(2)
        mu = rng.normal(0, 5, (3, 2))
        A = rng.normal(size=(3, 2, 2))
        sig = A @ A.transpose(0, 2, 1) + 0.5 * I2
        k = np.array([0.2, 0.5, 0.3])
        x = np.array([0.7, -1.1])
        expected = math.log(sum(k[m] * stats.multivariate_normal(mu[m], sig[m]).pdf(x) for m in range(3)))
        assert gmm_log_density(x, k, mu, sig) == pytest.approx(expected, rel=1e-12)

    def test_singular_component_named(self):
        with pytest.raises(NumericError, match="2"):
            gmm_log_density((0, 0), [0.5, 0.5], [(0, 0), (1, 1)], [I2, np.zeros((2, 2))])

    def test_normalises_on_wide_grid(self):
        mu = np.array([(0.0, 0.0), (30.0, 10.0)])
        sig = np.array([[[25.0, 5.0], [5.0, 16.0]], [[9.0, 0.0], [0.0, 36.0]]])
        k = np.array([0.4, 0.6])
        sd = 6.0
        xs = np.linspace(mu[:, 0].min() - 8 * sd, mu[:, 0].max() + 8 * sd, 400)
        ys = np.linspace(mu[:, 1].min() - 8 * sd, mu[:, 1].max() + 8 * sd, 400)
        X, Y = np.meshgrid(xs, ys)
        logc = component_log_densities(np.column_stack([X.ravel(), Y.ravel()]), mu, sig)
        dens = np.exp(logsumexp(logc + np.log(k), axis=1))
        total = dens.sum() * (xs[1] - xs[0]) * (ys[1] - ys[0])
        assert 0.99 <= total <= 1.01


class TestAssignment:
    def test_separated(self):
        p = assignment_probabilities((0, 0), [0.5, 0.5], [(0, 0), (10, 0)], [I2, I2])
        assert p[0] > 0.99

    def test_identical_components(self):
        p = assignment_probabilities((3, 1), [0.2, 0.8], [(0, 0), (0, 0)], [I2, I2])
        np.testing.assert_allclose(p, [0.2, 0.8], atol=1e-14)

    def test_equidistant(self):
        p = assignment_probabilities((0, 0), [0.5, 0.5], [(-1, 0), (1, 0)], [I2, I2])
        np.testing.assert_allclose(p, [0.5, 0.5], atol=1e-14)

    def test_far_point_does_not_underflow(self):
        # log-space evaluation keeps the nearer component
        p = assignment_probabilities((1e6, 0), [0.5, 0.5], [(0, 0), (1, 0)], [1e-6 * I2, 1e-6 * I2])
        np.testing.assert_allclose(p, [0.0, 1.0])

    def test_uniform_fallback(self):
        with pytest.warns(UserWarning):
            p = assignment_probabilities((0, 0), [0.0, 0.0], [(0, 0), (1, 0)], [I2, I2])
        np.testing.assert_allclose(p, [0.5, 0.5])

    def test_responsibilities_match_direct_em(self):
        rng = np.random.default_rng(3)
        pts = rng.normal(0, 3, (50, 2))
        mu = np.array([(0.0, 0.0), (2.0, 1.0), (-2.0, 3.0)])
        sig = np.array([I2 * 2, I2, np.array([[3.0, 1.0], [1.0, 2.0]])])
        w = rng.dirichlet(np.ones(3), 50)
        # direct evaluation with scipy densities
        dens = np.column_stack([stats.multivariate_normal(mu[m], sig[m]).pdf(pts) for m in range(3)])
        direct = w * dens
        direct /= direct.sum(axis=1, keepdims=True)
        np.testing.assert_allclose(responsibilities(pts, w, mu, sig), direct, atol=1e-10)
        for i in range(5):
            np.testing.assert_allclose(assignment_probabilities(pts[i], w[i], mu, sig), direct[i], atol=1e-10)


class TestConjugacy:
    def test_phi_arithmetic(self):
        post = update_phi([2, 0, 1])
        np.testing.assert_array_equal(post.concentration, [3, 1, 2])
        np.testing.assert_allclose(post.mean, [1 / 2, 1 / 6, 1 / 3], rtol=0, atol=1e-12)

    def test_phi_zero_counts(self):
        np.testing.assert_allclose(update_phi([0, 0, 0, 0]).mean, 0.25, atol=1e-12)

    def test_phi_large_counts(self):
        assert update_phi([20, 0, 10]).mean[0] == pytest.approx(2 / 3, abs=0.04)

    def test_phi_mapping(self):
        post = update_phi({PlayerKey("a", "T"): 1, PlayerKey("b", "T"): 3}, 0.5)
        assert post.labels == (PlayerKey("a", "T"), PlayerKey("b", "T"))
        np.testing.assert_array_equal(post.concentration, [1.5, 3.5])

    def test_negative(self):
        with pytest.raises(DomainError):
            update_kappa([1, -1])

    def test_kappa_arithmetic(self):
        np.testing.assert_allclose(update_kappa(np.zeros(8)).mean, 1 / 8, atol=1e-12)
        np.testing.assert_allclose(update_kappa([5] + [0] * 7).mean, [6 / 13] + [1 / 13] * 7, atol=1e-12)

    @given(st.lists(st.integers(0, 50), min_size=2, max_size=10), st.randoms())
    def test_kappa_exchangeable(self, counts, r):
        perm = list(range(len(counts)))
        r.shuffle(perm)
        a = update_kappa(counts).concentration
        b = update_kappa([counts[i] for i in perm]).concentration
        np.testing.assert_array_equal(a[perm], b)

    def test_sigma_scatter(self):
        scale, df = sigma_posterior(0, [(1, 0), (-1, 0)], [(0, 0)], I2, 2)
        np.testing.assert_allclose(scale, [[3, 0], [0, 1]], atol=1e-12)
        assert df == 4

    def test_sigma_scatter_about_centroid(self):
        pts = np.array([(2.0, 1.0), (4.0, 3.0)])
        scale, df = sigma_posterior(1, pts, [(0, 0), (1, 1)], 2 * I2, 3)
        d = pts - (1, 1)
        np.testing.assert_allclose(scale, 2 * I2 + d.T @ d, atol=1e-12)
        assert df == 5

    def test_sigma_bad_prior(self):
        with pytest.raises(DomainError):
            update_sigma(0, [], [(0, 0)], np.array([[1.0, 2.0], [2.0, 1.0]]), 2)
        with pytest.raises(DomainError):
            update_sigma(0, [], [(0, 0)], I2, 1.0)

    def test_sigma_empty_is_prior(self):
        scale, df = sigma_posterior(0, np.zeros((0, 2)), [(0, 0)], I2, 2)
        np.testing.assert_array_equal(scale, I2)
        assert df == 2

    def test_sigma_concentrates(self):
        rng = np.random.default_rng(4)
        true = np.array([[4.0, 1.0], [1.0, 2.0]])
        pts = rng.multivariate_normal([5, 5], true, 10_000)
        draws = [update_sigma(0, pts, [(5, 5)], I2, 2, rng) for _ in range(50)]
        err = np.linalg.norm(np.mean(draws, axis=0) - true) / np.linalg.norm(true)
        assert err < 0.05

    def test_iw_sampler_matches_scipy(self):
        rng = np.random.default_rng(5)
        scale = np.array([[3.0, 0.5], [0.5, 2.0]])
        df = 7.0
        draws = sample_inverse_wishart(np.repeat(scale[None], 20_000, axis=0), df, rng)
        # mean of IW(scale, df) in 2-D is scale / (df - 3)
        np.testing.assert_allclose(draws.mean(axis=0), scale / (df - 3), rtol=0.03)
        ref = stats.invwishart(df=df, scale=scale).rvs(20_000, random_state=6)
        for (i, j) in ((0, 0), (0, 1), (1, 1)):
            assert stats.ks_2samp(draws[:, i, j], ref[:, i, j]).statistic < 0.03

    def test_iw_draws_spd(self):
        rng = np.random.default_rng(7)
        for _ in range(10):
            A = rng.normal(size=(1000, 2, 2))
            scales = A @ A.transpose(0, 2, 1) + 1e-3 * I2
            dfs = rng.uniform(2.0, 50, 1000)
            d = sample_inverse_wishart(scales, dfs, rng)
            assert np.array_equal(d, d.transpose(0, 2, 1))
            np.linalg.cholesky(d)


def _toy_composition():
    roster = Roster.build(["A", "B"], [PlayerKey("a1", "A"), PlayerKey("a2", "A"), PlayerKey("b1", "B")])
    phi = PlayerDist.uniform(roster)
    mixtures = {s: MixtureParams.uniform(len(roster), 2, space=s) for s in ("assist", "delta")}
    for m in mixtures.values():
        m.sigma = m.sigma * 100.0
    cents = {"assist": Centroids([(0, 50), (40, 60)], "assist"), "delta": Centroids([(0, -10), (10, 5)], "delta")}
    obs = ChanceObservation("F", "A", 2, PlayerKey("a1", "A"), PlayerKey("a2", "A"), PitchLocation(10, 55), DeltaLocation(-5, -20))
    return roster, phi, mixtures, cents, obs


class TestCompositionPosterior:
    def test_no_observations_is_prior(self):
        _, phi, mix, cents, _ = _toy_composition()
        pri = CompositionPriors()
        assert composition_log_posterior(phi, mix, cents, [], pri) == pytest.approx(composition_log_prior(phi, mix, pri))

    def test_additivity(self):
        _, phi, mix, cents, obs = _toy_composition()
        pri = CompositionPriors()
        terms = composition_log_likelihood_terms(phi, mix, cents, [obs])[0]
        assert terms[0] == pytest.approx(math.log(0.5))
        assert terms[1] == pytest.approx(math.log(0.5))
        assert terms[2] == pytest.approx(gmm_log_density((10, 55), [0.5, 0.5], cents["assist"], mix["assist"].sigma))
        assert terms[3] == pytest.approx(gmm_log_density((-5, -20), [0.5, 0.5], cents["delta"], mix["delta"].sigma))
        one = composition_log_posterior(phi, mix, cents, [obs], pri)
        two = composition_log_posterior(phi, mix, cents, [obs, obs], pri)
        assert one == pytest.approx(composition_log_prior(phi, mix, pri) + terms.sum())
        assert two - one == pytest.approx(terms.sum(), rel=1e-12)

    def test_unknown_player(self):
        _, phi, mix, cents, obs = _toy_composition()
        bad = ChanceObservation("F", "A", 1, PlayerKey("zz", "A"), obs.chance_player, obs.assist_loc, obs.delta)
        with pytest.raises(DataIntegrityError):
            composition_log_likelihood_terms(phi, mix, cents, [bad])

    def test_phi_vectors_sum_to_one(self):
        roster, phi, *_ = _toy_composition()
        for team in roster.teams:
            for b in range(1, 7):
                assert phi.vector(team, b).sum() == pytest.approx(1.0, abs=1e-12)
