"""Particle-filter estimator against the exact likelihood, the
observation-only classifiers, and the prediction metrics."""

import math
import zlib

import numpy as np
import pytest

from helpers import random_covariates, random_theta

from calepi.baselines import (
    Degenerate,
    ShapeMismatch,
    accuracy,
    cross_entropy,
    pf_loglik,
    previous_guess,
    random_baseline,
)
from calepi.exact import exact_forward_loglik
from calepi.models import ConfigError
from calepi.probcore import RngStream
from calepi.simulate import simulate
from calepi.zoo import decoupled, get_model


def _seed(tag):
    return zlib.crc32(tag.encode())


class TestParticleFilter:
    def test_needs_two_particles(self):
        spec = get_model("homog-sis")
        W = random_covariates("homog-sis", 3, np.random.default_rng(_seed("p1")))
        theta = spec.make_params()
        Y = np.zeros((2, 3), dtype=np.int64)
        with pytest.raises(ConfigError, match="2 particles"):
            pf_loglik(spec, W, Y, theta, 1, RngStream(0, (0,)))

    def test_deterministic_model_matches_exact_exactly(self):
        # nobody is ever infected and everyone reports truthfully, so every
        # particle follows the single possible trajectory and the estimate
        # collapses to the likelihood itself
        spec = get_model("homog-sis")
        rng = np.random.default_rng(_seed("pf-det"))
        W = random_covariates("homog-sis", 5, rng)
        theta = spec.make_params().with_values(p0=0.0, q_S=1.0, q_Sp=1.0)
        X, Y = simulate(spec, W, theta, 6, RngStream(_seed("pf-det-sim"), (0,)))
        assert (Y == 1).all()
        ll, ess = pf_loglik(spec, W, Y, theta, 8, RngStream(1, (0,)))
        assert ll == 0.0
        assert np.all(ess == 8.0)

    def test_identical_particles_recover_exact_value(self):
        # stochastic reporting but deterministic dynamics: the weights agree
        # across particles, so the estimate equals the exact log-likelihood
        spec = get_model("homog-sis")
        rng = np.random.default_rng(_seed("pf-common"))
        W = random_covariates("homog-sis", 3, rng)
        theta = spec.make_params().with_values(p0=0.0, q_S=1.0, q_Sp=0.95)
        X, Y = simulate(spec, W, theta, 6, RngStream(_seed("pf-common-sim"), (0,)))
        ll, _ = pf_loglik(spec, W, Y, theta, 16, RngStream(2, (0,)))
        assert ll == pytest.approx(exact_forward_loglik(spec, W, Y, theta), rel=1e-12)

    @pytest.mark.parametrize("auxiliary", [False, True])
    def test_mean_tracks_exact_when_decoupled(self, auxiliary):
        spec = decoupled(get_model("homog-sis"))
        W = random_covariates("homog-sis", 2, np.random.default_rng(_seed("pf-mean")))
        theta = spec.make_params()
        X, Y = simulate(spec, W, theta, 3, RngStream(_seed("pf-mean-sim"), (0,)))
        exact = exact_forward_loglik(spec, W, Y, theta)
        vals = np.array([
            pf_loglik(spec, W, Y, theta, 4096,
                      RngStream(_seed("pf-mean-run"), (r, int(auxiliary))),
                      auxiliary=auxiliary)[0]
            for r in range(100)
        ])
        std = vals.std(ddof=1)
        assert abs(vals.mean() - exact) <= 2.0 * std
        assert vals.mean() <= exact + 2.0 * std  # the log estimate biases low

    def test_mean_tracks_exact_with_interactions(self):
        spec = get_model("homog-sis")
        W = random_covariates("homog-sis", 3, np.random.default_rng(_seed("pf-int")))
        theta = spec.make_params()
        X, Y = simulate(spec, W, theta, 4, RngStream(_seed("pf-int-sim"), (0,)))
        exact = exact_forward_loglik(spec, W, Y, theta)
        vals = np.array([
            pf_loglik(spec, W, Y, theta, 1024,
                      RngStream(_seed("pf-int-run"), (r,)))[0]
            for r in range(50)
        ])
        assert abs(vals.mean() - exact) <= 2.0 * vals.std(ddof=1)

    def test_variance_shrinks_with_more_particles(self):
        spec = get_model("homog-sis")
        W = random_covariates("homog-sis", 30, np.random.default_rng(_seed("pf-var")))
        theta = spec.make_params()
        X, Y = simulate(spec, W, theta, 10, RngStream(_seed("pf-var-sim"), (0,)))
        stds = {}
        for P in (512, 2048):
            vals = [
                pf_loglik(spec, W, Y, theta, P,
                          RngStream(_seed("pf-var-run"), (P, r)))[0]
                for r in range(50)
            ]
            stds[P] = np.std(vals, ddof=1)
        assert stds[2048] <= stds[512]

    @pytest.mark.parametrize("auxiliary", [False, True])
    def test_impossible_outcome_degenerates(self, auxiliary):
        # the progression model's silent states make a reported susceptible
        # impossible for every particle at once
        spec = get_model("seir-logistic")
        W = random_covariates("seir-logistic", 4, np.random.default_rng(_seed("pf-deg")))
        theta = spec.make_params()
        Y = np.zeros((3, 4), dtype=np.int64)
        Y[1, 0] = 1
        with pytest.raises(Degenerate, match="vanished at t=2"):
            pf_loglik(spec, W, Y, theta, 16, RngStream(3, (0,)), auxiliary=auxiliary)

    def test_fixed_stream_fixes_the_estimate(self):
        spec = get_model("spatial-sis")
        rng = np.random.default_rng(_seed("pf-rep"))
        W = random_covariates("spatial-sis", 8, rng)
        theta = random_theta(spec, rng)
        X, Y = simulate(spec, W, theta, 5, RngStream(_seed("pf-rep-sim"), (0,)))
        a, ess_a = pf_loglik(spec, W, Y, theta, 64, RngStream(5, (0,)))
        b, ess_b = pf_loglik(spec, W, Y, theta, 64, RngStream(5, (0,)))
        c, _ = pf_loglik(spec, W, Y, theta, 64, RngStream(5, (1,)))
        assert a == b
        assert np.array_equal(ess_a, ess_b)
        assert c != a

    def test_ess_stays_within_bounds(self):
        spec = get_model("community-sis")
        rng = np.random.default_rng(_seed("pf-ess"))
        W = random_covariates("community-sis", 10, rng)
        theta = random_theta(spec, rng)
        X, Y = simulate(spec, W, theta, 6, RngStream(_seed("pf-ess-sim"), (0,)))
        ll, ess = pf_loglik(spec, W, Y, theta, 128, RngStream(6, (0,)))
        assert math.isfinite(ll)
        assert ess.shape == (6,)
        assert np.all(ess >= 1.0) and np.all(ess <= 128.0)


class TestPreviousGuess:
    @pytest.mark.parametrize("g", [0.0, 1.0, -0.2, 1.7])
    def test_confidence_must_be_interior(self, g):
        with pytest.raises(ConfigError, match="confidence"):
            previous_guess(np.zeros((2, 2), dtype=np.int64), 3, g)

    def test_always_reported_individual_echoes_observations(self):
        Y = np.array([[1], [3], [2], [3]])
        out = previous_guess(Y, 3, 0.34)
        np.testing.assert_array_equal(out[:, 0], np.eye(3)[Y[:, 0] - 1])

    def test_never_reported_individual_stays_uniform(self):
        Y = np.zeros((5, 2), dtype=np.int64)
        out = previous_guess(Y, 4, 0.99)
        np.testing.assert_array_equal(out, np.full((5, 2, 4), 0.25))

    def test_hand_worked_sequence(self):
        g = 0.34
        off = (1.0 - g) / 2
        Y = np.array([[2], [0], [0], [1], [0]])
        out = previous_guess(Y, 3, g)
        expected = np.array([
            [0.0, 1.0, 0.0],      # reported I: echo it
            [off, g, off],        # unreported: guess sticks to the last report
            [off, g, off],
            [1.0, 0.0, 0.0],      # reported S
            [g, off, off],
        ])[:, None, :]
        np.testing.assert_array_equal(out, expected)

    def test_report_before_any_history_replaces_uniform(self):
        Y = np.array([[0], [2], [0]])
        g = 0.99
        out = previous_guess(Y, 2, g)
        np.testing.assert_array_equal(out[0, 0], [0.5, 0.5])
        np.testing.assert_array_equal(out[1, 0], [0.0, 1.0])
        np.testing.assert_array_equal(out[2, 0], [(1.0 - g) / 1, g])

    @pytest.mark.parametrize("g", [0.34, 0.99])
    def test_outputs_are_probability_vectors(self, g):
        rng = np.random.default_rng(_seed("pg-simplex"))
        Y = rng.integers(0, 4, size=(12, 9))
        out = previous_guess(Y, 3, g)
        assert np.all(out >= 0.0)
        np.testing.assert_allclose(out.sum(-1), 1.0, rtol=1e-12)

    def test_high_confidence_sticks_to_last_report(self):
        rng = np.random.default_rng(_seed("pg-sticky"))
        Y = rng.integers(0, 4, size=(20, 7))
        out = previous_guess(Y, 3, 0.99)
        last = np.zeros(7, dtype=np.int64) - 1
        for t in range(20):
            rep = Y[t] > 0
            last[rep] = Y[t, rep] - 1
            seen = last >= 0
            assert np.array_equal(out[t, seen].argmax(-1), last[seen])


class TestRandomBaseline:
    def test_unreported_rows_are_uniform(self):
        Y = np.array([[0, 2], [1, 0]])
        out = random_baseline(Y, 3)
        third = np.full(3, 1.0 / 3)
        np.testing.assert_array_equal(out[0, 0], third)
        np.testing.assert_array_equal(out[1, 1], third)
        np.testing.assert_array_equal(out[0, 1], [0.0, 1.0, 0.0])
        np.testing.assert_array_equal(out[1, 0], [1.0, 0.0, 0.0])

    def test_two_state_unreported_row(self):
        out = random_baseline(np.zeros((1, 1), dtype=np.int64), 2)
        np.testing.assert_array_equal(out[0, 0], [0.5, 0.5])

    def test_out_of_range_outcome_rejected(self):
        with pytest.raises(ConfigError, match="observation indices"):
            random_baseline(np.array([[4]]), 3)

    def test_accuracy_near_chance_on_uniform_truth(self):
        # uniform predictions argmax to state 0, so accuracy over uniformly
        # random truths is a binomial proportion around 1/M
        rng = np.random.default_rng(_seed("rb-chance"))
        T, N, M = 40, 50, 3
        X = rng.integers(0, M, size=(T, N))
        out = random_baseline(np.zeros((T, N), dtype=np.int64), M)
        acc = accuracy(X, out)
        band = 3.0 * 100.0 * math.sqrt((1 / M) * (1 - 1 / M) / (T * N))
        assert abs(acc - 100.0 / M) <= band


class TestMetrics:
    def test_perfect_predictor(self):
        rng = np.random.default_rng(_seed("m-perfect"))
        X = rng.integers(0, 3, size=(6, 5))
        probs = np.eye(3)[X]
        assert cross_entropy(X, probs) == 0.0
        assert accuracy(X, probs) == 100.0

    def test_uniform_three_state_predictor(self):
        X = np.zeros((4, 7), dtype=np.int64)
        probs = np.full((4, 7, 3), 1.0 / 3)
        assert cross_entropy(X, probs) == pytest.approx(math.log(3.0), rel=1e-12)

    def test_zero_probability_is_clipped(self):
        X = np.array([[1]])
        probs = np.array([[[1.0, 0.0]]])
        assert cross_entropy(X, probs) == 745.0
        assert accuracy(X, probs) == 0.0

    def test_argmax_ties_break_to_lowest_index(self):
        probs = np.full((1, 2, 2), 0.5)
        assert accuracy(np.array([[0, 1]]), probs) == 50.0

    def test_shape_mismatch_rejected(self):
        probs = np.full((3, 2, 2), 0.5)
        with pytest.raises(ShapeMismatch, match="do not align"):
            cross_entropy(np.zeros((4, 2), dtype=np.int64), probs)
        with pytest.raises(ShapeMismatch, match="state indices"):
            accuracy(np.full((3, 2), 5), probs)

    def test_informed_beats_uninformed_on_sticky_data(self):
        # with most individuals unreported, remembering the last report must
        # dominate guessing at random; near-certain seeding keeps the epidemic
        # from fizzling at this small N
        spec = get_model("sir-wellspec")
        rng = np.random.default_rng(_seed("m-order"))
        W = random_covariates("sir-wellspec", 60, rng)
        theta = spec.make_params().with_values(p0=0.99, q_I=0.6, q_R=0.8)
        X, Y = simulate(spec, W, theta, 25, RngStream(_seed("m-order-sim"), (0,)))
        truth = X[1:]
        assert np.bincount(truth.ravel(), minlength=3).min() > 0
        certain = previous_guess(Y, spec.M, 0.99)
        rand = random_baseline(Y, spec.M)
        assert cross_entropy(X[1:], certain) < cross_entropy(truth, rand)
        assert accuracy(truth, certain) > accuracy(truth, rand)
