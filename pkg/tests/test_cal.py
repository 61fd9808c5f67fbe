"""Filter behaviour: oracle identities, simplex preservation, classification,
and the CSV dump."""

import csv
import math
import zlib

import numpy as np
import pytest

import oracles
from helpers import random_covariates, random_theta

from calepi.cal import (
    FilterOutput,
    MissingStore,
    SupportViolation,
    cal_filter,
    cal_loglik,
    classify,
    save_filter,
)
from calepi.exact import enumerate_approx_model_loglik
from calepi.probcore import RngStream
from calepi.simulate import simulate
from calepi.zoo import ZOO, decoupled, get_model

MODELS = sorted(ZOO)


def _seed(tag):
    return zlib.crc32(tag.encode())


def _dataset(name, N, T, tag, spec=None):
    """Simulate a trajectory at one random in-box parameter and draw an
    independent second parameter for evaluating the filter off-truth."""
    spec = spec if spec is not None else get_model(name)
    rng = np.random.default_rng(_seed(tag))
    W = random_covariates(name, N, rng)
    theta_sim = random_theta(spec, rng)
    theta_eval = random_theta(spec, rng)
    X, Y = simulate(spec, W, theta_sim, T, RngStream(_seed(tag + "-sim"), (0,)))
    return spec, W, Y, theta_sim, theta_eval


class TestLoglikBasics:
    def test_zero_reporting_gives_exactly_zero(self):
        spec = get_model("homog-sis")
        rng = np.random.default_rng(_seed("silent"))
        W = random_covariates("homog-sis", 20, rng)
        theta = spec.make_params().with_values(q_S=0.0, q_I=0.0)
        X, Y = simulate(spec, W, theta, 10, RngStream(5, (0,)))
        assert (Y == 0).all()
        fo = cal_filter(spec, W, Y, theta)
        assert fo.loglik == 0.0
        assert (fo.increments == 0.0).all()

    def test_loglik_is_exact_fixed_order_sum_of_increments(self):
        spec, W, Y, theta, _ = _dataset("spatial-sis", 15, 12, "sumorder")
        fo = cal_filter(spec, W, Y, theta)
        assert fo.loglik == math.fsum(fo.increments.ravel(order="C"))

    def test_cal_loglik_matches_filter(self):
        spec, W, Y, theta, _ = _dataset("homog-sis", 10, 6, "wrap")
        assert cal_loglik(spec, W, Y, theta) == cal_filter(spec, W, Y, theta).loglik

    def test_store_flag_controls_retained_vectors(self):
        spec, W, Y, theta, _ = _dataset("sis-logistic", 8, 5, "store")
        lean = cal_filter(spec, W, Y, theta, store=False)
        assert lean.pi_pred is None and lean.mu is None and lean.pi_filt is None
        full = cal_filter(spec, W, Y, theta, store=True)
        T, N, M = 5, 8, spec.M
        assert full.pi_pred.shape == (T, N, M)
        assert full.mu.shape == (T, N, M + 1)
        assert full.pi_filt.shape == (T + 1, N, M)
        assert full.etas.shape == (T, spec.n_channels, N)
        assert full.loglik == lean.loglik

    def test_rejects_malformed_observations(self):
        spec, W, Y, theta, _ = _dataset("homog-sis", 6, 4, "shapes")
        with pytest.raises(ValueError, match="shape|must be"):
            cal_filter(spec, W, Y[:, :4], theta)
        with pytest.raises(ValueError, match="at least one"):
            cal_filter(spec, W, Y[:0], theta)
        bad = Y.copy()
        bad[0, 0] = spec.M + 1
        with pytest.raises(ValueError, match="indices"):
            cal_filter(spec, W, bad, theta)


class TestIndependentOracles:
    @pytest.mark.parametrize("name", ["homog-sis", "sis-logistic", "seir-logistic"])
    def test_decoupled_equals_summed_hmm_forwards(self, name):
        spec = decoupled(get_model(name))
        rng = np.random.default_rng(_seed("hmm-" + name))
        W = random_covariates(name, 6, rng)
        theta = random_theta(spec, rng)
        X, Y = simulate(spec, W, theta, 8, RngStream(_seed("hmm2-" + name), (0,)))
        total = cal_loglik(spec, W, Y, theta)
        params = theta.as_dict()
        p0, G = oracles.model_pieces(spec, W, params)
        # kernel ignores the snapshot once the interaction weights vanish
        K = oracles.kernel_at(spec, W, params, np.tile(np.eye(spec.M)[0], (W.N, 1)))
        T = Y.shape[0]
        ref = math.fsum(
            oracles.hmm_forward_loglik(
                p0[n], [K[n]] * T, [G[n, :, Y[t, n]] for t in range(T)]
            )
            for n in range(W.N)
        )
        assert abs(total - ref) <= 1e-10 * abs(ref)

    def test_two_individual_enumeration_identity(self):
        spec, W, Y, theta_sim, theta = _dataset("homog-sis", 2, 2, "tiny")
        a = cal_loglik(spec, W, Y, theta)
        b = enumerate_approx_model_loglik(spec, W, Y, theta)
        assert abs(a - b) <= 1e-10 * abs(a)


# 8 models x 50 individuals x 25 steps = 1e4 fuzzed (n, t) pairs
class TestFuzzedFilterRuns:
    @pytest.mark.parametrize("name", MODELS)
    def test_simplexes_and_finite_increments_off_truth(self, name):
        spec, W, Y, _, theta = _dataset(name, 50, 25, "fuzz-" + name)
        fo = cal_filter(spec, W, Y, theta, store=True)
        assert np.isfinite(fo.increments).all()
        for arr in (fo.pi_pred, fo.mu, fo.pi_filt):
            assert np.abs(arr.sum(axis=-1) - 1.0).max() <= 1e-10
            assert (arr >= 0.0).all()

    @pytest.mark.parametrize("name", MODELS)
    def test_observed_outcome_mass_floor_at_truth(self, name):
        spec, W, Y, theta, _ = _dataset(name, 50, 25, "floor-" + name)
        fo = cal_filter(spec, W, Y, theta)
        assert np.isfinite(fo.increments).all()
        assert np.exp(fo.increments).min() > 1e-12


class TestBayesAndPrediction:
    @pytest.mark.parametrize("name", ["homog-sis", "spatial-sis", "seir-logistic",
                                      "culling-sir"])
    def test_correction_is_bayes_rule(self, name):
        spec, W, Y, theta, _ = _dataset(name, 12, 8, "bayes-" + name)
        fo = cal_filter(spec, W, Y, theta, store=True)
        params = theta.as_dict()
        _, G = oracles.model_pieces(spec, W, params)
        N = W.N
        for t in range(Y.shape[0]):
            lik = G[np.arange(N), :, Y[t]]          # (N, M)
            post = fo.pi_pred[t] * lik
            post /= post.sum(axis=-1, keepdims=True)
            assert np.abs(post - fo.pi_filt[t + 1]).max() <= 1e-12

    @pytest.mark.parametrize("name", ["homog-sis", "community-sis", "culling-sir"])
    def test_prediction_is_kernel_marginal(self, name):
        spec, W, Y, theta, _ = _dataset(name, 12, 8, "pred-" + name)
        fo = cal_filter(spec, W, Y, theta, store=True)
        params = theta.as_dict()
        N, M = W.N, spec.M
        for t in range(Y.shape[0]):
            etas = [fo.etas[t, c] for c in range(spec.n_channels)]
            K = np.asarray(spec.trans_fn(W, params, etas)) + np.zeros((N, M, M))
            marg = np.einsum("ni,nij->nj", fo.pi_filt[t], K)
            assert np.abs(marg - fo.pi_pred[t]).max() <= 1e-14


class TestClassify:
    def test_argmax_with_lowest_index_ties(self):
        pi_filt = np.array([
            [[0.5, 0.5], [0.5, 0.5]],
            [[0.9, 0.1], [0.5, 0.5]],
            [[0.1, 0.9], [0.2, 0.8]],
        ])
        fo = FilterOutput(
            loglik=0.0,
            increments=np.zeros((2, 2)),
            etas=np.zeros((2, 1, 2)),
            pi_filt=pi_filt,
        )
        assert classify(fo).tolist() == [[0, 0], [1, 1]]

    def test_perfect_reporting_recovers_latent_states(self):
        spec = get_model("homog-sis")
        rng = np.random.default_rng(_seed("perfect"))
        W = random_covariates("homog-sis", 30, rng)
        theta = spec.make_params().with_values(q_S=1.0, q_I=1.0, q_Se=1.0, q_Sp=1.0)
        X, Y = simulate(spec, W, theta, 12, RngStream(8, (0,)))
        assert (Y >= 1).all()
        fo = cal_filter(spec, W, Y, theta, store=True)
        assert (classify(fo) == Y - 1).all()
        assert (classify(fo) == X[1:]).all()

    def test_needs_stored_vectors(self):
        spec, W, Y, theta, _ = _dataset("homog-sis", 5, 3, "nostore")
        fo = cal_filter(spec, W, Y, theta, store=False)
        with pytest.raises(MissingStore):
            classify(fo)


class TestSupportViolation:
    def test_impossible_observation_names_time_and_individual(self):
        spec = get_model("homog-sis")
        rng = np.random.default_rng(_seed("violate"))
        W = random_covariates("homog-sis", 6, rng)
        # certain reporting makes the unreported outcome impossible
        theta = spec.make_params().with_values(q_S=1.0, q_I=1.0)
        Y = np.ones((3, 6), dtype=np.int64)
        Y[1, 3] = 0
        with pytest.raises(SupportViolation, match=r"t=2, n=3"):
            cal_filter(spec, W, Y, theta)


class TestFilterCSV:
    def test_round_trip_of_stored_vectors(self, tmp_path):
        spec, W, Y, theta, _ = _dataset("homog-sis", 4, 3, "dump")
        fo = cal_filter(spec, W, Y, theta, store=True)
        path = tmp_path / "filter.csv"
        save_filter(fo, path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        assert rows[0] == ["t", "n", "state_index", "pi_pred", "mu", "pi_filt"]
        T, N, M = 3, 4, spec.M
        assert len(rows) == 1 + T * N * (M + 1)
        for row in rows[1:]:
            t, n, i = int(row[0]) - 1, int(row[1]), int(row[2])
            if i < M:
                assert float(row[3]) == fo.pi_pred[t, n, i]
                assert float(row[4]) == fo.mu[t, n, i]
                assert float(row[5]) == fo.pi_filt[t + 1, n, i]
            else:
                assert row[3] == "" and row[5] == ""
                assert float(row[4]) == fo.mu[t, n, M]

    def test_refuses_unstored_run(self, tmp_path):
        spec, W, Y, theta, _ = _dataset("homog-sis", 4, 3, "dump2")
        fo = cal_filter(spec, W, Y, theta, store=False)
        with pytest.raises(MissingStore):
            save_filter(fo, tmp_path / "filter.csv")
