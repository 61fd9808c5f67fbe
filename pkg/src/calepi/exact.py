"""Ground-truth likelihood oracles for tiny populations.

exact_forward_loglik runs the forward algorithm on the joint state space of
all N individuals (M^N configurations), with the interaction evaluated on
each realized configuration: the exact marginal likelihood of the coupled
process. enumerate_approx_model_loglik evaluates the decoupled surrogate
model implied by the filter's interaction sequence through an independent
per-individual forward recursion; it must reproduce the filter's value.
"""

from __future__ import annotations

import math

import numpy as np

from .cal import cal_filter
from .models import Covariates, ModelSpec, ParamVector, interaction_all

STATE_SPACE_LIMIT = 4096


class TooLarge(ValueError):
    """Joint state space exceeds the tractability guard."""


class ZeroLikelihood(RuntimeError):
    """The observations are impossible under the model."""


def _configurations(N: int, M: int) -> np.ndarray:
    """(M^N, N) matrix of per-individual states, individual 0 varying fastest."""
    S = M**N
    idx = np.arange(S)
    out = np.empty((S, N), dtype=np.int64)
    for n in range(N):
        out[:, n] = (idx // (M**n)) % M
    return out


def exact_forward_loglik(spec: ModelSpec, W: Covariates, Y: np.ndarray,
                         theta: ParamVector) -> float:
    """Exact log p(Y) by filtering on the joint configuration space."""
    theta.check_domains()
    spec.validate_covariates(W)
    N, M = W.N, spec.M
    if M**N > STATE_SPACE_LIMIT:
        raise TooLarge(f"M^N = {M**N} exceeds {STATE_SPACE_LIMIT}")
    params = theta.as_dict()
    T = Y.shape[0]
    configs = _configurations(N, M)                    # (S, N)
    S = configs.shape[0]
    p0 = np.asarray(spec.p0_fn(W, params)) + np.zeros((N, M))
    G = np.asarray(spec.emis_fn(W, params)) + np.zeros((N, M, M + 1))
    alpha = p0[np.arange(N), configs].prod(axis=1)     # (S,) joint initial law
    loglik = 0.0
    eye = np.eye(M)
    for t in range(T):
        # transition: rows of the joint kernel factorize given the source
        new = np.zeros(S)
        for s in range(S):
            if alpha[s] == 0.0:
                continue
            onehot = eye[configs[s]]                   # (N, M) realized states
            etas = [
                np.asarray(e) + np.zeros(N)
                for e in interaction_all(spec, W, onehot, params, dense=True)
            ]
            K = np.asarray(spec.trans_fn(W, params, etas)) + np.zeros((N, M, M))
            vec = np.ones(1)
            for n in range(N):
                vec = (K[n, configs[s, n], :][:, None] * vec[None, :]).ravel()
            new += alpha[s] * vec
        # correction: per-individual emission of the observed outcomes
        gpick = G[np.arange(N), :, Y[t]]               # (N, M)
        emit = gpick[np.arange(N)[:, None], configs.T]  # (N, S)
        alpha = new * emit.prod(axis=0)
        c = alpha.sum()
        if c <= 0.0:
            raise ZeroLikelihood(f"observations impossible at t={t + 1}")
        alpha /= c
        loglik += math.log(c)
    return loglik


def enumerate_approx_model_loglik(spec: ModelSpec, W: Covariates, Y: np.ndarray,
                                  theta: ParamVector) -> float:
    """Likelihood of the decoupled surrogate model: extract the interaction
    sequence from a filter pass, then run an ordinary scaled forward
    recursion per individual under the resulting time-varying kernels."""
    fo = cal_filter(spec, W, Y, theta, store=False)
    params = theta.as_dict()
    N, M, T = W.N, spec.M, Y.shape[0]
    p0 = np.asarray(spec.p0_fn(W, params)) + np.zeros((N, M))
    G = np.asarray(spec.emis_fn(W, params)) + np.zeros((N, M, M + 1))
    kernels = np.empty((T, N, M, M))
    for t in range(T):
        etas = [fo.etas[t, c] for c in range(spec.n_channels)]
        kernels[t] = np.asarray(spec.trans_fn(W, params, etas)) + np.zeros((N, M, M))
    total = 0.0
    for n in range(N):
        alpha = p0[n].copy()
        for t in range(T):
            alpha = alpha @ kernels[t, n]
            # pre-emission mass is one in exact arithmetic; dividing it out
            # keeps each increment a genuine conditional probability
            pre = alpha.sum()
            alpha = alpha * G[n, :, Y[t, n]]
            c = alpha.sum()
            if c <= 0.0:
                raise ZeroLikelihood(f"observation impossible at t={t + 1}, n={n}")
            total += math.log(c / pre)
            alpha /= c
    return total


def cal_gap(spec: ModelSpec, W: Covariates, Y: np.ndarray, theta: ParamVector) -> float:
    """Exact coupled log-likelihood minus the filter's value, at tiny N."""
    from .cal import cal_loglik

    return exact_forward_loglik(spec, W, Y, theta) - cal_loglik(spec, W, Y, theta)
