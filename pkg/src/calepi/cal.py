"""Categorical approximate likelihood: a per-individual filter where the
interaction at each step is evaluated against the expected (filtered)
population state instead of the realized one.

Per time step: predict each individual's state distribution through its
transition matrix, mix with the emission matrix to get the observation
distribution mu, score the observed outcome, and condition the predicted
distribution on it. The log-likelihood is the sum of log increments
log(y' mu) over (t, n), accumulated in a fixed order.

The arithmetic is written against the dual-number facade, so running the
same pass with dual-valued parameters yields exact forward-mode gradients.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from . import dual as dn
from .models import Covariates, ModelSpec, ParamVector, interaction_all


class SupportViolation(RuntimeError):
    """An observed outcome has zero probability under the model: the
    model/data pairing breaks the fixed-support assumption."""


class MissingStore(ValueError):
    """Filter output lacks stored state vectors; rerun with store=True."""


@dataclass(frozen=True)
class FilterOutput:
    """Result of one filter pass.

    loglik is exactly the fixed-order extended-precision sum of increments.
    increments[t, n] = log(y_{n,t}' mu_{n,t}); etas[t, c, n] holds the
    interaction values used at step t+1. The state vectors are kept only
    when the pass ran with store=True.
    """

    loglik: float
    increments: np.ndarray
    etas: np.ndarray
    pi_pred: np.ndarray | None = None
    mu: np.ndarray | None = None
    pi_filt: np.ndarray | None = None


def _observed_outcome_slices(G, Y):
    """Observed column of each emission matrix, gathered once for all steps:
    vals[t, n, :] is G[n, :, Y[t, n]]; tans is the matching tangent block
    (P, T, N, M), or None when G is plain."""
    rows = np.arange(Y.shape[1])[None, :]
    if isinstance(G, dn.Dual):
        # non-adjacent advanced indices put the (T, N) block first
        return G.val[rows, :, Y], np.moveaxis(G.tan[:, rows, :, Y], 2, 0)
    return np.asarray(G)[rows, :, Y], None


def _check_observations(spec: ModelSpec, W: Covariates, Y: np.ndarray) -> np.ndarray:
    Y = np.asarray(Y)
    if Y.ndim != 2 or Y.shape[1] != W.N:
        raise ValueError(f"observations must be (T, {W.N}), got {Y.shape}")
    if Y.shape[0] < 1:
        raise ValueError("need at least one observation time")
    if Y.min() < 0 or Y.max() > spec.M:
        raise ValueError(f"observation indices must lie in [0, {spec.M}]")
    return Y.astype(np.int64)


def run_filter(spec: ModelSpec, W: Covariates, Y: np.ndarray, params: dict,
               store: bool = False):
    """Generic filter pass over plain or dual parameter values.

    Returns (loglik, increments (T,N), etas (T,C,N), pred, mu, filt) where
    loglik and increments follow the parameter value type and the stored
    trajectories are plain float arrays (None unless store).

    The state is carried packed as (N, 1 + P, M): row 0 is the filtered
    distribution, rows 1..P its tangent components, so the value and tangent
    recursions share batched matmuls instead of dispatching per operation.
    """
    N, M, T = W.N, spec.M, Y.shape[0]
    P = max(
        (v.n_tangents for v in params.values() if isinstance(v, dn.Dual)),
        default=0,
    )
    p0 = spec.p0_fn(W, params) + np.zeros((N, M))
    G = spec.emis_fn(W, params) + np.zeros((N, 1, 1))  # (N, M, M+1)
    gv_all, gt_all = _observed_outcome_slices(G, Y)
    if gt_all is not None:
        gt_all = np.ascontiguousarray(gt_all.transpose(1, 2, 3, 0))  # (T, N, M, P)
    grow = G.sum(axis=-1)  # per-state outcome mass, one in exact arithmetic
    if isinstance(grow, dn.Dual):
        grow_v = grow.val
        grow_t = np.ascontiguousarray(grow.tan.transpose(1, 2, 0))   # (N, M, P)
    else:
        grow_v, grow_t = grow, None
    if isinstance(p0, dn.Dual):
        sv = p0.val
        st = np.ascontiguousarray(p0.tan.transpose(1, 2, 0))         # (N, M, P)
    else:
        sv, st = p0, np.zeros((N, M, P))
    etas_out = np.empty((T, spec.n_channels, N))
    linc_v = np.empty((T, N))
    linc_t = np.empty((T, N, P))
    pred_s = np.empty((T, N, M)) if store else None
    mu_s = np.empty((T, N, M + 1)) if store else None
    filt_s = np.empty((T + 1, N, M)) if store else None
    if store:
        filt_s[0] = sv
    for t in range(T):
        pi = dn.Dual(sv, np.moveaxis(st, 2, 0)) if P else sv
        etas = [
            e + np.zeros(N) for e in interaction_all(spec, W, pi, params)
        ]
        for c, e in enumerate(etas):
            etas_out[t, c] = dn.value(e)
        K = spec.trans_fn(W, params, etas)
        if isinstance(K, dn.Dual):
            Kv = K.val
            i, j = Kv.shape[-2:]
            pred_v = np.einsum("ni,nij->nj", sv, np.broadcast_to(Kv, (N, i, j)))
            pred_t = Kv.transpose(0, 2, 1) @ st
            flat = K.tan.transpose(1, 2, 3, 0).reshape(-1, i, j * P)
            pred_t += (sv[:, None, :] @ flat).reshape(-1, j, P)
        else:
            Kv = np.asarray(K)
            i, j = Kv.shape[-2:]
            pred_v = np.einsum("ni,nij->nj", sv, np.broadcast_to(Kv, (N, i, j)))
            pred_t = Kv.transpose(0, 2, 1) @ st if P else st
        gv = gv_all[t]
        num_v = pred_v * gv
        incv = np.einsum("nm->n", num_v)
        mass_v = np.einsum("nm->n", pred_v * grow_v)
        bad = np.flatnonzero(incv <= 0.0)
        if bad.size:
            n = int(bad[0])
            raise SupportViolation(
                f"observed outcome {int(Y[t, n])} has zero probability "
                f"(t={t + 1}, n={n})"
            )
        # mu sums to one in exact arithmetic; dividing by the float mass makes
        # the increments realize that identity (all-unreported data gives 0.0)
        linc_v[t] = np.log(incv / mass_v)
        sv = num_v / incv[:, None]
        if P:
            num_t = pred_t * gv[:, :, None]
            mass_t = pred_t * grow_v[:, :, None]
            if gt_all is not None:
                num_t += pred_v[:, :, None] * gt_all[t]
                mass_t += pred_v[:, :, None] * grow_t
            inct = np.einsum("nmp->np", num_t)
            masst = np.einsum("nmp->np", mass_t)
            rinc = inct / incv[:, None]
            linc_t[t] = rinc - masst / mass_v[:, None]
            st = num_t / incv[:, None, None]
            st -= sv[:, :, None] * rinc[:, None, :]
        if store:
            pred_s[t] = pred_v
            mu_s[t] = np.einsum("ni,nij->nj", pred_v, dn.value(G)) / mass_v[:, None]
            filt_s[t + 1] = sv
    total = math.fsum(linc_v.ravel())
    if P:
        increments = dn.Dual(linc_v, linc_t.transpose(2, 0, 1))
        total = dn.Dual(total, linc_t.sum(axis=(0, 1)))
        return total, increments, etas_out, pred_s, mu_s, filt_s
    return total, linc_v, etas_out, pred_s, mu_s, filt_s


def cal_filter(spec: ModelSpec, W: Covariates, Y: np.ndarray, theta: ParamVector,
               store: bool = False) -> FilterOutput:
    """Filter the observations and return the log approximate likelihood
    together with per-(t, n) increments and interaction values."""
    theta.check_domains()
    spec.validate_covariates(W)
    Y = _check_observations(spec, W, Y)
    total, increments, etas, pred, mu, filt = run_filter(
        spec, W, Y, theta.as_dict(), store=store
    )
    return FilterOutput(
        loglik=float(total),
        increments=increments,
        etas=etas,
        pi_pred=pred,
        mu=mu,
        pi_filt=filt,
    )


def cal_loglik(spec: ModelSpec, W: Covariates, Y: np.ndarray,
               theta: ParamVector) -> float:
    return cal_filter(spec, W, Y, theta, store=False).loglik


def classify(fo: FilterOutput) -> np.ndarray:
    """Most probable state per (t, n) from the filtered distributions,
    lowest index winning ties; shape (T, N) for times 1..T."""
    if fo.pi_filt is None:
        raise MissingStore("classification needs the filter run with store=True")
    return np.argmax(fo.pi_filt[1:], axis=-1)


def save_filter(fo: FilterOutput, path) -> None:
    """Dump stored filter vectors: one row per (t, n, state_index); the extra
    row with state_index == M carries the last observation-outcome mass."""
    if fo.pi_filt is None:
        raise MissingStore("nothing to save; rerun the filter with store=True")
    T, N, M = fo.pi_pred.shape
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "n", "state_index", "pi_pred", "mu", "pi_filt"])
        for t in range(T):
            for n in range(N):
                for i in range(M):
                    wr.writerow([
                        t + 1, n, i,
                        repr(float(fo.pi_pred[t, n, i])),
                        repr(float(fo.mu[t, n, i])),
                        repr(float(fo.pi_filt[t + 1, n, i])),
                    ])
                wr.writerow([t + 1, n, M, "", repr(float(fo.mu[t, n, M])), ""])
