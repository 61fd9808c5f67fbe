"""Reference methods the filter is measured against: a particle-filter
estimate of the exact-model log-likelihood, simple classifiers built from the
raw observation stream, and the cross-entropy / accuracy metrics.

The particle filter propagates whole-population particles with the exact
simulation dynamics and resamples multinomially every step; an optional
auxiliary mode resamples ancestors by their one-step predictive probability
of the upcoming observation first and divides it back out of the weights.
Its log estimate is unbiased on the linear scale, hence negatively biased as
a log-likelihood.
"""

from dataclasses import dataclass

import numpy as np

from .cal import _check_observations
from .models import ConfigError, Covariates, ModelSpec, ParamVector, interaction_all
from .probcore import RngStream


class Degenerate(RuntimeError):
    """Every particle weight vanished at some step."""


class ShapeMismatch(ValueError):
    """Trajectory and prediction arrays disagree in shape."""


@dataclass
class ParticleEnsemble:
    """Population particles as integer state indices (P, N), their normalized
    weights, and the running log-likelihood estimate."""

    states: np.ndarray
    weights: np.ndarray
    loglik: float = 0.0

    @property
    def n_particles(self) -> int:
        return self.states.shape[0]


@dataclass
class GuessState:
    """Per-individual guess distributions (N, M) and the confidence placed on
    the most recently reported state."""

    guess: np.ndarray
    confidence: float


def _draw_rows(probs: np.ndarray, u: np.ndarray) -> np.ndarray:
    """Categorical draw per row of probs (..., M) from uniforms u (...),
    normalizing by the row mass so cumulative rounding cannot overflow."""
    cdf = np.cumsum(probs, axis=-1)
    idx = (cdf <= (u * cdf[..., -1])[..., None]).sum(-1)
    return np.minimum(idx, probs.shape[-1] - 1)


def _log_mean_exp(v: np.ndarray) -> float:
    m = v.max()
    if not np.isfinite(m):
        return -np.inf
    return float(m + np.log(np.exp(v - m).mean()))


def pf_loglik(spec: ModelSpec, W: Covariates, Y: np.ndarray, theta: ParamVector,
              n_particles: int, rng: RngStream,
              auxiliary: bool = False) -> tuple[float, np.ndarray]:
    """Particle-filter log-likelihood estimate and the per-step effective
    sample size trace (T,).

    Each particle is a full population configuration advanced one step with
    the exact transition dynamics, then weighted by the probability of the
    observed outcome row and multinomially resampled. All draws come from the
    single stream passed in, so a fixed seed fixes the estimate.
    """
    if n_particles < 2:
        raise ConfigError(f"need at least 2 particles, got {n_particles}")
    theta.check_domains()
    spec.validate_covariates(W)
    Y = _check_observations(spec, W, Y)
    params = theta.as_dict()
    N, M, T, P = W.N, spec.M, Y.shape[0], n_particles
    gen = rng.generator
    p0 = np.asarray(spec.p0_fn(W, params), dtype=float) + np.zeros((N, M))
    G = np.asarray(spec.emis_fn(W, params), dtype=float) + np.zeros((N, 1, 1))
    gv_all = G[np.arange(N)[None, :], :, Y]  # (T, N, M) observed-outcome columns
    eye = np.eye(M)
    rows = np.arange(N)[None, :]
    ens = ParticleEnsemble(
        states=_draw_rows(p0, gen.random((P, N))),
        weights=np.full(P, 1.0 / P),
    )
    ess = np.empty(T)
    for t in range(T):
        etas = interaction_all(spec, W, eye[ens.states], params)
        K = np.asarray(spec.trans_fn(W, params, etas), dtype=float)
        Kb = np.broadcast_to(K, (P, N, M, M))
        probs = np.take_along_axis(Kb, ens.states[:, :, None, None], axis=2)[:, :, 0, :]
        gv = gv_all[t]
        increment = 0.0
        if auxiliary:
            with np.errstate(divide="ignore"):
                lam = np.log(np.einsum("pnm,nm->pn", probs, gv)).sum(-1)
            increment = _log_mean_exp(lam)
            if increment == -np.inf:
                raise Degenerate(
                    f"all {P} one-step predictive weights vanished at t={t + 1}"
                )
            first = np.exp(lam - lam.max())
            anc = gen.choice(P, size=P, p=first / first.sum())
            states, probs, lam = ens.states[anc], probs[anc], lam[anc]
        nxt = _draw_rows(probs, gen.random((P, N)))
        with np.errstate(divide="ignore"):
            logw = np.log(gv[rows, nxt]).sum(-1)
        if auxiliary:
            logw = logw - lam
        step = _log_mean_exp(logw)
        if step == -np.inf:
            raise Degenerate(f"all {P} particle weights vanished at t={t + 1}")
        increment += step
        w = np.exp(logw - logw.max())
        w /= w.sum()
        ess[t] = 1.0 / float(w @ w)
        ens = ParticleEnsemble(
            states=nxt[gen.choice(P, size=P, p=w)],
            weights=w,
            loglik=ens.loglik + increment,
        )
    return ens.loglik, ess


# ---------------------------------------------------------------------------
# observation-only classifiers


def _check_outcomes(Y: np.ndarray, M: int) -> np.ndarray:
    if M < 2:
        raise ConfigError(f"need at least 2 states, got M={M}")
    Y = np.asarray(Y)
    if Y.ndim != 2:
        raise ConfigError(f"observations must be (T, N), got shape {Y.shape}")
    if Y.min() < 0 or Y.max() > M:
        raise ConfigError(f"observation indices must lie in [0, {M}]")
    return Y


def previous_guess(Y: np.ndarray, M: int, g: float) -> np.ndarray:
    """Sticky-last-report classifier: predictions (T, N, M).

    A reported individual is predicted as the reported one-hot, and the
    stored guess moves to confidence g on that state with the remainder
    spread evenly; an unreported individual is predicted with the stored
    guess, which starts uniform.
    """
    if not 0.0 < g < 1.0:
        raise ConfigError(f"confidence must lie strictly inside (0, 1), got {g}")
    Y = _check_outcomes(Y, M)
    T, N = Y.shape
    eye = np.eye(M)
    off = (1.0 - g) / (M - 1)
    state = GuessState(np.full((N, M), 1.0 / M), g)
    out = np.empty((T, N, M))
    for t in range(T):
        out[t] = state.guess
        rep = Y[t] > 0
        if rep.any():
            onehot = eye[Y[t, rep] - 1]
            out[t, rep] = onehot
            state.guess[rep] = g * onehot + off * (1.0 - onehot)
    return out


def random_baseline(Y: np.ndarray, M: int) -> np.ndarray:
    """Uniform prediction when unreported, the reported one-hot otherwise."""
    Y = _check_outcomes(Y, M)
    out = np.full(Y.shape + (M,), 1.0 / M)
    rep = Y > 0
    out[rep] = np.eye(M)[Y[rep] - 1]
    return out


# ---------------------------------------------------------------------------
# metrics


def _aligned(X: np.ndarray, probs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    X = np.asarray(X)
    probs = np.asarray(probs, dtype=float)
    if probs.ndim != 3 or X.shape != probs.shape[:2]:
        raise ShapeMismatch(
            f"states {X.shape} do not align with predictions {probs.shape}; "
            "pass one state row per prediction time"
        )
    if X.min() < 0 or X.max() >= probs.shape[2]:
        raise ShapeMismatch(
            f"state indices must lie in [0, {probs.shape[2]}), "
            f"got [{X.min()}, {X.max()}]"
        )
    return X, probs


def cross_entropy(X: np.ndarray, probs: np.ndarray) -> float:
    """Mean negative log-probability of the realized states X (T, N) under
    the predictions (T, N, M); the log is clipped at -745 so zero-probability
    entries stay finite."""
    X, probs = _aligned(X, probs)
    picked = np.take_along_axis(probs, X[..., None], axis=-1)[..., 0]
    with np.errstate(divide="ignore"):
        lp = np.log(picked)
    return float(-np.maximum(lp, -745.0).mean())


def accuracy(X: np.ndarray, probs: np.ndarray) -> float:
    """Percentage of (t, n) cells whose most probable predicted state (lowest
    index winning ties) equals the realized state."""
    X, probs = _aligned(X, probs)
    return float(100.0 * (probs.argmax(axis=-1) == X).mean())
