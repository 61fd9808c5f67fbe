"""Exact simulation of the individual-based process and synthetic covariates.

Latent trajectories are stored as integer state indices, shape (T+1, N); row 0
is the initial state. Observations are integer outcome indices, shape (T, N),
where row t-1 holds time t and index 0 means "unreported".

Randomness is addressed per (time, individual): the caller passes an RngStream
whose path already encodes the replicate, and each draw uses the substream at
(t, n). Changing N therefore never reshuffles earlier individuals' draws, and
individuals within a step can be simulated in any order or in parallel.
"""

from __future__ import annotations

import csv

import numpy as np

from .models import ConfigError, Covariates, ParamVector, ModelSpec, interaction_all
from .probcore import RngStream, sample_categorical


def simulate(
    spec: ModelSpec, W: Covariates, theta: ParamVector, T: int, rng: RngStream
) -> tuple[np.ndarray, np.ndarray]:
    """Draw one latent trajectory X (T+1, N) and its observations Y (T, N).

    Interactions at step t use the realized one-hot states at t-1, so
    individuals are conditionally independent given the previous population
    snapshot.
    """
    if T < 1:
        raise ConfigError(f"T must be >= 1, got {T}")
    theta.check_domains()
    spec.validate_covariates(W)
    params = theta.as_dict()
    N, M = W.N, spec.M
    p0 = np.asarray(spec.p0_fn(W, params), dtype=float)
    G = np.asarray(spec.emis_fn(W, params), dtype=float)
    X = np.empty((T + 1, N), dtype=np.int64)
    Y = np.empty((T, N), dtype=np.int64)
    for n in range(N):
        row = p0[n] if p0.shape[0] > 1 else p0[0]
        X[0, n] = sample_categorical(row, rng.substream(0, n).generator)
    onehot = np.zeros((N, M))
    rows = np.arange(N)
    for t in range(1, T + 1):
        onehot[:] = 0.0
        onehot[rows, X[t - 1]] = 1.0
        etas = [
            np.asarray(e) + np.zeros(N)
            for e in interaction_all(spec, W, onehot, params)
        ]
        K = np.asarray(spec.trans_fn(W, params, etas), dtype=float)
        for n in range(N):
            g = rng.substream(t, n).generator
            krow = (K[n] if K.shape[0] > 1 else K[0])[X[t - 1, n]]
            X[t, n] = sample_categorical(krow, g)
            grow = (G[n] if G.shape[0] > 1 else G[0])[X[t, n]]
            Y[t - 1, n] = sample_categorical(grow, g)
    return X, Y


def one_hot_population(states: np.ndarray, M: int) -> np.ndarray:
    """(N,) state indices -> (N, M) one-hot rows."""
    out = np.zeros((states.size, M))
    out[np.arange(states.size), states] = 1.0
    return out


# ---------------------------------------------------------------------------
# synthetic covariates

COVARIATE_KINDS = ("gaussian-scalar", "spatial-mixture", "community", "synthetic-farms")


def _mixture_positions(N: int, rng: RngStream, n_components: int = 10, spread: float = 10.0):
    g = rng.generator
    means = g.uniform(0.0, spread, size=(n_components, 2))
    labels = g.integers(0, n_components, size=N)
    pts = means[labels] + g.normal(size=(N, 2))
    return means, labels, pts


def _empirical_centroids(labels: np.ndarray, pts: np.ndarray, means: np.ndarray) -> np.ndarray:
    out = means.copy()
    for j in range(len(means)):
        m = labels == j
        if m.any():
            out[j] = pts[m].mean(axis=0)
    return out


def _mean_pairwise_by_community(labels: np.ndarray, pts: np.ndarray) -> np.ndarray:
    zbar = np.zeros(len(labels))
    for j in np.unique(labels):
        idx = np.where(labels == j)[0]
        if idx.size < 2:
            continue
        d = pts[idx][:, None, :] - pts[idx][None, :, :]
        dist = np.sqrt((d**2).sum(-1))
        m = idx.size
        zbar[idx] = dist[np.triu_indices(m, k=1)].sum() / (m * (m - 1) / 2)
    return zbar


def generate_covariates(kind: str, N: int, rng: RngStream) -> Covariates:
    """Synthetic covariate tables, deterministic under the stream's seed.

    * gaussian-scalar: one standard-normal feature column.
    * spatial-mixture: positions from a 10-component bivariate Gaussian
      mixture (means uniform on [0,10]^2, unit covariance) plus a scalar
      feature.
    * community: like spatial-mixture, but each individual sits exactly at
      its component mean and carries the component label.
    * synthetic-farms: community layout on a wider map with within-community
      mean pairwise distance and log herd sizes as features.
    """
    if kind not in COVARIATE_KINDS:
        raise ConfigError(f"unknown covariate kind {kind!r}; choose from {COVARIATE_KINDS}")
    if kind == "gaussian-scalar":
        return Covariates(features=rng.generator.normal(size=(N, 1)))
    if kind == "spatial-mixture":
        _, _, pts = _mixture_positions(N, rng)
        c = rng.substream(1).generator.normal(size=N)
        return Covariates(features=c[:, None], coords=pts)
    if kind == "community":
        means, labels, _ = _mixture_positions(N, rng)
        c = rng.substream(1).generator.normal(size=N)
        return Covariates(features=c[:, None], community=labels, coords=means[labels])
    # synthetic farm layout: positions in km on a 100 km square
    means, labels, pts = _mixture_positions(N, rng, n_components=10, spread=100.0)
    zbar = _mean_pairwise_by_community(labels, pts)
    g = rng.substream(1).generator
    log_cattle = g.normal(4.0, 1.0, size=N)
    log_sheep = g.normal(5.0, 1.2, size=N)
    centroids = _empirical_centroids(labels, pts, means)
    return Covariates(
        features=np.column_stack([zbar, log_cattle, log_sheep]),
        community=labels,
        coords=centroids[labels],
    )


def sir_covariate_views(N: int, rng: RngStream) -> tuple[Covariates, Covariates]:
    """One population, two covariate views for the SIR pair of models.

    The first view keeps true positions (features [c, unreported-flag]); the
    second collapses to community centroids with the within-community mean
    pairwise distance prepended (features [zbar, c, unreported-flag]). Half
    the population, chosen at random, is flagged always-unreported.
    """
    means, labels, pts = _mixture_positions(N, rng)
    g = rng.substream(1).generator
    c = g.normal(size=N)
    unreported = np.zeros(N)
    unreported[g.permutation(N)[: N // 2]] = 1.0
    zbar = _mean_pairwise_by_community(labels, pts)
    centroids = _empirical_centroids(labels, pts, means)
    well = Covariates(features=np.column_stack([c, unreported]), coords=pts)
    mis = Covariates(
        features=np.column_stack([zbar, c, unreported]),
        community=labels,
        coords=centroids[labels],
    )
    return well, mis


# ---------------------------------------------------------------------------
# trajectory serialization


def save_latent(X: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "n", "state_index"])
        for t in range(X.shape[0]):
            for n in range(X.shape[1]):
                wr.writerow([t, n, int(X[t, n])])


def save_observations(Y: np.ndarray, path) -> None:
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t", "n", "obs_index"])
        for t in range(Y.shape[0]):
            for n in range(Y.shape[1]):
                wr.writerow([t + 1, n, int(Y[t, n])])


def _load_indexed(path, value_col: str, t_base: int) -> np.ndarray:
    from .models import ParseError

    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        header = next(rd, None)
        if header is None or header[:3] != ["t", "n", value_col]:
            raise ParseError(f"{path}: expected header t,n,{value_col}")
        entries = {}
        for rownum, row in enumerate(rd, start=2):
            try:
                t, n, v = int(row[0]), int(row[1]), int(row[2])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad row {rownum}: {exc}") from exc
            entries[(t - t_base, n)] = v
    if not entries:
        raise ParseError(f"{path}: no data rows")
    T = max(t for t, _ in entries) + 1
    N = max(n for _, n in entries) + 1
    out = np.full((T, N), -1, dtype=np.int64)
    for (t, n), v in entries.items():
        out[t, n] = v
    if np.any(out < 0):
        raise ParseError(f"{path}: missing (t, n) entries")
    return out


def load_latent(path) -> np.ndarray:
    return _load_indexed(path, "state_index", t_base=0)


def load_observations(path) -> np.ndarray:
    return _load_indexed(path, "obs_index", t_base=1)
