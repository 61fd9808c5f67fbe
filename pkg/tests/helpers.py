"""Shared generators for tests: covariate tables and in-domain parameter
draws per zoo model, built independently of the library's own simulators."""

import numpy as np

from calepi.models import Covariates, ParamVector


def community_layout(N, J, rng, spread=10.0):
    """Labels, per-community centroids, and member points."""
    labels = rng.integers(0, J, size=N)
    labels[:J] = np.arange(J)  # no empty communities
    centers = rng.uniform(0, spread, size=(J, 2))
    pts = centers[labels] + rng.normal(size=(N, 2))
    return labels, centers, pts


def mean_pairwise(pts):
    n = len(pts)
    if n < 2:
        return 0.0
    tot = 0.0
    for a in range(n):
        for b in range(a + 1, n):
            tot += float(np.linalg.norm(pts[a] - pts[b]))
    return tot / (n * (n - 1) / 2)


def zbar_of(labels, pts):
    zbar = np.zeros(len(labels))
    for j in np.unique(labels):
        m = labels == j
        zbar[m] = mean_pairwise(pts[m])
    return zbar


def random_covariates(name, N, rng, n_communities=3):
    c = rng.normal(size=N)
    if name == "homog-sis":
        return Covariates(features=c[:, None])
    if name == "spatial-sis":
        return Covariates(features=c[:, None], coords=rng.uniform(0, 10, size=(N, 2)))
    J = min(n_communities, N)
    labels, centers, pts = community_layout(N, J, rng)
    if name == "community-sis":
        return Covariates(features=c[:, None], community=labels, coords=centers[labels])
    if name == "sir-wellspec":
        un = (rng.uniform(size=N) < 0.5).astype(float)
        return Covariates(
            features=np.column_stack([c, un]), coords=rng.uniform(0, 10, size=(N, 2))
        )
    zbar = zbar_of(labels, pts)
    if name == "sir-misspec":
        un = (rng.uniform(size=N) < 0.5).astype(float)
        return Covariates(
            features=np.column_stack([zbar, c, un]),
            community=labels,
            coords=centers[labels],
        )
    if name in ("sis-logistic", "seir-logistic"):
        return Covariates(features=np.column_stack([np.ones(N), c]))
    if name == "culling-sir":
        return Covariates(
            features=np.column_stack([zbar, rng.normal(size=N), rng.normal(size=N)]),
            community=labels,
            coords=centers[labels],
        )
    raise ValueError(name)


def random_theta(spec, rng, frozen=None) -> ParamVector:
    """Uniform draw inside the model's parameter box (strictly in-domain)."""
    base = spec.make_params()
    vals = {}
    for name in spec.param_names:
        lo, hi = spec.param_box[name]
        v = np.asarray(base.values[name])
        draw = rng.uniform(lo, hi, size=v.shape)
        vals[name] = float(draw) if v.ndim == 0 else draw
    return base.with_values(**vals) if frozen is None else base.with_values(
        **vals
    ).with_frozen(*frozen)


def random_simplex_rows(N, M, rng):
    return rng.dirichlet(np.ones(M), size=N)
