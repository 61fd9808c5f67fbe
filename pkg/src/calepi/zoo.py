"""The model zoo: concrete individual-based epidemic models.

Each constructor returns a fully populated :class:`~calepi.models.ModelSpec`.
Covariate column conventions per model:

* homog_sis:      features [c]
* spatial_sis:    coords z, features [c]
* community_sis:  coords = community centroid, community labels, features [c]
* sir_wellspec:   coords z, features [c, unreported-flag]
* sir_misspec:    coords = community centroid, community labels,
                  features [zbar, c, unreported-flag]
* sis_logistic:   features = full covariate vector c (intercept first)
* seir_logistic:  features = full covariate vector c (intercept first)
* culling_sir:    coords = community centroid, community labels,
                  features [zbar, log-cattle, log-sheep]

zbar is the mean pairwise distance between individuals within a community,
used by centroid-aggregated kernels for own-community pairs.
"""

from __future__ import annotations

from dataclasses import replace
from functools import lru_cache

import numpy as np

from . import dual as dn
from .models import ConfigError, Covariates, InteractionChannel, ModelSpec

# ---------------------------------------------------------------------------
# shared pieces


@lru_cache(maxsize=32)
def _sqdist(W: Covariates) -> np.ndarray:
    """Pairwise squared distances of W.coords, cached per covariate table."""
    z = W.coords
    d = z[:, None, :] - z[None, :, :]
    return np.einsum("nkj,nkj->nk", d, d)


@lru_cache(maxsize=32)
def _sqdist_zbar(W: Covariates) -> np.ndarray:
    """Centroid-aggregated squared distances: same-centroid pairs use the
    within-community mean pairwise distance (features column 0)."""
    d2 = _sqdist(W)
    zb2 = W.features[:, 0] ** 2
    return np.where(d2 == 0.0, zb2[:, None], d2)


@lru_cache(maxsize=32)
def _centroids(W: Covariates) -> np.ndarray:
    J = int(W.community.max()) + 1
    cnt = np.maximum(np.bincount(W.community, minlength=J), 1).astype(float)
    cx = np.bincount(W.community, weights=W.coords[:, 0], minlength=J)
    cy = np.bincount(W.community, weights=W.coords[:, 1], minlength=J)
    return np.stack([cx / cnt, cy / cnt], axis=1)


@lru_cache(maxsize=32)
def _centroid_sqdist(W: Covariates) -> np.ndarray:
    c = _centroids(W)
    d = c[:, None, :] - c[None, :, :]
    return np.einsum("ijk,ijk->ij", d, d)


@lru_cache(maxsize=32)
def _community_zbar(W: Covariates) -> np.ndarray:
    J = int(W.community.max()) + 1
    zb = np.zeros(J)
    zb[W.community] = W.features[:, 0]  # constant within a community
    return zb


@lru_cache(maxsize=32)
def _centroid_sqdist_zbar(W: Covariates) -> np.ndarray:
    d2 = _centroid_sqdist(W)
    zb2 = _community_zbar(W) ** 2
    return np.where(d2 == 0.0, zb2[:, None], d2)


def _gauss_sq(d2, phi):
    """exp(-d2 / (2 phi^2)) / sqrt(2 pi phi^2)"""
    var = phi * phi
    return dn.exp(d2 * (-0.5 / var)) / dn.sqrt(2.0 * np.pi * var)


def _gauss_lin(d2, phi):
    """exp(-d2 / (2 phi)) / sqrt(2 pi phi); the SIR variant scales with phi,
    not phi squared."""
    return dn.exp(d2 * (-0.5 / phi)) / dn.sqrt(2.0 * np.pi * phi)


def _expcov(c, b):
    """exp(c b) for scalar b, exp(c . b) rowwise for vector b."""
    return dn.exp(c * b) if c.ndim == 1 else dn.exp((c * b).sum(-1))


def _expcov_max(c: np.ndarray, lo: float, hi: float) -> float:
    """max over rows and over the [lo, hi] box of exp(c . b)."""
    c2 = c[:, None] if c.ndim == 1 else c
    return float(np.exp(np.maximum(c2 * lo, c2 * hi).sum(-1).max()))


_UNIT = (0.01, 0.99)
_COEF = (-3.0, 3.0)


# ---------------------------------------------------------------------------
# SIS family (two latent states, three observation outcomes)


def _sis_emission(params):
    qS, qI, qSe, qSp = params["q_S"], params["q_I"], params["q_Se"], params["q_Sp"]
    rowS = dn.stack([1 - qS, qS * qSp, qS * (1 - qSp)], axis=-1)
    rowI = dn.stack([1 - qI, qI * (1 - qSe), qI * qSe], axis=-1)
    return dn.stack([rowS, rowI], axis=-2)[None, ...]


def _sis_trans(c, params, eta, h, with_eps):
    rate = h * params["beta"] * _expcov(c, params["b_S"]) * eta
    if with_eps:
        rate = rate + h * params["eps"]
    s_stay = dn.exp(-rate)
    gamma_n = params["gamma"] * _expcov(c, params["b_R"])
    i_stay = dn.exp(-h * gamma_n)
    rowS = dn.stack([s_stay, 1 - s_stay], axis=-1)
    rowI = dn.stack([1 - i_stay, i_stay], axis=-1)
    return dn.stack([rowS, rowI], axis=-2)


def _const_p0_two(params):
    p0 = params["p0"]
    return dn.stack([1 - p0, p0], axis=-1)[None, ...]


def homog_sis(h: float = 1.0) -> ModelSpec:
    """Homogeneously mixing SIS: everyone feels the same infection pressure,
    weighted by individual infectivity exp(c b_I)."""

    def weights(W, params):
        return _expcov(W.features[:, 0], params["b_I"])[None, :]

    def bound(W, box):
        return _expcov_max(W.features[:, 0], *box["b_I"])

    def trans(W, params, etas):
        return _sis_trans(W.features[:, 0], params, etas[0], h, with_eps=False)

    names = ("p0", "beta", "b_S", "b_I", "gamma", "b_R", "q_S", "q_I", "q_Se", "q_Sp")
    return ModelSpec(
        name="homog-sis",
        M=2,
        state_names=("S", "I"),
        param_names=names,
        param_domains={
            "p0": "unit", "beta": "positive", "b_S": "real", "b_I": "real",
            "gamma": "positive", "b_R": "real",
            "q_S": "unit", "q_I": "unit", "q_Se": "unit", "q_Sp": "unit",
        },
        default_params={
            "p0": 0.01, "beta": 0.2, "b_S": 1.0, "b_I": 0.5, "gamma": 0.1,
            "b_R": -0.5, "q_S": 0.2, "q_I": 0.5, "q_Se": 0.9, "q_Sp": 0.95,
        },
        default_frozen=("p0", "q_Se", "q_Sp"),
        channels=(InteractionChannel(source=1, weights_fn=weights, bound_fn=bound),),
        p0_fn=lambda W, params: _const_p0_two(params),
        trans_fn=trans,
        emis_fn=lambda W, params: _sis_emission(params),
        k_support=np.ones((2, 2), dtype=bool),
        p0_support_fn=lambda W: np.ones((1, 2), dtype=bool),
        g_support_fn=lambda W: np.ones((1, 2, 3), dtype=bool),
        param_box={
            "p0": (0.001, 0.5), "beta": (0.01, 10.0), "b_S": _COEF, "b_I": _COEF,
            "gamma": (0.01, 5.0), "b_R": _COEF,
            "q_S": _UNIT, "q_I": _UNIT, "q_Se": _UNIT, "q_Sp": _UNIT,
        },
        h=h,
    )


def _spatial_family_sis(name: str, community: bool, h: float) -> ModelSpec:
    def weights(W, params):
        b = _expcov(W.features[:, 0], params["b_I"])
        return _gauss_sq(_sqdist(W), params["phi"]) * b[None, :]

    def factors(W, params):
        A = _gauss_sq(_centroid_sqdist(W), params["phi"])
        b = _expcov(W.features[:, 0], params["b_I"])
        return A, b

    def bound(W, box):
        phi_min = box["phi"][0]
        return _expcov_max(W.features[:, 0], *box["b_I"]) / np.sqrt(2 * np.pi * phi_min**2)

    def trans(W, params, etas):
        return _sis_trans(W.features[:, 0], params, etas[0], h, with_eps=True)

    names = ("p0", "beta", "b_S", "b_I", "gamma", "b_R", "phi", "eps",
             "q_S", "q_I", "q_Se", "q_Sp")
    return ModelSpec(
        name=name,
        M=2,
        state_names=("S", "I"),
        param_names=names,
        param_domains={
            "p0": "unit", "beta": "positive", "b_S": "real", "b_I": "real",
            "gamma": "positive", "b_R": "real", "phi": "positive", "eps": "positive",
            "q_S": "unit", "q_I": "unit", "q_Se": "unit", "q_Sp": "unit",
        },
        default_params={
            "p0": 0.01, "beta": 2.0, "b_S": 0.5, "b_I": 1.0, "gamma": 0.1,
            "b_R": -0.5, "phi": 1.0, "eps": 1e-4,
            "q_S": 0.2, "q_I": 0.5, "q_Se": 0.9, "q_Sp": 0.95,
        },
        default_frozen=("p0", "eps", "q_Se", "q_Sp"),
        channels=(
            InteractionChannel(
                source=1,
                weights_fn=weights,
                factors_fn=factors if community else None,
                bound_fn=bound,
            ),
        ),
        p0_fn=lambda W, params: _const_p0_two(params),
        trans_fn=trans,
        emis_fn=lambda W, params: _sis_emission(params),
        k_support=np.ones((2, 2), dtype=bool),
        p0_support_fn=lambda W: np.ones((1, 2), dtype=bool),
        g_support_fn=lambda W: np.ones((1, 2, 3), dtype=bool),
        param_box={
            "p0": (0.001, 0.5), "beta": (0.01, 10.0), "b_S": _COEF, "b_I": _COEF,
            "gamma": (0.01, 5.0), "b_R": _COEF, "phi": (0.25, 10.0), "eps": (1e-5, 0.1),
            "q_S": _UNIT, "q_I": _UNIT, "q_Se": _UNIT, "q_Sp": _UNIT,
        },
        h=h,
        requires_community=community,
        requires_coords=True,
    )


def spatial_sis(h: float = 1.0) -> ModelSpec:
    """SIS with a dense spatial Gaussian infection kernel."""
    return _spatial_family_sis("spatial-sis", community=False, h=h)


def community_sis(h: float = 1.0) -> ModelSpec:
    """Spatial SIS with positions collapsed to community centroids, enabling
    the O(N x communities) interaction evaluation."""
    return _spatial_family_sis("community-sis", community=True, h=h)


# ---------------------------------------------------------------------------
# SIR pair (well specified: true positions; misspecified: centroid kernel)


def _sir_pieces(c_col: int, u_col: int, h: float):
    def p0(W, params):
        z = W.coords
        region = ((z[:, 0] <= 5.0) & (z[:, 1] >= 8.0)).astype(float)
        inf = params["p0"] * region
        return dn.stack([1 - inf, inf, np.zeros(W.N)], axis=-1)

    def trans(W, params, etas):
        c = W.features[:, c_col]
        rate = h * params["beta"] * _expcov(c, params["b_S"]) * etas[0] + h * params["eps"]
        s_stay = dn.exp(-rate)
        i_stay = dn.exp(-h * params["gamma"] * _expcov(c, params["b_R"]))
        z = np.zeros(dn.value(s_stay).shape)
        rowS = dn.stack([s_stay, 1 - s_stay, z], axis=-1)
        rowI = dn.stack([z, i_stay, 1 - i_stay], axis=-1)
        rowR = dn.stack([z, z, z + 1.0], axis=-1)
        return dn.stack([rowS, rowI, rowR], axis=-2)

    def emis(W, params):
        ob = 1.0 - W.features[:, u_col]  # 0 for the always-unreported set
        qs, qi, qr = params["q_S"], params["q_I"], params["q_R"]
        z = np.zeros(W.N)
        rowS = dn.stack([1 - qs * ob, qs * ob, z, z], axis=-1)
        rowI = dn.stack([1 - qi * ob, z, qi * ob, z], axis=-1)
        rowR = dn.stack([1 - qr * ob, z, z, qr * ob], axis=-1)
        return dn.stack([rowS, rowI, rowR], axis=-2)

    def p0_support(W):
        z = W.coords
        region = (z[:, 0] <= 5.0) & (z[:, 1] >= 8.0)
        sup = np.zeros((W.N, 3), dtype=bool)
        sup[:, 0] = True
        sup[:, 1] = region
        return sup

    def g_support(W):
        ob = W.features[:, u_col] == 0.0
        sup = np.zeros((W.N, 3, 4), dtype=bool)
        sup[:, :, 0] = True
        sup[:, 0, 1] = ob
        sup[:, 1, 2] = ob
        sup[:, 2, 3] = ob
        return sup

    return p0, trans, emis, p0_support, g_support


_SIR_NAMES = ("p0", "beta", "b_S", "b_I", "gamma", "b_R", "phi", "eps", "q_S", "q_I", "q_R")
_SIR_DOMAINS = {
    "p0": "unit", "beta": "positive", "b_S": "real", "b_I": "real",
    "gamma": "positive", "b_R": "real", "phi": "positive", "eps": "positive",
    "q_S": "unit", "q_I": "unit", "q_R": "unit",
}
_SIR_DEFAULTS = {
    "p0": 0.5, "beta": 3.0, "b_S": 0.5, "b_I": 1.0, "gamma": 0.1,
    "b_R": -0.1, "phi": 1.5, "eps": 1e-4, "q_S": 0.1, "q_I": 0.2, "q_R": 0.5,
}
_SIR_BOX = {
    "p0": (0.001, 0.999), "beta": (0.01, 10.0), "b_S": _COEF, "b_I": _COEF,
    "gamma": (0.01, 5.0), "b_R": _COEF, "phi": (0.25, 10.0), "eps": (1e-5, 0.1),
    "q_S": _UNIT, "q_I": _UNIT, "q_R": _UNIT,
}
_SIR_K_SUPPORT = np.array(
    [[True, True, False], [False, True, True], [False, False, True]]
)


def sir_wellspec(h: float = 1.0) -> ModelSpec:
    """Spatial SIR: infection seeded in the top-left region, dense Gaussian
    kernel over true positions, half the population never reported."""
    p0, trans, emis, p0_support, g_support = _sir_pieces(c_col=0, u_col=1, h=h)

    def weights(W, params):
        b = _expcov(W.features[:, 0], params["b_I"])
        return _gauss_lin(_sqdist(W), params["phi"]) * b[None, :]

    def bound(W, box):
        phi_min = box["phi"][0]
        return _expcov_max(W.features[:, 0], *box["b_I"]) / np.sqrt(2 * np.pi * phi_min)

    return ModelSpec(
        name="sir-wellspec",
        M=3,
        state_names=("S", "I", "R"),
        param_names=_SIR_NAMES,
        param_domains=dict(_SIR_DOMAINS),
        default_params=dict(_SIR_DEFAULTS),
        default_frozen=("p0", "eps"),
        channels=(InteractionChannel(source=1, weights_fn=weights, bound_fn=bound),),
        p0_fn=p0,
        trans_fn=trans,
        emis_fn=emis,
        k_support=_SIR_K_SUPPORT.copy(),
        p0_support_fn=p0_support,
        g_support_fn=g_support,
        param_box=dict(_SIR_BOX),
        h=h,
        requires_coords=True,
    )


def sir_misspec(h: float = 1.0) -> ModelSpec:
    """SIR with the interaction aggregated to community centroids; same
    dynamics and observation model as sir_wellspec."""
    p0, trans, emis, p0_support, g_support = _sir_pieces(c_col=1, u_col=2, h=h)

    def weights(W, params):
        b = _expcov(W.features[:, 1], params["b_I"])
        return _gauss_sq(_sqdist_zbar(W), params["phi"]) * b[None, :]

    def factors(W, params):
        A = _gauss_sq(_centroid_sqdist_zbar(W), params["phi"])
        b = _expcov(W.features[:, 1], params["b_I"])
        return A, b

    def bound(W, box):
        phi_min = box["phi"][0]
        return _expcov_max(W.features[:, 1], *box["b_I"]) / np.sqrt(2 * np.pi * phi_min**2)

    return ModelSpec(
        name="sir-misspec",
        M=3,
        state_names=("S", "I", "R"),
        param_names=_SIR_NAMES,
        param_domains=dict(_SIR_DOMAINS),
        default_params=dict(_SIR_DEFAULTS),
        default_frozen=("p0", "eps"),
        channels=(
            InteractionChannel(source=1, weights_fn=weights, factors_fn=factors, bound_fn=bound),
        ),
        p0_fn=p0,
        trans_fn=trans,
        emis_fn=emis,
        k_support=_SIR_K_SUPPORT.copy(),
        p0_support_fn=p0_support,
        g_support_fn=g_support,
        param_box=dict(_SIR_BOX),
        h=h,
        requires_community=True,
        requires_coords=True,
    )


# ---------------------------------------------------------------------------
# logistic-rate SIS and SEIR (vector covariates, no misreporting)


def sis_logistic(h: float = 1.0) -> ModelSpec:
    """SIS with logistic susceptibility/recovery rates and a unit-weight
    homogeneous interaction."""

    def p0(W, params):
        sig = dn.logistic((W.features * params["b_0"]).sum(-1))
        return dn.stack([1 - sig, sig], axis=-1)

    def trans(W, params, etas):
        sigS = dn.logistic((W.features * params["b_S"]).sum(-1))
        sigR = dn.logistic((W.features * params["b_R"]).sum(-1))
        s_stay = dn.exp((etas[0] + params["eps"]) * sigS * (-h))
        i_stay = dn.exp(-h * sigR)
        rowS = dn.stack([s_stay, 1 - s_stay], axis=-1)
        rowI = dn.stack([1 - i_stay, i_stay], axis=-1)
        return dn.stack([rowS, rowI], axis=-2)

    def emis(W, params):
        qS, qI = params["q_S"], params["q_I"]
        z = 0.0 * qS
        rowS = dn.stack([1 - qS, qS, z], axis=-1)
        rowI = dn.stack([1 - qI, z, qI], axis=-1)
        return dn.stack([rowS, rowI], axis=-2)[None, ...]

    return ModelSpec(
        name="sis-logistic",
        M=2,
        state_names=("S", "I"),
        param_names=("b_0", "b_S", "b_R", "eps", "q_S", "q_I"),
        param_domains={
            "b_0": "real", "b_S": "real", "b_R": "real",
            "eps": "positive", "q_S": "unit", "q_I": "unit",
        },
        default_params={
            "b_0": np.array([-np.log(99.0), 0.0]),
            "b_S": np.array([-1.0, 2.0]),
            "b_R": np.array([-1.0, -1.0]),
            "eps": 1e-3, "q_S": 0.6, "q_I": 0.4,
        },
        default_frozen=("eps",),
        channels=(
            InteractionChannel(
                source=1,
                weights_fn=lambda W, params: np.ones((1, W.N)),
                bound_fn=lambda W, box: 1.0,
            ),
        ),
        p0_fn=p0,
        trans_fn=trans,
        emis_fn=emis,
        k_support=np.ones((2, 2), dtype=bool),
        p0_support_fn=lambda W: np.ones((1, 2), dtype=bool),
        g_support_fn=lambda W: np.array([[[True, True, False], [True, False, True]]]),
        param_box={
            "b_0": _COEF, "b_S": _COEF, "b_R": _COEF,
            "eps": (1e-5, 0.1), "q_S": _UNIT, "q_I": _UNIT,
        },
        h=h,
    )


def seir_logistic(h: float = 1.0) -> ModelSpec:
    """SEIR with logistic rates; exposure, progression, and recovery follow a
    strict S to E to I to R path, which starves naive particle filters."""

    def p0(W, params):
        sig = dn.logistic((W.features * params["b_0"]).sum(-1))
        z = np.zeros(W.N)
        return dn.stack([1 - sig, z, sig, z], axis=-1)

    def trans(W, params, etas):
        sigS = dn.logistic((W.features * params["b_S"]).sum(-1))
        sigR = dn.logistic((W.features * params["b_R"]).sum(-1))
        s_stay = dn.exp((etas[0] + params["eps"]) * sigS * (-h))
        e_stay = dn.exp(-h * params["rho"]) + np.zeros(W.N)
        i_stay = dn.exp(-h * sigR)
        z = np.zeros(W.N)
        rowS = dn.stack([s_stay, 1 - s_stay, z, z], axis=-1)
        rowE = dn.stack([z, e_stay, 1 - e_stay, z], axis=-1)
        rowI = dn.stack([z, z, i_stay, 1 - i_stay], axis=-1)
        rowR = dn.stack([z, z, z, z + 1.0], axis=-1)
        return dn.stack([rowS, rowE, rowI, rowR], axis=-2)

    def emis(W, params):
        qS, qE, qI, qR = params["q_S"], params["q_E"], params["q_I"], params["q_R"]
        z = 0.0 * qS
        rowS = dn.stack([1 - qS, qS, z, z, z], axis=-1)
        rowE = dn.stack([1 - qE, z, qE, z, z], axis=-1)
        rowI = dn.stack([1 - qI, z, z, qI, z], axis=-1)
        rowR = dn.stack([1 - qR, z, z, z, qR], axis=-1)
        return dn.stack([rowS, rowE, rowI, rowR], axis=-2)[None, ...]

    g_sup = np.zeros((1, 4, 5), dtype=bool)
    g_sup[0, :, 0] = True
    for i in range(4):
        g_sup[0, i, i + 1] = True

    return ModelSpec(
        name="seir-logistic",
        M=4,
        state_names=("S", "E", "I", "R"),
        param_names=("b_0", "b_S", "b_R", "eps", "rho", "q_S", "q_E", "q_I", "q_R"),
        param_domains={
            "b_0": "real", "b_S": "real", "b_R": "real", "eps": "positive",
            "rho": "positive", "q_S": "unit", "q_E": "unit", "q_I": "unit", "q_R": "unit",
        },
        default_params={
            "b_0": np.array([-np.log(99.0), 0.0]),
            "b_S": np.array([-1.0, 2.0]),
            "b_R": np.array([-1.0, -1.0]),
            "eps": 1e-3, "rho": 0.2,
            "q_S": 0.0, "q_E": 0.0, "q_I": 0.4, "q_R": 0.6,
        },
        default_frozen=("eps", "q_S", "q_E"),
        channels=(
            InteractionChannel(
                source=2,
                weights_fn=lambda W, params: np.ones((1, W.N)),
                bound_fn=lambda W, box: 1.0,
            ),
        ),
        p0_fn=p0,
        trans_fn=trans,
        emis_fn=emis,
        k_support=np.array(
            [
                [True, True, False, False],
                [False, True, True, False],
                [False, False, True, True],
                [False, False, False, True],
            ]
        ),
        p0_support_fn=lambda W: np.array([[True, False, True, False]]),
        g_support_fn=lambda W: g_sup.copy(),
        param_box={
            "b_0": _COEF, "b_S": _COEF, "b_R": _COEF, "eps": (1e-5, 0.1),
            "rho": (0.01, 5.0), "q_S": _UNIT, "q_E": _UNIT, "q_I": _UNIT, "q_R": _UNIT,
        },
        h=h,
    )


# ---------------------------------------------------------------------------
# culling SIR (two interaction channels, interaction-seeded p0)


def culling_sir(h: float = 1.0) -> ModelSpec:
    """Farm-level SIR where healthy farms can be preemptively culled.

    Infection pressure (channel 0) and culling pressure (channel 1) both
    emanate from infected farms through centroid-aggregated Gaussian kernels
    of widths phi and psi. The initial infection probability is seeded by the
    same phi-kernel scaled by tau.
    """

    def weights_i(W, params):
        b = _expcov(W.features[:, 1:3], params["b_I"])
        return _gauss_sq(_sqdist_zbar(W), params["phi"]) * b[None, :]

    def factors_i(W, params):
        A = _gauss_sq(_centroid_sqdist_zbar(W), params["phi"])
        return A, _expcov(W.features[:, 1:3], params["b_I"])

    def weights_c(W, params):
        return _gauss_sq(_sqdist_zbar(W), params["psi"])

    def factors_c(W, params):
        return _gauss_sq(_centroid_sqdist_zbar(W), params["psi"]), np.ones(W.N)

    def bound_i(W, box):
        phi_min = box["phi"][0]
        return _expcov_max(W.features[:, 1:3], *box["b_I"]) / np.sqrt(2 * np.pi * phi_min**2)

    def bound_c(W, box):
        return 1.0 / np.sqrt(2 * np.pi * box["psi"][0] ** 2)

    def p0(W, params):
        U = weights_i(W, params)
        eta0 = U.sum(-1) * (params["tau"] / W.N)
        s0 = dn.exp(-(params["beta"] * _expcov(W.features[:, 1:3], params["b_S"]) * eta0
                      + params["eps"]))
        return dn.stack([s0, 1 - s0, np.zeros(W.N)], axis=-1)

    def trans(W, params, etas):
        eta_i, eta_c = etas
        pC = 1 - dn.exp(-h * params["rho"] * eta_c)
        pI = 1 - dn.exp(
            -(h * params["beta"] * _expcov(W.features[:, 1:3], params["b_S"]) * eta_i
              + h * params["eps"])
        )
        pR = 1 - dn.exp(-h * params["gamma"])
        keep = 1 - pC
        rowS = dn.stack([keep * (1 - pI), keep * pI, pC + 0.0 * pI], axis=-1)
        rowI = dn.stack([0.0 * pI, keep * (1 - pR), pC + keep * pR], axis=-1)
        rowR = dn.stack([0.0 * pI, 0.0 * pI, 1.0 + 0.0 * pI], axis=-1)
        return dn.stack([rowS, rowI, rowR], axis=-2)

    def emis(W, params):
        qI = params["q_I"]
        z = 0.0 * qI
        rowS = dn.stack([z + 1.0, z, z, z], axis=-1)
        rowI = dn.stack([1 - qI, z, qI, z], axis=-1)
        rowR = dn.stack([z + 1.0, z, z, z], axis=-1)
        return dn.stack([rowS, rowI, rowR], axis=-2)[None, ...]

    g_sup = np.zeros((1, 3, 4), dtype=bool)
    g_sup[0, :, 0] = True
    g_sup[0, 1, 2] = True

    return ModelSpec(
        name="culling-sir",
        M=3,
        state_names=("S", "I", "R"),
        param_names=("tau", "beta", "b_S", "b_I", "phi", "psi", "eps", "gamma", "rho", "q_I"),
        param_domains={
            "tau": "positive", "beta": "positive", "b_S": "real", "b_I": "real",
            "phi": "positive", "psi": "positive", "eps": "positive",
            "gamma": "positive", "rho": "positive", "q_I": "unit",
        },
        default_params={
            "tau": 0.01, "beta": 1.0,
            "b_S": np.array([0.1, 0.1]), "b_I": np.array([0.1, 0.1]),
            "phi": 10.0, "psi": 5.0, "eps": 1e-4, "gamma": 0.2, "rho": 1.0,
            "q_I": 0.9,
        },
        default_frozen=("rho",),
        channels=(
            InteractionChannel(source=1, weights_fn=weights_i, factors_fn=factors_i,
                               bound_fn=bound_i),
            InteractionChannel(source=1, weights_fn=weights_c, factors_fn=factors_c,
                               bound_fn=bound_c),
        ),
        p0_fn=p0,
        trans_fn=trans,
        emis_fn=emis,
        k_support=np.array(
            [[True, True, True], [False, True, True], [False, False, True]]
        ),
        p0_support_fn=lambda W: np.array([[True, True, False]]),
        g_support_fn=lambda W: g_sup.copy(),
        param_box={
            "tau": (1e-4, 1.0), "beta": (0.01, 10.0), "b_S": (-1.0, 1.0),
            "b_I": (-1.0, 1.0), "phi": (1.0, 50.0), "psi": (1.0, 50.0),
            "eps": (1e-5, 0.1), "gamma": (0.01, 5.0), "rho": (0.01, 10.0),
            "q_I": _UNIT,
        },
        h=h,
        requires_community=True,
        requires_coords=True,
    )


# ---------------------------------------------------------------------------
# registry


ZOO = {
    "homog-sis": homog_sis,
    "spatial-sis": spatial_sis,
    "community-sis": community_sis,
    "sir-wellspec": sir_wellspec,
    "sir-misspec": sir_misspec,
    "sis-logistic": sis_logistic,
    "seir-logistic": seir_logistic,
    "culling-sir": culling_sir,
}


def get_model(name: str, h: float = 1.0) -> ModelSpec:
    if name not in ZOO:
        raise ConfigError(f"unknown model {name!r}; choose from {sorted(ZOO)}")
    return ZOO[name](h=h)


def decoupled(spec: ModelSpec) -> ModelSpec:
    """Copy of the model with every interaction kernel replaced by zero, so
    individuals evolve independently."""

    def zero_weights(W, params):
        return np.zeros((1, W.N))

    channels = tuple(
        InteractionChannel(source=ch.source, weights_fn=zero_weights,
                           bound_fn=lambda W, box: 0.0)
        for ch in spec.channels
    )
    return replace(spec, name=spec.name + "-decoupled", channels=channels)
