"""Individual-based compartmental models.

A model couples four ingredients, all covariate- and parameter-dependent:

* an initial distribution over the M latent states,
* one or two population interaction channels, each averaging a bounded
  pairwise kernel against the population state,
* an M x M row-stochastic transition matrix driven by the interaction,
* an M x (M+1) row-stochastic emission matrix whose column 0 is the
  "unreported" outcome and whose columns 1..M are "reported as state i".

Model functions are written against a small arithmetic facade so they accept
either plain floats/arrays or dual numbers carrying tangents; the same code
path serves simulation, filtering, and forward-mode differentiation.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .probcore import check_prob_vector, check_stochastic


class OutOfDomain(ValueError):
    """Parameter value outside its declared domain."""


class ConfigError(ValueError):
    """Malformed model configuration or covariate requirements."""


class MissingCommunity(ConfigError):
    """Community-structured computation requested without community labels."""


# ---------------------------------------------------------------------------
# covariates


@dataclass(frozen=True, eq=False)
class Covariates:
    """Per-individual covariate table.

    features: (N, K) float array, the individual covariate columns c1..cK.
    community: optional (N,) integer labels for community-structured models.
    coords: optional (N, 2) spatial positions (true locations or community
        centroids, depending on the model).
    """

    features: np.ndarray
    community: np.ndarray | None = None
    coords: np.ndarray | None = None

    def __post_init__(self):
        f = np.asarray(self.features, dtype=float)
        if f.ndim != 2 or f.shape[0] < 1:
            raise ConfigError(f"features must be (N, K) with N >= 1, got {f.shape}")
        object.__setattr__(self, "features", f)
        if self.community is not None:
            com = np.asarray(self.community, dtype=int)
            if com.shape != (f.shape[0],):
                raise ConfigError("community labels must be one per individual")
            object.__setattr__(self, "community", com)
        if self.coords is not None:
            z = np.asarray(self.coords, dtype=float)
            if z.shape != (f.shape[0], 2):
                raise ConfigError(f"coords must be (N, 2), got {z.shape}")
            object.__setattr__(self, "coords", z)

    @property
    def N(self) -> int:
        return self.features.shape[0]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    def take(self, indices) -> "Covariates":
        idx = np.atleast_1d(np.asarray(indices, dtype=int))
        return Covariates(
            features=self.features[idx],
            community=None if self.community is None else self.community[idx],
            coords=None if self.coords is None else self.coords[idx],
        )


def save_covariates(W: Covariates, path) -> None:
    """Write one individual per line: id, community?, z1?, z2?, c1..cK."""
    header = ["id"]
    if W.community is not None:
        header.append("community")
    if W.coords is not None:
        header += ["z1", "z2"]
    header += [f"c{j + 1}" for j in range(W.n_features)]
    with open(path, "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(header)
        for n in range(W.N):
            row = [n]
            if W.community is not None:
                row.append(int(W.community[n]))
            if W.coords is not None:
                row += [repr(float(W.coords[n, 0])), repr(float(W.coords[n, 1]))]
            row += [repr(float(v)) for v in W.features[n]]
            wr.writerow(row)


class ParseError(ValueError):
    """Malformed input file; the message names the offending row."""


def load_covariates(path) -> Covariates:
    with open(path, newline="") as fh:
        rd = csv.reader(fh)
        try:
            header = next(rd)
        except StopIteration:
            raise ParseError(f"{path}: empty file")
        cols = {name: i for i, name in enumerate(header)}
        if "id" not in cols:
            raise ParseError(f"{path}: missing 'id' column")
        has_com = "community" in cols
        has_z = "z1" in cols and "z2" in cols
        feat_cols = [name for name in header if name.startswith("c") and name[1:].isdigit()]
        feat_cols.sort(key=lambda s: int(s[1:]))
        features, community, coords = [], [], []
        for rownum, row in enumerate(rd, start=2):
            try:
                if has_com:
                    community.append(int(row[cols["community"]]))
                if has_z:
                    coords.append([float(row[cols["z1"]]), float(row[cols["z2"]])])
                features.append([float(row[cols[c]]) for c in feat_cols])
            except (ValueError, IndexError) as exc:
                raise ParseError(f"{path}: bad row {rownum}: {exc}") from exc
    if not features:
        raise ParseError(f"{path}: no data rows")
    return Covariates(
        features=np.array(features),
        community=np.array(community) if has_com else None,
        coords=np.array(coords) if has_z else None,
    )


def with_intercept(W: Covariates) -> Covariates:
    """Prepend a constant-1 feature column."""
    ones = np.ones((W.N, 1))
    return Covariates(
        features=np.hstack([ones, W.features]), community=W.community, coords=W.coords
    )


# ---------------------------------------------------------------------------
# named parameters

_DOMAINS = ("positive", "unit", "real")


@dataclass(frozen=True)
class ParamVector:
    """Named model parameters in constrained space.

    Each entry is a float or a 1-d array and carries a domain tag that fixes
    its bijection to unconstrained space: log for positive entries, logit for
    unit-interval entries, identity otherwise. Frozen entries are treated as
    known constants and excluded from gradients and sampling.
    """

    names: tuple[str, ...]
    values: dict[str, float | np.ndarray]
    domains: dict[str, str]
    frozen: frozenset[str] = frozenset()

    def __post_init__(self):
        for name in self.names:
            if name not in self.values or name not in self.domains:
                raise ConfigError(f"parameter {name!r} missing value or domain")
            if self.domains[name] not in _DOMAINS:
                raise ConfigError(f"unknown domain {self.domains[name]!r} for {name!r}")
        for name in self.frozen:
            if name not in self.names:
                raise ConfigError(f"frozen name {name!r} is not a parameter")
        self.check_domains()

    def check_domains(self) -> None:
        for name in self.names:
            v = np.atleast_1d(np.asarray(self.values[name], dtype=float))
            dom = self.domains[name]
            if dom == "positive" and np.any(v <= 0):
                raise OutOfDomain(f"{name}={self.values[name]} must be > 0")
            if dom == "unit" and (np.any(v < 0) or np.any(v > 1)):
                raise OutOfDomain(f"{name}={self.values[name]} must be in [0, 1]")

    @property
    def free_names(self) -> tuple[str, ...]:
        return tuple(n for n in self.names if n not in self.frozen)

    def size_of(self, name: str) -> int:
        return int(np.asarray(self.values[name]).size)

    @property
    def n_free(self) -> int:
        return sum(self.size_of(n) for n in self.free_names)

    def as_dict(self) -> dict:
        return dict(self.values)

    def with_values(self, **updates) -> "ParamVector":
        vals = dict(self.values)
        for name, v in updates.items():
            if name not in self.names:
                raise ConfigError(f"unknown parameter {name!r}")
            prev = np.asarray(self.values[name])
            vals[name] = float(v) if prev.ndim == 0 else np.asarray(v, dtype=float)
        return ParamVector(self.names, vals, self.domains, self.frozen)

    def with_frozen(self, *names: str) -> "ParamVector":
        return ParamVector(self.names, dict(self.values), self.domains, frozenset(names))

    def to_json(self, path=None) -> str:
        obj = {
            n: (float(v) if np.ndim(v) == 0 else [float(x) for x in v])
            for n, v in ((n, self.values[n]) for n in self.names)
        }
        text = json.dumps(obj, indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text

    def update_from_json(self, text_or_path) -> "ParamVector":
        text = str(text_or_path)
        if text.lstrip().startswith("{"):
            obj = json.loads(text)
        else:
            with open(text_or_path) as fh:
                obj = json.load(fh)
        return self.with_values(**obj)


# ---------------------------------------------------------------------------
# model specification


@dataclass(frozen=True)
class InteractionChannel:
    """One scalar interaction channel: eta_n = (1/N) sum_k U[n,k] * Pi[k, source].

    weights_fn returns the pairwise weight matrix U, either (N, N) or a
    single broadcastable row (1, N) when the weight does not depend on n.
    factors_fn, when present, returns (A, b): a (J, J) between-community
    weight matrix and a per-individual source multiplier b (N,), giving the
    O(N * J) community evaluation U[n, k] = A[g_n, g_k] * b[k].
    """

    source: int
    weights_fn: Callable
    factors_fn: Callable | None = None
    bound_fn: Callable | None = None


@dataclass(frozen=True)
class ModelSpec:
    """Immutable individual-based model definition.

    The callables accept parameter dictionaries whose entries may be plain
    floats/arrays or dual numbers; they must be pure.
    """

    name: str
    M: int
    state_names: tuple[str, ...]
    param_names: tuple[str, ...]
    param_domains: dict[str, str]
    default_params: dict
    default_frozen: tuple[str, ...]
    channels: tuple[InteractionChannel, ...]
    p0_fn: Callable  # (W, params) -> (N or 1, M)
    trans_fn: Callable  # (W, params, etas) -> (N or 1, M, M)
    emis_fn: Callable  # (W, params) -> (N or 1, M, M+1)
    k_support: np.ndarray  # (M, M) bool
    p0_support_fn: Callable  # (W) -> (N or 1, M) bool
    g_support_fn: Callable  # (W) -> (N or 1, M, M+1) bool
    param_box: dict[str, tuple]  # compact search box per parameter
    h: float = 1.0
    requires_community: bool = False
    requires_coords: bool = False

    def __post_init__(self):
        if len(self.state_names) != self.M:
            raise ConfigError("state_names length must equal M")
        if len(self.channels) not in (0, 1, 2):
            raise ConfigError("supported interaction arity is 0, 1, or 2 channels")

    @property
    def n_channels(self) -> int:
        return len(self.channels)

    def make_params(self, frozen: tuple[str, ...] | None = None, **overrides) -> ParamVector:
        vals = {}
        for name in self.param_names:
            v = overrides.pop(name, self.default_params[name])
            arr = np.asarray(v, dtype=float)
            vals[name] = float(arr) if arr.ndim == 0 else arr.copy()
        if overrides:
            raise ConfigError(f"unknown parameters {sorted(overrides)} for model {self.name}")
        frz = self.default_frozen if frozen is None else tuple(frozen)
        return ParamVector(self.param_names, vals, dict(self.param_domains), frozenset(frz))

    def validate_covariates(self, W: Covariates) -> None:
        if self.requires_community and W.community is None:
            raise MissingCommunity(f"model {self.name} needs community labels")
        if self.requires_coords and W.coords is None:
            raise ConfigError(f"model {self.name} needs spatial coordinates")


# ---------------------------------------------------------------------------
# generic operations


def initial_distribution(spec: ModelSpec, W: Covariates, theta: ParamVector, n: int = 0):
    """Initial state distribution of individual n (population context kept,
    since some initial distributions average a kernel over everyone)."""
    theta.check_domains()
    spec.validate_covariates(W)
    p0 = np.asarray(spec.p0_fn(W, theta.as_dict()))
    row = p0[n] if p0.shape[0] > 1 else p0[0]
    return check_prob_vector(row, f"p0 row {n}")


def interaction_all(spec: ModelSpec, W: Covariates, Pi, params: dict, dense: bool = False):
    """All interaction values per channel from population state Pi (N, M).

    Uses the O(N * J) community factorization when the model provides one,
    unless dense=True forces the pairwise sum. Returns a list with one
    (N,)-shaped value per channel (plain or dual, following the inputs).
    """
    N = W.N
    out = []
    for ch in spec.channels:
        src = Pi[..., ch.source]  # leading axes (e.g. particles) ride along
        if ch.factors_fn is not None and not dense:
            if W.community is None:
                raise MissingCommunity(f"model {spec.name} needs community labels")
            A, b = ch.factors_fn(W, params)
            labels = W.community
            J = labels.max() + 1
            member = np.zeros((N, J))
            member[np.arange(N), labels] = 1.0
            # per-community source mass: s_j = sum_{k in j} b_k * src_k
            s = ((b * src)[..., None, :] * member.T).sum(-1)
            eta = (A * s[..., None, :]).sum(-1) / N
            eta = eta.take(labels, axis=-1)
        else:
            U = ch.weights_fn(W, params)
            eta = (U * src[..., None, :]).sum(-1) / N
            eta = eta + np.zeros(N) if _leading_dim(eta) == 1 else eta
        out.append(eta)
    return out


def _leading_dim(x) -> int:
    shape = x.val.shape if hasattr(x, "val") else np.shape(x)
    return shape[0] if shape else 1


def interaction(spec: ModelSpec, n: int, W: Covariates, Pi, theta: ParamVector):
    """Interaction value(s) for individual n: the dense pairwise average of
    the kernel against the population state Pi (rows may be one-hot)."""
    etas = interaction_all(spec, W, np.asarray(Pi, dtype=float), theta.as_dict(), dense=True)
    vals = [float(np.asarray(e)[n]) for e in etas]
    return vals[0] if len(vals) == 1 else np.array(vals)


def interaction_community(spec: ModelSpec, W: Covariates, Pi, theta: ParamVector):
    """Community-factored interaction values, one (N,) array per channel."""
    if W.community is None:
        raise MissingCommunity(f"model {spec.name} needs community labels")
    for ch in spec.channels:
        if ch.factors_fn is None:
            raise ConfigError(f"model {spec.name} has no community factorization")
    etas = interaction_all(spec, W, np.asarray(Pi, dtype=float), theta.as_dict())
    return [np.asarray(e) + np.zeros(W.N) for e in etas]


def transition_matrix(spec: ModelSpec, W: Covariates, theta: ParamVector, eta, n: int = 0):
    """Transition matrix for individual n at given interaction value(s)."""
    theta.check_domains()
    etas = np.atleast_1d(np.asarray(eta, dtype=float))
    if etas.size != spec.n_channels:
        raise ConfigError(f"model {spec.name} expects {spec.n_channels} interaction values")
    K = np.asarray(spec.trans_fn(W, theta.as_dict(), list(etas)))
    row = K[n] if K.shape[0] > 1 else K[0]
    return check_stochastic(row, f"K for individual {n}")


def emission_matrix(spec: ModelSpec, W: Covariates, theta: ParamVector, n: int = 0):
    """Emission matrix for individual n; column 0 is the unreported outcome."""
    theta.check_domains()
    G = np.asarray(spec.emis_fn(W, theta.as_dict()))
    row = G[n] if G.shape[0] > 1 else G[0]
    return check_stochastic(row, f"G for individual {n}")


def interaction_bound(spec: ModelSpec, W: Covariates, box: dict | None = None):
    """Per-channel upper bound C on the interaction, over the covariate hull
    and the model's parameter box."""
    box = dict(spec.param_box) if box is None else box
    return tuple(
        ch.bound_fn(W, box) if ch.bound_fn is not None else 0.0 for ch in spec.channels
    )
