"""Probability-simplex primitives and seeded random streams.

Conventions used across the package:

* A probability vector is a 1-d float array of length M with nonnegative
  entries whose sum is within ``SIMPLEX_ATOL`` of 1.
* A one-hot state is carried around as an integer index and expanded to a
  vertex of the simplex with :func:`one_hot` only where vector arithmetic
  needs it.
* A stochastic matrix is a 2-d float array whose rows are probability
  vectors (M x M for transition kernels, M x (M+1) for emissions).
* Probabilities live in linear space; logs appear only when likelihood
  increments are accumulated.
"""

from __future__ import annotations

import numpy as np

# Absolute tolerance on simplex sums; vectors are otherwise treated as exact.
SIMPLEX_ATOL = 1e-12


class ZeroMass(ValueError):
    """Normalization of an all-zero vector."""


class DivByZero(ValueError):
    """Elementwise a/b with b=0 but a>0: probability mass escaping a support."""


def is_prob_vector(v: np.ndarray, atol: float = SIMPLEX_ATOL) -> bool:
    v = np.asarray(v, dtype=float)
    return v.ndim == 1 and np.all(v >= 0.0) and abs(v.sum() - 1.0) <= atol


def check_prob_vector(v: np.ndarray, what: str = "vector", atol: float = SIMPLEX_ATOL) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if v.ndim != 1:
        raise ValueError(f"{what} must be 1-d, got shape {v.shape}")
    if np.any(v < 0.0):
        raise ValueError(f"{what} has negative entries: {v}")
    if abs(v.sum() - 1.0) > atol:
        raise ValueError(f"{what} sums to {v.sum()!r}, not 1 within {atol}")
    return v


def check_stochastic(mat: np.ndarray, what: str = "matrix", atol: float = SIMPLEX_ATOL) -> np.ndarray:
    """Validate that every row of ``mat`` is a probability vector."""
    mat = np.asarray(mat, dtype=float)
    if mat.ndim != 2:
        raise ValueError(f"{what} must be 2-d, got shape {mat.shape}")
    if np.any(mat < 0.0):
        raise ValueError(f"{what} has negative entries")
    sums = mat.sum(axis=1)
    bad = np.flatnonzero(np.abs(sums - 1.0) > atol)
    if bad.size:
        raise ValueError(f"{what} row {bad[0]} sums to {sums[bad[0]]!r}, not 1 within {atol}")
    return mat


def normalize(v: np.ndarray) -> np.ndarray:
    """Scale a nonnegative vector to the simplex.

    A vector already summing to 1 within ``SIMPLEX_ATOL`` is returned
    unchanged, which makes normalize exactly idempotent.
    """
    v = np.asarray(v, dtype=float)
    if np.any(v < 0.0):
        raise ValueError(f"negative entries in {v}")
    s = v.sum()
    if s == 0.0:
        raise ZeroMass("cannot normalize a zero-mass vector")
    if abs(s - 1.0) <= SIMPLEX_ATOL:
        return v.copy()
    return v / s


def hadamard_div_zero(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Elementwise a/b with the convention 0/0 = 0.

    b=0 with a>0 raises :class:`DivByZero`: that pattern means probability
    mass sits outside the support and filtering is no longer well defined.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    zero = b == 0.0
    if np.any(zero & (a > 0.0)):
        raise DivByZero("a>0 where b=0")
    out = np.divide(a, b, out=np.zeros(np.broadcast(a, b).shape), where=~zero)
    return out


def one_hot(index: int, dim: int) -> np.ndarray:
    if not 0 <= index < dim:
        raise ValueError(f"index {index} out of range for dimension {dim}")
    v = np.zeros(dim)
    v[index] = 1.0
    return v


def argmax_index(p: np.ndarray) -> int:
    """Smallest index attaining the maximum entry (deterministic ties)."""
    return int(np.argmax(p))


def sample_categorical(p: np.ndarray, rng: "RngStream") -> int:
    """Draw an index with probability p[i], advancing the stream."""
    u = rng.uniform()
    cdf = np.cumsum(p)
    # guard against cumulative rounding pushing u past the last bin
    return min(int(np.searchsorted(cdf, u * cdf[-1], side="right")), len(p) - 1)


class RngStream:
    """Counter-based seeded random stream with deterministic splitting.

    Substreams are addressed by an integer path (e.g. replicate, time,
    individual), so the draws of one individual never depend on how many
    other individuals or threads exist.
    """

    def __init__(self, seed: int, path: tuple[int, ...] = ()):
        self.seed = int(seed)
        self.path = tuple(int(x) for x in path)
        self._gen: np.random.Generator | None = None

    @property
    def generator(self) -> np.random.Generator:
        if self._gen is None:
            ss = np.random.SeedSequence(self.seed, spawn_key=self.path)
            self._gen = np.random.Generator(np.random.Philox(ss))
        return self._gen

    def substream(self, *path: int) -> "RngStream":
        return RngStream(self.seed, self.path + path)

    def uniform(self, size=None):
        return self.generator.random(size)

    def normal(self, size=None):
        return self.generator.standard_normal(size)

    def integers(self, low, high=None, size=None):
        return self.generator.integers(low, high, size)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed}, path={self.path})"


def derive_seed(seed: int, *path: int) -> int:
    """Stable 63-bit seed for a child task (e.g. one replicate)."""
    ss = np.random.SeedSequence(int(seed), spawn_key=tuple(int(x) for x in path))
    return int(ss.generate_state(1, np.uint64)[0] >> np.uint64(1))
