"""Forward-mode automatic differentiation with array-valued dual numbers.

A :class:`Dual` carries a value array of shape S and a tangent array of
shape (P,) + S, one tangent slot per free parameter coordinate. Arithmetic
propagates all P directional derivatives at once, so a single filter pass
yields the full gradient at O(P) overhead and no tape.

Model code is written against the module-level facade (exp, log, logistic,
stack, ...) which dispatches on whether any operand is a Dual; plain numpy
arrays take the fast path untouched.
"""

from __future__ import annotations

import numpy as np


def _pad_tan(tan: np.ndarray, val_ndim: int, out_ndim: int) -> np.ndarray:
    """Insert singleton axes after the tangent axis so trailing dims align."""
    if val_ndim == out_ndim:
        return tan
    shape = (tan.shape[0],) + (1,) * (out_ndim - val_ndim) + tan.shape[1:]
    return tan.reshape(shape)


class Dual:
    """Array of dual numbers: value plus P tangent components."""

    __slots__ = ("val", "tan")

    # opt out of numpy ufunc dispatch so ndarray <op> Dual defers to us
    __array_ufunc__ = None

    def __init__(self, val, tan):
        self.val = np.asarray(val, dtype=float)
        self.tan = np.asarray(tan, dtype=float)
        if self.tan.shape[1:] != self.val.shape:
            raise ValueError(
                f"tangent shape {self.tan.shape} does not extend value shape {self.val.shape}"
            )

    @classmethod
    def constant(cls, val, n_tangents: int) -> "Dual":
        val = np.asarray(val, dtype=float)
        return cls(val, np.zeros((n_tangents,) + val.shape))

    @classmethod
    def seed(cls, value: float, index: int, n_tangents: int) -> "Dual":
        tan = np.zeros(n_tangents)
        tan[index] = 1.0
        return cls(float(value), tan)

    @property
    def shape(self):
        return self.val.shape

    @property
    def ndim(self):
        return self.val.ndim

    @property
    def n_tangents(self):
        return self.tan.shape[0]

    # -- arithmetic ---------------------------------------------------------

    def _coerce(self, other):
        if isinstance(other, Dual):
            return other
        return None

    def __add__(self, other):
        o = self._coerce(other)
        if o is None:
            val = self.val + other
            tan = np.broadcast_to(
                _pad_tan(self.tan, self.val.ndim, val.ndim), (self.n_tangents,) + val.shape
            )
            return Dual(val, tan)
        val = self.val + o.val
        return Dual(
            val,
            _pad_tan(self.tan, self.val.ndim, val.ndim)
            + _pad_tan(o.tan, o.val.ndim, val.ndim),
        )

    __radd__ = __add__

    def __neg__(self):
        return Dual(-self.val, -self.tan)

    def __sub__(self, other):
        return self + (-other if isinstance(other, Dual) else -np.asarray(other))

    def __rsub__(self, other):
        return (-self) + other

    def __mul__(self, other):
        o = self._coerce(other)
        if o is None:
            other = np.asarray(other)
            val = self.val * other
            return Dual(val, _pad_tan(self.tan, self.val.ndim, val.ndim) * other)
        val = self.val * o.val
        return Dual(
            val,
            _pad_tan(self.tan, self.val.ndim, val.ndim) * o.val
            + _pad_tan(o.tan, o.val.ndim, val.ndim) * self.val,
        )

    __rmul__ = __mul__

    def __truediv__(self, other):
        o = self._coerce(other)
        if o is None:
            other = np.asarray(other)
            val = self.val / other
            return Dual(val, _pad_tan(self.tan, self.val.ndim, val.ndim) / other)
        val = self.val / o.val
        tan = (
            _pad_tan(self.tan, self.val.ndim, val.ndim)
            - val * _pad_tan(o.tan, o.val.ndim, val.ndim)
        ) / o.val
        return Dual(val, tan)

    def __rtruediv__(self, other):
        other = np.asarray(other)
        val = other / self.val
        tan = -val * _pad_tan(self.tan, self.val.ndim, val.ndim) / self.val
        return Dual(val, tan)

    def __pow__(self, k):
        if not np.isscalar(k):
            raise TypeError("dual powers support scalar exponents only")
        val = self.val**k
        return Dual(val, k * self.val ** (k - 1) * self.tan)

    # -- structure ----------------------------------------------------------

    def __getitem__(self, idx):
        if not isinstance(idx, tuple):
            idx = (idx,)
        return Dual(self.val[idx], self.tan[(slice(None),) + idx])

    def take(self, indices, axis: int):
        tax = axis if axis < 0 else axis + 1
        return Dual(self.val.take(indices, axis=axis), self.tan.take(indices, axis=tax))

    def sum(self, axis=None):
        if axis is None:
            return Dual(self.val.sum(), self.tan.reshape(self.n_tangents, -1).sum(axis=1))
        axes = (axis,) if np.isscalar(axis) else tuple(axis)
        vaxes = tuple(a if a >= 0 else a + self.val.ndim for a in axes)
        return Dual(self.val.sum(axis=vaxes), self.tan.sum(axis=tuple(a + 1 for a in vaxes)))

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], tuple):
            shape = shape[0]
        out = tuple(shape)
        return Dual(self.val.reshape(out), self.tan.reshape((self.n_tangents,) + out))

    def __repr__(self):
        return f"Dual(val={self.val!r}, tan shape {self.tan.shape})"

    # -- transcendental -----------------------------------------------------

    def exp(self):
        e = np.exp(self.val)
        return Dual(e, e * self.tan)

    def log(self):
        return Dual(np.log(self.val), self.tan / self.val)

    def sqrt(self):
        r = np.sqrt(self.val)
        return Dual(r, 0.5 * self.tan / r)


# ---------------------------------------------------------------------------
# facade: plain arrays pass straight to numpy


def exp(x):
    return x.exp() if isinstance(x, Dual) else np.exp(x)


def log(x):
    return x.log() if isinstance(x, Dual) else np.log(x)


def sqrt(x):
    return x.sqrt() if isinstance(x, Dual) else np.sqrt(x)


def logistic(x):
    if isinstance(x, Dual):
        s = 1.0 / (1.0 + np.exp(-x.val))
        return Dual(s, s * (1.0 - s) * x.tan)
    return 1.0 / (1.0 + np.exp(-x))


def value(x):
    return x.val if isinstance(x, Dual) else np.asarray(x, dtype=float)


def dot(a, b):
    """Inner product along the trailing axis (broadcast-multiply-sum)."""
    return (a * b).sum(-1) if isinstance(a, Dual) or isinstance(b, Dual) else np.asarray(
        a * b
    ).sum(-1)


def vecmat(x, A):
    """Rowwise vector-matrix product (n, i) x (n, i, j) -> (n, j).

    Tangent blocks ride along as extra rows of batched matmuls, so no
    (P, n, i, j) product intermediate is ever materialized."""
    xd, Ad = isinstance(x, Dual), isinstance(A, Dual)
    xv = x.val if xd else np.asarray(x)
    Av = A.val if Ad else np.asarray(A)
    if not (xd or Ad):
        return np.einsum("ni,nij->nj", xv, Av)
    P = (x if xd else A).n_tangents
    n = max(xv.shape[0], Av.shape[0])
    if xv.shape[0] != n:
        xv = np.broadcast_to(xv, (n,) + xv.shape[1:])
    if Av.shape[0] != n:
        Av = np.broadcast_to(Av, (n,) + Av.shape[1:])
    if xd:
        xt = x.tan
        if xt.shape[1] != n:
            xt = np.broadcast_to(xt, (P, n) + xt.shape[2:])
        stacked = np.concatenate((xv[:, None, :], np.moveaxis(xt, 0, 1)), axis=1)
        out = stacked @ Av                                      # (n, 1 + P, j)
        val = np.ascontiguousarray(out[:, 0])
        tan = np.moveaxis(out[:, 1:], 1, 0)
    else:
        val = np.einsum("ni,nij->nj", xv, Av)
        tan = None
    if Ad:
        At = A.tan
        if At.shape[1] != n:
            At = np.broadcast_to(At, (P, n) + At.shape[2:])
        i, j = At.shape[2], At.shape[3]
        flat = At.transpose(1, 2, 3, 0).reshape(n, i, j * P)
        side = (xv[:, None, :] @ flat).reshape(n, j, P).transpose(2, 0, 1)
        tan = side if tan is None else tan + side
    return Dual(val, np.ascontiguousarray(tan))


def stack(parts, axis: int = -1):
    """Stack values (and tangents) along a new axis; plain entries promote
    to constants when any part is a Dual."""
    duals = [p for p in parts if isinstance(p, Dual)]
    if not duals:
        arrs = [np.asarray(p, dtype=float) for p in parts]
        shape = np.broadcast_shapes(*[a.shape for a in arrs])
        return np.stack([np.broadcast_to(a, shape) for a in arrs], axis=axis)
    P = duals[0].n_tangents
    vals = [p.val if isinstance(p, Dual) else np.asarray(p, dtype=float) for p in parts]
    shape = np.broadcast_shapes(*[v.shape for v in vals])
    nd = len(shape) + 1
    ax = axis if axis >= 0 else axis + nd
    out_shape = shape[:ax] + (len(parts),) + shape[ax:]
    val = np.empty(out_shape)
    tan = np.empty((P,) + out_shape)
    idx: list = [slice(None)] * nd
    for m, (p, v) in enumerate(zip(parts, vals)):
        idx[ax] = m
        sel = tuple(idx)
        val[sel] = v
        if isinstance(p, Dual):
            tan[(slice(None),) + sel] = _pad_tan(p.tan, v.ndim, len(shape))
        else:
            tan[(slice(None),) + sel] = 0.0
    return Dual(val, tan)
