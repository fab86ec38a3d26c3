"""Array-level reverse-mode automatic differentiation.

A :class:`Var` wraps a float64 ``ndarray`` and records how it was produced.
Calling :func:`backward` on a scalar ``Var`` walks the recorded graph in
reverse topological order and accumulates gradients into every ``Var`` that
took part in the computation.

Only the handful of primitives needed to differentiate the CPFN training
objective are provided: affine maps (``@``, ``+``), elementwise arithmetic
with broadcasting, ``gelu``, ``tanh``, ``exp``, ``log``, integer powers,
reductions and reshaping.  Applying any other numpy ufunc to a ``Var``
raises :class:`UnsupportedPrimitive`.

The graph is rebuilt on every evaluation; nothing is cached between calls.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, NamedTuple, Sequence

import numpy as np
from scipy.special import erf as _scipy_erf

from .errors import NonFiniteValue

_INV_SQRT_2PI = 1.0 / math.sqrt(2.0 * math.pi)
_INV_SQRT_2 = 1.0 / math.sqrt(2.0)

try:  # torch's vectorized erf is ~10x faster than scipy's on one core
    import torch as _torch

    def _erf_inplace(a):
        _torch.special.erf(_torch.from_numpy(a), out=_torch.from_numpy(a))
        return a

    ERF_BACKEND = "torch"
except ImportError:  # pragma: no cover - exercised only without torch
    def _erf_inplace(a):
        return _scipy_erf(a, out=a)

    ERF_BACKEND = "scipy"


def normal_cdf(z):
    """Standard normal CDF via erf, as a new float64 array."""
    c = np.multiply(z, _INV_SQRT_2, dtype=np.float64)
    if c.ndim == 0:
        return 0.5 * (1.0 + math.erf(float(c)))
    c = np.ascontiguousarray(c)
    _erf_inplace(c)
    c += 1.0
    c *= 0.5
    return c


class UnsupportedPrimitive(TypeError):
    """Raised when a numpy operation without a derivative rule meets a Var."""


# ---------------------------------------------------------------------------
# Parameter containers
# ---------------------------------------------------------------------------


class Segment(NamedTuple):
    name: str
    offset: int
    shape: tuple

    @property
    def size(self) -> int:
        return int(np.prod(self.shape, dtype=np.int64))


@dataclass
class ParameterVector:
    """Flat float64 parameter storage with a named segment layout."""

    values: np.ndarray
    layout: tuple

    def __post_init__(self):
        self.values = np.ascontiguousarray(self.values, dtype=np.float64)
        self.layout = tuple(Segment(str(s[0]), int(s[1]), tuple(int(k) for k in s[2]))
                            for s in self.layout)
        total = sum(s.size for s in self.layout)
        if self.values.ndim != 1 or self.values.size != total:
            raise ValueError(f"parameter length {self.values.size} != layout total {total}")

    @classmethod
    def from_shapes(cls, shapes: Sequence[tuple]) -> "ParameterVector":
        layout, offset = [], 0
        for name, shape in shapes:
            seg = Segment(name, offset, tuple(shape))
            layout.append(seg)
            offset += seg.size
        return cls(np.zeros(offset), tuple(layout))

    def __len__(self):
        return self.values.size

    def names(self):
        return [s.name for s in self.layout]

    def segment(self, name: str) -> Segment:
        for s in self.layout:
            if s.name == name:
                return s
        raise KeyError(name)

    def __getitem__(self, name: str) -> np.ndarray:
        """Writable view of one named segment."""
        s = self.segment(name)
        return self.values[s.offset:s.offset + s.size].reshape(s.shape)

    def mask(self, names) -> np.ndarray:
        """Boolean mask over the flat vector covering the given segments."""
        m = np.zeros(self.values.size, dtype=bool)
        for name in names:
            s = self.segment(name)
            m[s.offset:s.offset + s.size] = True
        return m

    def unflatten(self, flat) -> dict:
        """Split ``flat`` (a Var or array laid out like ``values``) by segment."""
        return {s.name: flat[s.offset:s.offset + s.size].reshape(s.shape)
                for s in self.layout}

    def copy(self) -> "ParameterVector":
        return ParameterVector(self.values.copy(), self.layout)

    def with_values(self, values) -> "ParameterVector":
        return ParameterVector(np.array(values, dtype=np.float64), self.layout)

    def __eq__(self, other):
        if not isinstance(other, ParameterVector):
            return NotImplemented
        return self.layout == other.layout and np.array_equal(self.values, other.values)


@dataclass
class GradientResult:
    value: float
    gradient: np.ndarray


# ---------------------------------------------------------------------------
# Graph nodes
# ---------------------------------------------------------------------------


def _check(value, op):
    if not np.all(np.isfinite(value)):
        raise NonFiniteValue(f"non-finite value produced by {op}")
    return value


def _unbroadcast(grad, shape):
    if grad.shape == shape:
        return grad
    ndiff = grad.ndim - len(shape)
    if ndiff > 0:
        grad = grad.sum(axis=tuple(range(ndiff)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and grad.shape[i] != 1)
    if axes:
        grad = grad.sum(axis=axes, keepdims=True)
    return grad.reshape(shape)


def _val(x):
    return x.value if isinstance(x, Var) else x


class Var:
    __slots__ = ("value", "grad", "parents", "backward_fn", "op")

    def __init__(self, value, parents=(), backward_fn=None, op="leaf"):
        self.value = np.asarray(value, dtype=np.float64)
        self.grad = None
        self.parents = parents
        self.backward_fn = backward_fn
        self.op = op

    def __repr__(self):
        return f"Var(op={self.op}, shape={self.value.shape})"

    @property
    def shape(self):
        return self.value.shape

    @property
    def ndim(self):
        return self.value.ndim

    def __len__(self):
        return len(self.value)

    # numpy interop: route supported ufuncs to our primitives, refuse the rest
    def __array_ufunc__(self, ufunc, method, *inputs, **kwargs):
        if method != "__call__" or kwargs:
            raise UnsupportedPrimitive(f"{ufunc.__name__}.{method} is not differentiable here")
        fn = _UFUNCS.get(ufunc)
        if fn is None:
            raise UnsupportedPrimitive(f"no derivative rule for numpy.{ufunc.__name__}")
        return fn(*inputs)

    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(other) if isinstance(other, Var) else -np.asarray(other))

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        if isinstance(other, Var):
            return mul(self, power(other, -1))
        return mul(self, 1.0 / np.asarray(other, dtype=np.float64))

    def __rtruediv__(self, other):
        return mul(power(self, -1), other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, k):
        return power(self, k)

    def __matmul__(self, other):
        return matmul(self, other)

    def __rmatmul__(self, other):
        return matmul(other, self)

    def __getitem__(self, key):
        return getitem(self, key)

    @property
    def T(self):
        return transpose(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def sum(self, axis=None, keepdims=False):
        return vsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        n = self.value.size if axis is None else np.prod([self.value.shape[a] for a in np.atleast_1d(axis)])
        return vsum(self, axis, keepdims) * (1.0 / n)


# ---------------------------------------------------------------------------
# Primitives
# ---------------------------------------------------------------------------


def add(a, b):
    av, bv = _val(a), _val(b)
    out = av + bv
    ash, bsh = np.shape(av), np.shape(bv)
    parents = tuple(p for p in (a, b) if isinstance(p, Var))

    def backward(g):
        res = []
        if isinstance(a, Var):
            res.append(_unbroadcast(g, ash))
        if isinstance(b, Var):
            res.append(_unbroadcast(g, bsh))
        return res

    return Var(out, parents, backward, "add")


def mul(a, b):
    av, bv = _val(a), _val(b)
    out = av * bv
    parents = tuple(p for p in (a, b) if isinstance(p, Var))

    def backward(g):
        res = []
        if isinstance(a, Var):
            res.append(_unbroadcast(g * bv, np.shape(av)))
        if isinstance(b, Var):
            res.append(_unbroadcast(g * av, np.shape(bv)))
        return res

    return Var(out, parents, backward, "mul")


def neg(a):
    return Var(-a.value, (a,), lambda g: (-g,), "neg")


def power(a, k):
    if isinstance(k, Var):
        raise UnsupportedPrimitive("only constant exponents are supported")
    k = float(k)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        out = _check(av ** k, "power")

    def backward(g):
        if k == 2.0:
            return (2.0 * av * g,)
        return (k * av ** (k - 1.0) * g,)

    return Var(out, (a,), backward, "power")


def square(a):
    return power(a, 2)


def matmul(a, b):
    av, bv = _val(a), _val(b)
    out = av @ bv
    parents = tuple(p for p in (a, b) if isinstance(p, Var))

    def backward(g):
        res = []
        if isinstance(a, Var):
            if bv.ndim == 1:
                ga = np.multiply.outer(g, bv)
            elif av.ndim == 1:
                ga = bv @ g
            else:
                ga = g @ np.swapaxes(bv, -1, -2)
            res.append(_unbroadcast(ga, av.shape))
        if isinstance(b, Var):
            if av.ndim == 1:
                gb = np.multiply.outer(av, g)
            elif bv.ndim == 1:
                gb = np.swapaxes(av, -1, -2) @ g
                gb = gb.reshape(-1, bv.shape[0]).sum(axis=0) if gb.ndim > 1 else gb
            else:
                gb = np.swapaxes(av, -1, -2) @ g
            res.append(_unbroadcast(gb, bv.shape))
        return res

    return Var(out, parents, backward, "matmul")


def affine(h, W, b):
    """h @ W.T + b for a batch of row vectors ``h`` (N, in), W (out, in), b (out,)."""
    hv, Wv, bv = _val(h), _val(W), _val(b)
    out = hv @ Wv.T
    out += bv
    parents = tuple(p for p in (h, W, b) if isinstance(p, Var))

    def backward(g):
        res = []
        if isinstance(h, Var):
            res.append(g @ Wv)
        if isinstance(W, Var):
            res.append(g.T @ hv)
        if isinstance(b, Var):
            res.append(g.sum(axis=0))
        return res

    if not parents:
        return out
    return Var(out, parents, backward, "affine")


def rank_contract(phi, psi):
    """out[i, j, c] = sum_k phi[i, k, c] * psi[j, k, c] as batched matmuls.

    ``phi`` (n, r, q) and ``psi`` (R, r, q) give (n, R, q).
    """
    pv, sv = _val(phi), _val(psi)
    P = np.ascontiguousarray(pv.transpose(2, 0, 1))      # (q, n, r)
    S = np.ascontiguousarray(sv.transpose(2, 1, 0))      # (q, r, R)
    out = (P @ S).transpose(1, 2, 0)
    parents = tuple(p for p in (phi, psi) if isinstance(p, Var))

    def backward(g):
        G = np.ascontiguousarray(g.transpose(2, 0, 1))   # (q, n, R)
        res = []
        if isinstance(phi, Var):
            res.append((G @ S.transpose(0, 2, 1)).transpose(1, 2, 0))
        if isinstance(psi, Var):
            res.append((P.transpose(0, 2, 1) @ G).transpose(2, 1, 0))
        return res

    if not parents:
        return out
    return Var(out, parents, backward, "rank_contract")


def exp(a):
    if not isinstance(a, Var):
        return np.exp(a)
    _check(a.value, "exp input")
    with np.errstate(over="ignore"):
        out = _check(np.exp(a.value), "exp")
    return Var(out, (a,), lambda g: (g * out,), "exp")


def log(a):
    if not isinstance(a, Var):
        return np.log(a)
    av = a.value
    with np.errstate(divide="ignore", invalid="ignore"):
        out = _check(np.log(av), "log")
    return Var(out, (a,), lambda g: (g / av,), "log")


def tanh(a):
    if not isinstance(a, Var):
        return np.tanh(a)
    out = np.tanh(a.value)
    return Var(out, (a,), lambda g: (g * (1.0 - out * out),), "tanh")


def gelu(a):
    """z * Phi(z) with the exact normal CDF (no tanh approximation)."""
    if not isinstance(a, Var):
        z = np.asarray(a, dtype=np.float64)
        return z * normal_cdf(z)
    z = a.value
    cdf = normal_cdf(z)
    out = z * cdf

    def backward(g):
        t = np.array(z * z, dtype=np.float64, ndmin=1)   # ndmin: in-place ops need an array
        t *= -0.5
        np.exp(t, out=t)
        t *= z
        t *= _INV_SQRT_2PI
        t += cdf
        t *= g
        return (t.reshape(np.shape(z)),)

    return Var(out, (a,), backward, "gelu")


def vsum(a, axis=None, keepdims=False):
    if not isinstance(a, Var):
        return np.sum(a, axis=axis, keepdims=keepdims)
    shape = a.value.shape
    out = a.value.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape),)

    return Var(out, (a,), backward, "sum")


def reshape(a, shape):
    orig = a.value.shape
    return Var(a.value.reshape(shape), (a,), lambda g: (g.reshape(orig),), "reshape")


def transpose(a):
    return Var(a.value.T, (a,), lambda g: (g.T,), "transpose")


def getitem(a, key):
    shape = a.value.shape
    basic = isinstance(key, slice) or (isinstance(key, tuple) and all(isinstance(k, slice) for k in key))

    def backward(g):
        full = np.zeros(shape)
        if basic:  # basic slicing never repeats an index
            full[key] = g
        else:
            np.add.at(full, key, g)
        return (full,)

    return Var(a.value[key], (a,), backward, "getitem")


_UFUNCS = {
    np.add: add,
    np.subtract: lambda a, b: add(a, -b if not isinstance(b, Var) else neg(b)),
    np.multiply: mul,
    np.true_divide: lambda a, b: a / b if isinstance(a, Var) else Var.__rtruediv__(b, a),
    np.matmul: matmul,
    np.negative: neg,
    np.exp: exp,
    np.log: log,
    np.tanh: tanh,
    np.square: square,
    np.power: lambda a, k: power(a, _val(k)),
}


# ---------------------------------------------------------------------------
# Driver
# ---------------------------------------------------------------------------


def backward(root: Var) -> None:
    """Accumulate d(root)/d(node) into ``node.grad`` for every ancestor."""
    if root.value.size != 1:
        raise ValueError("backward() needs a scalar output")
    order, seen, stack = [], set(), [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node.parents:
            if id(p) not in seen:
                stack.append((p, False))
    root.grad = np.ones_like(root.value)
    for node in reversed(order):
        if node.backward_fn is None or node.grad is None:
            continue
        for parent, g in zip(node.parents, node.backward_fn(node.grad)):
            parent.grad = g if parent.grad is None else parent.grad + g
        if node.parents:
            node.grad = None


def evaluate_with_gradient(program: Callable, params) -> GradientResult:
    """Run ``program(theta)`` on a fresh graph and return value and gradient.

    ``params`` is a :class:`ParameterVector` (or a plain 1-D array); the
    program receives a ``Var`` over the flat values and must return a scalar.
    """
    values = params.values if isinstance(params, ParameterVector) else np.asarray(params, float)
    theta = Var(values.copy())
    out = program(theta)
    if not isinstance(out, Var):
        value = float(_check(np.asarray(out, dtype=np.float64), "program"))
        return GradientResult(value, np.zeros_like(values))
    _check(out.value, "program output")
    backward(out)
    grad = theta.grad if theta.grad is not None else np.zeros_like(values)
    _check(grad, "gradient")
    return GradientResult(float(out.value), np.array(grad, dtype=np.float64).reshape(values.shape))


def evaluate(program: Callable, values) -> float:
    out = program(Var(np.array(values, dtype=np.float64)))
    return float(_check(np.asarray(_val(out), dtype=np.float64), "program"))


def finite_difference_gradient(program: Callable, params, step: float = 1e-5, order: int = 2) -> np.ndarray:
    """Central-difference gradient, one coordinate at a time.

    ``order=2`` uses the two-point stencil, ``order=4`` the four-point one
    (truncation error O(step^4), so a larger step keeps round-off small).
    """
    if not step > 0:
        raise ValueError("step must be positive")
    if order not in (2, 4):
        raise ValueError("order must be 2 or 4")
    values = params.values if isinstance(params, ParameterVector) else np.asarray(params, float)
    grad = np.empty(values.size)
    work = values.astype(np.float64).copy()
    offsets = (1.0, -1.0) if order == 2 else (2.0, 1.0, -1.0, -2.0)
    weights = (0.5, -0.5) if order == 2 else (-1.0 / 12, 8.0 / 12, -8.0 / 12, 1.0 / 12)
    for i in range(values.size):
        orig = work[i]
        acc = 0.0
        for k, w in zip(offsets, weights):
            work[i] = orig + k * step
            acc += w * evaluate(program, work)
        work[i] = orig
        grad[i] = acc / step
    return grad.reshape(values.shape)
