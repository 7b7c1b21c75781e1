"""Reverse-mode automatic differentiation over dense numpy arrays.

Covers exactly the operations the reconstruction model needs. Each op
records its inputs and a backward closure on the produced tensor; those
records form the computation tape, and ``backward`` replays it in reverse
topological order, accumulating gradients into every ``requires_grad`` leaf
exactly once per call (so a second ``backward`` without ``zero_grad``
doubles leaf gradients).

float32 is the working precision; build float64 graphs for gradient
verification against ``finite_difference_gradient``.
"""

from __future__ import annotations

import numpy as np

from . import backend
from .errors import MaskError, NumericError, ShapeError

LAYER_NORM_EPS = 1e-5
_SQRT_GUARD = 1e-8

_grad_enabled = True
_finite_checks = False


class no_grad:
    """Context manager that suspends tape recording."""

    def __enter__(self):
        global _grad_enabled
        self._saved = _grad_enabled
        _grad_enabled = False
        return self

    def __exit__(self, *exc):
        global _grad_enabled
        _grad_enabled = self._saved
        return False


def set_finite_checks(enabled):
    """Verify every op output is finite (slow; for debugging/tests)."""
    global _finite_checks
    _finite_checks = bool(enabled)


class OpRecord:
    """One executed op: its inputs and the matching backward closure."""

    __slots__ = ("name", "inputs", "backward")

    def __init__(self, name, inputs, backward):
        self.name = name
        self.inputs = inputs
        self.backward = backward


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op")

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float32)
        if arr.ndim > 0 and not arr.flags.c_contiguous:
            arr = np.ascontiguousarray(arr)
        self.data = arr
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._op = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    @property
    def is_leaf(self):
        return self._op is None

    def item(self):
        return float(self.data)

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def numpy(self):
        return self.data

    def __repr__(self):
        return f"Tensor(shape={self.shape}, dtype={self.dtype.name}, requires_grad={self.requires_grad})"

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, other)

    def __rmul__(self, other):
        return scale(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        if axis is None:
            return sum_all(self)
        return sum_axis(self, axis, keepdims=keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _same_dtype(*ts):
    dt = ts[0].dtype
    for t in ts[1:]:
        if t.dtype != dt:
            raise ShapeError(f"mixed dtypes in op: {[t.dtype.name for t in ts]}")
    return dt


def _result(data, name, inputs, backward_fn):
    out = Tensor(data)
    if _finite_checks and not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite values produced by {name}")
    if _grad_enabled and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        out._op = OpRecord(name, inputs, backward_fn)
    return out


# ---------------------------------------------------------------------------
# elementwise and layout ops

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"add: shapes {a.shape} and {b.shape} differ")
    return _result(a.data + b.data, "add", (a, b), lambda g: (g, g))


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"sub: shapes {a.shape} and {b.shape} differ")
    return _result(a.data - b.data, "sub", (a, b), lambda g: (g, -g))


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"mul: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _result(ad * bd, "mul", (a, b), lambda g: (g * bd, g * ad))


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"div: shapes {a.shape} and {b.shape} differ")
    ad, bd = a.data, b.data
    return _result(ad / bd, "div", (a, b),
                   lambda g: (g / bd, -g * ad / (bd * bd)))


def scale(a, c):
    a = as_tensor(a)
    c = float(c)
    return _result(a.data * a.dtype.type(c), "scale", (a,), lambda g: (g * a.dtype.type(c),))


def add_const(a, c):
    a = as_tensor(a)
    return _result(a.data + a.dtype.type(float(c)), "add_const", (a,), lambda g: (g,))


def div_const(a, c):
    """True division by a scalar (exact where representable, unlike
    multiplying by a rounded reciprocal)."""
    a = as_tensor(a)
    c = a.dtype.type(float(c))
    return _result(a.data / c, "div_const", (a,), lambda g: (g / c,))


def reshape(a, shape):
    a = as_tensor(a)
    old = a.shape
    return _result(a.data.reshape(shape), "reshape", (a,),
                   lambda g: (g.reshape(old),))


def transpose(a):
    a = as_tensor(a)
    if a.ndim != 2:
        raise ShapeError(f"transpose expects a 2-D tensor, got shape {a.shape}")
    return _result(a.data.T.copy(), "transpose", (a,), lambda g: (g.T,))


def slice_cols(a, lo, hi):
    a = as_tensor(a)
    if a.ndim != 2 or not (0 <= lo < hi <= a.shape[1]):
        raise ShapeError(f"slice_cols[{lo}:{hi}] invalid for shape {a.shape}")
    n, c = a.shape

    def bwd(g):
        full = np.zeros((n, c), dtype=g.dtype)
        full[:, lo:hi] = g
        return (full,)

    return _result(a.data[:, lo:hi].copy(), "slice_cols", (a,), bwd)


def concat_cols(parts):
    parts = [as_tensor(p) for p in parts]
    _same_dtype(*parts)
    widths = [p.shape[1] for p in parts]
    splits = np.cumsum(widths)[:-1]

    def bwd(g):
        return tuple(np.ascontiguousarray(piece) for piece in np.split(g, splits, axis=1))

    return _result(np.concatenate([p.data for p in parts], axis=1),
                   "concat_cols", tuple(parts), bwd)


# ---------------------------------------------------------------------------
# reductions

def sum_all(a):
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        return (np.broadcast_to(g, shape).astype(a.dtype, copy=True),)

    return _result(a.data.sum(dtype=a.dtype), "sum_all", (a,), bwd)


def sum_axis(a, axis, keepdims=False):
    a = as_tensor(a)
    shape = a.shape

    def bwd(g):
        gg = g if keepdims else np.expand_dims(g, axis)
        return (np.broadcast_to(gg, shape).astype(a.dtype, copy=True),)

    return _result(a.data.sum(axis=axis, keepdims=keepdims, dtype=a.dtype),
                   "sum_axis", (a,), bwd)


def mean_all(a):
    a = as_tensor(a)
    n = a.data.size
    return scale(sum_all(a), 1.0 / n)


# ---------------------------------------------------------------------------
# nonlinear elementwise

def sqrt(a):
    a = as_tensor(a)
    out = np.sqrt(a.data)
    guard = a.dtype.type(_SQRT_GUARD)

    def bwd(g):
        # guarded so a zero-length vector does not blow up the tape
        return (g * 0.5 / np.maximum(out, guard),)

    return _result(out, "sqrt", (a,), bwd)


def maximum_const(a, c):
    a = as_tensor(a)
    c = a.dtype.type(float(c))
    ad = a.data
    return _result(np.maximum(ad, c), "maximum_const", (a,),
                   lambda g: (g * (ad > c),))


def gelu(a):
    a = as_tensor(a)
    ad = a.data
    return _result(backend.gelu_fwd(ad), "gelu", (a,),
                   lambda g: (backend.gelu_bwd(ad, g),))


# ---------------------------------------------------------------------------
# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _same_dtype(a, b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    ad, bd = a.data, b.data
    return _result(ad @ bd, "matmul", (a, b),
                   lambda g: (g @ bd.T, ad.T @ g))


def linear(x, weight, bias=None):
    """x @ weight.T + bias with x:(N,Cin), weight:(Cout,Cin), bias:(Cout,)."""
    x, weight = as_tensor(x), as_tensor(weight)
    if x.ndim != 2 or weight.ndim != 2 or x.shape[1] != weight.shape[1]:
        raise ShapeError(f"linear: input {x.shape} incompatible with weight {weight.shape}")
    xd, wd = x.data, weight.data
    out = xd @ wd.T
    if bias is None:
        return _result(out, "linear", (x, weight),
                       lambda g: (g @ wd, g.T @ xd))
    bias = as_tensor(bias)
    _same_dtype(x, weight, bias)
    if bias.shape != (weight.shape[0],):
        raise ShapeError(f"linear: bias {bias.shape} does not match weight {weight.shape}")
    return _result(out + bias.data, "linear", (x, weight, bias),
                   lambda g: (g @ wd, g.T @ xd, g.sum(axis=0)))


def layer_norm(x, gain, bias, eps=LAYER_NORM_EPS):
    """Row-wise layer norm over the feature axis of x:(N,C)."""
    x, gain, bias = as_tensor(x), as_tensor(gain), as_tensor(bias)
    _same_dtype(x, gain, bias)
    if x.ndim != 2 or x.shape[1] < 2:
        raise ShapeError(f"layer_norm needs (N,C) with C >= 2, got {x.shape}")
    if gain.shape != (x.shape[1],) or bias.shape != (x.shape[1],):
        raise ShapeError(f"layer_norm: params {gain.shape}/{bias.shape} do not match input {x.shape}")
    out, xhat, ivar = backend.layer_norm_fwd(x.data, gain.data, bias.data, eps)
    gd = gain.data

    def bwd(g):
        return backend.layer_norm_bwd(g, xhat, ivar, gd)

    return _result(out, "layer_norm", (x, gain, bias), bwd)


def masked_softmax(logits, mask=None):
    """Row softmax with an additive block mask.

    `mask` is None, a boolean (N,N) array marking blocked positions, or any
    object with a `.blocked` boolean array attribute. Blocked positions are
    exactly zero in the output; a fully blocked row is an error.
    """
    logits = as_tensor(logits)
    if logits.ndim != 2:
        raise ShapeError(f"masked_softmax expects 2-D logits, got {logits.shape}")
    blocked = None
    if mask is not None:
        blocked = mask if isinstance(mask, np.ndarray) else mask.blocked
        if blocked.shape != logits.shape:
            raise ShapeError(f"mask {blocked.shape} does not match logits {logits.shape}")
        full_rows = np.flatnonzero(blocked.all(axis=1))
        if full_rows.size:
            raise MaskError(f"degenerate mask row(s) {full_rows[:8].tolist()}: "
                            "every position blocked")
    p = backend.masked_softmax_fwd(logits.data, blocked)

    def bwd(g):
        return (backend.masked_softmax_bwd(p, g, blocked),)

    return _result(p, "masked_softmax", (logits,), bwd)


# ---------------------------------------------------------------------------
# backward pass

def backward(loss):
    """Populate `.grad` on every requires_grad leaf reachable from `loss`."""
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.shape != ():
        raise ShapeError(f"backward requires a scalar loss, got shape {loss.shape}")

    # reverse topological order, iteratively (graphs can be deep)
    order = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        if node._op is not None:
            for parent in node._op.inputs:
                if id(parent) not in seen and parent.requires_grad:
                    stack.append((parent, False))

    adjoint = {id(loss): (loss, np.ones((), dtype=loss.dtype))}
    for node in reversed(order):
        entry = adjoint.get(id(node))
        if entry is None or node._op is None:
            continue
        g = entry[1]
        grads = node._op.backward(g)
        for parent, pg in zip(node._op.inputs, grads):
            if pg is None or not parent.requires_grad:
                continue
            prev = adjoint.get(id(parent))
            adjoint[id(parent)] = (parent, pg if prev is None else prev[1] + pg)

    for node, g in adjoint.values():
        if node.is_leaf and node.requires_grad:
            g = np.asarray(g, dtype=node.dtype).reshape(node.shape)
            node.grad = g.copy() if node.grad is None else node.grad + g


def finite_difference_gradient(f, x, h=1e-5):
    """Central-difference gradient of scalar f at x, coordinate by coordinate.

    Use float64 tensors; float32 has too little headroom for the quotient.
    """
    x = as_tensor(x)
    base = x.data.astype(np.float64, copy=True)
    grad = np.zeros_like(base)
    flat = base.reshape(-1)
    gflat = grad.reshape(-1)

    def eval_at(values):
        with no_grad():
            out = f(Tensor(values.reshape(base.shape), dtype=np.float64))
        return out.item() if isinstance(out, Tensor) else float(out)

    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = eval_at(flat)
        flat[i] = orig - h
        down = eval_at(flat)
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad
