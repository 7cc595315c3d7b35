"""Dense tensors with tape-based reverse-mode differentiation.

Every primitive returns a new :class:`Tensor`. When gradients are enabled and
at least one operand requires them, the result records its parents and a
backward rule mapping the output gradient to one gradient per parent.
Node ids come from a global counter, so sorting reachable nodes by id is a
valid topological order for the reverse sweep.

Elementwise operands must have identical shapes; the only implicit
broadcast is against a scalar (Python number or 0-d tensor). Anything else
goes through :func:`broadcast_to`.
"""

import contextlib
import itertools
import warnings

import numpy as np
from scipy.special import expit

from .errors import ContractError, DimensionError, NonFiniteError

_ids = itertools.count()
_state = {"grad": True, "finite": "raise"}

FINITE_POLICIES = ("raise", "warn", "off")


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block."""
    prev = _state["grad"]
    _state["grad"] = False
    try:
        yield
    finally:
        _state["grad"] = prev


@contextlib.contextmanager
def finite_policy(mode):
    """Temporarily set how non-finite primitive outputs are handled."""
    prev = get_finite_policy()
    set_finite_policy(mode)
    try:
        yield
    finally:
        set_finite_policy(prev)


def set_finite_policy(mode):
    if mode not in FINITE_POLICIES:
        raise ValueError(f"finite policy must be one of {FINITE_POLICIES}, got {mode!r}")
    _state["finite"] = mode


def get_finite_policy():
    return _state["finite"]


def is_grad_enabled():
    return _state["grad"]


class Tensor:
    """A dense float array plus the bookkeeping needed to differentiate it."""

    __slots__ = ("data", "grad", "requires_grad", "id", "op", "parents", "backward_fn", "__weakref__")
    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None):
        arr = np.asarray(data, dtype=dtype)
        if arr.dtype not in (np.float32, np.float64):
            arr = arr.astype(np.float64)
        self.data = arr
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self.id = next(_ids)
        self.op = "leaf"
        self.parents = ()
        self.backward_fn = None

    # -- introspection -------------------------------------------------
    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def item(self):
        return float(self.data)

    def detach(self):
        return Tensor(self.data)

    def __len__(self):
        return self.data.shape[0]

    def __repr__(self):
        tag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}, dtype={self.dtype}, op={self.op}{tag})"

    def backward(self):
        return backward(self)

    # -- operators -----------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return add(neg(self), other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __truediv__(self, other):
        return div(self, other)

    def __rtruediv__(self, other):
        return mul(reciprocal(self), other)

    def __neg__(self):
        return neg(self)

    def __pow__(self, p):
        return power(self, p)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)

    def sum(self, axis=None, keepdims=False):
        return tsum(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)


def as_tensor(x, dtype=None):
    if isinstance(x, Tensor):
        return x
    return Tensor(x, dtype=dtype)


def _check_finite(data, op):
    mode = _state["finite"]
    if mode == "off":
        return
    if not np.isfinite(data).all():
        msg = f"non-finite values produced by {op}"
        if mode == "raise":
            raise NonFiniteError(msg)
        warnings.warn(msg, RuntimeWarning, stacklevel=3)


def _result(data, op, parents, backward_fn):
    out = Tensor.__new__(Tensor)
    out.data = data
    out.grad = None
    out.id = next(_ids)
    out.op = op
    _check_finite(data, op)
    if _state["grad"] and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out.parents = tuple(parents)
        out.backward_fn = backward_fn
    else:
        out.requires_grad = False
        out.parents = ()
        out.backward_fn = None
    return out


def backward(loss):
    """Reverse sweep from a 0-d ``loss``.

    Sets ``.grad`` on every node reachable from ``loss`` that requires a
    gradient and returns the same arrays keyed by node id. Gradients of a
    node used several times are summed. Repeated calls overwrite ``.grad``.
    """
    if not isinstance(loss, Tensor) or loss.ndim != 0:
        raise ContractError("backward() needs a 0-dimensional loss tensor")
    if not loss.requires_grad:
        raise ContractError("loss does not depend on any tensor that requires grad")
    nodes = {}
    stack = [loss]
    while stack:
        node = stack.pop()
        if node.id in nodes:
            continue
        nodes[node.id] = node
        stack.extend(p for p in node.parents if p.requires_grad)

    grads = {loss.id: np.ones_like(loss.data)}
    for nid in sorted(nodes, reverse=True):
        node = nodes[nid]
        g = grads[nid]
        node.grad = g
        if node.backward_fn is None:
            continue
        for parent, pg in zip(node.parents, node.backward_fn(g)):
            if pg is None or not parent.requires_grad:
                continue
            prev = grads.get(parent.id)
            grads[parent.id] = pg if prev is None else prev + pg
    return grads


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------

def _operand(x, like):
    """Return (tensor_or_None, scalar_or_None) after shape validation."""
    if isinstance(x, Tensor):
        if x.shape == like.shape or x.ndim == 0:
            return x, None
        raise DimensionError(f"elementwise operands have shapes {like.shape} and {x.shape}")
    if np.ndim(x) == 0:
        return None, float(x)
    arr = np.asarray(x)
    if arr.shape != like.shape:
        raise DimensionError(f"elementwise operands have shapes {like.shape} and {arr.shape}")
    return Tensor(arr.astype(like.dtype, copy=False)), None


def _reduce_to(g, tensor):
    if tensor.ndim == 0 and g.ndim != 0:
        return np.asarray(g.sum(), dtype=g.dtype)
    return g


def add(a, b):
    a = as_tensor(a)
    bt, bs = _operand(b, a)
    if bt is None:
        return _result(a.data + bs, "add", (a,), lambda g: (g,))
    if a.ndim == 0 and bt.ndim != 0:
        return add(bt, a)
    return _result(a.data + bt.data, "add", (a, bt), lambda g: (g, _reduce_to(g, bt)))


def sub(a, b):
    a = as_tensor(a)
    bt, bs = _operand(b, a)
    if bt is None:
        return _result(a.data - bs, "sub", (a,), lambda g: (g,))
    if a.ndim == 0 and bt.ndim != 0:
        return add(neg(bt), a)
    return _result(a.data - bt.data, "sub", (a, bt), lambda g: (g, -_reduce_to(g, bt)))


def mul(a, b):
    a = as_tensor(a)
    bt, bs = _operand(b, a)
    if bt is None:
        return _result(a.data * bs, "mul", (a,), lambda g: (g * bs,))
    if a.ndim == 0 and bt.ndim != 0:
        return mul(bt, a)
    ad, bd = a.data, bt.data
    return _result(ad * bd, "mul", (a, bt), lambda g: (g * bd, _reduce_to(g * ad, bt)))


def div(a, b):
    a = as_tensor(a)
    bt, bs = _operand(b, a)
    if bt is None:
        return mul(a, 1.0 / bs)
    if a.ndim == 0 and bt.ndim != 0:
        return mul(reciprocal(bt), a)
    ad, bd = a.data, bt.data
    out = ad / bd
    return _result(out, "div", (a, bt), lambda g: (g / bd, _reduce_to(-g * out / bd, bt)))


def neg(a):
    return _result(-a.data, "neg", (a,), lambda g: (-g,))


def reciprocal(a):
    out = 1.0 / a.data
    return _result(out, "reciprocal", (a,), lambda g: (-g * out * out,))


def power(a, p):
    if not np.isscalar(p):
        raise TypeError("power() takes a scalar exponent")
    ad = a.data
    return _result(ad ** p, "power", (a,), lambda g: (g * p * ad ** (p - 1),))


def exp(a):
    out = np.exp(a.data)
    return _result(out, "exp", (a,), lambda g: (g * out,))


def log(a):
    ad = a.data
    return _result(np.log(ad), "log", (a,), lambda g: (g / ad,))


def sigmoid(a):
    out = expit(a.data)
    return _result(out, "sigmoid", (a,), lambda g: (g * out * (1.0 - out),))


def tanh(a):
    out = np.tanh(a.data)
    return _result(out, "tanh", (a,), lambda g: (g * (1.0 - out * out),))


def softplus(a):
    """log(1 + exp(x)), computed without overflow."""
    ad = a.data
    return _result(np.logaddexp(0.0, ad), "softplus", (a,), lambda g: (g * expit(ad),))


# ---------------------------------------------------------------------------
# reductions and shape manipulation
# ---------------------------------------------------------------------------

def _norm_axes(axis, ndim):
    if axis is None:
        return tuple(range(ndim))
    if isinstance(axis, int):
        axis = (axis,)
    return tuple(sorted(a % ndim for a in axis))


def tsum(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    shape = a.shape

    def bwd(g):
        if not keepdims:
            g = np.expand_dims(g, axes)
        return (np.broadcast_to(g, shape),)

    return _result(np.asarray(a.data.sum(axis=axes, keepdims=keepdims)), "sum", (a,), bwd)


def mean(a, axis=None, keepdims=False):
    axes = _norm_axes(axis, a.ndim)
    count = int(np.prod([a.shape[i] for i in axes])) if axes else 1
    return mul(tsum(a, axes, keepdims), 1.0 / count)


def reshape(a, shape):
    old = a.shape
    try:
        out = a.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    return _result(out, "reshape", (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    if axes is None:
        axes = tuple(reversed(range(a.ndim)))
    inv = tuple(np.argsort(axes))
    return _result(a.data.transpose(axes), "transpose", (a,), lambda g: (g.transpose(inv),))


def broadcast_to(a, shape):
    """Explicit broadcast; the gradient sums over the expanded axes."""
    shape = tuple(shape)
    src = a.shape
    try:
        out = np.broadcast_to(a.data, shape)
    except ValueError as exc:
        raise DimensionError(str(exc)) from None
    lead = len(shape) - len(src)

    def bwd(g):
        axes = tuple(range(lead)) + tuple(
            lead + i for i, n in enumerate(src) if n == 1 and shape[lead + i] != 1
        )
        return (g.sum(axis=axes, keepdims=True).reshape(src),)

    return _result(out, "broadcast_to", (a,), bwd)


def _basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (slice, int, type(Ellipsis))) or i is None for i in items)


def getitem(a, idx):
    if not _basic_index(idx):
        raise TypeError("only basic slicing is differentiable")
    shape, dtype = a.shape, a.dtype

    def bwd(g):
        full = np.zeros(shape, dtype=dtype)
        full[idx] = g
        return (full,)

    return _result(a.data[idx], "getitem", (a,), bwd)


def concat(tensors, axis=1):
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise DimensionError("concat of an empty list")
    ref = tensors[0].shape
    ax = axis % len(ref)
    for t in tensors[1:]:
        if len(t.shape) != len(ref) or any(
            t.shape[i] != ref[i] for i in range(len(ref)) if i != ax
        ):
            raise DimensionError(f"cannot concatenate shapes {ref} and {t.shape} on axis {axis}")
    if len(tensors) == 1:
        return tensors[0]
    bounds = np.cumsum([t.shape[ax] for t in tensors])[:-1]

    def bwd(g):
        return tuple(np.split(g, bounds, axis=ax))

    return _result(np.concatenate([t.data for t in tensors], axis=ax), "concat", tensors, bwd)


def split(a, sections, axis=1):
    """Split into ``sections`` equal parts along ``axis``."""
    n = a.shape[axis]
    if n % sections:
        raise DimensionError(f"extent {n} is not divisible into {sections} groups")
    step = n // sections
    out = []
    for k in range(sections):
        idx = [slice(None)] * a.ndim
        idx[axis] = slice(k * step, (k + 1) * step)
        out.append(getitem(a, tuple(idx)))
    return out


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a, b):
    """Matrix product over the last two axes; leading axes must agree exactly."""
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2 or a.ndim != b.ndim or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul shapes {a.shape} and {b.shape} are incompatible")
    if a.shape[-1] != b.shape[-2]:
        raise DimensionError(f"matmul inner extents differ: {a.shape} @ {b.shape}")
    ad, bd = a.data, b.data

    def bwd(g):
        return g @ np.swapaxes(bd, -1, -2), np.swapaxes(ad, -1, -2) @ g

    return _result(ad @ bd, "matmul", (a, b), bwd)


def softmax(a, axis=-1):
    if not -a.ndim <= axis < a.ndim:
        raise DimensionError(f"axis {axis} out of range for shape {a.shape}")
    z = a.data - a.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    out = e / e.sum(axis=axis, keepdims=True)

    def bwd(g):
        return (out * (g - (g * out).sum(axis=axis, keepdims=True)),)

    return _result(out, "softmax", (a,), bwd)
