"""A small dense tensor with tape-based reverse-mode differentiation.

Every differentiable operation records a :class:`Node` carrying a global
sequence number. :func:`backward` collects the nodes reachable from a scalar
loss and replays their backward rules in exact reverse recording order.

Tensors default to float32. ``with default_dtype(np.float64):`` switches
newly created tensors to the 64-bit shadow mode used by gradient checks;
operations keep whatever dtype their inputs carry.
"""
from __future__ import annotations

import contextlib
import itertools
import threading

import numpy as np

from . import kernels


class DimensionError(ValueError):
    """Operand shapes are incompatible."""


class ArgumentError(ValueError):
    """An argument is outside its valid range."""


class GraphError(RuntimeError):
    """Misuse of the recorded graph (e.g. a second backward pass)."""


_state = threading.local()
_seq = itertools.count()


def _dtype():
    return getattr(_state, "dtype", np.float32)


def _grad_enabled():
    return getattr(_state, "grad_enabled", True)


@contextlib.contextmanager
def default_dtype(dtype):
    prev = _dtype()
    _state.dtype = np.dtype(dtype).type
    try:
        yield
    finally:
        _state.dtype = prev


@contextlib.contextmanager
def no_grad():
    prev = _grad_enabled()
    _state.grad_enabled = False
    try:
        yield
    finally:
        _state.grad_enabled = prev


class Node:
    __slots__ = ("seq", "op", "inputs", "needs", "output", "backward_fn", "consumed")

    def __init__(self, op, inputs, backward_fn):
        self.seq = next(_seq)
        self.op = op
        self.inputs = inputs
        # requires_grad as seen at record time; later toggling does not leak in
        self.needs = tuple(t.requires_grad for t in inputs)
        self.output = None
        self.backward_fn = backward_fn
        self.consumed = False


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_node", "name", "__weakref__")

    __array_priority__ = 100

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        arr = np.asarray(data)
        want = dtype if dtype is not None else _dtype()
        if arr.dtype != want:
            arr = arr.astype(want)
        self.data = np.ascontiguousarray(arr)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._node = None
        self.name = name

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
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data

    def item(self):
        if self.data.size != 1:
            raise ArgumentError(f"item() needs a single-element tensor, got shape {list(self.shape)}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor(self.data, dtype=self.data.dtype)

    def zero_grad(self):
        self.grad = None

    def backward(self):
        backward(self)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={list(self.shape)}, dtype={self.dtype}{flag})"

    def __add__(self, other):
        return add(self, _lift(other, self))

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, _lift(other, self))

    def __rsub__(self, other):
        return sub(_lift(other, self), self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return index(self, idx)

    def sum(self):
        return sum_all(self)

    def mean(self):
        return mean_all(self)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    @property
    def T(self):
        return transpose(self)


def _lift(x, like):
    if isinstance(x, Tensor):
        return x
    return Tensor(np.full(like.shape, x, dtype=like.dtype), dtype=like.dtype)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _record(op, data, inputs, backward_fn):
    needs = _grad_enabled() and any(t.requires_grad for t in inputs)
    out = Tensor(data, dtype=data.dtype)
    if needs:
        out.requires_grad = True
        node = Node(op, inputs, backward_fn)
        node.output = out
        out._node = node
    return out


def _same_shape(op, a, b):
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shapes {list(a.shape)} and {list(b.shape)} differ")


# -- backward -----------------------------------------------------------------


class Graph:
    """Recorded operations reachable from an output, in recording order."""

    def __init__(self, nodes):
        self.nodes = nodes

    @classmethod
    def from_output(cls, out):
        seen = {}
        stack = [out]
        while stack:
            t = stack.pop()
            node = t._node
            if node is None or id(node) in seen:
                continue
            seen[id(node)] = node
            stack.extend(node.inputs)
        return cls(sorted(seen.values(), key=lambda n: n.seq))

    def __len__(self):
        return len(self.nodes)

    def ops(self):
        return [n.op for n in self.nodes]


def backward(loss):
    """Populate ``grad`` on every tensor reachable from ``loss`` that requires it.

    Raises GraphError when the graph was already consumed by an earlier call
    or when a leaf still holds a gradient from a previous pass (no silent
    accumulation; call ``zero_grad`` first).
    """
    if loss.data.size != 1 or loss.ndim > 1:
        raise ArgumentError(f"backward needs a scalar loss, got shape {list(loss.shape)}")
    if not loss.requires_grad:
        raise GraphError("loss does not depend on any tensor that requires grad")
    graph = Graph.from_output(loss)
    for node in graph.nodes:
        if node.consumed:
            raise GraphError(f"graph already consumed by a previous backward ({node.op})")
    grads = {id(loss): np.ones_like(loss.data)}
    leaves = {}
    for node in reversed(graph.nodes):
        out = node.output
        g = grads.pop(id(out), None)
        if g is None:
            g = np.zeros_like(out.data)
        out.grad = g
        in_grads = node.backward_fn(g)
        for t, need, gi in zip(node.inputs, node.needs, in_grads):
            if gi is None or not need:
                continue
            if t._node is None:
                leaves[id(t)] = t
            key = id(t)
            if key in grads:
                grads[key] = grads[key] + gi
            else:
                grads[key] = gi
        node.consumed = True
        node.backward_fn = None
    for key, t in leaves.items():
        if t.grad is not None:
            raise GraphError(f"leaf {t.name or t!r} already has a gradient; call zero_grad()")
        g = grads[key]
        t.grad = np.ascontiguousarray(g, dtype=t.dtype) if g.dtype != t.dtype else g


def zero_grad(tensors):
    for t in tensors:
        t.grad = None


# -- elementwise ----------------------------------------------------------------


def add(a, b):
    _same_shape("add", a, b)
    return _record("add", a.data + b.data, (a, b), lambda g: (g, g))


def sub(a, b):
    _same_shape("sub", a, b)
    return _record("sub", a.data - b.data, (a, b), lambda g: (g, -g))


def mul(a, b):
    _same_shape("mul", a, b)
    ad, bd = a.data, b.data
    return _record("mul", ad * bd, (a, b), lambda g: (g * bd, g * ad))


def scale(a, c):
    c = a.dtype.type(c)
    return _record("scale", a.data * c, (a,), lambda g: (g * c,))


def sigmoid(a):
    # split by sign so exp never overflows
    x = a.data
    e = np.exp(-np.abs(x))
    y = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _record("sigmoid", y, (a,), lambda g: (g * y * (1 - y),))


def tanh(a):
    y = np.tanh(a.data)
    return _record("tanh", y, (a,), lambda g: (g * (1 - y * y),))


def relu(a):
    mask = a.data > 0
    return _record("relu", a.data * mask, (a,), lambda g: (g * mask,))


def leaky_relu(a, slope=0.2):
    x = a.data
    factor = np.where(x > 0, 1, slope).astype(x.dtype)
    return _record("leaky_relu", x * factor, (a,), lambda g: (g * factor,))


def absolute(a):
    s = np.sign(a.data)
    return _record("abs", np.abs(a.data), (a,), lambda g: (g * s,))


def softplus(a):
    x = a.data
    y = np.logaddexp(0, x).astype(x.dtype, copy=False)
    e = np.exp(-np.abs(x))
    sig = np.where(x >= 0, 1 / (1 + e), e / (1 + e)).astype(x.dtype, copy=False)
    return _record("softplus", y, (a,), lambda g: (g * sig,))


def square(a):
    x = a.data
    return _record("square", x * x, (a,), lambda g: (2 * g * x,))


# -- reductions and shape ------------------------------------------------------------


def sum_all(a):
    shape = a.shape
    y = np.asarray(a.data.sum(), dtype=a.dtype)
    return _record("sum", y, (a,), lambda g: (np.full(shape, g, dtype=g.dtype),))


def mean_all(a):
    shape, n = a.shape, a.size
    y = np.asarray(a.data.mean(), dtype=a.dtype)
    return _record("mean", y, (a,), lambda g: (np.full(shape, g / n, dtype=g.dtype),))


def reshape(a, shape):
    old = a.shape
    y = a.data.reshape(shape)
    return _record("reshape", y, (a,), lambda g: (g.reshape(old),))


def transpose(a, axes=None):
    """Permute axes; by default swap the last two."""
    if axes is None:
        axes = list(range(a.ndim))
        axes[-2], axes[-1] = axes[-1], axes[-2]
    axes = tuple(axes)
    inv = tuple(np.argsort(axes))
    y = np.ascontiguousarray(a.data.transpose(axes))
    return _record("transpose", y, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def index(a, idx):
    """Basic (slice/integer) indexing."""
    shape = a.shape
    y = np.ascontiguousarray(a.data[idx])

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        full[idx] = g
        return (full,)

    return _record("index", y, (a,), bw)


def concat(tensors, axis=1):
    tensors = list(tensors)
    ref = tensors[0].shape
    for t in tensors[1:]:
        if t.ndim != len(ref) or any(
            s != r for i, (s, r) in enumerate(zip(t.shape, ref)) if i != axis % len(ref)
        ):
            raise DimensionError(f"concat: incompatible shapes {list(ref)} and {list(t.shape)}")
    sizes = [t.shape[axis] for t in tensors]
    bounds = np.cumsum(sizes)[:-1]
    y = np.concatenate([t.data for t in tensors], axis=axis)
    return _record("concat", y, tuple(tensors), lambda g: tuple(np.split(g, bounds, axis=axis)))


def split(a, sections, axis=1):
    """Split into ``sections`` equal parts along ``axis``."""
    if a.shape[axis] % sections:
        raise DimensionError(f"split: axis {axis} of size {a.shape[axis]} not divisible by {sections}")
    parts = np.split(a.data, sections, axis=axis)
    outs = []
    for i, part in enumerate(parts):
        outs.append(_record("split", np.ascontiguousarray(part), (a,), _split_bw(a, sections, axis, i)))
    return outs


def _split_bw(a, sections, axis, i):
    shape, size = a.shape, a.shape[axis] // sections

    def bw(g):
        full = np.zeros(shape, dtype=g.dtype)
        sl = [slice(None)] * len(shape)
        sl[axis] = slice(i * size, (i + 1) * size)
        full[tuple(sl)] = g
        return (full,)

    return bw


def matmul(a, b):
    """Matrix product of the last two axes (leading axes must agree)."""
    if a.ndim < 2 or b.ndim < 2 or a.shape[-1] != b.shape[-2] or a.shape[:-2] != b.shape[:-2]:
        raise DimensionError(f"matmul: cannot multiply {list(a.shape)} by {list(b.shape)}")
    ad, bd = a.data, b.data
    y = ad @ bd
    need_a, need_b = a.requires_grad, b.requires_grad

    def bw(g):
        ga = g @ np.swapaxes(bd, -1, -2) if need_a else None
        gb = np.swapaxes(ad, -1, -2) @ g if need_b else None
        return ga, gb

    return _record("matmul", y, (a, b), bw)


# -- convolution ----------------------------------------------------------------------


def conv_output_size(size, k, stride, padding):
    """floor((size + 2*padding - k) / stride) + 1, or None when the window does not fit."""
    span = size + 2 * padding - k
    if span < 0:
        return None
    return span // stride + 1


def conv2d(x, w, b=None, stride=1, padding=0):
    """2-D cross-correlation of ``x[N,C,H,W]`` with ``w[F,C,k,k]`` plus bias."""
    if x.ndim != 4 or w.ndim != 4:
        raise DimensionError(f"conv2d: expected 4-D input and kernel, got {list(x.shape)}, {list(w.shape)}")
    n, c, h, wd = x.shape
    f, ck, k, k2 = w.shape
    if ck != c:
        raise DimensionError(f"conv2d: input has {c} channels, kernel expects {ck}")
    if k != k2 or k % 2 == 0:
        raise ArgumentError(f"conv2d: kernel must be square with odd size, got {k}x{k2}")
    if stride < 1 or padding < 0:
        raise ArgumentError(f"conv2d: invalid stride={stride} / padding={padding}")
    if b is not None and b.shape != (f,):
        raise DimensionError(f"conv2d: bias shape {list(b.shape)} does not match {f} filters")
    ho = conv_output_size(h, k, stride, padding)
    wo = conv_output_size(wd, k, stride, padding)
    if not ho or not wo:
        raise DimensionError(
            f"conv2d: kernel larger than padded input "
            f"(H={h}, W={wd}, k={k}, padding={padding})"
        )
    cols = kernels.im2col(x.data, k, stride, padding)
    wmat = w.data.reshape(f, -1)
    out = (wmat @ cols).reshape(f, n, ho, wo).transpose(1, 0, 2, 3)
    if b is not None:
        out = out + b.data.reshape(1, f, 1, 1)
    out = np.ascontiguousarray(out)
    xshape = x.shape
    inputs = (x, w) if b is None else (x, w, b)
    need_x, need_w = x.requires_grad, w.requires_grad
    need_b = b is not None and b.requires_grad
    wshape = w.shape

    def bw(g):
        gm = np.ascontiguousarray(g.transpose(1, 0, 2, 3)).reshape(f, -1)
        gx = gw = gb = None
        if need_x:
            gx = kernels.col2im(wmat.T @ gm, xshape, k, stride, padding)
        if need_w:
            gw = (gm @ cols.T).reshape(wshape)
        if need_b:
            gb = g.sum(axis=(0, 2, 3))
        return (gx, gw) if b is None else (gx, gw, gb)

    return _record("conv2d", out, inputs, bw)


def upsample_nearest(x, factor):
    if not isinstance(factor, (int, np.integer)) or factor < 1:
        raise ArgumentError(f"upsample factor must be an integer >= 1, got {factor}")
    if x.ndim != 4:
        raise DimensionError(f"upsample: expected [N,C,H,W], got {list(x.shape)}")
    if factor == 1:
        return _record("upsample", x.data.copy(), (x,), lambda g: (g,))
    n, c, h, w = x.shape
    y = np.repeat(np.repeat(x.data, factor, axis=2), factor, axis=3)
    return _record(
        "upsample", y, (x,), lambda g: (g.reshape(n, c, h, factor, w, factor).sum(axis=(3, 5)),)
    )
