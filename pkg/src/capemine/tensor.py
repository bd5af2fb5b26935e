"""Dense float64 tensors with tape-based reverse-mode differentiation.

Every op that sees an input with ``requires_grad`` appends a node to the
thread's current :class:`Tape`.  Nodes are recorded in execution order, so
walking the tape backwards is already a valid reverse topological order and
no graph search is needed at ``backward`` time.

Tensors are treated as values: ops never mutate their inputs.  The only
sanctioned in-place mutation is an optimizer step between forward passes.
"""

from __future__ import annotations

import threading
from contextlib import contextmanager

import numpy as np
from scipy.special import expit

from .errors import ContractViolation, ShapeError

LOGIT_EPS = 1e-6
_GELU_C = np.sqrt(2.0 / np.pi)


class Node:
    __slots__ = ("op", "inputs", "output", "backward")

    def __init__(self, op, inputs, output, backward):
        self.op = op
        self.inputs = inputs
        self.output = output
        self.backward = backward


class Tape:
    """Ordered record of executed differentiable ops."""

    def __init__(self):
        self.nodes = []

    def __len__(self):
        return len(self.nodes)

    def record(self, op, inputs, output, backward):
        self.nodes.append(Node(op, inputs, output, backward))

    def clear(self):
        self.nodes = []

    def backward(self, loss):
        """Populate ``.grad`` on every leaf reachable from the tape, then clear it.

        Leaves that took part in recorded ops but do not influence ``loss``
        receive zero gradients.  Gradients overwrite, they do not accumulate
        across calls.
        """
        if not isinstance(loss, Tensor) or loss.data.size != 1:
            shape = loss.shape if isinstance(loss, Tensor) else type(loss).__name__
            raise ContractViolation(f"backward needs a scalar loss, got {shape}")
        if not self.nodes:
            raise ContractViolation("backward called on an empty tape")
        faults = _state.faults
        try:
            grads = {id(loss): np.ones_like(loss.data)}
            for node in reversed(self.nodes):
                g = grads.pop(id(node.output), None)
                if g is None:
                    continue
                in_grads = node.backward(g)
                if node.op in faults:
                    in_grads = [None if gi is None else gi * 1.5 for gi in in_grads]
                for t, gi in zip(node.inputs, in_grads):
                    if gi is None or not t.requires_grad:
                        continue
                    key = id(t)
                    prev = grads.get(key)
                    grads[key] = gi if prev is None else prev + gi
            for node in self.nodes:
                for t in node.inputs:
                    if t.requires_grad and t._op is None:
                        g = grads.get(id(t))
                        t.grad = np.zeros_like(t.data) if g is None else np.array(g, dtype=np.float64)
        finally:
            self.clear()


class _State(threading.local):
    def __init__(self):
        self.tape = Tape()
        self.enabled = True
        self.faults = frozenset()


_state = _State()


def current_tape():
    return _state.tape


@contextmanager
def no_grad():
    """Run ops without recording them."""
    prev = _state.enabled
    _state.enabled = False
    try:
        yield
    finally:
        _state.enabled = prev


@contextmanager
def inject_fault(*ops):
    """Corrupt the backward pass of the named ops (verification harness only)."""
    prev = _state.faults
    _state.faults = frozenset(ops)
    try:
        yield
    finally:
        _state.faults = prev


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "_op")
    __array_priority__ = 1000

    def __init__(self, data, requires_grad=False):
        self.data = np.array(data, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self._op = None

    @classmethod
    def _wrap(cls, arr, requires_grad, op):
        t = cls.__new__(cls)
        t.data = arr
        t.requires_grad = requires_grad
        t.grad = None
        t._op = op
        return t

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def size(self):
        return self.data.size

    def numpy(self):
        return self.data.copy()

    def item(self):
        return float(self.data.reshape(-1)[0])

    def detach(self):
        return Tensor._wrap(self.data, False, None)

    def __repr__(self):
        flag = ", requires_grad=True" if self.requires_grad else ""
        return f"Tensor(shape={self.shape}{flag})"

    def backward(self):
        _state.tape.backward(self)

    # operators
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        if np.isscalar(other):
            return scale(self, other)
        return mul(self, other)

    def __rmul__(self, other):
        return self.__mul__(other)

    def __truediv__(self, other):
        if np.isscalar(other):
            return scale(self, 1.0 / other)
        return div(self, other)

    def __neg__(self):
        return scale(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, idx):
        return getitem(self, idx)

    def sum(self, axis=None, keepdims=False):
        return sum_(self, axis, keepdims)

    def mean(self, axis=None, keepdims=False):
        return mean(self, axis, keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = tuple(axes[0])
        return transpose(self, axes or None)


def as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


def _result(op, data, inputs, backward):
    needs = _state.enabled and any(t.requires_grad for t in inputs)
    out = Tensor._wrap(data, needs, op)
    if needs:
        _state.tape.record(op, inputs, out, backward)
    return out


def _unbroadcast(g, shape):
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


def _broadcast_shape(op, a, b):
    try:
        return np.broadcast_shapes(a.shape, b.shape)
    except ValueError:
        raise ShapeError(op, a.shape, b.shape) from None


# elementwise arithmetic

def add(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("add", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(g, b.shape)

    return _result("add", a.data + b.data, (a, b), backward)


def sub(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("sub", a, b)

    def backward(g):
        return _unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)

    return _result("sub", a.data - b.data, (a, b), backward)


def mul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("mul", a, b)

    def backward(g):
        return _unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)

    return _result("mul", a.data * b.data, (a, b), backward)


def div(a, b):
    a, b = as_tensor(a), as_tensor(b)
    _broadcast_shape("div", a, b)
    out = a.data / b.data

    def backward(g):
        return _unbroadcast(g / b.data, a.shape), _unbroadcast(-g * out / b.data, b.shape)

    return _result("div", out, (a, b), backward)


def scale(x, c):
    x = as_tensor(x)
    c = float(c)
    return _result("scale", x.data * c, (x,), lambda g: (g * c,))


def abs_(x):
    x = as_tensor(x)
    return _result("abs", np.abs(x.data), (x,), lambda g: (g * np.sign(x.data),))


def exp(x):
    x = as_tensor(x)
    out = np.exp(x.data)
    return _result("exp", out, (x,), lambda g: (g * out,))


# nonlinearities

def sigmoid(x):
    x = as_tensor(x)
    s = expit(x.data)
    return _result("sigmoid", s, (x,), lambda g: (g * s * (1.0 - s),))


def logit(x, eps=LOGIT_EPS):
    """Inverse sigmoid with the input clamped to ``[eps, 1 - eps]``."""
    x = as_tensor(x)
    xc = np.clip(x.data, eps, 1.0 - eps)
    inside = (x.data > eps) & (x.data < 1.0 - eps)

    def backward(g):
        return (np.where(inside, g / (xc * (1.0 - xc)), 0.0),)

    return _result("logit", np.log(xc) - np.log1p(-xc), (x,), backward)


def relu(x):
    x = as_tensor(x)
    mask = x.data > 0
    return _result("relu", np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def gelu(x):
    """Tanh approximation of GELU; smooth, so finite differences stay honest."""
    x = as_tensor(x)
    v = x.data
    t = np.tanh(_GELU_C * (v + 0.044715 * v ** 3))

    def backward(g):
        dt = (1.0 - t * t) * _GELU_C * (1.0 + 3 * 0.044715 * v * v)
        return (g * (0.5 * (1.0 + t) + 0.5 * v * dt),)

    return _result("gelu", 0.5 * v * (1.0 + t), (x,), backward)


def softmax(x, axis=-1):
    x = as_tensor(x)
    z = x.data - x.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (s * (g - (g * s).sum(axis=axis, keepdims=True)),)

    return _result("softmax", s, (x,), backward)


# reductions and shape ops

def sum_(x, axis=None, keepdims=False):
    x = as_tensor(x)
    out = x.data.sum(axis=axis, keepdims=keepdims)

    def backward(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, x.shape),)

    return _result("sum", np.asarray(out), (x,), backward)


def mean(x, axis=None, keepdims=False):
    x = as_tensor(x)
    n = x.data.size / max(np.asarray(x.data.sum(axis=axis, keepdims=keepdims)).size, 1)
    return scale(sum_(x, axis, keepdims), 1.0 / n)


def reshape(x, shape):
    x = as_tensor(x)
    try:
        out = x.data.reshape(shape)
    except ValueError:
        raise ShapeError("reshape", x.shape, shape) from None
    return _result("reshape", out, (x,), lambda g: (g.reshape(x.shape),))


def transpose(x, axes=None):
    x = as_tensor(x)
    out = np.transpose(x.data, axes)
    inv = None if axes is None else np.argsort(axes)
    return _result("transpose", out, (x,), lambda g: (np.transpose(g, inv),))


def _is_basic_index(idx):
    items = idx if isinstance(idx, tuple) else (idx,)
    return all(isinstance(i, (int, np.integer, slice)) or i is None or i is Ellipsis for i in items)


def getitem(x, idx):
    x = as_tensor(x)
    basic = _is_basic_index(idx)

    def backward(g):
        gx = np.zeros_like(x.data)
        if basic:
            gx[idx] = g
        else:
            np.add.at(gx, idx, g)
        return (gx,)

    return _result("getitem", np.array(x.data[idx]), (x,), backward)


def take(x, indices, axis=0):
    """Gather along ``axis`` with an integer index array (repeats allowed)."""
    x = as_tensor(x)
    indices = np.asarray(indices, dtype=np.intp)
    out = np.take(x.data, indices, axis=axis)

    def backward(g):
        gx = np.zeros_like(x.data)
        gm = np.moveaxis(gx, axis, 0)
        gi = np.moveaxis(g, list(range(axis, axis + indices.ndim)), list(range(indices.ndim)))
        np.add.at(gm, indices, gi)
        return (gx,)

    return _result("take", out, (x,), backward)


def concat(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("concat", *(t.shape for t in tensors)) from None
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return tuple(np.split(g, sizes, axis=axis))

    return _result("concat", out, tuple(tensors), backward)


def stack(tensors, axis=0):
    tensors = [as_tensor(t) for t in tensors]
    try:
        out = np.stack([t.data for t in tensors], axis=axis)
    except ValueError:
        raise ShapeError("stack", *(t.shape for t in tensors)) from None

    def backward(g):
        return tuple(np.take(g, i, axis=axis) for i in range(len(tensors)))

    return _result("stack", out, tuple(tensors), backward)


# linear algebra

def matmul(a, b):
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim < 2 or b.ndim < 2:
        raise ShapeError("matmul", a.shape, b.shape)
    try:
        out = np.matmul(a.data, b.data)
    except ValueError:
        raise ShapeError("matmul", a.shape, b.shape) from None

    def backward(g):
        ga = np.matmul(g, np.swapaxes(b.data, -1, -2))
        gb = np.matmul(np.swapaxes(a.data, -1, -2), g)
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return _result("matmul", out, (a, b), backward)


def linear(x, w, b=None):
    """``x @ w + b`` over the trailing axis of ``x``; ``w`` is (in, out)."""
    x, w = as_tensor(x), as_tensor(w)
    if w.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise ShapeError("linear", x.shape, w.shape)
    out = x.data @ w.data
    inputs = (x, w)
    if b is not None:
        b = as_tensor(b)
        if b.shape != (w.shape[1],):
            raise ShapeError("linear", w.shape, b.shape)
        out = out + b.data
        inputs = (x, w, b)

    def backward(g):
        g2 = g.reshape(-1, w.shape[1])
        gx = g @ w.data.T
        gw = x.data.reshape(-1, w.shape[0]).T @ g2
        if b is None:
            return gx, gw
        return gx, gw, g2.sum(axis=0)

    return _result("linear", out, inputs, backward)


def layer_norm(x, gamma, beta, eps=1e-5):
    x, gamma, beta = as_tensor(x), as_tensor(gamma), as_tensor(beta)
    if gamma.shape != (x.shape[-1],) or beta.shape != gamma.shape:
        raise ShapeError("layer_norm", x.shape, gamma.shape)
    mu = x.data.mean(axis=-1, keepdims=True)
    xc = x.data - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    xhat = xc * inv

    def backward(g):
        gh = g * gamma.data
        gx = inv * (gh - gh.mean(axis=-1, keepdims=True)
                    - xhat * (gh * xhat).mean(axis=-1, keepdims=True))
        axes = tuple(range(g.ndim - 1))
        return gx, (g * xhat).sum(axis=axes), g.sum(axis=axes)

    return _result("layer_norm", xhat * gamma.data + beta.data, (x, gamma, beta), backward)


def conv2d(x, w, b, stride=1, padding=1):
    """Channels-last convolution: x (B, H, W, Cin), w (kh, kw, Cin, Cout)."""
    x, w, b = as_tensor(x), as_tensor(w), as_tensor(b)
    if x.ndim != 4 or w.ndim != 4 or x.shape[3] != w.shape[2] or b.shape != (w.shape[3],):
        raise ShapeError("conv2d", x.shape, w.shape)
    nb, h, wd, cin = x.shape
    kh, kw, _, cout = w.shape
    ho = (h + 2 * padding - kh) // stride + 1
    wo = (wd + 2 * padding - kw) // stride + 1
    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (0, 0)))
    windows = [(dy, dx) for dy in range(kh) for dx in range(kw)]

    def window(arr, dy, dx):
        return arr[:, dy:dy + stride * (ho - 1) + 1:stride, dx:dx + stride * (wo - 1) + 1:stride, :]

    cols = np.concatenate([window(xp, dy, dx) for dy, dx in windows], axis=-1)
    wflat = w.data.reshape(kh * kw * cin, cout)
    out = cols @ wflat + b.data

    def backward(g):
        g2 = g.reshape(-1, cout)
        gw = (cols.reshape(-1, kh * kw * cin).T @ g2).reshape(w.shape)
        gcols = g @ wflat.T
        gxp = np.zeros_like(xp)
        for n, (dy, dx) in enumerate(windows):
            window(gxp, dy, dx)[...] += gcols[..., n * cin:(n + 1) * cin]
        gx = gxp[:, padding:padding + h, padding:padding + wd, :]
        return gx, gw, g2.sum(axis=0)

    return _result("conv2d", out, (x, w, b), backward)


def grid_sample(fmap, points):
    """Bilinearly sample a (H, W, C) map at normalized (x, y) points.

    Pixel ``(u, v)`` has its center at ``((u + 0.5) / W, (v + 0.5) / H)``.
    Taps that fall outside the map read zeros.  Differentiable in both the
    map values and the point coordinates.
    """
    fmap, points = as_tensor(fmap), as_tensor(points)
    if fmap.ndim != 3 or points.shape[-1] != 2:
        raise ShapeError("grid_sample", fmap.shape, points.shape)
    h, w, c = fmap.shape
    lead = points.shape[:-1]
    p = points.data.reshape(-1, 2)
    x = p[:, 0] * w - 0.5
    y = p[:, 1] * h - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[:, None]
    fy = (y - y0)[:, None]
    x0 = x0.astype(np.intp)
    y0 = y0.astype(np.intp)
    taps = []
    for du, dv in ((0, 0), (1, 0), (0, 1), (1, 1)):
        u = x0 + du
        v = y0 + dv
        ok = (u >= 0) & (u < w) & (v >= 0) & (v < h)
        flat = np.clip(v, 0, h - 1) * w + np.clip(u, 0, w - 1)
        vals = fmap.data.reshape(-1, c)[flat] * ok[:, None]
        taps.append((flat, ok, vals))
    wx = (1.0 - fx, fx, 1.0 - fx, fx)
    wy = (1.0 - fy, 1.0 - fy, fy, fy)
    out = sum(wx[i] * wy[i] * taps[i][2] for i in range(4))

    def backward(g):
        g = g.reshape(-1, c)
        gmap = np.zeros((h * w, c))
        gx = np.zeros(len(p))
        gy = np.zeros(len(p))
        dwx = (-1.0, 1.0, -1.0, 1.0)
        dwy = (-1.0, -1.0, 1.0, 1.0)
        for i, (flat, ok, vals) in enumerate(taps):
            np.add.at(gmap, flat, (wx[i] * wy[i] * ok[:, None]) * g)
            gv = (g * vals).sum(axis=1)
            gx += dwx[i] * wy[i][:, 0] * gv
            gy += dwy[i] * wx[i][:, 0] * gv
        gp = np.stack([gx * w, gy * h], axis=-1).reshape(points.shape)
        return gmap.reshape(fmap.shape), gp

    return _result("grid_sample", out.reshape(lead + (c,)), (fmap, points), backward)
