"""Dense float64 tensors with reverse-mode automatic differentiation.

Graphs are built define-by-run: every operation returns a new ``Tensor``
holding its inputs and a closure that accumulates gradients into them.
Calling :func:`backward` on a scalar result topologically sorts the
recorded graph and applies the chain rule. Re-running the same ops on the
same values is bit-identical; nothing here is lazy or fused.

Tensors are immutable after construction except for in-place parameter
updates performed by an optimizer between graph builds.
"""

from __future__ import annotations

import numpy as np

_DEBUG = False


def set_debug(enabled: bool) -> None:
    """Toggle per-op finiteness checks (raises NonFiniteError on NaN/Inf)."""
    global _DEBUG
    _DEBUG = bool(enabled)


class ShapeError(ValueError):
    """Raised when operand shapes are incompatible; message names the op."""


class NonFiniteError(FloatingPointError):
    """Raised in debug mode when an op produces NaN or Inf."""


class Tensor:
    """A dense float64 array plus the autodiff bookkeeping that produced it."""

    __slots__ = ("values", "requires_grad", "grad", "_parents", "_backward", "op")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad = None
        self._parents = ()
        self._backward = None
        self.op = "leaf"

    @property
    def shape(self):
        return self.values.shape

    def zero_grad(self) -> None:
        self.grad = np.zeros_like(self.values)

    def item(self) -> float:
        if self.values.size != 1:
            raise ShapeError(f"item: tensor has {self.values.size} elements")
        return float(self.values.reshape(()))

    def backward(self) -> None:
        backward(self)

    def __repr__(self):
        return f"Tensor(shape={self.values.shape}, op={self.op}, requires_grad={self.requires_grad})"

    # operator sugar, lifting plain numbers to constant tensors
    def __add__(self, other):
        return add(self, _lift(other))

    def __radd__(self, other):
        return add(_lift(other), self)

    def __sub__(self, other):
        return sub(self, _lift(other))

    def __rsub__(self, other):
        return sub(_lift(other), self)

    def __mul__(self, other):
        return mul(self, _lift(other))

    def __rmul__(self, other):
        return mul(_lift(other), self)

    def __truediv__(self, other):
        return div(self, _lift(other))

    def __rtruediv__(self, other):
        return div(_lift(other), self)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    def __getitem__(self, key):
        return slice_(self, key)


def _lift(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(np.asarray(x, dtype=np.float64))


def _make(values: np.ndarray, parents, backward_fn, op: str) -> Tensor:
    if _DEBUG and not np.all(np.isfinite(values)):
        raise NonFiniteError(f"{op}: non-finite value in output")
    out = Tensor(values)
    out.op = op
    if any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accum(t: Tensor, g: np.ndarray) -> None:
    if not t.requires_grad:
        return
    if t.grad is None:
        t.grad = np.zeros_like(t.values)
    t.grad += g


def _unbroadcast(g: np.ndarray, shape) -> np.ndarray:
    """Sum a gradient back down to `shape` after numpy broadcasting."""
    if g.shape == tuple(shape):
        return g
    extra = g.ndim - len(shape)
    if extra > 0:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, s in enumerate(shape) if s == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g.reshape(shape)


def backward(loss: Tensor) -> None:
    """Reverse-mode pass from a scalar loss; accumulates into `.grad`.

    Gradients land on every tensor in the recorded graph that has
    ``requires_grad``; leaves that never entered the graph keep whatever
    their `.grad` already was (zeros after ``zero_grad``).
    """
    if loss.values.size != 1:
        raise ShapeError(f"backward: loss must be scalar, got shape {loss.values.shape}")
    topo = []
    seen = set()
    stack = [(loss, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            topo.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for p in node._parents:
            if id(p) not in seen:
                stack.append((p, False))
    loss.grad = np.ones_like(loss.values)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# elementwise ops
# ---------------------------------------------------------------------------

def add(a: Tensor, b: Tensor) -> Tensor:
    try:
        vals = a.values + b.values
    except ValueError:
        raise ShapeError(f"add: shapes {a.values.shape} and {b.values.shape} do not broadcast")

    def back(g):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(g, b.values.shape))

    return _make(vals, (a, b), back, "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    try:
        vals = a.values - b.values
    except ValueError:
        raise ShapeError(f"sub: shapes {a.values.shape} and {b.values.shape} do not broadcast")

    def back(g):
        _accum(a, _unbroadcast(g, a.values.shape))
        _accum(b, _unbroadcast(-g, b.values.shape))

    return _make(vals, (a, b), back, "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    try:
        vals = a.values * b.values
    except ValueError:
        raise ShapeError(f"mul: shapes {a.values.shape} and {b.values.shape} do not broadcast")

    def back(g):
        _accum(a, _unbroadcast(g * b.values, a.values.shape))
        _accum(b, _unbroadcast(g * a.values, b.values.shape))

    return _make(vals, (a, b), back, "mul")


def div(a: Tensor, b: Tensor) -> Tensor:
    try:
        vals = a.values / b.values
    except ValueError:
        raise ShapeError(f"div: shapes {a.values.shape} and {b.values.shape} do not broadcast")

    def back(g):
        _accum(a, _unbroadcast(g / b.values, a.values.shape))
        _accum(b, _unbroadcast(-g * a.values / (b.values * b.values), b.values.shape))

    return _make(vals, (a, b), back, "div")


def neg(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, -g)

    return _make(-a.values, (a,), back, "neg")


def square(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, 2.0 * a.values * g)

    return _make(a.values * a.values, (a,), back, "square")


def exp(a: Tensor) -> Tensor:
    vals = np.exp(a.values)

    def back(g):
        _accum(a, g * vals)

    return _make(vals, (a,), back, "exp")


def log(a: Tensor) -> Tensor:
    def back(g):
        _accum(a, g / a.values)

    return _make(np.log(a.values), (a,), back, "log")


def tanh(a: Tensor) -> Tensor:
    vals = np.tanh(a.values)

    def back(g):
        _accum(a, g * (1.0 - vals * vals))

    return _make(vals, (a,), back, "tanh")


def leaky_relu(a: Tensor, slope: float = 0.01) -> Tensor:
    mask = a.values > 0.0
    vals = np.where(mask, a.values, slope * a.values)

    def back(g):
        _accum(a, g * np.where(mask, 1.0, slope))

    return _make(vals, (a,), back, "leaky_relu")


def softplus(a: Tensor) -> Tensor:
    # log(1 + exp(x)), overflow-safe for large |x|
    vals = np.maximum(a.values, 0.0) + np.log1p(np.exp(-np.abs(a.values)))

    def back(g):
        _accum(a, g / (1.0 + np.exp(-a.values)))

    return _make(vals, (a,), back, "softplus")


def clip(a: Tensor, lo: float, hi: float) -> Tensor:
    vals = np.clip(a.values, lo, hi)

    def back(g):
        inside = (a.values >= lo) & (a.values <= hi)
        _accum(a, g * inside)

    return _make(vals, (a,), back, "clip")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.values.ndim != 2 or b.values.ndim != 2 or a.values.shape[1] != b.values.shape[0]:
        raise ShapeError(f"matmul: incompatible shapes {a.values.shape} @ {b.values.shape}")
    vals = a.values @ b.values

    def back(g):
        _accum(a, g @ b.values.T)
        _accum(b, a.values.T @ g)

    return _make(vals, (a, b), back, "matmul")


def transpose(a: Tensor) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"transpose: expected 2-D, got shape {a.values.shape}")

    def back(g):
        _accum(a, g.T)

    return _make(a.values.T.copy(), (a,), back, "transpose")


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b with b broadcast over rows."""
    if x.values.ndim != 2 or w.values.ndim != 2 or x.values.shape[1] != w.values.shape[0]:
        raise ShapeError(f"affine: incompatible shapes {x.values.shape} @ {w.values.shape}")
    vals = x.values @ w.values + b.values

    def back(g):
        _accum(x, g @ w.values.T)
        _accum(w, x.values.T @ g)
        _accum(b, _unbroadcast(g, b.values.shape))

    return _make(vals, (x, w, b), back, "affine")


def triangular_solve(l_factor: Tensor, rhs: Tensor) -> Tensor:
    """Solve L u = rhs for u, with L a nonsingular lower-triangular (l, l) matrix.

    rhs has shape (l, k); the solve is exact per column. Gradients follow the
    implicit-function rule: d_rhs = L^-T g, d_L = -d_rhs u^T.
    """
    lv, rv = l_factor.values, rhs.values
    if lv.ndim != 2 or lv.shape[0] != lv.shape[1] or rv.ndim != 2 or rv.shape[0] != lv.shape[0]:
        raise ShapeError(f"triangular_solve: incompatible shapes {lv.shape} and {rv.shape}")
    u = np.linalg.solve(lv, rv)

    def back(g):
        grhs = np.linalg.solve(lv.T, g)
        _accum(rhs, grhs)
        _accum(l_factor, -grhs @ u.T)

    return _make(u, (l_factor, rhs), back, "triangular_solve")


def diag_part(a: Tensor) -> Tensor:
    """Extract the main diagonal of a square matrix as a (1, l) row."""
    if a.values.ndim != 2 or a.values.shape[0] != a.values.shape[1]:
        raise ShapeError(f"diag_part: expected square matrix, got {a.values.shape}")
    n = a.values.shape[0]

    def back(g):
        gm = np.zeros_like(a.values)
        gm[np.arange(n), np.arange(n)] = g.reshape(n)
        _accum(a, gm)

    return _make(a.values.diagonal().reshape(1, n).copy(), (a,), back, "diag_part")


# ---------------------------------------------------------------------------
# reductions, softmax
# ---------------------------------------------------------------------------

def sum_(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    vals = a.values.sum(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g, a.values.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge, a.values.shape).copy())

    return _make(vals, (a,), back, "sum")


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    count = a.values.size if axis is None else a.values.shape[axis]
    vals = a.values.mean(axis=axis, keepdims=keepdims)

    def back(g):
        if axis is None:
            _accum(a, np.broadcast_to(g / count, a.values.shape).copy())
        else:
            ge = g if keepdims else np.expand_dims(g, axis)
            _accum(a, np.broadcast_to(ge / count, a.values.shape).copy())

    return _make(vals, (a,), back, "mean")


def amin(a: Tensor, axis: int) -> Tensor:
    """Minimum along an axis of a 2-D tensor; subgradient goes to the first argmin."""
    if a.values.ndim != 2:
        raise ShapeError(f"amin: expected 2-D, got shape {a.values.shape}")
    idx = a.values.argmin(axis=axis)
    vals = np.take_along_axis(a.values, np.expand_dims(idx, axis), axis=axis).squeeze(axis)

    def back(g):
        gm = np.zeros_like(a.values)
        if axis == 0:
            gm[idx, np.arange(a.values.shape[1])] = g
        else:
            gm[np.arange(a.values.shape[0]), idx] = g
        _accum(a, gm)

    return _make(vals, (a,), back, "amin")


def softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    vals = e / e.sum(axis=axis, keepdims=True)

    def back(g):
        dot = (g * vals).sum(axis=axis, keepdims=True)
        _accum(a, vals * (g - dot))

    return _make(vals, (a,), back, "softmax")


def log_softmax(a: Tensor, axis: int = -1) -> Tensor:
    shifted = a.values - a.values.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=axis, keepdims=True))
    vals = shifted - lse

    def back(g):
        _accum(a, g - np.exp(vals) * g.sum(axis=axis, keepdims=True))

    return _make(vals, (a,), back, "log_softmax")


# ---------------------------------------------------------------------------
# shape ops
# ---------------------------------------------------------------------------

def reshape(a: Tensor, shape) -> Tensor:
    def back(g):
        _accum(a, g.reshape(a.values.shape))

    return _make(a.values.reshape(shape).copy(), (a,), back, "reshape")


def concat(tensors, axis: int = 0) -> Tensor:
    tensors = list(tensors)
    if not tensors:
        raise ShapeError("concat: empty input list")
    vals = np.concatenate([t.values for t in tensors], axis=axis)
    sizes = [t.values.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def back(g):
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            idx = [slice(None)] * g.ndim
            idx[axis] = slice(lo, hi)
            _accum(t, g[tuple(idx)])

    return _make(vals, tuple(tensors), back, "concat")


def slice_(a: Tensor, key) -> Tensor:
    vals = a.values[key]

    def back(g):
        gm = np.zeros_like(a.values)
        gm[key] = g
        _accum(a, gm)

    return _make(np.array(vals, dtype=np.float64), (a,), back, "slice")


def gather_rows(a: Tensor, idx) -> Tensor:
    """Select rows of a 2-D tensor by integer index; gradient scatter-adds."""
    if a.values.ndim != 2:
        raise ShapeError(f"gather_rows: expected 2-D, got shape {a.values.shape}")
    idx = np.asarray(idx, dtype=np.intp)

    def back(g):
        gm = np.zeros_like(a.values)
        np.add.at(gm, idx, g)
        _accum(a, gm)

    return _make(a.values[idx].copy(), (a,), back, "gather_rows")


# ---------------------------------------------------------------------------
# image ops
# ---------------------------------------------------------------------------

def bilinear_resize_array(img: np.ndarray, out_h: int, out_w: int) -> np.ndarray:
    """Bilinear resize of a 2-D array, corners mapped to corners."""
    h, w = img.shape
    ri, wi0 = _resize_grid(h, out_h)
    rj, wj0 = _resize_grid(w, out_w)
    i0, i1 = ri
    j0, j1 = rj
    wi0 = wi0[:, None]
    wj0 = wj0[None, :]
    top = wj0 * img[np.ix_(i0, j0)] + (1 - wj0) * img[np.ix_(i0, j1)]
    bot = wj0 * img[np.ix_(i1, j0)] + (1 - wj0) * img[np.ix_(i1, j1)]
    return wi0 * top + (1 - wi0) * bot


def _resize_grid(n_in: int, n_out: int):
    if n_out == 1:
        pos = np.zeros(1)
    else:
        pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(np.intp)
    hi = np.minimum(lo + 1, n_in - 1)
    w_lo = 1.0 - (pos - lo)
    return (lo, hi), w_lo


def bilinear_resize(a: Tensor, out_h: int, out_w: int) -> Tensor:
    if a.values.ndim != 2:
        raise ShapeError(f"bilinear_resize: expected 2-D, got shape {a.values.shape}")
    h, w = a.values.shape
    ri, wi0 = _resize_grid(h, out_h)
    rj, wj0 = _resize_grid(w, out_w)
    vals = bilinear_resize_array(a.values, out_h, out_w)

    def back(g):
        gm = np.zeros_like(a.values)
        i0, i1 = ri
        j0, j1 = rj
        for oi in range(out_h):
            for oj in range(out_w):
                gv = g[oi, oj]
                a_i, b_i = wi0[oi], 1 - wi0[oi]
                a_j, b_j = wj0[oj], 1 - wj0[oj]
                gm[i0[oi], j0[oj]] += gv * a_i * a_j
                gm[i0[oi], j1[oj]] += gv * a_i * b_j
                gm[i1[oi], j0[oj]] += gv * b_i * a_j
                gm[i1[oi], j1[oj]] += gv * b_i * b_j
        _accum(a, gm)

    return _make(vals, (a,), back, "bilinear_resize")


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    n, c, h, w = x.shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((n, c, kh, kw, oh, ow), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride]
    return cols.reshape(n, c * kh * kw, oh * ow), (oh, ow)


def _col2im(cols: np.ndarray, x_shape, kh: int, kw: int, stride: int, pad: int) -> np.ndarray:
    n, c, h, w = x_shape
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    xp = np.zeros((n, c, h + 2 * pad, w + 2 * pad), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            xp[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if pad:
        return xp[:, :, pad:-pad, pad:-pad]
    return xp


def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """2-D convolution: x (n, c, h, w), w (f, c, kh, kw), b (f,)."""
    if x.values.ndim != 4 or w.values.ndim != 4 or x.values.shape[1] != w.values.shape[1]:
        raise ShapeError(f"conv2d: incompatible shapes {x.values.shape} and {w.values.shape}")
    n = x.values.shape[0]
    f, _, kh, kw = w.values.shape
    cols, (oh, ow) = _im2col(x.values, kh, kw, stride, pad)
    w2 = w.values.reshape(f, -1)
    vals = np.einsum("fk,nkl->nfl", w2, cols).reshape(n, f, oh, ow) + b.values.reshape(1, f, 1, 1)

    def back(g):
        g2 = g.reshape(n, f, oh * ow)
        _accum(w, np.einsum("nfl,nkl->fk", g2, cols).reshape(w.values.shape))
        _accum(b, g.sum(axis=(0, 2, 3)))
        dcols = np.einsum("fk,nfl->nkl", w2, g2)
        _accum(x, _col2im(dcols, x.values.shape, kh, kw, stride, pad))

    return _make(vals, (x, w, b), back, "conv2d")


def conv2d_transpose(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """Transposed 2-D convolution: x (n, f, h, w), w (f, c, kh, kw), b (c,)."""
    if x.values.ndim != 4 or w.values.ndim != 4 or x.values.shape[1] != w.values.shape[0]:
        raise ShapeError(f"conv2d_transpose: incompatible shapes {x.values.shape} and {w.values.shape}")
    n, f, h, wd = x.values.shape
    _, c, kh, kw = w.values.shape
    oh = (h - 1) * stride - 2 * pad + kh
    ow = (wd - 1) * stride - 2 * pad + kw
    w2 = w.values.reshape(f, -1)
    x2 = x.values.reshape(n, f, h * wd)
    cols = np.einsum("fk,nfl->nkl", w2, x2)
    vals = _col2im(cols, (n, c, oh, ow), kh, kw, stride, pad) + b.values.reshape(1, c, 1, 1)

    def back(g):
        gcols, _ = _im2col(g, kh, kw, stride, pad)
        _accum(x, np.einsum("fk,nkl->nfl", w2, gcols).reshape(x.values.shape))
        _accum(w, np.einsum("nfl,nkl->fk", x2, gcols).reshape(w.values.shape))
        _accum(b, g.sum(axis=(0, 2, 3)))

    return _make(vals, (x, w, b), back, "conv2d_transpose")


def batchnorm_inference(x: Tensor, gamma: Tensor, beta: Tensor,
                        running_mean: np.ndarray, running_var: np.ndarray,
                        eps: float = 1e-5) -> Tensor:
    """Channel-wise normalization by fixed running statistics (n, c, h, w)."""
    if x.values.ndim != 4:
        raise ShapeError(f"batchnorm_inference: expected 4-D, got shape {x.values.shape}")
    inv = 1.0 / np.sqrt(running_var + eps)
    xhat = (x.values - running_mean.reshape(1, -1, 1, 1)) * inv.reshape(1, -1, 1, 1)
    vals = gamma.values.reshape(1, -1, 1, 1) * xhat + beta.values.reshape(1, -1, 1, 1)

    def back(g):
        _accum(gamma, (g * xhat).sum(axis=(0, 2, 3)))
        _accum(beta, g.sum(axis=(0, 2, 3)))
        _accum(x, g * (gamma.values * inv).reshape(1, -1, 1, 1))

    return _make(vals, (x, gamma, beta), back, "batchnorm_inference")


def spatial_mean(x: Tensor) -> Tensor:
    """Mean over the two trailing spatial axes: (n, c, h, w) -> (n, c)."""
    if x.values.ndim != 4:
        raise ShapeError(f"spatial_mean: expected 4-D, got shape {x.values.shape}")
    n, c, h, w = x.values.shape

    def back(g):
        _accum(x, np.broadcast_to(g.reshape(n, c, 1, 1) / (h * w), x.values.shape).copy())

    return _make(x.values.mean(axis=(2, 3)), (x,), back, "spatial_mean")
