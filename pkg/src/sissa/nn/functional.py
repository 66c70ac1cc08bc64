"""Differentiable primitives.

Each function computes its forward result with numpy (or a kernel from
:mod:`sissa.kernels`) and registers the matching vector-Jacobian product.
"""

from __future__ import annotations

import numpy as np

from .. import kernels
from .tensor import Tensor, as_tensor, make_node


class ShapeError(ValueError):
    pass


class LabelRangeError(ValueError):
    pass


def _lift(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(x, dtype=dtype)


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    while g.ndim > len(shape):
        g = g.sum(axis=0)
    for ax, n in enumerate(shape):
        if n == 1 and g.shape[ax] != 1:
            g = g.sum(axis=ax, keepdims=True)
    return g


# -- elementwise ---------------------------------------------------------

def add(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_node(a.data + b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), _unbroadcast(g, sb)))


def sub(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    sa, sb = a.shape, b.shape
    return make_node(a.data - b.data, (a, b),
                     lambda g: (_unbroadcast(g, sa), -_unbroadcast(g, sb)))


def mul(a, b) -> Tensor:
    a = _lift(a, b if isinstance(b, Tensor) else None)
    b = _lift(b, a)
    return make_node(a.data * b.data, (a, b),
                     lambda g: (_unbroadcast(g * b.data, a.shape),
                                _unbroadcast(g * a.data, b.shape)))


def residual_add(x: Tensor, fx: Tensor) -> Tensor:
    if x.shape != fx.shape:
        raise ShapeError(f"residual branches differ: {x.shape} vs {fx.shape}")
    return add(x, fx)


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return make_node(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return make_node(y, (x,), lambda g: (g * (1 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (np.tanh(0.5 * x.data) + 1)
    return make_node(y, (x,), lambda g: (g * y * (1 - y),))


# -- shape -----------------------------------------------------------------

def reshape(x: Tensor, shape) -> Tensor:
    old = x.shape
    return make_node(x.data.reshape(shape), (x,), lambda g: (g.reshape(old),))


def transpose(x: Tensor, axes=None) -> Tensor:
    axes = tuple(range(x.ndim))[::-1] if axes is None else tuple(axes)
    inv = tuple(np.argsort(axes))
    return make_node(np.transpose(x.data, axes), (x,), lambda g: (np.transpose(g, inv),))


def getitem(x: Tensor, index) -> Tensor:
    shape = x.shape
    parts = index if isinstance(index, tuple) else (index,)
    basic = all(isinstance(p, (int, slice)) or p is Ellipsis or p is None for p in parts)

    def back(g):
        out = np.zeros(shape, dtype=g.dtype)
        if basic:
            out[index] = g
        else:
            np.add.at(out, index, g)
        return (out,)

    return make_node(x.data[index], (x,), back)


def concat(xs, axis: int = -1) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    sizes = [x.shape[axis] for x in xs]
    cuts = np.cumsum(sizes)[:-1]
    return make_node(np.concatenate([x.data for x in xs], axis=axis), xs,
                     lambda g: tuple(np.split(g, cuts, axis=axis)))


def stack(xs, axis: int = 0) -> Tensor:
    xs = [as_tensor(x) for x in xs]
    n = len(xs)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return make_node(np.stack([x.data for x in xs], axis=axis), xs, back)


# -- reductions --------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    shape = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, shape).copy(),)

    return make_node(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    n = x.size if axis is None else int(np.prod([x.shape[a] for a in np.atleast_1d(axis)]))
    return mul(sum(x, axis, keepdims), 1.0 / n)


# -- linear algebra ------------------------------------------------------

def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.shape[-1] != b.shape[-2 if b.ndim > 1 else 0]:
        raise ShapeError(f"matmul shapes {a.shape} and {b.shape} do not conform")

    def back(g):
        ga = g @ np.swapaxes(b.data, -1, -2)
        gb = np.swapaxes(a.data, -1, -2) @ g
        return _unbroadcast(ga, a.shape), _unbroadcast(gb, b.shape)

    return make_node(a.data @ b.data, (a, b), back)


def affine(x: Tensor, W: Tensor, b: Tensor | None = None) -> Tensor:
    """``x @ W + b`` over any number of leading axes."""
    if x.shape[-1] != W.shape[0]:
        raise ShapeError(f"affine: input width {x.shape[-1]} != weight rows {W.shape[0]}")
    if b is not None and b.shape != (W.shape[1],):
        raise ShapeError(f"affine: bias shape {b.shape} != ({W.shape[1]},)")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, W.shape[0])
    y = x2 @ W.data
    if b is not None:
        y = y + b.data

    def back(g):
        g2 = g.reshape(-1, W.shape[1])
        gx = (g2 @ W.data.T).reshape(x.shape)
        gW = x2.T @ g2
        gb = g2.sum(axis=0) if b is not None else None
        return gx, gW, gb

    parents = (x, W, b) if b is not None else (x, W)
    return make_node(y.reshape(*lead, W.shape[1]), parents,
                     back if b is not None else (lambda g: back(g)[:2]))


# -- softmax / losses -------------------------------------------------------

def _softmax(z: np.ndarray, axis: int) -> np.ndarray:
    e = np.exp(z - z.max(axis=axis, keepdims=True))
    return e / e.sum(axis=axis, keepdims=True)


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    y = _softmax(x.data, axis)
    return make_node(y, (x,),
                     lambda g: (y * (g - (g * y).sum(axis=axis, keepdims=True)),))


def log_softmax(x: Tensor, axis: int = -1) -> Tensor:
    z = x.data - x.data.max(axis=axis, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=axis, keepdims=True))
    y = z - lse
    p = np.exp(y)
    return make_node(y, (x,), lambda g: (g - p * g.sum(axis=axis, keepdims=True),))


def cross_entropy(logits: Tensor, labels, num_classes: int | None = None) -> Tensor:
    """Mean negative log-likelihood of integer ``labels`` under softmax(logits)."""
    labels = np.asarray(labels, dtype=np.int64)
    B, K = logits.shape
    k = num_classes or K
    if labels.shape != (B,):
        raise ShapeError(f"labels shape {labels.shape} != ({B},)")
    if labels.size and (labels.min() < 0 or labels.max() >= k):
        raise LabelRangeError(f"labels must lie in [0, {k})")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1))
    rows = np.arange(B)
    loss = np.mean(lse - z[rows, labels])

    def back(g):
        p = np.exp(z - lse[:, None])
        p[rows, labels] -= 1
        return (p * (g / B),)

    return make_node(np.asarray(loss, dtype=logits.dtype), (logits,), back)


# -- convolutional ------------------------------------------------------

def conv2d(x: Tensor, w: Tensor, b: Tensor, stride: int = 1, padding: int = 0) -> Tensor:
    """Cross-correlation of ``x`` (B, C, H, W) with ``w`` (O, C, kh, kw)."""
    if x.ndim != 4 or w.ndim != 4 or x.shape[1] != w.shape[1]:
        raise ShapeError(f"conv2d: input {x.shape} incompatible with kernel {w.shape}")
    kh, kw = w.shape[2:]
    if x.shape[2] + 2 * padding < kh or x.shape[3] + 2 * padding < kw:
        raise ShapeError("conv2d: kernel larger than padded input")
    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(w.data)
    y = kernels.conv2d_forward(xd, wd, b.data, stride, padding)

    def back(g):
        return kernels.conv2d_backward(xd, wd, np.ascontiguousarray(g), stride, padding)

    return make_node(y, (x, w, b), back)


def maxpool2d(x: Tensor, k: int) -> Tensor:
    if x.ndim != 4 or x.shape[2] < k or x.shape[3] < k:
        raise ShapeError(f"maxpool2d: input {x.shape} smaller than window {k}")
    y, idx = kernels.maxpool2d_forward(np.ascontiguousarray(x.data), k)
    shape = x.shape
    return make_node(y, (x,), lambda g: (kernels.maxpool2d_backward(g, idx, shape, k),))


def batchnorm2d(x: Tensor, gamma: Tensor, beta: Tensor, running_mean: np.ndarray,
                running_var: np.ndarray, training: bool, momentum: float = 0.1,
                eps: float = 1e-5) -> Tensor:
    """Per-channel normalisation; batch statistics update the running
    buffers in place during training, inference uses the buffers only."""
    C = x.shape[1]
    if gamma.shape != (C,) or beta.shape != (C,):
        raise ShapeError(f"batchnorm2d: {C} channels but affine params {gamma.shape}")
    axes = (0, 2, 3)
    shp = (1, C, 1, 1)
    if training:
        mu = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        m = x.size // C
        running_mean *= 1 - momentum
        running_mean += momentum * mu
        running_var *= 1 - momentum
        running_var += momentum * var * (m / max(m - 1, 1))
    else:
        mu, var = running_mean, running_var
    inv = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mu.reshape(shp)) * inv.reshape(shp)
    y = (xhat * gamma.data.reshape(shp) + beta.data.reshape(shp)).astype(x.dtype)

    def back(g):
        gg = (g * xhat).sum(axis=axes)
        gb = g.sum(axis=axes)
        gxhat = g * gamma.data.reshape(shp)
        if training:
            m = x.size // C
            gx = (inv.reshape(shp) / m) * (
                m * gxhat - gxhat.sum(axis=axes, keepdims=True)
                - xhat * (gxhat * xhat).sum(axis=axes, keepdims=True)
            )
        else:
            gx = gxhat * inv.reshape(shp)
        return gx.astype(x.dtype), gg, gb

    return make_node(y, (x, gamma, beta), back)


# -- recurrent cells ------------------------------------------------------

def rnn_cell(h_prev: Tensor, x_t: Tensor, W_x: Tensor, W_h: Tensor, b: Tensor) -> Tensor:
    """``tanh(x_t W_x + h_prev W_h + b)`` for a batch of rows."""
    if x_t.shape[-1] != W_x.shape[0] or h_prev.shape[-1] != W_h.shape[0]:
        raise ShapeError("rnn_cell: input/state widths do not match the weights")
    y = np.tanh(x_t.data @ W_x.data + h_prev.data @ W_h.data + b.data)

    def back(g):
        dz = g * (1 - y * y)
        return (dz @ W_h.data.T, dz @ W_x.data.T,
                x_t.data.T @ dz, h_prev.data.T @ dz, dz.sum(axis=0))

    return make_node(y, (h_prev, x_t, W_x, W_h, b), back)


def lstm_cell(h_prev: Tensor, c_prev: Tensor, x_t: Tensor, W: Tensor, b: Tensor):
    """One LSTM step; ``W`` maps ``[h_prev, x_t]`` to gate pre-activations
    ordered forget, input, candidate, output.  Returns ``(h_t, C_t)``."""
    H = h_prev.shape[-1]
    if W.shape != (H + x_t.shape[-1], 4 * H) or c_prev.shape != h_prev.shape:
        raise ShapeError(f"lstm_cell: weight {W.shape} does not fit state {H} / input {x_t.shape}")
    hx = np.concatenate([h_prev.data, x_t.data], axis=1)
    z = hx @ W.data + b.data
    c_p = np.ascontiguousarray(c_prev.data)
    h, c, gates, tc = kernels.lstm_pointwise_forward(np.ascontiguousarray(z), c_p)
    hc = np.concatenate([h, c], axis=1)

    def back(g):
        gh = np.ascontiguousarray(g[:, :H])
        gc = np.ascontiguousarray(g[:, H:])
        dz, dc_prev = kernels.lstm_pointwise_backward(gates, tc, c_p, gh, gc)
        dhx = dz @ W.data.T
        return dhx[:, :H], dc_prev, dhx[:, H:], hx.T @ dz, dz.sum(axis=0)

    node = make_node(hc, (h_prev, c_prev, x_t, W, b), back)
    return node[:, :H], node[:, H:]


# -- attention ------------------------------------------------------------

def scaled_dot_attention(x: Tensor, Wq, bq, Wk, bk, Wv, bv, return_weights: bool = False):
    """``softmax(Q K^T / sqrt(d_k)) V`` with ``Q, K, V`` affine images of ``x``.

    ``x`` is (..., n, d); the softmax runs over the key axis.
    """
    q = affine(x, Wq, bq)
    k = affine(x, Wk, bk)
    v = affine(x, Wv, bv)
    d_k = k.shape[-1]
    if d_k <= 0:
        raise ShapeError("attention needs d_k > 0")
    axes = tuple(range(k.ndim - 2)) + (k.ndim - 1, k.ndim - 2)
    scores = mul(matmul(q, transpose(k, axes)), 1.0 / np.sqrt(d_k))
    weights = softmax(scores, axis=-1)
    out = matmul(weights, v)
    return (out, weights) if return_weights else out


def bilinear_matrix(n_in: int, n_out: int, dtype=np.float32) -> np.ndarray:
    """(n_in, n_out) linear-interpolation map with aligned end points;
    the identity when ``n_in == n_out``."""
    if n_in < 2 or n_out < 2:
        raise ShapeError("bilinear resampling needs at least two samples on each side")
    R = np.zeros((n_in, n_out), dtype=np.float64)
    pos = np.arange(n_out) * (n_in - 1) / (n_out - 1)
    lo = np.floor(pos).astype(int)
    hi = np.minimum(lo + 1, n_in - 1)
    frac = pos - lo
    for j in range(n_out):
        R[lo[j], j] += 1 - frac[j]
        R[hi[j], j] += frac[j]
    return R.astype(dtype)
