"""JIT-compiled kernels; signatures mirror :mod:`sissa.kernels.numpy_impl`."""

import functools

import numba as nb
import numpy as np

from . import numpy_impl as _np_impl

njit = functools.partial(nb.njit, cache=True, nogil=True, fastmath=False)


@njit
def _im2col(x, kh, kw, stride, pad, Ho, Wo):
    B, C, H, W = x.shape
    cols = np.zeros((B * Ho * Wo, C * kh * kw), dtype=x.dtype)
    for b in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                r = (b * Ho + oh) * Wo + ow
                col = 0
                for c in range(C):
                    for i in range(kh):
                        ih = oh * stride + i - pad
                        for j in range(kw):
                            iw = ow * stride + j - pad
                            if 0 <= ih < H and 0 <= iw < W:
                                cols[r, col] = x[b, c, ih, iw]
                            col += 1
    return cols


@njit
def _conv2d_forward_direct(x, w, b, stride, pad):
    O, C, kh, kw = w.shape
    B, _, H, W = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    out = np.empty((B, O, Ho, Wo), dtype=x.dtype)
    for bb in range(B):
        for o in range(O):
            out[bb, o] = b[o]
        for c in range(C):
            for i in range(kh):
                for j in range(kw):
                    for o in range(O):
                        wv = w[o, c, i, j]
                        for oh in range(Ho):
                            ih = oh * stride + i - pad
                            if ih < 0 or ih >= H:
                                continue
                            for ow in range(Wo):
                                iw = ow * stride + j - pad
                                if 0 <= iw < W:
                                    out[bb, o, oh, ow] += wv * x[bb, c, ih, iw]
    return out


@njit
def _conv2d_forward_gemm(x, w, b, stride, pad):
    O, C, kh, kw = w.shape
    B, _, H, W = x.shape
    Ho = (H + 2 * pad - kh) // stride + 1
    Wo = (W + 2 * pad - kw) // stride + 1
    cols = _im2col(x, kh, kw, stride, pad, Ho, Wo)
    wm = np.ascontiguousarray(w.reshape(O, C * kh * kw).T)
    y = cols @ wm
    out = np.empty((B, O, Ho, Wo), dtype=x.dtype)
    for bb in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                r = (bb * Ho + oh) * Wo + ow
                for o in range(O):
                    out[bb, o, oh, ow] = y[r, o] + b[o]
    return out


def conv2d_forward(x, w, b, stride, pad):
    # a patch this short makes the GEMM too skinny to pay for im2col
    if w.shape[1] * w.shape[2] * w.shape[3] < 32:
        return _conv2d_forward_direct(x, w, b, stride, pad)
    return _conv2d_forward_gemm(x, w, b, stride, pad)


@njit
def conv2d_backward(x, w, gy, stride, pad):
    O, C, kh, kw = w.shape
    B, _, H, W = x.shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    cols = _im2col(x, kh, kw, stride, pad, Ho, Wo)
    gflat = np.empty((B * Ho * Wo, O), dtype=gy.dtype)
    gb = np.zeros(O, dtype=gy.dtype)
    for bb in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                r = (bb * Ho + oh) * Wo + ow
                for o in range(O):
                    v = gy[bb, o, oh, ow]
                    gflat[r, o] = v
                    gb[o] += v
    gw = (np.ascontiguousarray(gflat.T) @ cols).reshape(O, C, kh, kw)
    gcols = gflat @ np.ascontiguousarray(w.reshape(O, C * kh * kw))
    gx = np.zeros((B, C, H, W), dtype=x.dtype)
    for bb in range(B):
        for oh in range(Ho):
            for ow in range(Wo):
                r = (bb * Ho + oh) * Wo + ow
                col = 0
                for c in range(C):
                    for i in range(kh):
                        ih = oh * stride + i - pad
                        for j in range(kw):
                            iw = ow * stride + j - pad
                            if 0 <= ih < H and 0 <= iw < W:
                                gx[bb, c, ih, iw] += gcols[r, col]
                            col += 1
    return gx, gw, gb


@njit
def maxpool2d_forward(x, k):
    B, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    y = np.empty((B, C, Ho, Wo), dtype=x.dtype)
    idx = np.empty((B, C, Ho, Wo), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for oh in range(Ho):
                for ow in range(Wo):
                    best = x[b, c, oh * k, ow * k]
                    arg = 0
                    for i in range(k):
                        for j in range(k):
                            v = x[b, c, oh * k + i, ow * k + j]
                            if v > best:
                                best = v
                                arg = i * k + j
                    y[b, c, oh, ow] = best
                    idx[b, c, oh, ow] = arg
    return y, idx


@njit
def _maxpool2d_backward(gy, idx, gx, k):
    B, C, Ho, Wo = gy.shape
    for b in range(B):
        for c in range(C):
            for oh in range(Ho):
                for ow in range(Wo):
                    a = idx[b, c, oh, ow]
                    gx[b, c, oh * k + a // k, ow * k + a % k] += gy[b, c, oh, ow]
    return gx


def maxpool2d_backward(gy, idx, x_shape, k):
    gx = np.zeros(x_shape, dtype=gy.dtype)
    return _maxpool2d_backward(np.ascontiguousarray(gy), idx, gx, k)


# The forward gates are five transcendentals per unit.  Without SVML numba
# evaluates them one scalar libm call at a time, roughly 10x slower than
# numpy's vectorised ufuncs, so the forward pass reuses the numpy version.
lstm_pointwise_forward = _np_impl.lstm_pointwise_forward


@njit
def lstm_pointwise_backward(gates, tc, c_prev, gh, gc):
    B, h = c_prev.shape
    dz = np.empty_like(gates)
    dc_prev = np.empty_like(c_prev)
    for b in range(B):
        for u in range(h):
            f = gates[b, u]
            i = gates[b, h + u]
            g = gates[b, 2 * h + u]
            o = gates[b, 3 * h + u]
            t = tc[b, u]
            dc = gc[b, u] + gh[b, u] * o * (1.0 - t * t)
            dz[b, u] = dc * c_prev[b, u] * f * (1.0 - f)
            dz[b, h + u] = dc * g * i * (1.0 - i)
            dz[b, 2 * h + u] = dc * i * (1.0 - g * g)
            dz[b, 3 * h + u] = gh[b, u] * t * o * (1.0 - o)
            dc_prev[b, u] = dc * f
    return dz, dc_prev
