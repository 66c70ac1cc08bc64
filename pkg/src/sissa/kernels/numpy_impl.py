"""Reference kernels in vectorised numpy."""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x, kh, kw, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    B, C, Ho, Wo = win.shape[:4]
    cols = win.transpose(0, 2, 3, 1, 4, 5).reshape(B * Ho * Wo, C * kh * kw)
    return cols, Ho, Wo


def conv2d_forward(x, w, b, stride, pad):
    O, C, kh, kw = w.shape
    B = x.shape[0]
    cols, Ho, Wo = _im2col(x, kh, kw, stride, pad)
    y = cols @ w.reshape(O, -1).T + b
    return np.ascontiguousarray(y.reshape(B, Ho, Wo, O).transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gy, stride, pad):
    O, C, kh, kw = w.shape
    B, _, H, W = x.shape
    cols, Ho, Wo = _im2col(x, kh, kw, stride, pad)
    gflat = gy.transpose(0, 2, 3, 1).reshape(B * Ho * Wo, O)
    gw = (gflat.T @ cols).reshape(w.shape)
    gb = gflat.sum(axis=0)
    gcols = (gflat @ w.reshape(O, -1)).reshape(B, Ho, Wo, C, kh, kw)
    gxp = np.zeros((B, C, H + 2 * pad, W + 2 * pad), dtype=x.dtype)
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i:i + stride * Ho:stride, j:j + stride * Wo:stride] += (
                gcols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
            )
    gx = gxp[:, :, pad:pad + H, pad:pad + W] if pad else gxp
    return np.ascontiguousarray(gx), gw, gb


def maxpool2d_forward(x, k):
    B, C, H, W = x.shape
    Ho, Wo = H // k, W // k
    xr = x[:, :, :Ho * k, :Wo * k].reshape(B, C, Ho, k, Wo, k)
    xr = xr.transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho, Wo, k * k)
    idx = xr.argmax(axis=-1)
    y = np.take_along_axis(xr, idx[..., None], axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx.astype(np.int64)


def maxpool2d_backward(gy, idx, x_shape, k):
    B, C, H, W = x_shape
    Ho, Wo = gy.shape[2], gy.shape[3]
    g = np.zeros((B, C, Ho, Wo, k * k), dtype=gy.dtype)
    np.put_along_axis(g, idx[..., None], gy[..., None], axis=-1)
    g = g.reshape(B, C, Ho, Wo, k, k).transpose(0, 1, 2, 4, 3, 5).reshape(B, C, Ho * k, Wo * k)
    gx = np.zeros(x_shape, dtype=gy.dtype)
    gx[:, :, :Ho * k, :Wo * k] = g
    return gx


def _sigmoid(z):
    return 0.5 * (np.tanh(0.5 * z) + 1.0)


def lstm_pointwise_forward(z, c_prev):
    """Gate nonlinearities and state update; ``z`` holds pre-activations in
    ``[forget, input, candidate, output]`` order along the last axis."""
    h = c_prev.shape[-1]
    f = _sigmoid(z[:, :h])
    i = _sigmoid(z[:, h:2 * h])
    g = np.tanh(z[:, 2 * h:3 * h])
    o = _sigmoid(z[:, 3 * h:])
    c = f * c_prev + i * g
    tc = np.tanh(c)
    gates = np.concatenate([f, i, g, o], axis=1)
    return o * tc, c, gates, tc


def lstm_pointwise_backward(gates, tc, c_prev, gh, gc):
    h = c_prev.shape[-1]
    f, i, g, o = gates[:, :h], gates[:, h:2 * h], gates[:, 2 * h:3 * h], gates[:, 3 * h:]
    dc = gc + gh * o * (1.0 - tc * tc)
    dz = np.concatenate([
        dc * c_prev * f * (1.0 - f),
        dc * g * i * (1.0 - i),
        dc * i * (1.0 - g * g),
        gh * tc * o * (1.0 - o),
    ], axis=1)
    return dz, dc * f
