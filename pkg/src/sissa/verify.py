"""Finite-difference gradient checks for every primitive and model variant."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .models import VARIANTS, ModelConfig, build_model
from .nn import functional as F
from .nn.gradcheck import GradCheckReport, grad_check
from .nn.tensor import Tensor, precision


def _t(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.standard_normal(shape) * scale, requires_grad=True)


def _primitive_cases(rng: np.random.Generator) -> dict[str, tuple[Callable, dict]]:
    cases: dict[str, tuple[Callable, dict]] = {}

    x, W, b = _t(rng, 3, 4, 5), _t(rng, 5, 6), _t(rng, 6)
    cases["affine"] = (lambda: F.affine(x, W, b), {"x": x, "W": W, "b": b})

    xc, kc, bc = _t(rng, 2, 2, 6, 6), _t(rng, 3, 2, 3, 3, scale=0.5), _t(rng, 3)
    cases["conv2d"] = (lambda: F.conv2d(xc, kc, bc, 1, 1), {"x": xc, "kernel": kc, "b": bc})

    # distinct values keep the max-pool argmax away from ties
    xp = Tensor(rng.permutation(2 * 3 * 6 * 6).reshape(2, 3, 6, 6) * 0.1, requires_grad=True)
    cases["maxpool2d"] = (lambda: F.maxpool2d(xp, 2), {"x": xp})

    xb, gb, bb = _t(rng, 4, 3, 3, 3), _t(rng, 3), _t(rng, 3)
    rm, rv = np.zeros(3, dtype=xb.dtype), np.ones(3, dtype=xb.dtype)
    cases["batchnorm2d"] = (lambda: F.batchnorm2d(xb, gb, bb, rm.copy(), rv.copy(), True),
                            {"x": xb, "gamma": gb, "beta": bb})

    xs = _t(rng, 2, 5, 3)
    wx, wh, br = _t(rng, 3, 4, scale=0.5), _t(rng, 4, 4, scale=0.5), _t(rng, 4)

    def rnn_unroll():
        h = Tensor(np.zeros((2, 4), dtype=xs.dtype))
        hs = []
        for t in range(xs.shape[1]):
            h = F.rnn_cell(h, xs[:, t, :], wx, wh, br)
            hs.append(h)
        return F.stack(hs, axis=1)

    cases["rnn_cell"] = (rnn_unroll, {"x": xs, "W_x": wx, "W_h": wh, "b": br})

    wl, bl = _t(rng, 4 + 3, 16, scale=0.5), _t(rng, 16)

    def lstm_unroll():
        h = Tensor(np.zeros((2, 4), dtype=xs.dtype))
        c = Tensor(np.zeros((2, 4), dtype=xs.dtype))
        hs = []
        for t in range(xs.shape[1]):
            h, c = F.lstm_cell(h, c, xs[:, t, :], wl, bl)
            hs.append(F.concat([h, c], axis=-1))
        return F.stack(hs, axis=1)

    cases["lstm_cell"] = (lstm_unroll, {"x": xs, "W": wl, "b": bl})

    xa = _t(rng, 2, 5, 4)
    att = {n: _t(rng, *s, scale=0.5) for n, s in
           (("Wq", (4, 4)), ("bq", (4,)), ("Wk", (4, 4)), ("bk", (4,)), ("Wv", (4, 4)), ("bv", (4,)))}
    cases["scaled_dot_attention"] = (
        lambda: F.scaled_dot_attention(xa, *att.values()), {"x": xa, **att})

    xr, wr, brr = _t(rng, 2, 5, 4), _t(rng, 4, 4, scale=0.5), _t(rng, 4)
    cases["residual_add"] = (lambda: F.residual_add(xr, F.tanh(F.affine(xr, wr, brr))),
                             {"x": xr, "W": wr, "b": brr})

    logits = _t(rng, 6, 7)
    labels = rng.integers(0, 7, 6)
    cases["cross_entropy"] = (lambda: F.cross_entropy(logits, labels), {"logits": logits})

    xm = _t(rng, 3, 4)
    cases["softmax"] = (lambda: F.softmax(xm, axis=-1), {"x": xm})
    cases["relu"] = (lambda: F.relu(xm + 0.05), {"x": xm})
    cases["sigmoid"] = (lambda: F.sigmoid(xm), {"x": xm})
    cases["mean"] = (lambda: F.mean(xm, axis=0), {"x": xm})
    return cases


def check_primitives(dtype=np.float64, tolerance: float = 1e-6, seed: int = 0) -> dict[str, GradCheckReport]:
    out = {}
    with precision(dtype):
        for name, (fn, tensors) in _primitive_cases(np.random.default_rng(seed)).items():
            out[name] = grad_check(fn, tensors, tolerance=tolerance, seed=seed)
    return out


def tiny_config(variant: str, window: int = 8, features: int = 12, mapped: int = 16,
                hidden: int = 16, conv_channels=(4, 8)) -> ModelConfig:
    return ModelConfig(variant, window, features, mapped, hidden, tuple(conv_channels))


def _randomize(model, rng: np.random.Generator) -> None:
    # zero-initialised pieces (biases, the attention value map) would make
    # several gradients trivially zero; perturb every parameter instead
    for p in model.parameters():
        p.data = (p.data + rng.standard_normal(p.shape) * 0.1).astype(p.dtype)


def check_model(config: ModelConfig, dtype=np.float64, tolerance: float = 1e-3, batch: int = 3,
                seed: int = 0, max_entries: int | None = None) -> GradCheckReport:
    rng = np.random.default_rng(seed)
    with precision(dtype):
        model = build_model(config, seed)
        _randomize(model, rng)
        model.train()
        x = Tensor(rng.uniform(0, 1, (batch, config.window, config.features)), requires_grad=True)
        tensors = [("input", x)] + [(n, p) for n, p in model.named_parameters()]
        return grad_check(lambda: model(x), tensors, tolerance=tolerance, seed=seed,
                          max_entries=max_entries)


def check_models(variants=VARIANTS, dtype=np.float64, tolerance: float = 1e-3, seed: int = 0,
                 max_entries: int | None = None, **tiny) -> dict[str, GradCheckReport]:
    return {v: check_model(tiny_config(v, **tiny), dtype, tolerance, seed=seed, max_entries=max_entries)
            for v in variants}

