from __future__ import annotations

import math
from typing import Iterator

import numpy as np

from . import functional as F
from .tensor import Tensor, get_default_dtype


class Parameter(Tensor):
    __slots__ = ()

    def __init__(self, data, name: str | None = None):
        super().__init__(data, requires_grad=True, name=name)


def kaiming_uniform(rng: np.random.Generator, shape, fan_in: int) -> np.ndarray:
    bound = math.sqrt(6.0 / fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Container that discovers parameters, buffers and children by attribute."""

    training = True

    def __call__(self, *args, **kwargs):
        return self.forward(*args, **kwargs)

    def forward(self, *args, **kwargs):
        raise NotImplementedError

    def _children(self) -> Iterator[tuple[str, object]]:
        for name, v in vars(self).items():
            if isinstance(v, (Parameter, Module)):
                yield name, v
            elif isinstance(v, (list, tuple)) and v and all(isinstance(m, Module) for m in v):
                for i, m in enumerate(v):
                    yield f"{name}.{i}", m

    def named_parameters(self, prefix: str = "") -> Iterator[tuple[str, Parameter]]:
        for name, v in self._children():
            if isinstance(v, Parameter):
                yield prefix + name, v
            else:
                yield from v.named_parameters(prefix + name + ".")

    def parameters(self) -> list[Parameter]:
        return [p for _, p in self.named_parameters()]

    def named_buffers(self, prefix: str = "") -> Iterator[tuple[str, np.ndarray]]:
        for name, arr in getattr(self, "_buffers", {}).items():
            yield prefix + name, arr
        for name, v in self._children():
            if isinstance(v, Module):
                yield from v.named_buffers(prefix + name + ".")

    def modules(self) -> Iterator["Module"]:
        yield self
        for _, v in self._children():
            if isinstance(v, Module):
                yield from v.modules()

    def train(self, mode: bool = True) -> "Module":
        for m in self.modules():
            m.training = mode
        return self

    def eval(self) -> "Module":
        return self.train(False)

    def zero_grad(self) -> None:
        for p in self.parameters():
            p.grad = None

    def state_dict(self) -> dict[str, np.ndarray]:
        state = {name: p.data.copy() for name, p in self.named_parameters()}
        state.update({name: b.copy() for name, b in self.named_buffers()})
        return state

    def load_state_dict(self, state: dict[str, np.ndarray]) -> None:
        params = dict(self.named_parameters())
        buffers = dict(self.named_buffers())
        expected = set(params) | set(buffers)
        if set(state) != expected:
            missing = sorted(expected - set(state))
            extra = sorted(set(state) - expected)
            raise KeyError(f"state mismatch: missing={missing} unexpected={extra}")
        for name, p in params.items():
            if state[name].shape != p.shape:
                raise ValueError(f"{name}: shape {state[name].shape} != {p.shape}")
            p.data = np.asarray(state[name], dtype=p.dtype).copy()
        for name, buf in buffers.items():
            buf[...] = state[name]


class Linear(Module):
    def __init__(self, n_in: int, n_out: int, rng: np.random.Generator, zero: bool = False):
        w = np.zeros((n_in, n_out)) if zero else kaiming_uniform(rng, (n_in, n_out), n_in)
        self.weight = Parameter(w)
        self.bias = Parameter(np.zeros(n_out))

    def forward(self, x: Tensor) -> Tensor:
        return F.affine(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in: int, c_out: int, k: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0):
        self.weight = Parameter(kaiming_uniform(rng, (c_out, c_in, k, k), c_in * k * k))
        self.bias = Parameter(np.zeros(c_out))
        self.stride = stride
        self.padding = padding

    def forward(self, x: Tensor) -> Tensor:
        return F.conv2d(x, self.weight, self.bias, self.stride, self.padding)


class BatchNorm2d(Module):
    def __init__(self, channels: int, momentum: float = 0.1, eps: float = 1e-5):
        self.weight = Parameter(np.ones(channels))
        self.bias = Parameter(np.zeros(channels))
        dt = get_default_dtype()
        self._buffers = {
            "running_mean": np.zeros(channels, dtype=dt),
            "running_var": np.ones(channels, dtype=dt),
        }
        self.momentum = momentum
        self.eps = eps

    def forward(self, x: Tensor) -> Tensor:
        return F.batchnorm2d(x, self.weight, self.bias, self._buffers["running_mean"],
                             self._buffers["running_var"], self.training,
                             self.momentum, self.eps)


class RNNLayer(Module):
    """Elman layer over (B, n, d) sequences; returns all hidden states (B, n, h)."""

    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator):
        s = 1.0 / math.sqrt(hidden)
        self.w_x = Parameter(rng.uniform(-s, s, size=(n_in, hidden)))
        self.w_h = Parameter(rng.uniform(-s, s, size=(hidden, hidden)))
        self.bias = Parameter(np.zeros(hidden))
        self.hidden = hidden

    def forward(self, x: Tensor) -> Tensor:
        B, n, _ = x.shape
        h = Tensor(np.zeros((B, self.hidden), dtype=x.dtype))
        states = []
        for t in range(n):
            h = F.rnn_cell(h, x[:, t, :], self.w_x, self.w_h, self.bias)
            states.append(h)
        return F.stack(states, axis=1)


class LSTMLayer(Module):
    def __init__(self, n_in: int, hidden: int, rng: np.random.Generator,
                 forget_bias: float = 1.0):
        s = 1.0 / math.sqrt(hidden)
        self.weight = Parameter(rng.uniform(-s, s, size=(hidden + n_in, 4 * hidden)))
        b = np.zeros(4 * hidden)
        b[:hidden] = forget_bias
        self.bias = Parameter(b)
        self.hidden = hidden

    def forward(self, x: Tensor) -> Tensor:
        B, n, _ = x.shape
        h = Tensor(np.zeros((B, self.hidden), dtype=x.dtype))
        c = Tensor(np.zeros((B, self.hidden), dtype=x.dtype))
        states = []
        for t in range(n):
            h, c = F.lstm_cell(h, c, x[:, t, :], self.weight, self.bias)
            states.append(h)
        return F.stack(states, axis=1)


class ResidualSelfAttention(Module):
    """``x + Attention(x)``; the value projection starts at zero so the
    block is the identity map at initialisation."""

    def __init__(self, dim: int, rng: np.random.Generator):
        self.query = Linear(dim, dim, rng)
        self.key = Linear(dim, dim, rng)
        self.value = Linear(dim, dim, rng, zero=True)

    def attend(self, x: Tensor, return_weights: bool = False):
        return F.scaled_dot_attention(
            x, self.query.weight, self.query.bias, self.key.weight, self.key.bias,
            self.value.weight, self.value.bias, return_weights=return_weights,
        )

    def forward(self, x: Tensor) -> Tensor:
        return F.residual_add(x, self.attend(x))
