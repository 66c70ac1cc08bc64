"""The six detector variants and their training loop.

Every variant is ``PacketMapping -> backbone -> [RSAB] -> pool -> head``:

* ``C``: bilinear resample of the feature axis to an ``n x n`` image, two
  Conv/ReLU/MaxPool/BN stages, a 1x1 conv + ReLU, global mean.
* ``R``: two Elman layers, last time step.
* ``L``: two LSTM layers, mean over time.

``-A`` inserts a residual self-attention block right before pooling.
"""

from __future__ import annotations

import csv
import io
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .nn import functional as F
from .nn.layers import (BatchNorm2d, Conv2d, Linear, LSTMLayer, Module,
                        ResidualSelfAttention, RNNLayer)
from .nn.optim import Adam, clip_grad_norm
from .nn.serialize import load_checkpoint, save_checkpoint
from .nn.tensor import Tensor, no_grad

log = logging.getLogger(__name__)

VARIANTS = ("C", "C-A", "R", "R-A", "L", "L-A")
NUM_CLASSES = 7


class ModelError(ValueError):
    pass


class SpecMismatchError(ModelError):
    pass


@dataclass(frozen=True)
class ModelConfig:
    variant: str = "L-A"
    window: int = 32
    features: int = 21
    mapped: int = 64
    hidden: int = 128
    conv_channels: tuple[int, ...] = (16, 32)
    classes: int = NUM_CLASSES

    def __post_init__(self):
        object.__setattr__(self, "conv_channels", tuple(int(c) for c in self.conv_channels))
        self.validate()

    @property
    def attention(self) -> bool:
        return self.variant.endswith("-A")

    @property
    def backbone(self) -> str:
        return self.variant[0]

    def validate(self) -> None:
        if self.variant not in VARIANTS:
            raise ModelError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.features <= 0 or self.hidden <= 0 or self.classes <= 1:
            raise ModelError("features, hidden and classes must be positive")
        if self.mapped < self.features:
            raise ModelError(f"mapped width {self.mapped} must be >= feature width {self.features}")
        if self.backbone == "C":
            if self.window < 8:
                raise ModelError("the convolutional backbone needs window >= 8")
            if not self.conv_channels:
                raise ModelError("conv_channels must name at least one stage")
            if self.window % (2 ** len(self.conv_channels)):
                raise ModelError(f"window {self.window} is not divisible by "
                                 f"2**{len(self.conv_channels)} pooling stages")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["conv_channels"] = list(self.conv_channels)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        return cls(**{k: (tuple(v) if k == "conv_channels" else v) for k, v in d.items()})


class PacketMapping(Module):
    """Per-packet ``d -> (d + d') / 2 -> d'`` expansion, ReLU after each map."""

    def __init__(self, d: int, d_out: int, rng: np.random.Generator):
        mid = (d + d_out) // 2
        self.fc1 = Linear(d, mid, rng)
        self.fc2 = Linear(mid, d_out, rng)

    def forward(self, x: Tensor) -> Tensor:
        return F.relu(self.fc2(F.relu(self.fc1(x))))


class ConvStage(Module):
    def __init__(self, c_in: int, c_out: int, rng: np.random.Generator):
        self.conv = Conv2d(c_in, c_out, 3, rng, padding=1)
        self.bn = BatchNorm2d(c_out)

    def forward(self, x: Tensor) -> Tensor:
        return self.bn(F.maxpool2d(F.relu(self.conv(x)), 2))


class SissaModel(Module):
    def __init__(self, config: ModelConfig, seed: int = 0):
        self.config = config
        rng = np.random.default_rng(seed)
        c = config
        self.pmb = PacketMapping(c.features, c.mapped, rng)
        if c.backbone == "C":
            chans = (1,) + c.conv_channels
            self.stages = [ConvStage(chans[i], chans[i + 1], rng) for i in range(len(c.conv_channels))]
            width = chans[-1]
            self.mix = Conv2d(width, width, 1, rng)
            self._resample = F.bilinear_matrix(c.mapped, c.window) if c.mapped != c.window else None
        elif c.backbone == "R":
            self.layers = [RNNLayer(c.mapped, c.hidden, rng), RNNLayer(c.hidden, c.hidden, rng)]
            width = c.hidden
        else:
            self.layers = [LSTMLayer(c.mapped, c.hidden, rng), LSTMLayer(c.hidden, c.hidden, rng)]
            width = c.hidden
        self.rsab = ResidualSelfAttention(width, rng) if c.attention else None
        self.head = Linear(width, c.classes, rng)

    def _features(self, x: Tensor) -> Tensor:
        """Backbone output as a (B, tokens, width) sequence."""
        c = self.config
        z = self.pmb(x)
        if c.backbone == "C":
            if self._resample is not None:
                z = F.matmul(z, Tensor(self._resample.astype(z.dtype)))
            B = z.shape[0]
            z = F.reshape(z, (B, 1, c.window, c.window))
            for stage in self.stages:
                z = stage(z)
            z = F.relu(self.mix(z))
            ch = z.shape[1]
            return F.transpose(F.reshape(z, (B, ch, -1)), (0, 2, 1))
        for layer in self.layers:
            z = layer(z)
        return z

    def forward(self, x) -> Tensor:
        x = x if isinstance(x, Tensor) else Tensor(x)
        c = self.config
        if x.ndim != 3 or x.shape[1:] != (c.window, c.features):
            raise SpecMismatchError(f"expected input (B, {c.window}, {c.features}), got {x.shape}")
        z = self._features(x)
        if self.rsab is not None:
            z = self.rsab(z)
        if c.backbone == "R":
            pooled = z[:, -1, :]
        else:
            pooled = F.mean(z, axis=1)
        return self.head(pooled)


def build_model(config: ModelConfig, seed: int = 0) -> SissaModel:
    return SissaModel(config, seed)


def count_params(model: Module) -> int:
    return int(sum(p.size for p in model.parameters()))


def predict(model: SissaModel, windows, batch_size: int = 256) -> tuple[np.ndarray, np.ndarray]:
    """Labels and class probabilities in inference mode."""
    x = np.asarray(windows, dtype=model.head.weight.dtype)
    if x.ndim == 2:
        x = x[None]
    was_training = model.training
    model.eval()
    probs = []
    try:
        with no_grad():
            for i in range(0, len(x), batch_size):
                probs.append(F.softmax(model(x[i:i + batch_size]), axis=-1).data)
    finally:
        model.train(was_training)
    p = np.concatenate(probs) if probs else np.zeros((0, model.config.classes))
    return p.argmax(axis=1), p


# ---------------------------------------------------------------- training

@dataclass(frozen=True)
class TrainConfig:
    max_epochs: int = 150
    batch_size: int = 64
    lr: float = 1e-3
    seed: int = 0
    patience: int = 20
    clip: float = 5.0

    def validate(self) -> None:
        if self.max_epochs <= 0 or self.batch_size <= 0 or self.lr <= 0:
            raise ModelError("max_epochs, batch_size and lr must be positive")


@dataclass
class Checkpoint:
    config: ModelConfig
    state: dict[str, np.ndarray]
    epoch: int = 0
    best_val_acc: float = 0.0
    seeds: dict = field(default_factory=dict)
    metadata: dict = field(default_factory=dict)

    def save(self, path: str | Path) -> int:
        meta = dict(self.metadata, epoch=self.epoch, best_val_acc=self.best_val_acc, seeds=self.seeds)
        return save_checkpoint(path, self.config.to_dict(), self.state, meta)

    @classmethod
    def load(cls, path: str | Path) -> "Checkpoint":
        header, state = load_checkpoint(path)
        meta = dict(header["metadata"])
        epoch = int(meta.pop("epoch", 0))
        best = float(meta.pop("best_val_acc", 0.0))
        seeds = meta.pop("seeds", {})
        return cls(ModelConfig.from_dict(header["config"]), state, epoch, best, seeds, meta)

    def build(self) -> SissaModel:
        model = build_model(self.config, int(self.seeds.get("init", 0)))
        model.load_state_dict(self.state)
        return model.eval()


HISTORY_FIELDS = ("epoch", "train_loss", "train_acc", "val_loss", "val_acc")


def history_csv(history: list[dict]) -> str:
    buf = io.StringIO()
    w = csv.DictWriter(buf, fieldnames=HISTORY_FIELDS, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for row in history:
        w.writerow({k: (f"{row[k]:.6f}" if isinstance(row[k], float) else row[k]) for k in HISTORY_FIELDS})
    return buf.getvalue()


def _evaluate(model: SissaModel, x: np.ndarray, y: np.ndarray, batch: int = 256) -> tuple[float, float]:
    model.eval()
    loss_sum, correct = 0.0, 0
    with no_grad():
        for i in range(0, len(x), batch):
            logits = model(x[i:i + batch])
            yb = y[i:i + batch]
            loss_sum += float(F.cross_entropy(logits, yb).data) * len(yb)
            correct += int((logits.data.argmax(axis=1) == yb).sum())
    model.train()
    return loss_sum / max(len(x), 1), correct / max(len(x), 1)


def train(model: SissaModel, split, config: TrainConfig | None = None,
          init_seed: int = 0) -> tuple[Checkpoint, list[dict]]:
    """Adam on cross-entropy with best-validation-accuracy checkpointing.

    The model is left holding the best parameters on return.
    """
    config = config or TrainConfig()
    config.validate()
    mc = model.config
    if split.train_x.shape[1:] != (mc.window, mc.features):
        raise SpecMismatchError(
            f"dataset windows are {split.train_x.shape[1:]}, model expects ({mc.window}, {mc.features})")
    dtype = model.head.weight.dtype
    tx = np.asarray(split.train_x, dtype=dtype)
    ty = np.asarray(split.train_y, dtype=np.int64)
    vx = np.asarray(split.val_x, dtype=dtype)
    vy = np.asarray(split.val_y, dtype=np.int64)
    rng = np.random.default_rng(config.seed)
    opt = Adam(model.parameters(), lr=config.lr)
    model.train()

    history: list[dict] = []
    best_acc, best_epoch, best_state = -1.0, 0, model.state_dict()
    stale = 0
    for epoch in range(1, config.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(tx))
        loss_sum, correct = 0.0, 0
        for i in range(0, len(order), config.batch_size):
            idx = order[i:i + config.batch_size]
            if len(idx) < 2 and mc.backbone == "C":
                continue  # batch statistics need more than one sample
            opt.zero_grad()
            logits = model(tx[idx])
            loss = F.cross_entropy(logits, ty[idx])
            loss.backward()
            if config.clip > 0:
                clip_grad_norm(opt.params, config.clip)
            opt.step()
            loss_sum += float(loss.data) * len(idx)
            correct += int((logits.data.argmax(axis=1) == ty[idx]).sum())
        val_loss, val_acc = _evaluate(model, vx, vy)
        row = {"epoch": epoch, "train_loss": loss_sum / len(tx), "train_acc": correct / len(tx),
               "val_loss": val_loss, "val_acc": val_acc}
        history.append(row)
        log.info("%s epoch %d loss %.4f acc %.4f val_loss %.4f val_acc %.4f (%.1fs)", mc.variant,
                 epoch, row["train_loss"], row["train_acc"], val_loss, val_acc,
                 time.perf_counter() - t0)
        if val_acc > best_acc:
            best_acc, best_epoch, best_state = val_acc, epoch, model.state_dict()
            stale = 0
        else:
            stale += 1
            if config.patience and stale >= config.patience:
                break
    model.load_state_dict(best_state)
    model.eval()
    ckpt = Checkpoint(mc, best_state, best_epoch, best_acc,
                      {"init": init_seed, "train": config.seed},
                      {"train_config": asdict(config), "epochs_run": len(history)})
    return ckpt, history
