"""Trace -> balanced, labelled, encoded window datasets.

Stages: ``segment_blocks`` -> ``shuffle_and_assign`` (injects one class per
block) -> ``windowize`` -> ``balance_and_split`` -> ``fit_encoding`` /
``encode_windows`` -> ``save_dataset``.  ``build_dataset`` chains them.
"""

from __future__ import annotations

import hashlib
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field
from enum import IntEnum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .attacks import AttackKind, AttackParams, apply_attack
from .codec import MessageType, ReturnCode
from .failure import FailureMode, FailureSchedule, WeibullParams, apply_failure, sample_failure_time
from .report import InjectionReport
from .seeding import derive_seed, stage_rng
from .sim import Origin, TimedPacket, Trace

log = logging.getLogger(__name__)

WINDOW_SIZES = (32, 48, 64, 80, 96, 112, 128)
MESSAGE_TYPES = tuple(MessageType)
RETURN_CODES = tuple(ReturnCode)
NUMERIC_FIELDS = ("dt", "service_id", "method_id", "length", "client_id", "session_id",
                  "protocol_version", "interface_version")
ADDRESS_FIELDS = ("src", "dst")
FORMAT_VERSION = 1

# raw table columns (one row per packet, float64)
_T, _SVC, _MTH, _LEN, _CLI, _SES, _PROTO, _IFACE, _MT, _RC = range(10)
_PAY = slice(10, 14)
_SRC, _DST = 14, 15
RAW_WIDTH = 16

_MT_INDEX = {int(m): i for i, m in enumerate(MESSAGE_TYPES)}
_RC_INDEX = {int(r): i for i, r in enumerate(RETURN_CODES)}


class ClassLabel(IntEnum):
    NORMAL = 0
    DDOS = 1
    FAKE_INTERFACE = 2
    FAKE_SOURCE = 3
    REQ_WITHOUT_RES = 4
    RES_WITHOUT_REQ = 5
    HARDWARE_FAILURE = 6


ATTACK_OF = {
    ClassLabel.DDOS: AttackKind.DDOS,
    ClassLabel.FAKE_INTERFACE: AttackKind.FAKE_INTERFACE,
    ClassLabel.FAKE_SOURCE: AttackKind.FAKE_SOURCE,
    ClassLabel.REQ_WITHOUT_RES: AttackKind.REQUEST_WITHOUT_RESPONSE,
    ClassLabel.RES_WITHOUT_REQ: AttackKind.RESPONSE_WITHOUT_REQUEST,
}


class PipelineError(ValueError):
    pass


class BlockTooSmallError(PipelineError):
    pass


class InsufficientBlocksError(PipelineError):
    pass


class InsufficientWindowsError(PipelineError):
    pass


class UnknownCategoryError(PipelineError):
    pass


class ManifestMismatchError(PipelineError):
    pass


@dataclass(frozen=True)
class InjectionRanges:
    """Per-block parameter ranges; each block draws its own values."""

    ddos_multiplier: tuple[float, float] = (2.0, 5.0)
    fake_interface: tuple[float, float] = (0.2, 0.5)
    fake_source: tuple[float, float] = (0.3, 0.6)
    req_without_res: tuple[float, float] = (0.4, 0.8)
    res_without_req: tuple[float, float] = (0.3, 0.7)
    # Weibull onset: scale as a fraction of the block span, shape range,
    # and the truncation horizon (fraction of span) for the onset draw
    failure_scale: float = 0.25
    failure_shape: tuple[float, float] = (0.5, 3.0)
    failure_horizon: float = 0.5
    # a failing ECU is drawn from the service providers seen in the block;
    # a failed client would mostly produce orphan responses instead
    failure_providers_only: bool = True
    failure_mode: FailureMode = field(default_factory=FailureMode)

    def range_for(self, label: ClassLabel) -> tuple[float, float]:
        return {
            ClassLabel.DDOS: self.ddos_multiplier,
            ClassLabel.FAKE_INTERFACE: self.fake_interface,
            ClassLabel.FAKE_SOURCE: self.fake_source,
            ClassLabel.REQ_WITHOUT_RES: self.req_without_res,
            ClassLabel.RES_WITHOUT_REQ: self.res_without_req,
        }[label]

    def to_dict(self) -> dict:
        d = asdict(self)
        d["failure_mode"] = self.failure_mode.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "InjectionRanges":
        d = dict(d)
        if "failure_mode" in d:
            d["failure_mode"] = FailureMode.from_dict(d["failure_mode"])
        for k, v in list(d.items()):
            if isinstance(v, list):
                d[k] = tuple(v)
        return cls(**d)


@dataclass
class Block:
    block_id: int
    trace: Trace


@dataclass
class AssignedBlock:
    block_id: int
    label: ClassLabel
    trace: Trace
    report: InjectionReport
    seed: int
    params: dict = field(default_factory=dict)


@dataclass
class RawWindow:
    """``table`` holds one raw row per packet (see ``RAW_WIDTH``)."""

    block_id: int
    index: int
    label: ClassLabel
    table: np.ndarray
    seed: int
    n_injected: int
    has_signature: bool

    @property
    def window_id(self) -> str:
        return f"b{self.block_id}:w{self.index}"


@dataclass
class Window:
    features: np.ndarray
    label: ClassLabel
    block_id: int
    seed: int


# ---------------------------------------------------------------- segmentation

def segment_blocks(trace: Trace, block_len: int, window: int | None = None,
                   first_id: int = 0) -> list[Block]:
    if block_len <= 0:
        raise BlockTooSmallError("block_len must be positive")
    if window is not None and block_len < window:
        raise BlockTooSmallError(f"block_len {block_len} is smaller than window {window}")
    pk = trace.packets
    return [Block(first_id + i, trace.with_packets(pk[i * block_len:(i + 1) * block_len]))
            for i in range(len(pk) // block_len)]


def inject_block(trace: Trace, label: ClassLabel, seed: int,
                 ranges: InjectionRanges | None = None) -> tuple[Trace, InjectionReport, dict]:
    """Apply the scenario for ``label`` to one block."""
    ranges = ranges or InjectionRanges()
    label = ClassLabel(label)
    rng = np.random.default_rng(seed)
    if label is ClassLabel.NORMAL:
        return trace, InjectionReport("NORMAL"), {}
    if label is ClassLabel.HARDWARE_FAILURE:
        if not trace.packets:
            raise InsufficientBlocksError("cannot inject a failure into an empty block")
        t0, t1 = trace.packets[0].timestamp, trace.packets[-1].timestamp
        span = max(t1 - t0, 1e-6)
        senders = sorted({tp.src for tp in trace.packets})
        if ranges.failure_providers_only:
            providers = {b.provider for b in trace.topology.bindings}
            senders = [e for e in senders if e in providers] or senders
        ecu = senders[int(rng.integers(len(senders)))]
        beta = float(rng.uniform(*ranges.failure_shape))
        wp = WeibullParams(ranges.failure_scale * span, beta)
        onset = t0 + float(sample_failure_time(wp, rng, horizon=ranges.failure_horizon * span))
        sched = FailureSchedule(ecu, onset, ranges.failure_mode, wp, seed=int(rng.integers(2**62)))
        out, report = apply_failure(trace, sched)
        return out, report, {"ecu": ecu, "onset": onset, "alpha": wp.alpha, "beta": beta}
    lo, hi = ranges.range_for(label)
    intensity = float(rng.uniform(lo, hi))
    params = AttackParams(ATTACK_OF[label], intensity, seed=int(rng.integers(2**62)))
    out, report = apply_attack(trace, params)
    return out, report, {"intensity": intensity}


def _inject_job(job) -> AssignedBlock:
    block, label, seed, ranges = job
    out, report, params = inject_block(block.trace, label, seed, ranges)
    return AssignedBlock(block.block_id, ClassLabel(label), out, report, seed, params)


def _map(fn, jobs: list, workers: int) -> list:
    # executor.map preserves input order, so the merge is deterministic
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as ex:
            return list(ex.map(fn, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    return [fn(j) for j in jobs]


def normalize_plan(class_plan) -> dict[ClassLabel, int]:
    if isinstance(class_plan, int):
        return {c: class_plan for c in ClassLabel}
    return {ClassLabel(c) if not isinstance(c, str) else ClassLabel[c]: int(k)
            for c, k in dict(class_plan).items()}


def shuffle_and_assign(blocks: Sequence[Block], class_plan, seed: int,
                       ranges: InjectionRanges | None = None,
                       workers: int = 1) -> list[AssignedBlock]:
    """Permute blocks, hand out ``class_plan[c]`` blocks per class in label
    order and inject each block with its own derived seed."""
    plan = normalize_plan(class_plan)
    need = sum(plan.values())
    if need > len(blocks):
        raise InsufficientBlocksError(f"plan needs {need} blocks, only {len(blocks)} available")
    perm = stage_rng(seed, "shuffle").permutation(len(blocks))
    jobs = []
    pos = 0
    for label in sorted(plan):
        for _ in range(plan[label]):
            b = blocks[int(perm[pos])]
            pos += 1
            jobs.append((b, label, derive_seed(seed, "inject", b.block_id), ranges))
    return _map(_inject_job, jobs, workers)


# ---------------------------------------------------------------- windows

def raw_table(packets: Sequence[TimedPacket]) -> np.ndarray:
    out = np.empty((len(packets), RAW_WIDTH))
    for r, tp in enumerate(packets):
        p = tp.packet
        try:
            mt = _MT_INDEX[int(p.message_type)]
            rc = _RC_INDEX[int(p.return_code)]
        except KeyError as exc:
            raise UnknownCategoryError(f"value {exc.args[0]:#x} outside the one-hot vocabulary") from None
        pay = (bytes(p.payload[:4]) + b"\0\0\0\0")[:4]
        out[r, :10] = (tp.timestamp, p.service_id, p.method_id, p.length, p.client_id,
                       p.session_id, p.protocol_version, p.interface_version, mt, rc)
        out[r, _PAY] = tuple(pay)
        out[r, _SRC] = tp.src
        out[r, _DST] = tp.dst
    return out


def windowize(block: AssignedBlock | Block, n: int, stride: int | None = None) -> list[RawWindow]:
    stride = stride or n
    if n <= 0 or stride <= 0:
        raise PipelineError("window size and stride must be positive")
    if isinstance(block, Block):
        block = AssignedBlock(block.block_id, ClassLabel.NORMAL, block.trace,
                              InjectionReport("NORMAL"), 0)
    pk = block.trace.packets
    if len(pk) < n:
        return []
    table = raw_table(pk)
    injected = np.fromiter((tp.origin is not Origin.LEGIT for tp in pk), bool, len(pk))
    drops = np.sort(np.asarray(block.report.drop_times, dtype=float))
    out = []
    for k, start in enumerate(range(0, len(pk) - n + 1, stride)):
        sl = slice(start, start + n)
        t_lo, t_hi = table[start, _T], table[start + n - 1, _T]
        n_inj = int(injected[sl].sum())
        n_drop = int(np.searchsorted(drops, t_hi, "right") - np.searchsorted(drops, t_lo, "left"))
        out.append(RawWindow(block.block_id, k, block.label, table[sl].copy(), block.seed,
                             n_inj, n_inj > 0 or n_drop > 0))
    return out


def _window_job(job) -> list[RawWindow]:
    block, n, stride = job
    return windowize(block, n, stride)


def windowize_all(blocks: Sequence[AssignedBlock], n: int, stride: int | None = None,
                  workers: int = 1) -> list[RawWindow]:
    parts = _map(_window_job, [(b, n, stride) for b in blocks], workers)
    return [w for part in parts for w in part]


def signature_filter(windows: Iterable[RawWindow]) -> list[RawWindow]:
    """Drop non-NORMAL windows whose span contains no trace of the injected
    scenario (no non-legit packet, no dropped packet)."""
    return [w for w in windows if w.label is ClassLabel.NORMAL or w.has_signature]


def balance_and_split(windows: Sequence, ratio: float = 0.8, seed: int = 0,
                      per_class: int | None = None) -> tuple[list, list]:
    """Truncate every class to the smallest class count (or ``per_class``),
    shuffle within class and cut ``round(count * ratio)`` into train."""
    if not 0.0 < ratio < 1.0:
        raise PipelineError("ratio must be in (0, 1)")
    by_class: dict[ClassLabel, list] = {c: [] for c in ClassLabel}
    for w in windows:
        by_class[ClassLabel(w.label)].append(w)
    counts = {c: len(v) for c, v in by_class.items()}
    m = min(counts.values())
    if per_class is not None:
        if m < per_class:
            raise InsufficientWindowsError(
                f"need {per_class} windows per class, counts are "
                + ", ".join(f"{c.name}={k}" for c, k in counts.items()))
        m = per_class
    if m < 10:
        raise InsufficientWindowsError(
            "need at least 10 windows per class, counts are "
            + ", ".join(f"{c.name}={k}" for c, k in counts.items()))
    n_train = int(round(m * ratio))
    train, val = [], []
    for c in ClassLabel:
        items = by_class[c]
        order = stage_rng(seed, "split", int(c)).permutation(len(items))[:m]
        chosen = [items[int(i)] for i in order]
        train.extend(chosen[:n_train])
        val.extend(chosen[n_train:])
    return train, val


# ---------------------------------------------------------------- encoding

@dataclass
class EncodingSpec:
    n: int
    include_addresses: bool = False
    stats_min: list[float] = field(default_factory=list)
    stats_max: list[float] = field(default_factory=list)

    @property
    def numeric_fields(self) -> tuple[str, ...]:
        return NUMERIC_FIELDS + (ADDRESS_FIELDS if self.include_addresses else ())

    @property
    def feature_names(self) -> list[str]:
        names = list(NUMERIC_FIELDS)
        names += [f"mt_{m.name}" for m in MESSAGE_TYPES]
        names += [f"rc_{r.name}" for r in RETURN_CODES]
        names += [f"payload_{i}" for i in range(4)]
        if self.include_addresses:
            names += list(ADDRESS_FIELDS)
        return names

    @property
    def d(self) -> int:
        return len(self.feature_names)

    def to_dict(self) -> dict:
        return {"n": self.n, "d": self.d, "include_addresses": self.include_addresses,
                "feature_names": self.feature_names, "numeric_fields": list(self.numeric_fields),
                "stats_min": list(self.stats_min), "stats_max": list(self.stats_max)}

    @classmethod
    def from_dict(cls, d: dict) -> "EncodingSpec":
        return cls(int(d["n"]), bool(d["include_addresses"]),
                   [float(x) for x in d["stats_min"]], [float(x) for x in d["stats_max"]])


def _numeric(tables: np.ndarray, include_addresses: bool) -> np.ndarray:
    """(..., n, RAW_WIDTH) raw rows -> (..., n, k) unnormalised numeric block."""
    t = tables[..., _T]
    dt = np.zeros_like(t)
    dt[..., 1:] = np.maximum(np.diff(t, axis=-1), 0.0) * 1e6
    cols = [np.log1p(dt)] + [tables[..., c] for c in (_SVC, _MTH, _LEN, _CLI, _SES, _PROTO, _IFACE)]
    if include_addresses:
        cols += [tables[..., _SRC], tables[..., _DST]]
    return np.stack(cols, axis=-1)


def fit_encoding(train: Sequence[RawWindow], n: int, include_addresses: bool = False) -> EncodingSpec:
    if not train:
        raise InsufficientWindowsError("cannot fit normalisation on an empty training set")
    num = _numeric(np.stack([w.table for w in train]), include_addresses)
    flat = num.reshape(-1, num.shape[-1])
    return EncodingSpec(n, include_addresses, flat.min(axis=0).tolist(), flat.max(axis=0).tolist())


def encode_tables(tables: np.ndarray, spec: EncodingSpec) -> np.ndarray:
    tables = np.asarray(tables, dtype=np.float64)
    if tables.shape[-2:] != (spec.n, RAW_WIDTH):
        raise PipelineError(f"raw window shape {tables.shape[-2:]} does not match n={spec.n}")
    if not spec.stats_min:
        raise PipelineError("encoding spec has no normalisation statistics")
    lead = tables.shape[:-1]
    num = _numeric(tables, spec.include_addresses)
    lo = np.asarray(spec.stats_min)
    span = np.asarray(spec.stats_max) - lo
    span[span <= 0] = 1.0
    num = np.clip((num - lo) / span, 0.0, 1.0)
    mt = tables[..., _MT].astype(np.int64)
    rc = tables[..., _RC].astype(np.int64)
    if mt.min(initial=0) < 0 or mt.max(initial=0) >= len(MESSAGE_TYPES):
        raise UnknownCategoryError("message-type index outside the one-hot vocabulary")
    if rc.min(initial=0) < 0 or rc.max(initial=0) >= len(RETURN_CODES):
        raise UnknownCategoryError("return-code index outside the one-hot vocabulary")
    oh_mt = np.zeros(lead + (len(MESSAGE_TYPES),))
    np.put_along_axis(oh_mt, mt[..., None], 1.0, axis=-1)
    oh_rc = np.zeros(lead + (len(RETURN_CODES),))
    np.put_along_axis(oh_rc, rc[..., None], 1.0, axis=-1)
    pay = tables[..., _PAY] / 255.0
    parts = [num[..., :8], oh_mt, oh_rc, pay]
    if spec.include_addresses:
        parts.append(num[..., 8:])
    return np.concatenate(parts, axis=-1).astype(np.float32)


def encode_window(raw: RawWindow, spec: EncodingSpec) -> Window:
    return Window(encode_tables(raw.table, spec), raw.label, raw.block_id, raw.seed)


def encode_windows(raws: Sequence[RawWindow], spec: EncodingSpec) -> np.ndarray:
    if not raws:
        return np.zeros((0, spec.n, spec.d), dtype=np.float32)
    return encode_tables(np.stack([w.table for w in raws]), spec)


# ---------------------------------------------------------------- dataset

@dataclass
class DatasetConfig:
    window: int = 32
    stride: int | None = None
    block_len: int = 256
    blocks_per_class: int | dict = 60
    windows_per_class: int | None = None
    ratio: float = 0.8
    include_addresses: bool = False
    require_signature: bool = True
    ranges: InjectionRanges = field(default_factory=InjectionRanges)

    def validate(self) -> None:
        if self.window not in WINDOW_SIZES:
            raise PipelineError(f"window must be one of {WINDOW_SIZES}, got {self.window}")
        if self.block_len < self.window:
            raise BlockTooSmallError(f"block_len {self.block_len} is smaller than window {self.window}")
        if not 0.0 < self.ratio < 1.0:
            raise PipelineError("ratio must be in (0, 1)")


@dataclass
class DatasetSplit:
    train_x: np.ndarray
    train_y: np.ndarray
    val_x: np.ndarray
    val_y: np.ndarray
    manifest: dict

    @property
    def spec(self) -> EncodingSpec:
        return EncodingSpec.from_dict(self.manifest["encoding"])

    @property
    def n(self) -> int:
        return int(self.train_x.shape[1])

    @property
    def d(self) -> int:
        return int(self.train_x.shape[2])

    @property
    def train(self) -> list[Window]:
        return _as_windows(self.train_x, self.train_y, self.manifest.get("train_blocks"))

    @property
    def val(self) -> list[Window]:
        return _as_windows(self.val_x, self.val_y, self.manifest.get("val_blocks"))


def _as_windows(x, y, blocks) -> list[Window]:
    blocks = blocks or [-1] * len(y)
    return [Window(x[i], ClassLabel(int(y[i])), int(blocks[i]), -1) for i in range(len(y))]


def _class_counts(y: np.ndarray) -> dict[str, int]:
    return {c.name: int(np.sum(y == c)) for c in ClassLabel}


def assemble_split(train: Sequence[RawWindow], val: Sequence[RawWindow], n: int,
                   include_addresses: bool = False, extra: dict | None = None) -> DatasetSplit:
    spec = fit_encoding(train, n, include_addresses)
    tx, vx = encode_windows(train, spec), encode_windows(val, spec)
    ty = np.array([int(w.label) for w in train], dtype=np.uint8)
    vy = np.array([int(w.label) for w in val], dtype=np.uint8)
    manifest = {
        "format": FORMAT_VERSION,
        "encoding": spec.to_dict(),
        "label_map": {c.name: int(c) for c in ClassLabel},
        "class_counts": {"train": _class_counts(ty), "val": _class_counts(vy)},
        "train_ids": [w.window_id for w in train],
        "val_ids": [w.window_id for w in val],
        "train_blocks": [w.block_id for w in train],
        "val_blocks": [w.block_id for w in val],
    }
    manifest.update(extra or {})
    return DatasetSplit(tx, ty, vx, vy, manifest)


def build_dataset(traces: Trace | Sequence[Trace], config: DatasetConfig, seed: int,
                  workers: int = 1) -> DatasetSplit:
    config.validate()
    traces = [traces] if isinstance(traces, Trace) else list(traces)
    blocks: list[Block] = []
    for tr in traces:
        blocks.extend(segment_blocks(tr, config.block_len, config.window, first_id=len(blocks)))
    assigned = shuffle_and_assign(blocks, config.blocks_per_class, seed, config.ranges, workers)
    windows = windowize_all(assigned, config.window, config.stride, workers)
    n_raw = len(windows)
    if config.require_signature:
        windows = signature_filter(windows)
    log.info("windows: %d raw, %d after signature filter", n_raw, len(windows))
    train, val = balance_and_split(windows, config.ratio, seed, config.windows_per_class)
    extra = {
        "seed": int(seed),
        "ratio": config.ratio,
        "stride": config.stride or config.window,
        "block_len": config.block_len,
        "blocks_per_class": {c.name: k for c, k in normalize_plan(config.blocks_per_class).items()},
        "require_signature": config.require_signature,
        "injection_ranges": config.ranges.to_dict(),
        "trace_digests": [t.digest() for t in traces],
        "block_seeds": {str(b.block_id): b.seed for b in assigned},
        "block_params": {str(b.block_id): b.params for b in assigned},
    }
    return assemble_split(train, val, config.window, config.include_addresses, extra)


# ---------------------------------------------------------------- persistence

_FILES = ("train.f32", "train.labels.u8", "val.f32", "val.labels.u8")


def _payloads(split: DatasetSplit) -> dict[str, bytes]:
    return {
        "train.f32": np.ascontiguousarray(split.train_x, dtype="<f4").tobytes(),
        "train.labels.u8": np.ascontiguousarray(split.train_y, dtype=np.uint8).tobytes(),
        "val.f32": np.ascontiguousarray(split.val_x, dtype="<f4").tobytes(),
        "val.labels.u8": np.ascontiguousarray(split.val_y, dtype=np.uint8).tobytes(),
    }


def content_hash(manifest: dict, payloads: dict[str, bytes]) -> str:
    h = hashlib.sha256()
    body = {k: v for k, v in manifest.items() if k != "content_hash"}
    h.update(json.dumps(body, sort_keys=True).encode())
    for name in _FILES:
        h.update(name.encode())
        h.update(payloads[name])
    return h.hexdigest()


def save_dataset(split: DatasetSplit, path: str | Path) -> str:
    root = Path(path)
    root.mkdir(parents=True, exist_ok=True)
    payloads = _payloads(split)
    manifest = dict(split.manifest)
    manifest["shapes"] = {"train": list(split.train_x.shape), "val": list(split.val_x.shape)}
    manifest["content_hash"] = content_hash(manifest, payloads)
    for name, raw in payloads.items():
        (root / name).write_bytes(raw)
    (root / "manifest.json").write_text(json.dumps(manifest, sort_keys=True, indent=1))
    split.manifest = manifest
    return manifest["content_hash"]


def load_dataset(path: str | Path) -> DatasetSplit:
    root = Path(path)
    manifest = json.loads((root / "manifest.json").read_text())
    payloads = {name: (root / name).read_bytes() for name in _FILES}
    if content_hash(manifest, payloads) != manifest.get("content_hash"):
        raise ManifestMismatchError(f"{root}: content hash does not match the manifest")
    shapes = manifest["shapes"]
    tx = np.frombuffer(payloads["train.f32"], dtype="<f4").reshape(shapes["train"]).astype(np.float32)
    vx = np.frombuffer(payloads["val.f32"], dtype="<f4").reshape(shapes["val"]).astype(np.float32)
    ty = np.frombuffer(payloads["train.labels.u8"], dtype=np.uint8).copy()
    vy = np.frombuffer(payloads["val.labels.u8"], dtype=np.uint8).copy()
    if len(ty) != len(tx) or len(vy) != len(vx):
        raise ManifestMismatchError(f"{root}: label count does not match feature count")
    return DatasetSplit(tx, ty, vx, vy, manifest)
