import json
from collections import Counter
from dataclasses import dataclass

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sissa.codec import MessageType, ReturnCode, SomeIpPacket
from sissa.pipeline import (
    RAW_WIDTH,
    BlockTooSmallError,
    ClassLabel,
    DatasetConfig,
    EncodingSpec,
    InjectionRanges,
    InsufficientBlocksError,
    InsufficientWindowsError,
    ManifestMismatchError,
    PipelineError,
    RawWindow,
    balance_and_split,
    build_dataset,
    encode_tables,
    fit_encoding,
    inject_block,
    load_dataset,
    raw_table,
    save_dataset,
    segment_blocks,
    shuffle_and_assign,
    signature_filter,
    windowize,
)
from sissa.sim import Origin, SimConfig, TimedPacket, default_topology, run_sim

CFG = DatasetConfig(window=32, block_len=128, blocks_per_class=10, windows_per_class=20)


@pytest.fixture(scope="module")
def trace():
    return run_sim(SimConfig(default_topology(), duration=60.0, mean_request_interval=0.05, seed=1))


@pytest.fixture(scope="module")
def split(trace):
    return build_dataset(trace, CFG, seed=3)


def test_segment_arithmetic(trace):
    blocks = segment_blocks(trace, 100)
    assert len(blocks) == len(trace) // 100
    assert [b.block_id for b in blocks] == list(range(len(blocks)))
    assert blocks[1].trace.packets == trace.packets[100:200]
    with pytest.raises(BlockTooSmallError):
        segment_blocks(trace, 16, window=32)


@pytest.mark.parametrize("n, stride", [(32, None), (32, 8), (48, 48), (32, 17)])
def test_window_count(trace, n, stride):
    block = segment_blocks(trace, 200)[0]
    ws = windowize(block, n, stride)
    s = stride or n
    assert len(ws) == (200 - n) // s + 1
    assert all(w.table.shape == (n, RAW_WIDTH) for w in ws)
    assert np.array_equal(ws[1].table, raw_table(block.trace.packets[s:s + n]))


def test_failure_onset_within_horizon(trace):
    block = segment_blocks(trace, 256)[0]
    out, rep, params = inject_block(block.trace, ClassLabel.HARDWARE_FAILURE, seed=4)
    t0, t1 = block.trace.packets[0].timestamp, block.trace.packets[-1].timestamp
    assert t0 <= params["onset"] <= t0 + 0.5 * (t1 - t0)
    assert params["ecu"] in {4, 5, 6}
    assert 0.5 <= params["beta"] <= 3.0
    assert rep.touched


def test_assignment_uses_distinct_blocks(trace):
    blocks = segment_blocks(trace, 128)
    assigned = shuffle_and_assign(blocks, 5, seed=1)
    ids = [b.block_id for b in assigned]
    assert len(set(ids)) == len(ids) == 35
    assert Counter(b.label for b in assigned) == {c: 5 for c in ClassLabel}
    assert len({b.seed for b in assigned}) == 35
    with pytest.raises(InsufficientBlocksError):
        shuffle_and_assign(blocks, len(blocks), seed=1)


def test_signature_filter_keeps_normal():
    tab = np.zeros((4, RAW_WIDTH))
    ws = [RawWindow(0, 0, ClassLabel.NORMAL, tab, 0, 0, False),
          RawWindow(1, 0, ClassLabel.DDOS, tab, 0, 0, False),
          RawWindow(2, 0, ClassLabel.DDOS, tab, 0, 3, True)]
    assert [w.block_id for w in signature_filter(ws)] == [0, 2]


def test_exact_balance_and_split(split):
    assert split.train_x.shape == (7 * 16, 32, 21)
    assert split.val_x.shape == (7 * 4, 32, 21)
    assert Counter(split.train_y.tolist()) == {c: 16 for c in range(7)}
    assert Counter(split.val_y.tolist()) == {c: 4 for c in range(7)}
    assert not set(split.manifest["train_ids"]) & set(split.manifest["val_ids"])


def test_features_well_formed(split):
    x = np.concatenate([split.train_x, split.val_x])
    assert x.dtype == np.float32 and np.isfinite(x).all()
    assert x.min() >= 0.0 and x.max() <= 1.0
    np.testing.assert_array_equal(x[..., 8:13].sum(-1), 1.0)
    np.testing.assert_array_equal(x[..., 13:17].sum(-1), 1.0)
    # the first packet of a window has no predecessor, so its gap is zero
    assert split.spec.stats_min[0] == 0.0
    assert np.all(x[:, 0, 0] == 0.0)


def test_stats_fitted_on_train_only(split):
    spec = split.spec
    assert spec.d == 21 and len(spec.feature_names) == 21
    # the training set reaches both ends of every varying numeric column
    tr = split.train_x[..., :8].reshape(-1, 8)
    varying = np.array(spec.stats_max) > np.array(spec.stats_min)
    assert np.allclose(tr.min(0)[varying], 0.0) and np.allclose(tr.max(0)[varying], 1.0)


def test_encoding_oracle():
    pk = [
        TimedPacket(1.0, 1, 4, SomeIpPacket.build(0x1001, 1, 1, 5, MessageType.REQUEST, payload=b"\x00\xff\x10")),
        TimedPacket(1.001, 4, 1, SomeIpPacket.build(0x1001, 1, 1, 5, MessageType.RESPONSE,
                                                    ReturnCode.E_NOT_OK, b"\x80\x80\x80\x80\x80")),
    ]
    table = raw_table(pk)
    spec = EncodingSpec(2, False, [0.0] * 8, [np.log1p(2000.0), 0x2000, 2, 20, 2, 10, 2, 2])
    x = encode_tables(table, spec)
    assert x.shape == (2, 21)
    np.testing.assert_allclose(x[0, :8], [0, 0x1001 / 0x2000, 0.5, 11 / 20, 0.5, 0.5, 0.5, 0.5], rtol=1e-6)
    assert x[1, 0] == pytest.approx(np.log1p(1000.0) / np.log1p(2000.0), rel=1e-5)
    assert x[0, 8:13].tolist() == [1, 0, 0, 0, 0]
    assert x[1, 8:13].tolist() == [0, 0, 0, 1, 0]
    assert x[1, 13:17].tolist() == [0, 1, 0, 0]
    np.testing.assert_allclose(x[0, 17:], [0, 1, 16 / 255, 0], rtol=1e-6)
    np.testing.assert_allclose(x[1, 17:], [128 / 255] * 4, rtol=1e-6)


def test_address_columns_opt_in(trace):
    cfg = DatasetConfig(window=32, block_len=128, blocks_per_class=10, windows_per_class=20,
                        include_addresses=True)
    sp = build_dataset(trace, cfg, seed=3)
    assert sp.d == 23
    assert sp.spec.feature_names[-2:] == ["src", "dst"]


def test_regeneration_hash_identical(trace, split, tmp_path):
    h1 = save_dataset(split, tmp_path / "a")
    h2 = save_dataset(build_dataset(trace, CFG, seed=3), tmp_path / "b")
    h3 = save_dataset(build_dataset(trace, CFG, seed=4), tmp_path / "c")
    assert h1 == h2 != h3
    for name in ("train.f32", "val.labels.u8", "manifest.json"):
        assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()


def test_parallel_matches_serial(trace, split, tmp_path):
    par = build_dataset(trace, CFG, seed=3, workers=2)
    assert np.array_equal(par.train_x, split.train_x)
    assert save_dataset(par, tmp_path / "p") == save_dataset(split, tmp_path / "s")


def test_load_roundtrip_and_tamper(split, tmp_path):
    save_dataset(split, tmp_path)
    back = load_dataset(tmp_path)
    assert np.array_equal(back.train_x, split.train_x)
    assert np.array_equal(back.val_y, split.val_y)
    assert back.spec.feature_names == split.spec.feature_names
    raw = bytearray((tmp_path / "val.f32").read_bytes())
    raw[7] ^= 1
    (tmp_path / "val.f32").write_bytes(bytes(raw))
    with pytest.raises(ManifestMismatchError):
        load_dataset(tmp_path)


def test_manifest_tamper(split, tmp_path):
    save_dataset(split, tmp_path)
    m = json.loads((tmp_path / "manifest.json").read_text())
    m["seed"] = 99
    (tmp_path / "manifest.json").write_text(json.dumps(m))
    with pytest.raises(ManifestMismatchError):
        load_dataset(tmp_path)


def test_too_few_windows(trace):
    with pytest.raises(InsufficientWindowsError):
        build_dataset(trace, DatasetConfig(window=32, block_len=128, blocks_per_class=10,
                                           windows_per_class=500), seed=1)


@pytest.mark.parametrize("kw", [dict(window=40), dict(block_len=16), dict(ratio=1.0)])
def test_config_validation(kw):
    with pytest.raises(PipelineError):
        DatasetConfig(**kw).validate()


def test_ranges_roundtrip():
    r = InjectionRanges(ddos_multiplier=(3.0, 4.0), failure_shape=(1.0, 2.0))
    assert InjectionRanges.from_dict(json.loads(json.dumps(r.to_dict()))) == r


def test_fit_requires_training_windows():
    with pytest.raises(InsufficientWindowsError):
        fit_encoding([], 32)


@dataclass
class _W:
    label: int
    uid: int


@settings(max_examples=60, deadline=None)
@given(counts=st.lists(st.integers(10, 60), min_size=7, max_size=7),
       ratio=st.floats(0.5, 0.9), seed=st.integers(0, 1000))
def test_balance_property(counts, ratio, seed):
    items = [_W(c, i) for c, k in enumerate(counts) for i in range(k)]
    train, val = balance_and_split(items, ratio, seed)
    m = min(counts)
    k = round(m * ratio)
    assert Counter(w.label for w in train) == {c: k for c in range(7)}
    assert Counter(w.label for w in val) == {c: m - k for c in range(7)}
    ids = [(w.label, w.uid) for w in train + val]
    assert len(set(ids)) == len(ids)
    again = balance_and_split(items, ratio, seed)
    assert [(w.label, w.uid) for w in again[0]] == [(w.label, w.uid) for w in train]


def test_unseen_category_rejected():
    tab = np.zeros((32, RAW_WIDTH))
    tab[0, 8] = 7
    spec = EncodingSpec(32, False, [0.0] * 8, [1.0] * 8)
    with pytest.raises(PipelineError):
        encode_tables(tab, spec)


def test_injected_origin_marks_signature(trace):
    block = segment_blocks(trace, 128)[0]
    out, rep, _ = inject_block(block.trace, ClassLabel.FAKE_INTERFACE, seed=2)
    from sissa.pipeline import AssignedBlock
    ws = windowize(AssignedBlock(0, ClassLabel.FAKE_INTERFACE, out, rep, 2), 32)
    for w in ws:
        start = w.index * 32
        inj = sum(p.origin is not Origin.LEGIT for p in out.packets[start:start + 32])
        assert w.n_injected == inj
        assert w.has_signature == (inj > 0)
