"""Exit criteria, each run at its stated size and tolerance.

Every test records a one-line verdict that is printed in the terminal
summary under "acceptance criteria".  The end-to-end criteria share one
desk-scale run driven through the command line (about 20 minutes on one
core).
"""

import json
import math
import time
from pathlib import Path

import mpmath
import numpy as np
import pytest
from scipy import stats

from sissa.cli import EXIT_OK, main
from sissa.codec import CodecError, MessageType, ReturnCode, SomeIpPacket, decode_packet, encode_packet
from sissa.evaluation import CLASS_NAMES, DEFAULT_GROUPS, ConfusionMatrix, confusion, f1_score, metrics, roc_auc
from sissa.failure import WeibullParams, hazard_rate, sample_failure_time, weibull_cdf, weibull_median, weibull_pdf
from sissa.pipeline import load_dataset
from sissa.verify import check_models, check_primitives

pytestmark = pytest.mark.acceptance

ROOT = Path(__file__).resolve().parents[1]
DESK = ROOT / "configs" / "desk.yaml"


# ---------------------------------------------------------------- 1 codec

def _random_packets(rng, n):
    """Draw every field up front; per-field generator calls would dominate the timing."""
    u16 = rng.integers(0, 1 << 16, (n, 4))
    u8 = rng.integers(0, 256, (n, 2))
    mts = rng.choice(list(MessageType), n)
    rcs = rng.choice(list(ReturnCode), n)
    sizes = rng.integers(0, 65, n)
    blob = rng.bytes(int(sizes.sum()))
    ends = np.cumsum(sizes)
    return [SomeIpPacket.build(int(a), int(b), int(c), int(d), mt, rc, blob[e - k:e], int(iv), int(pv))
            for (a, b, c, d), (iv, pv), mt, rc, k, e in zip(u16.tolist(), u8.tolist(), mts, rcs,
                                                            sizes.tolist(), ends.tolist())]


def test_criterion_1_codec(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(1)
    bad_roundtrips = 0
    for p in _random_packets(rng, 100_000):
        bad_roundtrips += decode_packet(encode_packet(p)) != p
    outcomes = {"different": 0, "classified": 0, "identical": 0, "crash": 0}
    kinds = rng.integers(0, 4, 10_000)
    for p, kind in zip(_random_packets(rng, 10_000), kinds):
        buf = bytearray(encode_packet(p))
        if kind < 2:  # overwrite one byte with a different value
            i = int(rng.integers(0, len(buf)))
            buf[i] = (buf[i] + int(rng.integers(1, 256))) % 256
        elif kind == 2:  # truncate
            del buf[int(rng.integers(0, len(buf))):]
        else:  # append junk
            buf += rng.bytes(int(rng.integers(1, 9)))
        try:
            q = decode_packet(bytes(buf))
        except CodecError:
            outcomes["classified"] += 1
        except Exception:  # noqa: BLE001 - anything unclassified is a crash
            outcomes["crash"] += 1
        else:
            outcomes["different" if q != p else "identical"] += 1
    elapsed = time.perf_counter() - t0
    ok = bad_roundtrips == 0 and outcomes["crash"] == 0 and outcomes["identical"] == 0 and elapsed < 10
    criterion(1, ok, f"roundtrip failures {bad_roundtrips}/100000, mutations {outcomes}, {elapsed:.1f}s")
    assert ok


# ---------------------------------------------------------------- 2 Weibull

def test_criterion_2_weibull(criterion):
    with mpmath.workdps(30):
        _check_weibull(criterion)


def _check_weibull(criterion):
    t0 = time.perf_counter()
    alpha = 2.0
    worst = 0.0
    ks_p, median_err = {}, {}
    for k, beta in enumerate((0.5, 1.0, 3.0)):
        p = WeibullParams(alpha, beta)
        n_pts = 3334 if k < 2 else 3332
        t = np.geomspace(1e-4 * alpha, 4 * alpha, n_pts)
        pdf, cdf, haz = weibull_pdf(t, p), weibull_cdf(t, p), hazard_rate(t, p)
        a, b = mpmath.mpf(alpha), mpmath.mpf(beta)
        for i, ti in enumerate(t):
            z = (mpmath.mpf(ti) / a) ** b
            S = mpmath.exp(-z)  # survival taken directly; 1 - F cancels in the far tail
            F = -mpmath.expm1(-z)
            f = (b / a) * (mpmath.mpf(ti) / a) ** (b - 1) * S
            h = f / S
            for got, want in ((pdf[i], f), (cdf[i], F), (haz[i], h)):
                worst = max(worst, float(abs((got - want) / want)))
        x = sample_failure_time(p, np.random.default_rng(10 + k), size=100_000)
        ks_p[beta] = stats.kstest(x, lambda v: weibull_cdf(v, p)).pvalue
        median_err[beta] = abs(np.median(x) / (alpha * math.log(2) ** (1 / beta)) - 1)
        assert weibull_median(p) == pytest.approx(alpha * math.log(2) ** (1 / beta), rel=1e-15)
    elapsed = time.perf_counter() - t0
    ok = worst < 1e-9 and min(ks_p.values()) > 0.01 and max(median_err.values()) < 0.01 and elapsed < 30
    criterion(2, ok, f"max rel err {worst:.2e} at 10000 points, KS p {_fmt(ks_p)}, "
                     f"median err {_fmt(median_err)}, {elapsed:.1f}s")
    assert ok


def _fmt(d):
    return "{" + ", ".join(f"{k}: {v:.3g}" for k, v in d.items()) + "}"


# ---------------------------------------------------------------- 3 gradients

def test_criterion_3_gradients(criterion):
    t0 = time.perf_counter()
    p64 = check_primitives(np.float64, 1e-6)
    p32 = check_primitives(np.float32, 1e-3)
    models = check_models(dtype=np.float64, tolerance=1e-3, window=8, features=12, mapped=16, hidden=16)
    elapsed = time.perf_counter() - t0
    worst64 = max(r.max_rel_error for r in p64.values())
    worst32 = max(r.max_rel_error for r in p32.values())
    worst_m = {v: r.max_rel_error for v, r in models.items()}
    ok = (all(r.passed for r in p64.values()) and all(r.passed for r in p32.values())
          and all(r.passed for r in models.values()) and elapsed < 300)
    criterion(3, ok, f"{len(p64)} primitives: f64 max {worst64:.1e} (<1e-6), f32 max {worst32:.1e} (<1e-3); "
                     f"models {_fmt(worst_m)} (<1e-3); {elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 4 metrics

GROUP_OF = {c: g for g, members in enumerate(DEFAULT_GROUPS.values()) for c in members}


def _brute(t, p, c):
    tp = sum(a == c and b == c for a, b in zip(t, p))
    fp = sum(a != c and b == c for a, b in zip(t, p))
    fn = sum(a == c and b != c for a, b in zip(t, p))
    prec = tp / (tp + fp) if tp + fp else 0.0
    rec = tp / (tp + fn) if tp + fn else 0.0
    return (len(t) - fp - fn) / len(t), prec, rec, (2 * prec * rec / (prec + rec) if prec + rec else 0.0)


def test_criterion_4_metrics(criterion):
    rng = np.random.default_rng(4)
    mismatches = 0
    for _ in range(100):
        n = int(rng.integers(50, 300))
        t = rng.integers(0, 7, n).tolist()
        p = [a if rng.random() < 0.7 else int(rng.integers(0, 7)) for a in t]
        rep = metrics(confusion(t, p))
        tally = np.zeros((7, 7), int)
        for a, b in zip(t, p):
            tally[a, b] += 1
        mismatches += not np.array_equal(rep.confusion.counts, tally)
        for c, name in enumerate(CLASS_NAMES):
            m = rep.per_class[name]
            mismatches += (m.accuracy, m.precision, m.recall, m.f1) != pytest.approx(_brute(t, p, c), abs=1e-15)
        gt, gp = [GROUP_OF[a] for a in t], [GROUP_OF[b] for b in p]
        for g, name in enumerate(DEFAULT_GROUPS):
            m = rep.grouped[name]
            mismatches += (m.accuracy, m.precision, m.recall, m.f1) != pytest.approx(_brute(gt, gp, g), abs=1e-15)
        # AUC against the pairwise statistic, exact
        y = rng.integers(0, 7, 500)
        raw = np.round(rng.random((500, 7)) + 0.4 * np.eye(7)[y], 1)
        probs = raw / raw.sum(1, keepdims=True)
        c = int(rng.integers(0, 7))
        s = probs[:, c]
        pos, neg = s[y == c], s[y != c]
        diff = pos[:, None] - neg[None, :]
        pairwise = ((diff > 0).sum() + 0.5 * (diff == 0).sum()) / diff.size
        mismatches += roc_auc(y, probs, c).auc != pairwise
    spot = round(f1_score(0.992, 0.994), 3)
    # attack confusions that stay inside the attack group leave the grouped row perfect
    cm = np.diag([500] * 7)
    cm[0, 0], cm[0, 6], cm[6, 6], cm[6, 0] = 497, 3, 496, 4
    cm[1, 1], cm[1, 3], cm[3, 3], cm[3, 1] = 499, 1, 498, 2
    composed = metrics(ConfusionMatrix(cm)).grouped["Attack"].f1
    ok = mismatches == 0 and spot == 0.993 and composed == 1.0
    criterion(4, ok, f"{mismatches} oracle mismatches over 100 instances; F1(0.992, 0.994) = {spot}; "
                     f"composed grouped Attack F1 = {composed:.3f}")
    assert ok


# ---------------------------------------------------------------- desk run

@pytest.fixture(scope="session")
def desk_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("desk")
    timings, codes = {}, {}
    for cmd in ("generate", "dataset", "train", "eval"):
        t0 = time.perf_counter()
        codes[cmd] = main([cmd, "--config", str(DESK), "--out", str(out)])
        timings[cmd] = time.perf_counter() - t0
        if codes[cmd] != EXIT_OK:
            break
    return out, codes, timings


def test_criterion_5_pipeline(criterion, desk_run, tmp_path):
    out, codes, timings = desk_run
    assert codes.get("dataset") == EXIT_OK, codes
    split = load_dataset(out / "dataset")
    t0 = time.perf_counter()
    again = tmp_path / "again"
    code = main(["dataset", "--config", str(out / "dataset" / "config.yaml"), "--out", str(again),
                 "--override", f"dataset.traces={out / 'traces' / 'trace_000.jsonl'}"])
    regen = time.perf_counter() - t0
    h1 = json.loads((out / "dataset" / "manifest.json").read_text())["content_hash"]
    h2 = json.loads((again / "dataset" / "manifest.json").read_text())["content_hash"]
    same_bytes = all((out / "dataset" / f).read_bytes() == (again / "dataset" / f).read_bytes()
                     for f in ("train.f32", "train.labels.u8", "val.f32", "val.labels.u8"))
    tr = np.bincount(split.train_y, minlength=7)
    va = np.bincount(split.val_y, minlength=7)
    x = np.concatenate([split.train_x, split.val_x])
    onehot = all(np.array_equal(x[..., a:b].sum(-1), np.ones(x.shape[:2]))
                 for a, b in ((8, 13), (13, 17)))
    build = timings["generate"] + timings["dataset"]
    ok = (code == EXIT_OK and split.n == 32 and np.all(tr == 240) and np.all(va == 60)
          and not np.isnan(x).any() and onehot and h1 == h2 and same_bytes and build + regen < 120)
    criterion(5, ok, f"train per class {tr.tolist()}, val per class {va.tolist()}, NaN {int(np.isnan(x).sum())}, "
                     f"one-hot ok {onehot}, regenerated hash equal {h1 == h2}; "
                     f"build {build:.0f}s + regenerate {regen:.0f}s")
    assert ok


def _eval_summary(out):
    return json.loads((out / "eval" / "summary.json").read_text())


def test_criterion_6_detection(criterion, desk_run):
    out, codes, timings = desk_run
    assert codes == dict.fromkeys(("generate", "dataset", "train", "eval"), EXIT_OK), codes
    f1 = _eval_summary(out)["L-A"]["macro_f1"]
    fi = json.loads((out / "eval" / "L-A" / "metrics.json").read_text())["per_class"]["FakeInterface"]["f1"]
    hist = (out / "train" / "L-A" / "history.csv").read_text().splitlines()
    total = sum(timings.values())
    ok = f1 >= 0.95 and fi >= 0.99 and len(hist) - 1 <= 50
    criterion(6, ok, f"L-A macro-F1 {f1:.4f} (>=0.95), FakeInterface F1 {fi:.4f} (>=0.99), "
                     f"{len(hist) - 1} epochs; desk run {total / 60:.1f} min for all six variants")
    assert ok


def test_criterion_7_ordering(criterion, desk_run):
    out, codes, _ = desk_run
    assert codes.get("eval") == EXIT_OK, codes
    s = {v: r["macro_f1"] for v, r in _eval_summary(out).items()}
    band = 0.005
    checks = {
        "L-A>=L": s["L-A"] >= s["L"],
        "L>=R-A": s["L"] >= s["R-A"],
        "R-A>=C-A": s["R-A"] >= s["C-A"],
        "C-A>=C-0.5pt": s["C-A"] >= s["C"] - band,
        "R-A>=R-0.5pt": s["R-A"] >= s["R"] - band,
        "L-A>=L-0.5pt": s["L-A"] >= s["L"] - band,
    }
    failed = [k for k, v in checks.items() if not v]
    scores = ", ".join(f"{v} {s[v]:.4f}" for v in ("C", "C-A", "R", "R-A", "L", "L-A"))
    criterion(7, not failed, f"macro-F1 {scores}; failed: {failed or 'none'}")
    assert not failed, f"ordering violated: {failed} ({scores})"


# ---------------------------------------------------------------- 8 overhead

def test_criterion_8_overhead(criterion, tmp_path):
    t0 = time.perf_counter()
    code = main(["bench", "--config", str(DESK), "--out", str(tmp_path)])
    elapsed = time.perf_counter() - t0
    assert code == EXIT_OK
    rows = json.loads((tmp_path / "bench" / "overhead.json").read_text())
    grid = {(r["variant"], r["window"]) for r in rows}
    c32 = next(r for r in rows if r["variant"] == "C" and r["window"] == 32)
    complete = len(grid) == 42 and all(r["params"] > 0 and r["latency_median"] > 0 for r in rows)
    ok = complete and c32["latency_median"] < 5e-3 and elapsed < 600
    criterion(8, ok, f"{len(grid)} variant/window reports, C w32 median {c32['latency_median'] * 1e3:.3f} ms "
                     f"(<5 ms), {elapsed:.0f}s")
    assert ok
