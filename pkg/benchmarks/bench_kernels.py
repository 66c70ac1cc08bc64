"""Time the numba kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--reps 50] [--json out.json]

Shapes follow a training batch of 64 windows with n=32 and the default
widths.  Each kernel is also checked for agreement between the backends
before it is timed.  The last rows time one forward+backward step of two
whole models under each backend.
"""

import argparse
import json
import time

import numpy as np

from sissa import kernels
from sissa.models import ModelConfig, build_model
from sissa.nn import functional as F
from sissa.nn.tensor import Tensor


def _cases(rng):
    x1 = rng.standard_normal((64, 1, 32, 32)).astype(np.float32)
    w1 = rng.standard_normal((16, 1, 3, 3)).astype(np.float32)
    x2 = rng.standard_normal((64, 16, 16, 16)).astype(np.float32)
    w2 = rng.standard_normal((32, 16, 3, 3)).astype(np.float32)
    b2 = np.zeros(32, np.float32)
    gy2 = rng.standard_normal((64, 32, 16, 16)).astype(np.float32)
    xp = rng.standard_normal((64, 32, 16, 16)).astype(np.float32)
    z = rng.standard_normal((64, 512)).astype(np.float32)
    c = rng.standard_normal((64, 128)).astype(np.float32)
    gh = rng.standard_normal((64, 128)).astype(np.float32)

    def pool_back(k):
        y, idx = k.maxpool2d_forward(xp, 2)
        return lambda: k.maxpool2d_backward(y, idx, xp.shape, 2)

    def lstm_back(k):
        _, _, gates, tc = k.lstm_pointwise_forward(z, c)
        return lambda: k.lstm_pointwise_backward(gates, tc, c, gh, gh)

    return {
        "conv2d_forward 1->16": lambda k: lambda: k.conv2d_forward(x1, w1, np.zeros(16, np.float32), 1, 1),
        "conv2d_forward 16->32": lambda k: lambda: k.conv2d_forward(x2, w2, b2, 1, 1),
        "conv2d_backward 16->32": lambda k: lambda: k.conv2d_backward(x2, w2, gy2, 1, 1),
        "maxpool2d_forward": lambda k: lambda: k.maxpool2d_forward(xp, 2),
        "maxpool2d_backward": pool_back,
        "lstm_pointwise_forward": lambda k: lambda: k.lstm_pointwise_forward(z, c),
        "lstm_pointwise_backward": lstm_back,
    }


def _flat(out):
    if isinstance(out, tuple):
        return [np.asarray(o, dtype=np.float64).ravel() for o in out]
    return [np.asarray(out, dtype=np.float64).ravel()]


def _diff(v):
    return "-" if np.isnan(v) else f"{v:.2e}"


def _time(fn, reps):
    fn()
    t = []
    for _ in range(reps):
        t0 = time.perf_counter()
        fn()
        t.append(time.perf_counter() - t0)
    return float(np.median(t))


def _model_step(variant, rng):
    x = rng.uniform(0, 1, (64, 32, 21)).astype(np.float32)
    y = rng.integers(0, 7, 64)
    model = build_model(ModelConfig(variant, 32), 0)

    def step():
        model.zero_grad()
        F.cross_entropy(model(Tensor(x)), y).backward()
    return step


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=50)
    ap.add_argument("--json", metavar="PATH")
    args = ap.parse_args()

    if not kernels.numba_available():
        raise SystemExit("numba is not installed; nothing to compare")
    original = kernels.backend
    cases = _cases(np.random.default_rng(0))
    rows = []
    try:
        for name, make in cases.items():
            res, outs = {}, {}
            for backend in ("numpy", "numba"):
                kernels.use_backend(backend)
                fn = make(kernels)
                outs[backend] = _flat(fn())
                res[backend] = _time(fn, args.reps)
            diff = max(float(np.max(np.abs(a - b))) if a.size else 0.0
                       for a, b in zip(outs["numpy"], outs["numba"]))
            rows.append({"case": name, **res, "max_abs_diff": diff})
        for variant in ("C", "L-A"):
            res = {}
            for backend in ("numpy", "numba"):
                kernels.use_backend(backend)
                res[backend] = _time(_model_step(variant, np.random.default_rng(1)), max(3, args.reps // 10))
            rows.append({"case": f"train step {variant}", **res, "max_abs_diff": float("nan")})
    finally:
        kernels.use_backend(original)

    print(f"{'case':28s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s} {'max|diff|':>10s}")
    for r in rows:
        print(f"{r['case']:28s} {r['numpy'] * 1e3:10.3f} {r['numba'] * 1e3:10.3f} "
              f"{r['numpy'] / r['numba']:8.2f} {_diff(r['max_abs_diff']):>10s}")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(rows, fh, indent=1)


if __name__ == "__main__":
    main()
