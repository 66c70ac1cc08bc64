"""``sissa`` command line: generate, dataset, train, eval, bench, gradcheck.

Exit status: 0 success, 2 configuration error, 1 any other failure.
Every stage writes the fully resolved configuration next to its outputs as
``config.yaml``; feeding that file back with ``--config`` reproduces the run.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from .config import ConfigError, check_required, dump_config, load_config, stage_seed

log = logging.getLogger("sissa")

EXIT_OK, EXIT_RUNTIME, EXIT_CONFIG = 0, 1, 2


class MissingArtifactError(RuntimeError):
    pass


def _stage_dir(cfg: dict, name: str) -> Path:
    d = Path(cfg["out"]) / name
    d.mkdir(parents=True, exist_ok=True)
    return d


def _snapshot(cfg: dict, directory: Path) -> None:
    (directory / "config.yaml").write_text(dump_config(cfg))


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _require(path: Path, what: str) -> Path:
    if not path.exists():
        raise MissingArtifactError(f"{what} not found: {path}")
    return path


# ---------------------------------------------------------------- generate

def cmd_generate(cfg: dict) -> Path:
    from .sim import SimConfig, Topology, TopologyError, default_topology, run_sim, write_trace

    check_required(cfg, "generate")
    g = cfg["generate"]
    try:
        topo = Topology.from_dict(g["topology"]) if g["topology"] else default_topology()
        topo.validate()
    except (TopologyError, KeyError, TypeError) as exc:
        raise ConfigError("generate.topology", str(exc)) from None
    out = _stage_dir(cfg, "traces")
    entries = []
    for i in range(g["traces"]):
        seed = stage_seed(cfg, "generate", i)
        sc = SimConfig(topo, float(g["duration"]), float(g["mean_request_interval"]), seed,
                       tuple(g["latency"]), tuple(g["payload_range"]), float(g["event_jitter"]))
        try:
            sc.validate()
        except ValueError as exc:
            raise ConfigError("generate", str(exc)) from None
        trace = run_sim(sc)
        path = out / f"trace_{i:03d}.jsonl"
        write_trace(trace, path)
        entries.append({"file": path.name, "seed": seed, "packets": len(trace), "sha256": _sha256(path)})
        log.info("wrote %s (%d packets)", path, len(trace))
    manifest = {"seed": cfg["seed"], "traces": entries, "topology": topo.to_dict()}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True))
    _snapshot(cfg, out)
    return out


# ---------------------------------------------------------------- dataset

def _dataset_config(cfg: dict):
    from .pipeline import DatasetConfig, InjectionRanges, PipelineError

    d = cfg["dataset"]
    try:
        ranges = InjectionRanges.from_dict(d["ranges"]) if d["ranges"] else InjectionRanges()
    except (TypeError, ValueError) as exc:
        raise ConfigError("dataset.ranges", str(exc)) from None
    kw = {}
    if d["blocks_per_class"] is not None:
        kw["blocks_per_class"] = d["blocks_per_class"]
    dc = DatasetConfig(window=d["window"], stride=d["stride"], block_len=d["block_len"],
                       windows_per_class=d["windows_per_class"], ratio=d["ratio"],
                       include_addresses=d["include_addresses"],
                       require_signature=d["require_signature"], ranges=ranges, **kw)
    try:
        dc.validate()
    except PipelineError as exc:
        raise ConfigError("dataset", str(exc)) from None
    return dc


def cmd_dataset(cfg: dict) -> Path:
    from .pipeline import build_dataset, save_dataset
    from .sim import read_trace

    dc = _dataset_config(cfg)
    paths = cfg["dataset"]["traces"]
    if paths:
        files = [Path(p) for p in ([paths] if isinstance(paths, str) else paths)]
    else:
        files = sorted((Path(cfg["out"]) / "traces").glob("trace_*.jsonl"))
        if not files:
            raise MissingArtifactError(f"no trace files under {Path(cfg['out']) / 'traces'}; run generate first")
    traces = [read_trace(_require(f, "trace file")) for f in files]
    split = build_dataset(traces, dc, stage_seed(cfg, "dataset"), workers=cfg["workers"])
    out = _stage_dir(cfg, "dataset")
    digest = save_dataset(split, out)
    _snapshot(cfg, out)
    log.info("dataset %s: train %s val %s hash %s", out, split.train_x.shape, split.val_x.shape, digest)
    return out


# ---------------------------------------------------------------- train

def _train_job(job) -> dict:
    from .models import ModelConfig, TrainConfig, build_model, history_csv, train
    from .pipeline import load_dataset

    variant, ds_path, model_kw, train_kw, init_seed, out_dir = job
    split = load_dataset(ds_path)
    mc = ModelConfig(variant, split.n, split.d, **model_kw)
    model = build_model(mc, init_seed)
    ckpt, history = train(model, split, TrainConfig(**train_kw), init_seed=init_seed)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    ckpt.metadata["dataset_hash"] = split.manifest.get("content_hash")
    nbytes = ckpt.save(out / "model.ckpt")
    (out / "history.csv").write_text(history_csv(history))
    return {"variant": variant, "best_val_acc": ckpt.best_val_acc, "epoch": ckpt.epoch,
            "epochs_run": len(history), "checkpoint_bytes": nbytes}


def _dataset_path(cfg: dict, section: str) -> Path:
    p = cfg[section]["dataset"]
    path = Path(p) if p else Path(cfg["out"]) / "dataset"
    return _require(path / "manifest.json", "dataset").parent


def _pool_map(fn, jobs: list, workers: int) -> list:
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=min(workers, len(jobs))) as ex:
            return list(ex.map(fn, jobs))
    return [fn(j) for j in jobs]


def cmd_train(cfg: dict) -> Path:
    from .models import VARIANTS

    t = cfg["train"]
    for v in t["variants"]:
        if v not in VARIANTS:
            raise ConfigError("train.variants", f"unknown variant {v!r}")
    ds = _dataset_path(cfg, "train")
    out = _stage_dir(cfg, "train")
    model_kw = {"mapped": t["model"]["mapped"], "hidden": t["model"]["hidden"],
                "conv_channels": tuple(t["model"]["conv_channels"])}
    jobs = []
    for v in t["variants"]:
        train_kw = {"max_epochs": t["max_epochs"], "batch_size": t["batch_size"], "lr": t["lr"],
                    "seed": stage_seed(cfg, f"train/{v}"), "patience": t["patience"], "clip": t["clip"]}
        jobs.append((v, str(ds), model_kw, train_kw, stage_seed(cfg, f"init/{v}"), str(out / v)))
    results = _pool_map(_train_job, jobs, cfg["workers"])
    (out / "summary.json").write_text(json.dumps(results, indent=1))
    _snapshot(cfg, out)
    return out


# ---------------------------------------------------------------- eval

def cmd_eval(cfg: dict) -> Path:
    from .evaluation import confusion, metrics, roc_all, write_metrics
    from .models import Checkpoint, predict
    from .pipeline import load_dataset

    e = cfg["eval"]
    if e["split"] not in ("train", "val"):
        raise ConfigError("eval.split", "must be 'train' or 'val'")
    split = load_dataset(_dataset_path(cfg, "eval"))
    x, y = (split.val_x, split.val_y) if e["split"] == "val" else (split.train_x, split.train_y)
    if e["checkpoints"]:
        ckpts = [Path(p) for p in e["checkpoints"]]
    else:
        ckpts = sorted((Path(cfg["out"]) / "train").glob("*/model.ckpt"))
        if not ckpts:
            raise MissingArtifactError("no checkpoints found; run train first or set eval.checkpoints")
    out = _stage_dir(cfg, "eval")
    summary = {}
    for path in ckpts:
        ck = Checkpoint.load(_require(path, "checkpoint"))
        model = ck.build()
        pred, probs = predict(model, x)
        report = metrics(confusion(y, pred), grouping=e["grouping"])
        rocs = roc_all(y, probs) if e["roc"] else None
        write_metrics(report, out / ck.config.variant, rocs=rocs)
        summary[ck.config.variant] = {"accuracy": report.accuracy, "macro_f1": report.macro["f1"]}
        log.info("%s: accuracy %.4f macro-F1 %.4f", ck.config.variant, report.accuracy, report.macro["f1"])
    (out / "summary.json").write_text(json.dumps(summary, indent=1, sort_keys=True))
    _snapshot(cfg, out)
    return out


# ---------------------------------------------------------------- bench

def cmd_bench(cfg: dict) -> Path:
    from .evaluation import benchmark, write_overhead
    from .models import VARIANTS, Checkpoint, ModelConfig, build_model
    from .pipeline import WINDOW_SIZES

    b = cfg["bench"]
    reports = []
    rng = np.random.default_rng(stage_seed(cfg, "bench"))
    if b["checkpoints"]:
        models = [Checkpoint.load(_require(Path(p), "checkpoint")).build() for p in b["checkpoints"]]
    else:
        for v in b["variants"]:
            if v not in VARIANTS:
                raise ConfigError("bench.variants", f"unknown variant {v!r}")
        for w in b["windows"]:
            if w not in WINDOW_SIZES:
                raise ConfigError("bench.windows", f"unsupported window size {w}")
        m = b["model"]
        # latency does not depend on the weight values, so untrained models suffice
        models = [build_model(ModelConfig(v, w, m["features"], m["mapped"], m["hidden"],
                                          tuple(m["conv_channels"])), stage_seed(cfg, f"init/{v}"))
                  for w in b["windows"] for v in b["variants"]]
    for model in models:
        c = model.config
        x = rng.uniform(0, 1, (8, c.window, c.features)).astype(np.float32)
        rep = benchmark(model, x, repetitions=b["repetitions"], warmup=b["warmup"])
        reports.append(rep)
        log.info("%s w%d: %d params, median %.3f ms", c.variant, c.window, rep.params,
                 rep.latency_median * 1e3)
    out = _stage_dir(cfg, "bench")
    write_overhead(reports, out)
    _snapshot(cfg, out)
    return out


# ---------------------------------------------------------------- gradcheck

def cmd_gradcheck(cfg: dict) -> Path:
    from .models import VARIANTS
    from .verify import check_models, check_primitives

    gc = cfg["gradcheck"]
    if gc["dtype"] not in ("float32", "float64"):
        raise ConfigError("gradcheck.dtype", "must be float32 or float64")
    for v in gc["variants"]:
        if v not in VARIANTS:
            raise ConfigError("gradcheck.variants", f"unknown variant {v!r}")
    seed = stage_seed(cfg, "gradcheck") % (2 ** 32)
    results = {}
    if gc["primitives"]:
        for dt, tol in ((np.float64, 1e-6), (np.float32, 1e-3)):
            for name, r in check_primitives(dt, tol, seed).items():
                results[f"primitive/{name}/{dt.__name__}"] = r
    models = check_models(gc["variants"], np.dtype(gc["dtype"]).type, gc["tolerance"], seed,
                          gc["max_entries"], window=gc["window"], features=gc["features"],
                          mapped=gc["mapped"], hidden=gc["hidden"],
                          conv_channels=tuple(gc["conv_channels"]))
    results.update({f"model/{v}/{gc['dtype']}": r for v, r in models.items()})
    out = _stage_dir(cfg, "gradcheck")
    body = {k: {"passed": r.passed, "max_rel_error": r.max_rel_error, "tolerance": r.tolerance,
                "per_tensor": r.per_tensor, "unresolved": r.unresolved, "entries": r.n_checked}
            for k, r in results.items()}
    (out / "report.json").write_text(json.dumps(body, indent=1, sort_keys=True))
    _snapshot(cfg, out)
    for k, r in results.items():
        print(f"{k}: {r.summary()}")
    failed = [k for k, r in results.items() if not r.passed]
    if failed:
        raise GradCheckFailed(f"gradient check failed for: {', '.join(failed)}")
    return out


class GradCheckFailed(RuntimeError):
    pass


COMMANDS = {
    "generate": cmd_generate,
    "dataset": cmd_dataset,
    "train": cmd_train,
    "eval": cmd_eval,
    "bench": cmd_bench,
    "gradcheck": cmd_gradcheck,
}


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", metavar="PATH", help="YAML run configuration")
    common.add_argument("--seed", type=int, help="global seed (overrides the config)")
    common.add_argument("--out", metavar="DIR", help="run output directory")
    common.add_argument("--workers", type=int, help="worker processes for parallel stages")
    common.add_argument("--override", action="append", default=[], metavar="KEY=VALUE",
                        help="set a dotted config key, e.g. dataset.ratio=0.9 (repeatable)")
    parser = argparse.ArgumentParser(
        prog="sissa", description="SOME/IP traffic, fault and attack simulation with neural detectors.")
    sub = parser.add_subparsers(dest="command", required=True)
    helps = {
        "generate": "simulate SOME/IP traffic and write trace files",
        "dataset": "build a balanced labelled window dataset from traces",
        "train": "train detector variants",
        "eval": "score checkpoints: confusion, metrics, ROC",
        "bench": "measure parameter counts and per-window latency",
        "gradcheck": "finite-difference gradient verification",
    }
    for name in COMMANDS:
        sub.add_parser(name, parents=[common], help=helps[name])
    return parser


def _setup_logging() -> None:
    level = os.environ.get("SISSA_LOG", "INFO").upper()
    if not isinstance(logging.getLevelName(level), int):
        raise ConfigError("SISSA_LOG", f"unknown log level {level!r}")
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        _setup_logging()
        cfg = load_config(args.config, args.override, args.seed, args.out, args.workers)
        out = COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"sissa: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # noqa: BLE001 - every other failure is a runtime error
        log.debug("failure", exc_info=True)
        print(f"sissa: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    print(out)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
