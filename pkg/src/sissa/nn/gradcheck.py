"""Finite-difference verification of reverse-mode gradients."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Iterable

import numpy as np

from .tensor import Tensor, no_grad

DEFAULT_STEP = {np.dtype(np.float32): 1e-3, np.dtype(np.float64): 1e-5}
# multiple of the estimated rounding noise treated as unresolvable
NOISE_FACTOR = 10.0


@dataclass
class GradCheckReport:
    """``max_rel_error`` is the largest per-tensor error
    ``|analytic - numeric| / (|analytic| + |numeric|)`` with Euclidean norms
    over the checked entries.  A tensor whose analytic and numeric norms
    both sit below the finite-difference resolution (rounding noise of the
    loss divided by the step) cannot be resolved; it is listed in
    ``unresolved`` and scores 0.  This happens for gradients that vanish
    identically, e.g. a bias that only shifts softmax logits.
    ``max_elem_error`` is the worst single entry, relative to the larger of
    the two magnitudes floored at 1e-6 times the tensor's scale."""

    tolerance: float
    max_rel_error: float = 0.0
    max_elem_error: float = 0.0
    per_tensor: dict[str, float] = field(default_factory=dict)
    n_checked: int = 0
    unresolved: list[str] = field(default_factory=list)

    @property
    def passed(self) -> bool:
        return bool(np.isfinite(self.max_rel_error)) and self.max_rel_error < self.tolerance

    def summary(self) -> str:
        worst = max(self.per_tensor, key=self.per_tensor.get) if self.per_tensor else "-"
        status = "PASS" if self.passed else "FAIL"
        tail = f"; below resolution: {', '.join(self.unresolved)}" if self.unresolved else ""
        return (f"{status} max_rel_error={self.max_rel_error:.3e} (tol {self.tolerance:.0e}, "
                f"worst {worst}) over {self.n_checked} entries{tail}")


def _loss(out: Tensor, probe: np.ndarray) -> float:
    return float(np.sum(out.data.astype(np.float64) * probe))


def grad_check(fn: Callable[[], Tensor], tensors: Iterable[tuple[str, Tensor]] | dict,
               tolerance: float = 1e-3, step: float | None = None, seed: int = 0,
               max_entries: int | None = None) -> GradCheckReport:
    """Compare gradients of ``sum(fn() * R)`` for a fixed random probe ``R``.

    ``fn`` must recompute the output from the current values of ``tensors``
    and be deterministic.  ``max_entries`` caps how many entries per tensor
    are perturbed (a seeded random subset).
    """
    named = list(tensors.items()) if isinstance(tensors, dict) else list(tensors)
    rng = np.random.default_rng(seed)
    for _, t in named:
        t.grad = None
    out = fn()
    probe = rng.standard_normal(out.shape)
    out.backward(probe.astype(out.dtype))
    # independent per-output rounding errors add in quadrature
    loss_mag = float(np.linalg.norm(out.data.astype(np.float64) * probe))
    analytic = {name: (t.grad.astype(np.float64).copy() if t.grad is not None
                       else np.zeros(t.shape)) for name, t in named}

    report = GradCheckReport(tolerance)
    for name, t in named:
        h = step if step is not None else DEFAULT_STEP[t.data.dtype]
        hd = t.data.dtype.type(h)
        t.data = np.ascontiguousarray(t.data)
        flat = t.data.reshape(-1)
        idx = np.arange(flat.size)
        if max_entries is not None and flat.size > max_entries:
            idx = np.sort(rng.choice(flat.size, size=max_entries, replace=False))
        numeric = np.empty(idx.size)
        with no_grad():
            for k, i in enumerate(idx):
                old = flat[i]
                hi, lo = old + hd, old - hd
                flat[i] = hi
                up = _loss(fn(), probe)
                flat[i] = lo
                down = _loss(fn(), probe)
                flat[i] = old
                # divide by the perturbation actually applied after rounding
                numeric[k] = (up - down) / (float(hi) - float(lo))
        a = analytic[name].reshape(-1)[idx]
        report.n_checked += idx.size
        resolution = NOISE_FACTOR * np.finfo(t.data.dtype).eps * loss_mag / h * np.sqrt(idx.size)
        if max(np.linalg.norm(a), np.linalg.norm(numeric)) < resolution:
            report.unresolved.append(name)
            report.per_tensor[name] = 0.0
            continue
        denom = np.linalg.norm(a) + np.linalg.norm(numeric)
        err = 0.0 if denom == 0 else float(np.linalg.norm(a - numeric) / denom)
        scale = max(np.abs(a).max(initial=0.0), np.abs(numeric).max(initial=0.0), 1e-30)
        elem = np.abs(a - numeric) / np.maximum(np.maximum(np.abs(a), np.abs(numeric)), 1e-6 * scale)
        report.per_tensor[name] = err
        report.max_rel_error = max(report.max_rel_error, err)
        report.max_elem_error = max(report.max_elem_error, float(elem.max(initial=0.0)))
    for _, t in named:
        t.grad = None
    return report
