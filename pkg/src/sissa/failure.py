"""Weibull random-hardware-failure model and its traffic signature.

A component's time to failure follows a two-parameter Weibull law with scale
``alpha`` and shape ``beta``.  The shape selects the bathtub regime: early
failures (beta < 1), random failures (beta == 1) and wear-out (beta > 1).

Once an ECU has failed, its outgoing packets are dropped, delayed or have a
header field corrupted according to a :class:`FailureMode` mixture.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum

import numpy as np

from .codec import ReturnCode
from .report import InjectionReport, flow_key
from .sim import Origin, TimedPacket, Trace

_BETA_ONE_TOL = 1e-9


class UnknownEcuError(ValueError):
    pass


@dataclass(frozen=True)
class WeibullParams:
    alpha: float
    beta: float

    def __post_init__(self):
        if not (self.alpha > 0 and self.beta > 0):
            raise ValueError(f"Weibull parameters must be positive, got {self}")


class Regime(str, Enum):
    INFANT_MORTALITY = "INFANT_MORTALITY"
    RANDOM = "RANDOM"
    WEAR_OUT = "WEAR_OUT"


def _as_time(t):
    arr = np.asarray(t, dtype=np.float64)
    if np.any(arr < 0) or np.any(np.isnan(arr)):
        raise ValueError("Weibull functions are defined for t >= 0 only")
    return arr


def _out(arr, t):
    return float(arr) if np.ndim(t) == 0 else arr


def hazard_rate(t, p: WeibullParams):
    """Instantaneous failure rate ``(beta/alpha) (t/alpha)^(beta-1)``."""
    x = _as_time(t) / p.alpha
    with np.errstate(divide="ignore"):
        h = (p.beta / p.alpha) * np.power(x, p.beta - 1.0)
    return _out(h, t)


def weibull_pdf(t, p: WeibullParams):
    """Density; at ``t == 0`` it is ``inf`` for beta < 1, ``1/alpha`` for beta == 1."""
    x = _as_time(t) / p.alpha
    with np.errstate(divide="ignore", invalid="ignore"):
        f = (p.beta / p.alpha) * np.power(x, p.beta - 1.0) * np.exp(-np.power(x, p.beta))
    return _out(f, t)


def weibull_cdf(t, p: WeibullParams):
    x = _as_time(t) / p.alpha
    return _out(-np.expm1(-np.power(x, p.beta)), t)


def weibull_median(p: WeibullParams) -> float:
    return p.alpha * np.log(2.0) ** (1.0 / p.beta)


def sample_failure_time(p: WeibullParams, rng: np.random.Generator, size=None,
                        horizon: float | None = None):
    """Inverse-CDF draw ``alpha * (-ln u)^(1/beta)``.

    With ``horizon`` set, the draw is conditioned on failing before it
    (inverse CDF of the distribution truncated to ``[0, horizon]``).
    """
    u = rng.random(size)
    # u in [0, 1); 1 - u in (0, 1] keeps the log finite
    if horizon is None:
        t = p.alpha * np.power(-np.log1p(-u), 1.0 / p.beta)
    else:
        f_h = weibull_cdf(horizon, p)
        t = p.alpha * np.power(-np.log1p(-u * f_h), 1.0 / p.beta)
        t = np.minimum(t, horizon)
    return float(t) if size is None else t


def classify_regime(beta: float) -> Regime:
    if beta <= 0:
        raise ValueError("beta must be > 0")
    if abs(beta - 1.0) <= _BETA_ONE_TOL:
        return Regime.RANDOM
    return Regime.INFANT_MORTALITY if beta < 1.0 else Regime.WEAR_OUT


@dataclass(frozen=True)
class FailureMode:
    """Mixture of omission, corruption and delay over affected packets.

    Each outgoing packet of the failed ECU takes exactly one branch: it is
    dropped with probability ``drop_prob``, has ``corrupt_field`` corrupted
    with probability ``corrupt_prob``, and otherwise (the remaining
    ``1 - drop_prob - corrupt_prob``) is delayed by a uniform multiple of
    ``nominal_latency`` drawn from ``delay``, or passes unchanged when
    ``delay`` is ``None``.
    """

    drop_prob: float = 0.6
    delay: tuple[float, float] | None = (2.0, 5.0)
    nominal_latency: float = 0.00125
    corrupt_field: str = "return_code"
    corrupt_prob: float = 0.3

    def __post_init__(self):
        for name in ("drop_prob", "corrupt_prob"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must be in [0, 1], got {v}")
        if self.drop_prob + self.corrupt_prob > 1.0 + 1e-12:
            raise ValueError("drop_prob + corrupt_prob must not exceed 1")
        if self.corrupt_field not in ("protocol_version", "interface_version", "return_code"):
            raise ValueError(f"cannot corrupt field {self.corrupt_field!r}")
        if self.delay is not None:
            lo, hi = self.delay
            if not 0 <= lo <= hi:
                raise ValueError("delay range must satisfy 0 <= low <= high")

    @classmethod
    def omission(cls, drop_prob: float) -> "FailureMode":
        return cls(drop_prob=drop_prob, delay=None, corrupt_prob=0.0)

    @classmethod
    def delayed(cls, low: float, high: float, nominal_latency: float = 0.00125) -> "FailureMode":
        return cls(drop_prob=0.0, delay=(low, high), nominal_latency=nominal_latency,
                   corrupt_prob=0.0)

    @classmethod
    def corruption(cls, field: str, prob: float) -> "FailureMode":
        return cls(drop_prob=0.0, delay=None, corrupt_field=field, corrupt_prob=prob)

    def to_dict(self) -> dict:
        return {
            "drop_prob": self.drop_prob,
            "delay": None if self.delay is None else list(self.delay),
            "nominal_latency": self.nominal_latency,
            "corrupt_field": self.corrupt_field,
            "corrupt_prob": self.corrupt_prob,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FailureMode":
        delay = d.get("delay", (2.0, 5.0))
        return cls(
            drop_prob=float(d.get("drop_prob", 0.6)),
            delay=None if delay is None else (float(delay[0]), float(delay[1])),
            nominal_latency=float(d.get("nominal_latency", 0.00125)),
            corrupt_field=str(d.get("corrupt_field", "return_code")),
            corrupt_prob=float(d.get("corrupt_prob", 0.3)),
        )


@dataclass(frozen=True)
class FailureSchedule:
    ecu: int
    onset_time: float
    mode: FailureMode = field(default_factory=FailureMode)
    params: WeibullParams | None = None
    seed: int = 0

    def __post_init__(self):
        if self.onset_time < 0:
            raise ValueError("onset_time must be >= 0")


def _corrupt(tp: TimedPacket, field_name: str, u: float) -> TimedPacket:
    pkt = tp.packet
    if field_name == "return_code":
        new = pkt.replace(return_code=ReturnCode.E_NOT_OK)
    else:
        old = getattr(pkt, field_name)
        value = min(int(u * 255), 254)
        new = pkt.replace(**{field_name: value if value < old else value + 1})
    return tp.replace(packet=new, origin=Origin.MUTATED)


def apply_failure(trace: Trace, schedule: FailureSchedule) -> tuple[Trace, InjectionReport]:
    if schedule.ecu not in trace.topology.ids:
        raise UnknownEcuError(f"ECU {schedule.ecu} is not in the trace topology")
    rng = np.random.default_rng(schedule.seed)
    mode = schedule.mode
    report = InjectionReport("HARDWARE_FAILURE")
    out: list[TimedPacket] = []
    for tp in trace.packets:
        if tp.src != schedule.ecu or tp.timestamp < schedule.onset_time:
            out.append(tp)
            continue
        key = flow_key(tp)
        # fixed draw count per packet keeps the stream aligned across modes
        u_mode, u_delay, u_field = rng.random(3)
        if u_mode < mode.drop_prob:
            report.record_drop(key, tp.timestamp)
            continue
        if u_mode < mode.drop_prob + mode.corrupt_prob:
            out.append(_corrupt(tp, mode.corrupt_field, u_field))
            report.record_mutation(key, tp.timestamp)
        elif mode.delay is not None:
            lo, hi = mode.delay
            extra = (lo + (hi - lo) * u_delay) * mode.nominal_latency
            out.append(tp.replace(timestamp=tp.timestamp + extra, origin=Origin.MUTATED))
            report.record_mutation(key, tp.timestamp)
        else:
            out.append(tp)
    out.sort(key=lambda p: p.timestamp)
    return trace.with_packets(out), report


def inject_failure(trace: Trace, schedule: FailureSchedule) -> Trace:
    return apply_failure(trace, schedule)[0]
