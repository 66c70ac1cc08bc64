"""Discrete-event SOME/IP traffic simulator.

The simulator runs on a virtual clock: every packet gets an exact timestamp
computed from seeded random draws, so a run is a pure function of its
configuration.  Three interaction patterns are supported:

* request/response - client REQUEST, server RESPONSE after a service latency
* fire & forget    - client REQUEST_NO_RETURN, nothing comes back
* events           - client subscribes with a NOTIFICATION, server publishes
                     NOTIFICATION events periodically or on value change
"""

from __future__ import annotations

import hashlib
import heapq
import ipaddress
import json
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .codec import MessageType, ReturnCode, SomeIpPacket, decode_packet, encode_packet

SESSION_MAX = 0xFFFF


class TopologyError(ValueError):
    pass


class Pattern(str, Enum):
    REQUEST_RESPONSE = "REQUEST_RESPONSE"
    FIRE_FORGET = "FIRE_FORGET"
    EVENT = "EVENT"


class Origin(str, Enum):
    LEGIT = "LEGIT"
    INJECTED = "INJECTED"
    MUTATED = "MUTATED"


@dataclass(frozen=True)
class Ecu:
    id: int
    address: int
    port: int = 30509

    @property
    def ip(self) -> str:
        return str(ipaddress.IPv4Address(self.address))


@dataclass(frozen=True)
class ServiceBinding:
    """A service offered by ``provider`` and consumed by ``clients``.

    For EVENT bindings ``period`` selects the publishing strategy: a positive
    value means PERIODIC with that period, ``None`` means ON_CHANGE with
    changes arriving at exponential intervals of mean ``change_interval``.
    """

    provider: int
    service_id: int
    methods: tuple[int, ...]
    pattern: Pattern
    clients: tuple[int, ...]
    period: float | None = None
    change_interval: float = 0.05
    interface_version: int = 1

    def __post_init__(self):
        object.__setattr__(self, "methods", tuple(self.methods))
        object.__setattr__(self, "clients", tuple(self.clients))
        object.__setattr__(self, "pattern", Pattern(self.pattern))
        if not self.methods:
            raise TopologyError(f"service 0x{self.service_id:04X} has no methods")
        if self.period is not None and self.period <= 0:
            raise TopologyError(f"service 0x{self.service_id:04X}: period must be > 0")
        if self.change_interval <= 0:
            raise TopologyError(f"service 0x{self.service_id:04X}: change_interval must be > 0")

    @property
    def event_strategy(self) -> str:
        return "PERIODIC" if self.period is not None else "ON_CHANGE"


@dataclass(frozen=True)
class Topology:
    ecus: tuple[Ecu, ...]
    bindings: tuple[ServiceBinding, ...]

    def __post_init__(self):
        object.__setattr__(self, "ecus", tuple(self.ecus))
        object.__setattr__(self, "bindings", tuple(self.bindings))
        self.validate()

    def validate(self) -> None:
        ids = [e.id for e in self.ecus]
        addrs = [e.address for e in self.ecus]
        if not ids:
            raise TopologyError("topology has no ECUs")
        if len(set(ids)) != len(ids):
            raise TopologyError(f"duplicate ECU ids in {ids}")
        if len(set(addrs)) != len(addrs):
            raise TopologyError("duplicate ECU addresses")
        known = set(ids)
        for b in self.bindings:
            missing = ({b.provider} | set(b.clients)) - known
            if missing:
                raise TopologyError(
                    f"service 0x{b.service_id:04X} references unknown ECUs {sorted(missing)}"
                )

    def ecu(self, ecu_id: int) -> Ecu:
        for e in self.ecus:
            if e.id == ecu_id:
                return e
        raise KeyError(ecu_id)

    @property
    def ids(self) -> list[int]:
        return [e.id for e in self.ecus]

    def binding(self, service_id: int) -> ServiceBinding:
        for b in self.bindings:
            if b.service_id == service_id:
                return b
        raise KeyError(service_id)

    def to_dict(self) -> dict:
        return {
            "ecus": [{"id": e.id, "address": e.ip, "port": e.port} for e in self.ecus],
            "bindings": [
                {
                    "provider": b.provider,
                    "service_id": b.service_id,
                    "methods": list(b.methods),
                    "pattern": b.pattern.value,
                    "clients": list(b.clients),
                    "period": b.period,
                    "change_interval": b.change_interval,
                    "interface_version": b.interface_version,
                }
                for b in self.bindings
            ],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Topology":
        ecus = [
            Ecu(int(e["id"]), int(ipaddress.IPv4Address(e["address"])), int(e.get("port", 30509)))
            for e in d["ecus"]
        ]
        bindings = [
            ServiceBinding(
                provider=int(b["provider"]),
                service_id=int(b["service_id"]),
                methods=tuple(int(m) for m in b["methods"]),
                pattern=Pattern(b["pattern"]),
                clients=tuple(int(c) for c in b.get("clients", ())),
                period=None if b.get("period") is None else float(b["period"]),
                change_interval=float(b.get("change_interval", 0.05)),
                interface_version=int(b.get("interface_version", 1)),
            )
            for b in d.get("bindings", ())
        ]
        return cls(tuple(ecus), tuple(bindings))


def default_topology() -> Topology:
    """Three client ECUs, three server ECUs, all three patterns."""
    base = int(ipaddress.IPv4Address("10.0.0.0"))
    ecus = tuple(Ecu(i, base + i) for i in range(1, 7))
    rr, ff, ev = Pattern.REQUEST_RESPONSE, Pattern.FIRE_FORGET, Pattern.EVENT
    bindings = (
        ServiceBinding(4, 0x1001, (0x0001, 0x0002), rr, (1, 2)),
        ServiceBinding(5, 0x1002, (0x0001,), rr, (2, 3)),
        ServiceBinding(6, 0x1003, (0x0001, 0x0003), rr, (1,)),
        ServiceBinding(6, 0x2001, (0x0010,), ff, (1, 3)),
        ServiceBinding(4, 0x3001, (0x8001,), ev, (3,), period=0.05),
        ServiceBinding(5, 0x3002, (0x8002,), ev, (1,), change_interval=0.05),
    )
    return Topology(ecus, bindings)


@dataclass(frozen=True, slots=True)
class TimedPacket:
    timestamp: float
    src: int
    dst: int
    packet: SomeIpPacket
    origin: Origin = Origin.LEGIT

    def replace(self, **changes) -> "TimedPacket":
        return TimedPacket(
            changes.get("timestamp", self.timestamp),
            changes.get("src", self.src),
            changes.get("dst", self.dst),
            changes.get("packet", self.packet),
            changes.get("origin", self.origin),
        )


@dataclass
class Trace:
    packets: list[TimedPacket]
    topology: Topology
    seed: int = 0

    def __len__(self) -> int:
        return len(self.packets)

    def with_packets(self, packets: Iterable[TimedPacket]) -> "Trace":
        return Trace(list(packets), self.topology, self.seed)

    def sorted(self) -> "Trace":
        # stable: packets sharing a timestamp keep their relative order
        return self.with_packets(sorted(self.packets, key=lambda p: p.timestamp))

    def records(self) -> Iterable[dict]:
        yield {"type": "header", "seed": self.seed, "topology": self.topology.to_dict()}
        for p in self.packets:
            yield {
                "t": p.timestamp,
                "src": p.src,
                "dst": p.dst,
                "origin": p.origin.value,
                "hex": encode_packet(p.packet).hex(),
            }

    def dumps(self) -> str:
        return "".join(json.dumps(r, sort_keys=True) + "\n" for r in self.records())

    def digest(self) -> str:
        return hashlib.sha256(self.dumps().encode()).hexdigest()


def write_trace(trace: Trace, path: str | Path) -> None:
    Path(path).write_text(trace.dumps())


def loads_trace(text: str) -> Trace:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty trace file")
    header = json.loads(lines[0])
    if header.get("type") != "header":
        raise ValueError("first trace record must be the header")
    topo = Topology.from_dict(header["topology"])
    packets = []
    for ln in lines[1:]:
        r = json.loads(ln)
        packets.append(
            TimedPacket(float(r["t"]), int(r["src"]), int(r["dst"]),
                        decode_packet(bytes.fromhex(r["hex"])), Origin(r["origin"]))
        )
    return Trace(packets, topo, int(header["seed"]))


def read_trace(path: str | Path) -> Trace:
    return loads_trace(Path(path).read_text())


@dataclass
class SimConfig:
    topology: Topology
    duration: float
    mean_request_interval: float
    seed: int = 0
    latency: tuple[float, float] = (0.0005, 0.002)
    payload_range: tuple[int, int] = (4, 16)
    event_jitter: float = 0.0

    def validate(self) -> None:
        if self.duration < 0:
            raise ValueError("duration must be >= 0")
        if self.mean_request_interval <= 0:
            raise ValueError("mean_request_interval must be > 0")
        lo, hi = self.latency
        if not 0 < lo <= hi:
            raise ValueError("latency must satisfy 0 < low <= high")
        plo, phi = self.payload_range
        if not 0 <= plo <= phi:
            raise ValueError("payload_range must satisfy 0 <= low <= high")
        self.topology.validate()


class Simulator:
    """Packet factory holding the session counters and the random stream."""

    def __init__(self, topology: Topology, rng: np.random.Generator | int = 0,
                 latency: tuple[float, float] = (0.0005, 0.002),
                 payload_range: tuple[int, int] = (4, 16),
                 event_jitter: float = 0.0):
        self.topology = topology
        self.rng = rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)
        self.latency = latency
        self.payload_range = payload_range
        self.event_jitter = event_jitter
        self._sessions: dict[tuple, int] = {}

    def next_session(self, key: tuple) -> int:
        s = self._sessions.get(key, 0) + 1
        if s > SESSION_MAX:
            s = 1
        self._sessions[key] = s
        return s

    def peek_session(self, client: int, service_id: int) -> int:
        """Session id the next call from ``client`` on ``service_id`` will use."""
        s = self._sessions.get((client, service_id), 0) + 1
        return 1 if s > SESSION_MAX else s

    def _payload(self) -> bytes:
        lo, hi = self.payload_range
        n = int(self.rng.integers(lo, hi + 1))
        return self.rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()

    def _service_latency(self) -> float:
        lo, hi = self.latency
        return float(self.rng.uniform(lo, hi))

    def step_request_response(self, client: int, binding: ServiceBinding, method: int,
                              t: float) -> tuple[TimedPacket, TimedPacket]:
        session = self.next_session((client, binding.service_id))
        req = SomeIpPacket.build(
            binding.service_id, method, client & 0xFFFF, session, MessageType.REQUEST,
            payload=self._payload(), interface_version=binding.interface_version,
        )
        res = req.replace(message_type=MessageType.RESPONSE, return_code=ReturnCode.E_OK,
                          payload=self._payload())
        t_res = t + self._service_latency()
        return (TimedPacket(t, client, binding.provider, req),
                TimedPacket(t_res, binding.provider, client, res))

    def step_fire_forget(self, client: int, binding: ServiceBinding, method: int,
                         t: float) -> TimedPacket:
        session = self.next_session((client, binding.service_id))
        pkt = SomeIpPacket.build(
            binding.service_id, method, client & 0xFFFF, session,
            MessageType.REQUEST_NO_RETURN, payload=self._payload(),
            interface_version=binding.interface_version,
        )
        return TimedPacket(t, client, binding.provider, pkt)

    def step_event_cycle(self, subscriber: int, binding: ServiceBinding, t0: float,
                         t_end: float) -> list[TimedPacket]:
        """Subscription at ``t0`` followed by every event published up to ``t_end``."""
        event_id = binding.methods[0]
        session = self.next_session((subscriber, binding.service_id))
        sub = SomeIpPacket.build(
            binding.service_id, event_id, subscriber & 0xFFFF, session,
            MessageType.NOTIFICATION, interface_version=binding.interface_version,
        )
        out = [TimedPacket(t0, subscriber, binding.provider, sub)]
        ev_key = ("event", binding.provider, binding.service_id, subscriber)
        for t in self._event_times(binding, t0, t_end):
            pkt = SomeIpPacket.build(
                binding.service_id, event_id, 0, self.next_session(ev_key),
                MessageType.NOTIFICATION, payload=self._payload(),
                interface_version=binding.interface_version,
            )
            out.append(TimedPacket(t, binding.provider, subscriber, pkt))
        return out

    def _event_times(self, binding: ServiceBinding, t0: float, t_end: float) -> list[float]:
        times = []
        if binding.period is not None:
            k = 1
            while True:
                t = t0 + k * binding.period
                if t > t_end + 1e-12:
                    break
                if self.event_jitter > 0:
                    t += float(self.rng.uniform(0.0, self.event_jitter))
                times.append(t)
                k += 1
        else:
            t = t0
            while True:
                t += float(self.rng.exponential(binding.change_interval))
                if t > t_end:
                    break
                times.append(t)
        return times


def run_sim(config: SimConfig) -> Trace:
    """Simulate ``config.duration`` seconds of traffic over the topology."""
    config.validate()
    topo = config.topology
    sim = Simulator(topo, np.random.default_rng(config.seed), config.latency,
                    config.payload_range, config.event_jitter)
    packets: list[TimedPacket] = []
    if config.duration <= 0:
        return Trace(packets, topo, config.seed)

    # (time, tiebreak, client, binding index)
    arrivals: list[tuple[float, int, int, int]] = []
    order = 0
    for bi, b in enumerate(topo.bindings):
        for c in b.clients:
            if b.pattern is Pattern.EVENT:
                packets.extend(sim.step_event_cycle(c, b, 0.0, config.duration))
            else:
                t = float(sim.rng.exponential(config.mean_request_interval))
                heapq.heappush(arrivals, (t, order, c, bi))
                order += 1

    while arrivals:
        t, _, c, bi = heapq.heappop(arrivals)
        if t > config.duration:
            continue
        b = topo.bindings[bi]
        method = b.methods[int(sim.rng.integers(len(b.methods)))]
        if b.pattern is Pattern.REQUEST_RESPONSE:
            packets.extend(sim.step_request_response(c, b, method, t))
        else:
            packets.append(sim.step_fire_forget(c, b, method, t))
        heapq.heappush(
            arrivals, (t + float(sim.rng.exponential(config.mean_request_interval)), order, c, bi)
        )
        order += 1

    packets.sort(key=lambda p: p.timestamp)
    return Trace(packets, topo, config.seed)

