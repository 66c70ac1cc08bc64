"""The five SOME/IP attack scenarios as deterministic trace transformations.

Every injector takes a trace plus :class:`AttackParams` and returns a new
trace and an :class:`~sissa.report.InjectionReport`.  Packets an attacker
creates are tagged ``Origin.INJECTED``; ground-truth labels are derived from
these tags and from the report, never from heuristics on the traffic.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .codec import MessageType, ReturnCode
from .report import AttackReport, InjectionReport, flow_key
from .sim import Origin, TimedPacket, Trace

FAKE_INTERFACE_EPSILON = 10e-6


class AttackError(ValueError):
    pass


class NoEligiblePacketsError(AttackError):
    pass


class InsufficientAddressesError(AttackError):
    pass


class AttackKind(str, Enum):
    REQUEST_WITHOUT_RESPONSE = "REQUEST_WITHOUT_RESPONSE"
    FAKE_INTERFACE = "FAKE_INTERFACE"
    FAKE_SOURCE = "FAKE_SOURCE"
    DDOS = "DDOS"
    RESPONSE_WITHOUT_REQUEST = "RESPONSE_WITHOUT_REQUEST"


@dataclass(frozen=True)
class AttackParams:
    """``intensity`` is the targeted share in (0, 1], or the flood rate
    multiplier (> 1) for DDOS.  ``target`` restricts the attack to flows
    touching ``(ecu, service_id)``; either element may be ``None``.
    """

    kind: AttackKind
    intensity: float = 1.0
    target: tuple[int | None, int | None] | None = None
    seed: int = 0
    spoof_delay: tuple[float, float] = (20e-6, 200e-6)

    def __post_init__(self):
        object.__setattr__(self, "kind", AttackKind(self.kind))
        if self.kind is AttackKind.DDOS:
            if not self.intensity > 1.0:
                raise AttackError(f"DDOS multiplier must be > 1, got {self.intensity}")
        elif not 0.0 < self.intensity <= 1.0:
            raise AttackError(f"intensity must be in (0, 1], got {self.intensity}")


def _matches(tp: TimedPacket, target) -> bool:
    if target is None:
        return True
    ecu, svc = target
    client, server, service = flow_key(tp)
    return (ecu is None or ecu in (client, server)) and (svc is None or svc == service)


def _pick(rng: np.random.Generator, n_eligible: int, share: float) -> np.ndarray:
    k = int(round(share * n_eligible))
    chosen = rng.choice(n_eligible, size=k, replace=False)
    return np.sort(chosen)


def _payload_like(rng: np.random.Generator, n: int) -> bytes:
    return rng.integers(0, 256, size=n, dtype=np.uint8).tobytes()


def _responses(trace: Trace, params: AttackParams) -> list[int]:
    return [
        i for i, tp in enumerate(trace.packets)
        if tp.packet.message_type in (MessageType.RESPONSE, MessageType.ERROR)
        and _matches(tp, params.target)
    ]


def inject_request_without_response(trace: Trace, params: AttackParams):
    """Interrupt a share of responses so their requests go unanswered."""
    rng = np.random.default_rng(params.seed)
    eligible = _responses(trace, params)
    if not eligible:
        raise NoEligiblePacketsError("trace has no RESPONSE packets to interrupt")
    drop = {eligible[j] for j in _pick(rng, len(eligible), params.intensity)}
    report = InjectionReport(AttackKind.REQUEST_WITHOUT_RESPONSE.value)
    out = []
    for i, tp in enumerate(trace.packets):
        if i in drop:
            report.record_drop(flow_key(tp), tp.timestamp)
        else:
            out.append(tp)
    return trace.with_packets(out), report


def inject_fake_interface(trace: Trace, params: AttackParams):
    """Shadow responses with a copy carrying a wrong interface version."""
    rng = np.random.default_rng(params.seed)
    eligible = _responses(trace, params)
    if not eligible:
        raise NoEligiblePacketsError("trace has no RESPONSE packets to imitate")
    chosen = set(eligible[j] for j in _pick(rng, len(eligible), params.intensity))
    report = InjectionReport(AttackKind.FAKE_INTERFACE.value)
    out = []
    for i, tp in enumerate(trace.packets):
        out.append(tp)
        if i in chosen:
            old = tp.packet.interface_version
            v = int(rng.integers(0, 255))
            fake = tp.packet.replace(interface_version=v if v < old else v + 1)
            out.append(tp.replace(timestamp=tp.timestamp + FAKE_INTERFACE_EPSILON,
                                  packet=fake, origin=Origin.INJECTED))
            report.record_injection(flow_key(tp))
    return trace.with_packets(out).sorted(), report


def inject_fake_source(trace: Trace, params: AttackParams):
    """Replay packets under another legal source address."""
    ids = trace.topology.ids
    if len(ids) < 2:
        raise InsufficientAddressesError("address spoofing needs at least two ECUs")
    rng = np.random.default_rng(params.seed)
    eligible = [i for i, tp in enumerate(trace.packets) if _matches(tp, params.target)]
    if not eligible:
        raise NoEligiblePacketsError("no packets match the attack target")
    chosen = set(eligible[j] for j in _pick(rng, len(eligible), params.intensity))
    lo, hi = params.spoof_delay
    report = InjectionReport(AttackKind.FAKE_SOURCE.value)
    out = []
    for i, tp in enumerate(trace.packets):
        out.append(tp)
        if i in chosen:
            pool = [e for e in ids if e not in (tp.src, tp.dst)] or [e for e in ids if e != tp.src]
            src = pool[int(rng.integers(len(pool)))]
            t = tp.timestamp + float(rng.uniform(lo, hi))
            out.append(tp.replace(timestamp=t, src=src, origin=Origin.INJECTED))
            report.record_injection(flow_key(tp))
    return trace.with_packets(out).sorted(), report


def _request_servers(trace: Trace) -> list[int]:
    return sorted({tp.dst for tp in trace.packets
                   if tp.packet.message_type is MessageType.REQUEST})


def inject_ddos(trace: Trace, params: AttackParams):
    """Flood one server with requests at ``intensity`` times its legitimate
    request rate; the overloaded server loses ``1 - 1/intensity`` of its
    responses to legitimate clients.
    """
    rng = np.random.default_rng(params.seed)
    m = params.intensity
    report = InjectionReport(AttackKind.DDOS.value)
    servers = _request_servers(trace)
    if params.target is not None and params.target[0] is not None:
        server = params.target[0]
    elif servers:
        server = servers[int(rng.integers(len(servers)))]
    else:
        return trace.with_packets(trace.packets), report
    svc = None if params.target is None else params.target[1]

    legit = [tp for tp in trace.packets
             if tp.dst == server and tp.packet.message_type is MessageType.REQUEST
             and (svc is None or tp.packet.service_id == svc)]
    if not legit or not trace.packets:
        return trace.with_packets(trace.packets), report

    t0, t1 = trace.packets[0].timestamp, trace.packets[-1].timestamp
    n_flood = int(rng.poisson(m * len(legit)))
    times = np.sort(rng.uniform(t0, t1, size=n_flood)) if t1 > t0 else np.full(n_flood, t0)
    others = [e for e in trace.topology.ids if e != server]

    out = []
    drop_p = 1.0 - 1.0 / m
    for tp in trace.packets:
        if (tp.src == server and tp.packet.message_type in (MessageType.RESPONSE, MessageType.ERROR)
                and (svc is None or tp.packet.service_id == svc)):
            if rng.random() < drop_p:
                report.record_drop(flow_key(tp), tp.timestamp)
                continue
        out.append(tp)

    for t in times:
        template = legit[int(rng.integers(len(legit)))]
        pkt = template.packet.replace(
            session_id=int(rng.integers(1, 0x10000)),
            payload=_payload_like(rng, len(template.packet.payload)),
        )
        src = others[int(rng.integers(len(others)))] if others else template.src
        flood = TimedPacket(float(t), src, server, pkt, Origin.INJECTED)
        out.append(flood)
        report.record_injection(flow_key(flood))
    return trace.with_packets(out).sorted(), report


def inject_response_without_request(trace: Trace, params: AttackParams):
    """Answer requests before they are sent.

    The eligible instants are the legitimate requests of the targeted flows;
    for each chosen one, a RESPONSE carrying the client's next session id is
    placed between the client's previous packet and that request.
    """
    rng = np.random.default_rng(params.seed)
    pkts = trace.packets
    eligible = [i for i, tp in enumerate(pkts)
                if tp.packet.message_type is MessageType.REQUEST and tp.origin is Origin.LEGIT
                and _matches(tp, params.target)]
    if not eligible:
        raise NoEligiblePacketsError("trace has no client/server request flows")
    chosen = [eligible[j] for j in _pick(rng, len(eligible), params.intensity)]

    last_seen: dict[int, float] = {}
    prev_for: dict[int, float] = {}
    chosen_set = set(chosen)
    for i, tp in enumerate(pkts):
        if i in chosen_set:
            prev_for[i] = last_seen.get(tp.src, tp.timestamp - 1e-3)
        last_seen[tp.src] = tp.timestamp
        last_seen[tp.dst] = tp.timestamp

    report = InjectionReport(AttackKind.RESPONSE_WITHOUT_REQUEST.value)
    injected = []
    for i in chosen:
        req = pkts[i]
        lo = prev_for[i]
        t = lo + float(rng.uniform(0.1, 0.9)) * (req.timestamp - lo)
        fake = req.packet.replace(
            message_type=MessageType.RESPONSE, return_code=ReturnCode.E_OK,
            payload=_payload_like(rng, len(req.packet.payload)),
        )
        tp = TimedPacket(t, req.dst, req.src, fake, Origin.INJECTED)
        injected.append(tp)
        report.record_injection(flow_key(tp))
    return trace.with_packets(list(pkts) + injected).sorted(), report


_DISPATCH = {
    AttackKind.REQUEST_WITHOUT_RESPONSE: inject_request_without_response,
    AttackKind.FAKE_INTERFACE: inject_fake_interface,
    AttackKind.FAKE_SOURCE: inject_fake_source,
    AttackKind.DDOS: inject_ddos,
    AttackKind.RESPONSE_WITHOUT_REQUEST: inject_response_without_request,
}


def apply_attack(trace: Trace, params: AttackParams) -> tuple[Trace, AttackReport]:
    out, report = _DISPATCH[params.kind](trace, params)
    return out.sorted(), report
