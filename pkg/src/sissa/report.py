from __future__ import annotations

from collections import Counter
from dataclasses import dataclass, field

from .codec import MessageType
from .sim import TimedPacket

FlowKey = tuple[int, int, int]


def flow_key(tp: TimedPacket) -> FlowKey:
    """(client, server, service) of the flow a packet belongs to."""
    pkt = tp.packet
    mt = pkt.message_type
    server_to_client = mt in (MessageType.RESPONSE, MessageType.ERROR) or (
        mt is MessageType.NOTIFICATION and pkt.client_id == 0
    )
    if server_to_client:
        return (tp.dst, tp.src, pkt.service_id)
    return (tp.src, tp.dst, pkt.service_id)


@dataclass
class InjectionReport:
    """What an attack or failure injection did to a trace.

    ``drop_times`` keeps the timestamps of removed packets so later stages
    can tell which stretch of the trace an omission touched.
    """

    kind: str
    packets_dropped: int = 0
    packets_injected: int = 0
    packets_mutated: int = 0
    per_flow: dict[FlowKey, Counter] = field(default_factory=dict)
    drop_times: list[float] = field(default_factory=list)

    def _bump(self, key: FlowKey, what: str) -> None:
        self.per_flow.setdefault(key, Counter())[what] += 1

    def record_drop(self, key: FlowKey, t: float) -> None:
        self.packets_dropped += 1
        self.drop_times.append(t)
        self._bump(key, "dropped")

    def record_injection(self, key: FlowKey) -> None:
        self.packets_injected += 1
        self._bump(key, "injected")

    def record_mutation(self, key: FlowKey, t: float | None = None) -> None:
        self.packets_mutated += 1
        self._bump(key, "mutated")

    @property
    def touched(self) -> bool:
        return bool(self.packets_dropped or self.packets_injected or self.packets_mutated)

    def to_dict(self) -> dict:
        return {
            "kind": self.kind,
            "packets_dropped": self.packets_dropped,
            "packets_injected": self.packets_injected,
            "packets_mutated": self.packets_mutated,
            "per_flow": {
                f"{c}->{s}:0x{svc:04X}": dict(cnt) for (c, s, svc), cnt in self.per_flow.items()
            },
        }


# the attack module's public name for the same record
AttackReport = InjectionReport
