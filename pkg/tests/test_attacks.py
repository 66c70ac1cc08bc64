from collections import Counter

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sissa.attacks import (
    FAKE_INTERFACE_EPSILON,
    AttackError,
    AttackKind,
    AttackParams,
    InsufficientAddressesError,
    NoEligiblePacketsError,
    apply_attack,
)
from sissa.codec import MessageType
from sissa.sim import Ecu, Origin, Pattern, ServiceBinding, SimConfig, Topology, default_topology, run_sim


@pytest.fixture(scope="module")
def trace():
    return run_sim(SimConfig(default_topology(), duration=20.0, mean_request_interval=0.01, seed=4))


def _count(tr, mt, origin=None):
    return sum(1 for p in tr.packets if p.packet.message_type is mt
               and (origin is None or p.origin is origin))


def test_request_without_response_exact_count(trace):
    n_res = _count(trace, MessageType.RESPONSE)
    out, rep = apply_attack(trace, AttackParams(AttackKind.REQUEST_WITHOUT_RESPONSE, 0.4, seed=1))
    assert rep.packets_dropped == round(0.4 * n_res)
    assert _count(out, MessageType.RESPONSE) == n_res - rep.packets_dropped
    assert _count(out, MessageType.REQUEST) == _count(trace, MessageType.REQUEST)
    assert rep.packets_injected == 0


def test_fake_interface_shadows(trace):
    n_res = _count(trace, MessageType.RESPONSE)
    out, rep = apply_attack(trace, AttackParams(AttackKind.FAKE_INTERFACE, 0.3, seed=1))
    assert rep.packets_injected == round(0.3 * n_res)
    legit = {(p.packet.service_id, p.packet.client_id, p.packet.session_id): p
             for p in trace.packets if p.packet.message_type is MessageType.RESPONSE}
    fakes = [p for p in out.packets if p.origin is Origin.INJECTED]
    assert len(fakes) == rep.packets_injected
    for f in fakes:
        orig = legit[(f.packet.service_id, f.packet.client_id, f.packet.session_id)]
        assert f.timestamp == pytest.approx(orig.timestamp + FAKE_INTERFACE_EPSILON)
        assert f.packet.interface_version != orig.packet.interface_version
        assert f.packet.replace(interface_version=orig.packet.interface_version) == orig.packet
        assert (f.src, f.dst) == (orig.src, orig.dst)


def test_fake_source_spoofs_other_ecu(trace):
    out, rep = apply_attack(trace, AttackParams(AttackKind.FAKE_SOURCE, 0.5, seed=2))
    assert rep.packets_injected == round(0.5 * len(trace))
    ids = set(trace.topology.ids)
    originals = Counter((p.packet, p.dst) for p in trace.packets)
    for f in (p for p in out.packets if p.origin is Origin.INJECTED):
        assert (f.packet, f.dst) in originals
        assert f.src in ids
    srcs_of = {}
    for p in trace.packets:
        srcs_of.setdefault((p.packet, p.dst), set()).add(p.src)
    assert all(f.src not in srcs_of[(f.packet, f.dst)]
               for f in out.packets if f.origin is Origin.INJECTED)


def test_fake_source_needs_two_ecus():
    topo = Topology((Ecu(1, 1),), (ServiceBinding(1, 0x10, (1,), Pattern.FIRE_FORGET, (1,)),))
    tr = run_sim(SimConfig(topo, 1.0, 0.05))
    with pytest.raises(InsufficientAddressesError):
        apply_attack(tr, AttackParams(AttackKind.FAKE_SOURCE, 0.5))


def test_ddos_flood_and_losses():
    tr = run_sim(SimConfig(default_topology(), duration=200.0, mean_request_interval=0.02, seed=8))
    m = 3.0
    out, rep = apply_attack(tr, AttackParams(AttackKind.DDOS, m, target=(4, None), seed=3))
    legit = sum(1 for p in tr.packets if p.dst == 4 and p.packet.message_type is MessageType.REQUEST)
    flood = [p for p in out.packets if p.origin is Origin.INJECTED]
    assert len(flood) == rep.packets_injected
    assert all(p.dst == 4 and p.src != 4 for p in flood)
    # Poisson(m * legit) count, checked at a generous quantile
    assert stats.poisson.cdf(len(flood), m * legit) > 1e-4
    assert stats.poisson.sf(len(flood), m * legit) > 1e-4
    responses = sum(1 for p in tr.packets if p.src == 4 and p.packet.message_type is MessageType.RESPONSE)
    lo, hi = stats.binom.interval(0.9999, responses, 1 - 1 / m)
    assert lo <= rep.packets_dropped <= hi


def test_ddos_multiplier_must_exceed_one():
    with pytest.raises(AttackError):
        AttackParams(AttackKind.DDOS, 1.0)


def test_response_before_request(trace):
    out, rep = apply_attack(trace, AttackParams(AttackKind.RESPONSE_WITHOUT_REQUEST, 0.2, seed=5))
    n_req = _count(trace, MessageType.REQUEST)
    assert rep.packets_injected == round(0.2 * n_req)
    first_req = {}
    for p in out.packets:
        if p.packet.message_type is MessageType.REQUEST:
            first_req.setdefault((p.packet.service_id, p.packet.client_id, p.packet.session_id), p.timestamp)
    for f in (p for p in out.packets if p.origin is Origin.INJECTED):
        assert f.packet.message_type is MessageType.RESPONSE
        assert f.timestamp < first_req[(f.packet.service_id, f.packet.client_id, f.packet.session_id)]


def test_target_filter(trace):
    out, rep = apply_attack(trace, AttackParams(AttackKind.REQUEST_WITHOUT_RESPONSE, 1.0,
                                                target=(None, 0x1002), seed=1))
    assert all(p.packet.service_id != 0x1002 for p in out.packets
               if p.packet.message_type is MessageType.RESPONSE)
    kept = set(out.packets)
    assert all(p.packet.service_id == 0x1002 for p in trace.packets
               if p.packet.message_type is MessageType.RESPONSE and p not in kept)


def test_no_eligible_packets(trace):
    only_events = trace.with_packets([p for p in trace.packets
                                      if p.packet.message_type is MessageType.NOTIFICATION])
    for kind in (AttackKind.REQUEST_WITHOUT_RESPONSE, AttackKind.FAKE_INTERFACE,
                 AttackKind.RESPONSE_WITHOUT_REQUEST):
        with pytest.raises(NoEligiblePacketsError):
            apply_attack(only_events, AttackParams(kind, 0.5))


@pytest.mark.parametrize("bad", [0.0, -0.1, 1.5])
def test_share_range(bad):
    with pytest.raises(AttackError):
        AttackParams(AttackKind.FAKE_INTERFACE, bad)


@settings(max_examples=20, deadline=None)
@given(kind=st.sampled_from([k for k in AttackKind if k is not AttackKind.DDOS]),
       share=st.floats(0.05, 1.0), seed=st.integers(0, 2**31))
def test_deterministic_and_sorted(trace, kind, share, seed):
    p = AttackParams(kind, share, seed=seed)
    a, ra = apply_attack(trace, p)
    b, _ = apply_attack(trace, p)
    assert a.packets == b.packets
    t = np.array([x.timestamp for x in a.packets])
    assert np.all(np.diff(t) >= 0)
    assert len(a) == len(trace) + ra.packets_injected - ra.packets_dropped
