from collections import Counter, defaultdict

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import stats

from sissa.codec import MessageType, validate_exchange
from sissa.sim import (
    Ecu,
    Pattern,
    ServiceBinding,
    SimConfig,
    Topology,
    TopologyError,
    default_topology,
    loads_trace,
    read_trace,
    run_sim,
    write_trace,
)


@pytest.fixture(scope="module")
def trace():
    return run_sim(SimConfig(default_topology(), duration=20.0, mean_request_interval=0.02, seed=3))


def test_same_seed_same_bytes():
    cfg = SimConfig(default_topology(), duration=5.0, mean_request_interval=0.01, seed=11)
    assert run_sim(cfg).digest() == run_sim(cfg).digest()
    cfg.seed = 12
    other = run_sim(cfg)
    assert other.digest() != run_sim(SimConfig(default_topology(), 5.0, 0.01, seed=11)).digest()


def test_timestamps_nondecreasing(trace):
    t = np.array([p.timestamp for p in trace.packets])
    assert np.all(np.diff(t) >= 0)
    assert t[0] >= 0 and t[-1] <= 20.0 + 0.002


def test_default_topology_shape():
    topo = default_topology()
    assert topo.ids == [1, 2, 3, 4, 5, 6]
    providers = {b.provider for b in topo.bindings}
    clients = {c for b in topo.bindings for c in b.clients}
    assert providers == {4, 5, 6} and clients == {1, 2, 3}
    assert {b.pattern for b in topo.bindings} == set(Pattern)
    strategies = {b.event_strategy for b in topo.bindings if b.pattern is Pattern.EVENT}
    assert strategies == {"PERIODIC", "ON_CHANGE"}


def test_every_request_answered_once_within_latency(trace):
    reqs, ress = {}, {}
    for p in trace.packets:
        key = (p.packet.service_id, p.packet.client_id, p.packet.session_id)
        if p.packet.message_type is MessageType.REQUEST:
            assert key not in reqs
            reqs[key] = p
        elif p.packet.message_type is MessageType.RESPONSE:
            assert key not in ress
            ress[key] = p
    assert reqs and set(reqs) == set(ress)
    for key, q in reqs.items():
        r = ress[key]
        assert validate_exchange(q.packet, r.packet)
        assert (r.src, r.dst) == (q.dst, q.src)
        assert 0.0005 <= r.timestamp - q.timestamp <= 0.002


def test_sessions_increase_per_client_and_service(trace):
    last = {}
    for p in trace.packets:
        if p.packet.message_type in (MessageType.REQUEST, MessageType.REQUEST_NO_RETURN):
            key = (p.src, p.packet.service_id)
            assert p.packet.session_id == last.get(key, 0) + 1
            last[key] = p.packet.session_id


def test_request_arrivals_are_exponential(trace):
    times = defaultdict(list)
    for p in trace.packets:
        if p.packet.message_type in (MessageType.REQUEST, MessageType.REQUEST_NO_RETURN):
            times[(p.src, p.packet.service_id)].append(p.timestamp)
    gaps = np.concatenate([np.diff(v) for v in times.values()])
    assert abs(gaps.mean() - 0.02) < 0.02 * 0.05
    assert stats.kstest(gaps, "expon", args=(0, 0.02)).pvalue > 0.001


def test_periodic_events_on_grid(trace):
    topo = trace.topology
    b = next(b for b in topo.bindings if b.event_strategy == "PERIODIC" and b.pattern is Pattern.EVENT)
    ev = [p.timestamp for p in trace.packets
          if p.packet.service_id == b.service_id and p.src == b.provider]
    assert np.allclose(np.diff(ev), b.period)
    assert len(ev) == int(20.0 / b.period + 1e-9)


def test_subscription_precedes_events(trace):
    for b in trace.topology.bindings:
        if b.pattern is not Pattern.EVENT:
            continue
        pk = [p for p in trace.packets if p.packet.service_id == b.service_id]
        assert pk[0].src in b.clients and pk[0].packet.client_id != 0
        assert all(p.src == b.provider and p.packet.client_id == 0 for p in pk[1:])


def test_jsonl_roundtrip(trace, tmp_path):
    path = tmp_path / "t.jsonl"
    write_trace(trace, path)
    back = read_trace(path)
    assert back.packets == trace.packets
    assert back.topology == trace.topology
    assert back.digest() == trace.digest()
    lines = path.read_text().splitlines()
    assert len(lines) == len(trace) + 1


def test_trace_reader_rejects_bad_files():
    with pytest.raises(ValueError):
        loads_trace("")
    with pytest.raises(ValueError):
        loads_trace('{"t": 0.0}\n')


def test_zero_duration_is_empty():
    assert len(run_sim(SimConfig(default_topology(), 0.0, 0.01))) == 0


@pytest.mark.parametrize("kw", [dict(duration=-1.0), dict(mean_request_interval=0.0),
                                dict(latency=(0.002, 0.001)), dict(payload_range=(5, 2))])
def test_config_validation(kw):
    base = dict(topology=default_topology(), duration=1.0, mean_request_interval=0.01)
    base.update(kw)
    with pytest.raises(ValueError):
        run_sim(SimConfig(**base))


def test_topology_errors():
    with pytest.raises(TopologyError):
        Topology((Ecu(1, 1), Ecu(1, 2)), ())
    with pytest.raises(TopologyError):
        Topology((Ecu(1, 1),), (ServiceBinding(1, 0x10, (1,), Pattern.REQUEST_RESPONSE, (9,)),))
    with pytest.raises(TopologyError):
        ServiceBinding(1, 0x10, (), Pattern.REQUEST_RESPONSE, (1,))


def test_topology_dict_roundtrip():
    topo = default_topology()
    assert Topology.from_dict(topo.to_dict()) == topo


@settings(max_examples=15, deadline=None)
@given(seed=st.integers(0, 2**32 - 1), mri=st.floats(0.005, 0.2))
def test_counts_match_pattern(seed, mri):
    tr = run_sim(SimConfig(default_topology(), duration=2.0, mean_request_interval=mri, seed=seed))
    kinds = Counter(p.packet.message_type for p in tr.packets)
    assert kinds[MessageType.REQUEST] == kinds[MessageType.RESPONSE]
    assert kinds[MessageType.ERROR] == 0
    for p in tr.packets:
        assert p.packet.length == 8 + len(p.packet.payload)
