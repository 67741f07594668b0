import math

import pytest
from splitpon.degrade import (DegradationEngine, DegradationParams, Switch,
                              SwitchPortMap, demux, mux)
from splitpon.links import FifoLink
from splitpon.sim import US, Engine, RngStream
from splitpon.traffic import FlowCounters, FlowId, Packet


def delays_and_order(sigma, gap_ns, n, seed=11):
    eng = Engine()
    out = []
    d = DegradationEngine(eng, DegradationParams(2e-3, sigma), RngStream(seed, 1),
                          lambda p: out.append((eng.now, p)))
    for k in range(n):
        eng.at(k * gap_ns, lambda p: d.degrade(p),
               Packet(FlowId.MOBILE, k, 1200, 1200, k * gap_ns))
    eng.run()
    return out, d


def overtake_fraction(sigma, gap_ns, n=100_000):
    out, _ = delays_and_order(sigma, gap_ns, n)
    at = {}
    for t, p in out:
        at[p.seq] = t
    bad = sum(1 for k in range(n - 1) if at[k] > at[k + 1])
    return bad / (n - 1)


def overtake_oracle(sigma, gap_s):
    # P(d_k - d_{k+1} > gap) with d ~ N(mean, sigma^2) i.i.d.
    x = -gap_s / (sigma * math.sqrt(2))
    return 0.5 * math.erfc(-x / math.sqrt(2))


def test_zero_sigma_is_pure_shift():
    out, _ = delays_and_order(0.0, 64 * US, 1000)
    assert [p.seq for _, p in out] == list(range(1000))
    assert all(t - p.created_at == 2_000_000 for t, p in out)


def test_mean_delay_accuracy():
    out, d = delays_and_order(0.66e-3, 64 * US, 100_000)
    mean = d.applied_ns / d.count
    assert abs(mean / 2e6 - 1) < 0.01


@pytest.mark.parametrize("sigma,gap_us", [(0.66e-3, 64), (0.1e-3, 96), (0.66e-3, 480)])
def test_overtake_matches_oracle(sigma, gap_us):
    got = overtake_fraction(sigma, gap_us * US)
    want = overtake_oracle(sigma, gap_us * 1e-6)
    assert abs(got - want) <= 0.02


def test_oracle_values():
    assert overtake_oracle(0.66e-3, 64e-6) == pytest.approx(0.47, abs=0.005)
    assert overtake_oracle(0.1e-3, 96e-6) == pytest.approx(0.25, abs=0.005)


def test_overtaking_grows_with_sigma():
    fr = [overtake_fraction(s, 96 * US, 20_000) for s in (0.05e-3, 0.1e-3, 0.66e-3)]
    assert fr == sorted(fr)


def test_floor_truncates():
    eng = Engine()
    got = []
    d = DegradationEngine(eng, DegradationParams(0.0, 1e-3, 0.5e-3), RngStream(3, 1),
                          lambda p: got.append(eng.now))
    for k in range(2000):
        d.degrade(Packet(FlowId.MOBILE, k, 100, 100, 0))
    eng.run()
    assert min(got) == 500_000


def test_params_validation():
    with pytest.raises(ValueError):
        DegradationParams(jitter_sigma=-1e-6)


def test_mux_demux_roundtrip():
    pm = SwitchPortMap()
    for flow in (FlowId.MOBILE, FlowId.OVERLOAD):
        p = Packet(flow, 7, 1200, 1200, 0)
        mux(p, pm)
        assert p.vlan_tag == pm.tags[flow]
        assert demux(p, pm) is flow
        assert (p.seq, p.size, p.vlan_tag) == (7, 1200, 0)
    assert pm.tags[FlowId.MOBILE] != pm.tags[FlowId.OVERLOAD]


def test_duplicate_tags_rejected():
    with pytest.raises(ValueError):
        SwitchPortMap({FlowId.MOBILE: 5, FlowId.OVERLOAD: 5})


def test_unknown_tag_is_misrouted():
    eng = Engine()
    sw = Switch(eng, SwitchPortMap(), FifoLink(10e9), lambda p, t: None, {})
    p = Packet(FlowId.MOBILE, 0, 100, 100, 0)
    p.vlan_tag = 999
    assert sw.untag(p) is None and sw.misrouted == 1


def test_trunk_serialization_and_overflow():
    eng = Engine()
    out = []
    ledger = {f: FlowCounters(f) for f in FlowId}
    sw = Switch(eng, SwitchPortMap(), FifoLink(10e9, 0, 2500), lambda p, t: out.append(t),
                ledger)
    for k in range(3):
        sw.send(Packet(FlowId.MOBILE, k, 1200, 1200, 0))
    assert out == [960, 1920]
    assert ledger[FlowId.MOBILE].drops == {"trunk": 1}
