import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinytwin.conv import IqFrame, add_awgn
from tinytwin.errors import ValidationError
from tinytwin.telemetry.link import (
    LinkMonitor,
    LinkState,
    McsTable,
    SlotOutcome,
    default_mcs_table,
    realized_snr_db,
    select_mcs,
    tb_outcome,
    update_link,
)

TABLE = default_mcs_table()
THRESH = [r.snr_threshold_db for r in TABLE.rows]


def test_shipped_table_shape():
    assert len(TABLE.rows) == 28
    assert [r.mcs for r in TABLE.rows] == list(range(28))
    assert THRESH[0] == -4.0
    assert np.allclose(np.diff(THRESH), 1.0)
    bits = [r.bits_per_slot for r in TABLE.rows]
    assert all(b2 > b1 for b1, b2 in zip(bits, bits[1:]))
    # bits follow spectral efficiency times the resource elements per slot
    doc = json.loads((__import__("importlib").resources.files("tinytwin") / "telemetry" / "mcs_table.json").read_text())
    assert doc["resource_elements_per_slot"] == 864
    assert bits[0] == round(0.2344 * 864) and bits[-1] == round(7.4063 * 864)


def test_table_validation():
    with pytest.raises(ValidationError):
        McsTable([])
    with pytest.raises(ValidationError):
        McsTable([(0, 0, 100), (0, 1, 200)])
    with pytest.raises(ValidationError):
        McsTable([(0, 0, 200), (1, 1, 100)])


def test_select_mcs_edges():
    assert select_mcs(-40.0) == 0
    assert select_mcs(100.0) == TABLE.max_mcs == 27
    for r in TABLE.rows:
        assert select_mcs(r.snr_threshold_db) == r.mcs
        assert select_mcs(np.nextafter(r.snr_threshold_db, -np.inf)) == max(r.mcs - 1, 0)


@given(st.floats(-50, 60), st.floats(-50, 60))
def test_select_mcs_monotone(a, b):
    lo, hi = min(a, b), max(a, b)
    assert select_mcs(lo) <= select_mcs(hi)


def test_tb_outcome_cliff():
    assert tb_outcome(40.0, 10)
    assert not tb_outcome(TABLE.threshold(10) - 10, 10)
    assert tb_outcome(TABLE.threshold(10), 10)
    assert tb_outcome(TABLE.threshold(10) - 0.5, 10, margin_db=1.0)


def test_tb_outcome_stochastic():
    thr = TABLE.threshold(12)
    draws = [tb_outcome(thr, 12, seed=1, slot=s, ue=0, stochastic=True) for s in range(4000)]
    assert np.mean(draws) == pytest.approx(0.5, abs=0.04)
    again = [tb_outcome(thr, 12, seed=1, slot=s, ue=0, stochastic=True) for s in range(200)]
    assert again == draws[:200]
    assert all(tb_outcome(thr + 10, 12, slot=s, stochastic=True) for s in range(200))
    assert not any(tb_outcome(thr - 10, 12, slot=s, stochastic=True) for s in range(200))


def test_update_link_zero_load_static():
    s = LinkState(0)
    for i in range(5):
        s = update_link(s, SlotOutcome(i, 30.0, 27, True), 0)
    assert (s.bits_delivered, s.drops, s.buffer_bits, s.bits_lost) == (0, 0, 0, 0)
    s = update_link(s, SlotOutcome(5, -30.0, 0, False), 0)
    assert s.drops == 0  # nothing scheduled, nothing dropped


def test_update_link_drains_each_slot():
    s = LinkState(0)
    cap = TABLE.bits_per_slot(20)
    for i in range(10):
        s = update_link(s, SlotOutcome(i, 20.0, 20, True), cap - 1)
        assert s.buffer_bits == 0
    assert s.bits_delivered == 10 * (cap - 1)


@settings(max_examples=200)
@given(st.lists(st.tuples(st.integers(0, 27), st.booleans(), st.integers(0, 8000)), max_size=60))
def test_conservation_and_monotone_counters(seq):
    s = LinkState(1)
    for i, (mcs, ok, offered) in enumerate(seq):
        prev = s
        s = update_link(s, SlotOutcome(i, 0.0, mcs, ok), offered)
        assert s.offered_bits == s.bits_delivered + s.buffer_bits + s.bits_lost
        assert s.bits_delivered >= prev.bits_delivered and s.drops >= prev.drops
        assert s.buffer_bits >= 0


def queue_oracle(offered, caps, ok):
    """Plain scalar queue: arrivals, then one grant that leaves the queue either way."""
    q, out = 0, []
    for a, c, _good in zip(offered, caps, ok):
        q = q + a - min(q + a, c)
        out.append(q)
    return out


def test_buffer_dip_matches_queue_oracle():
    # 5 Mb/s offered; SNR 20 dB, a 1 s dip to 0 dB, then recovery
    snr = np.r_[np.full(500, 20.0), np.full(1000, 0.0), np.full(8000, 20.0)]
    offered = 5000
    s = LinkState(0)
    buf, caps, oks = [], [], []
    for i, x in enumerate(snr):
        m = select_mcs(x)
        s = update_link(s, SlotOutcome(i, x, m, True), offered)
        buf.append(s.buffer_bits)
        caps.append(TABLE.bits_per_slot(m))
        oks.append(True)
    assert buf == queue_oracle([offered] * len(snr), caps, oks)
    assert buf[499] == 0
    assert buf[1499] > buf[1000] > buf[500] > 0       # grows through the dip
    after = np.array(buf[1499:])
    assert np.all(np.diff(after) <= 0) and after[-1] == 0  # drains after recovery


def test_realized_snr():
    rng = np.random.default_rng(0)
    n0 = 0.01
    x = np.exp(1j * rng.uniform(0, 6.3, 200_000)).astype(np.complex64)
    y = add_awgn(IqFrame(0, 0, x), n0, 1).samples
    assert realized_snr_db(y, n0) == pytest.approx(20.0, abs=0.1)


def test_monitor_records_and_reports():
    from tinytwin.telemetry.metrics import MetricsRegistry
    reg = MetricsRegistry()
    mon = LinkMonitor(4, 0.01, registry=reg)
    rng = np.random.default_rng(1)
    x = np.exp(1j * rng.uniform(0, 6.3, 1920)).astype(np.complex64)
    for s in range(20):
        rx = add_awgn(IqFrame(s, 4, x), 0.01, 0)
        st_ = mon.on_slot(s, [1.0], rx)
    assert st_.slot_index == 19 and st_.snr_db == pytest.approx(20.0)
    assert st_.mcs == select_mcs(20.0)
    snap = reg.snapshot()["ues"][4]
    assert snap["bits_delivered"] == st_.bits_delivered and snap["drops"] == st_.drops
    with pytest.raises(ValidationError):
        LinkMonitor(0, 0.0)
