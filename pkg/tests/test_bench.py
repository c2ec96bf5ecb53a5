import csv
import io
import json
import warnings

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from tinytwin.bench import (
    BenchMatrix,
    BenchReport,
    SlotTimingRecord,
    bench_trace,
    emit_report,
    host_descriptor,
    load_report,
    percentile,
    render_report,
    run_bench,
)
from tinytwin.errors import EmptySample, InsufficientCores, IoFailure, ValidationError


def recs(values):
    return [SlotTimingRecord(i, v, 1e-3) for i, v in enumerate(values)]


def test_percentile_single_record():
    r = recs([0.0007])
    for q in (0.0, 0.5, 0.9, 0.99, 1.0):
        assert percentile(r, q) == 0.0007


def test_percentile_one_to_ten_ms():
    r = recs([float(f"{i}e-3") for i in range(1, 11)])
    assert percentile(r, 0.9) == 9e-3
    assert percentile(r, 0.5) == 5e-3
    assert percentile(r, 1.0) == 10e-3
    assert percentile(r, 0.0) == 1e-3


def test_percentile_errors():
    with pytest.raises(EmptySample):
        percentile([], 0.5)
    with pytest.raises(ValidationError):
        percentile([1.0], 1.5)


@given(st.lists(st.floats(0, 1, allow_nan=False), min_size=1, max_size=200),
       st.floats(0.0, 1.0), st.floats(0.0, 1.0))
def test_percentile_matches_inverted_cdf_and_is_monotone(values, q1, q2):
    lo, hi = min(q1, q2), max(q1, q2)
    assert percentile(values, lo) <= percentile(values, hi)
    # numpy's inverted-CDF method is the nearest-rank definition for q > 0
    if lo > 0 and abs(lo * len(values) - round(lo * len(values))) > 1e-6:
        assert percentile(values, lo) == np.percentile(values, lo * 100, method="inverted_cdf")
    assert percentile(values, 1.0) == max(values)


def test_overrun_property():
    assert SlotTimingRecord(0, 1.5e-3, 1e-3).overrun
    assert not SlotTimingRecord(0, 1e-3, 1e-3).overrun


def test_report_from_records():
    values = [i * 1e-4 for i in range(1, 21)]
    rep = BenchReport.from_records(recs(values), mode="optimized", num_ues=1, num_taps=1, sparse_n=0,
                                   pinning=None, samples_per_slot=1920, slot_duration=1e-3, ue_timeouts=0)
    assert rep.num_slots == 20
    assert rep.p50 == values[9] and rep.p90 == values[17] and rep.p99 == rep.max == values[-1]
    assert rep.overrun_fraction == pytest.approx(10 / 20)


def test_matrix_validation():
    with pytest.raises(ValidationError):
        BenchMatrix(modes=("turbo",))
    with pytest.raises(ValidationError):
        BenchMatrix(ues=(0,))
    assert BenchMatrix(duration=0.25).num_slots == 250


def test_bench_trace_profile():
    tr = bench_trace(10, seed=1, duration=0.2)
    assert tr.num_bins == 10
    assert np.mean(tr.step_power()) == pytest.approx(1.0, rel=0.5)
    assert bench_trace(10, seed=1, duration=0.2).taps.tobytes() == tr.taps.tobytes()


@pytest.fixture(scope="module")
def small_reports():
    return run_bench({"modes": ("vanilla", "optimized"), "ues": (2,), "taps": (1, 5),
                      "duration": 0.1, "echo_probes": 10})


def test_run_bench_cells(small_reports):
    assert [(r.mode, r.num_ues, r.num_taps) for r in small_reports] == [
        ("vanilla", 2, 1), ("vanilla", 2, 5), ("optimized", 2, 1), ("optimized", 2, 5)]
    for r in small_reports:
        assert r.num_slots == 100
        assert r.p50 <= r.p90 <= r.p99 <= r.max
        assert 0.0 <= r.overrun_fraction <= 1.0
        assert r.echo_rtt["count"] == 10 and r.echo_rtt["median"] >= 2e-3
        assert r.host["logical_cores"] >= 1


def test_json_round_trip(small_reports, tmp_path):
    p = emit_report(small_reports, tmp_path / "bench.json")
    doc = json.loads(p.read_text())
    assert doc["format"] == "tinytwin-bench/1" and "logical_cores" in doc["host"]
    assert load_report(p) == small_reports


def test_csv_and_markdown(small_reports, tmp_path):
    p = emit_report(small_reports, tmp_path / "bench.csv")
    rows = list(csv.DictReader(io.StringIO(p.read_text())))
    assert len(rows) == 4 and float(rows[0]["p90"]) == small_reports[0].p90
    md = emit_report(small_reports, tmp_path / "bench.md").read_text()
    assert md.startswith("Host: ")
    assert sum(line.startswith("| vanilla") or line.startswith("| optimized") for line in md.splitlines()) == 4


def test_empty_report_is_still_a_document():
    doc = json.loads(render_report([], "json"))
    assert doc["reports"] == []
    assert render_report([], "csv").count("\n") == 1
    with pytest.raises(ValidationError):
        render_report([], "xml")


def test_unwritable_report_path(tmp_path):
    with pytest.raises(IoFailure):
        emit_report([], tmp_path / "missing" / "dir" / "bench.json")


def test_pinning_warns_when_cores_are_short():
    cores = host_descriptor()["usable_cores"]
    if cores >= 9:
        pytest.skip("enough cores for four pinned UEs")
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        reps = run_bench(BenchMatrix(modes=("optimized",), ues=(4,), duration=0.02, pinning=True))
    assert any(issubclass(w.category, InsufficientCores) for w in caught)
    assert reps[0].pinning["ue0"]
