"""Slot-timing benchmark: sweeps modes, UE counts and tap counts over loopback sessions."""
from __future__ import annotations

import csv
import io
import json
import math
import os
import platform
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .chan_model import DEFAULT_SAMPLE_RATE, CirTrace, DelayGrid, PdpProfile
from .errors import EmptySample, InsufficientCores, IoFailure, ValidationError
from .fronthaul.gnb import SlotTimingRecord, qpsk_source
from .fronthaul.runner import UeSpec, run_session
from .fronthaul.session import SessionConfig, available_cores, default_pinning
from .trace_gen import build_3gpp_trace

__all__ = ["SlotTimingRecord", "BenchMatrix", "BenchReport", "percentile", "bench_trace",
           "run_bench", "run_cell", "emit_report", "load_report", "host_descriptor"]

FORMATS = ("json", "csv", "markdown")


def percentile(records, q: float) -> float:
    """Nearest-rank percentile: the ``ceil(q * N)``-th smallest value (the minimum for q = 0)."""
    values = sorted(r.compute_duration if isinstance(r, SlotTimingRecord) else float(r) for r in records)
    if not values:
        raise EmptySample("percentile of an empty sample")
    if not 0.0 <= q <= 1.0:
        raise ValidationError(f"q must lie in [0, 1], got {q}")
    # round away float noise such as 0.7 * 10 = 7.000000000000001
    rank = math.ceil(round(q * len(values), 9))
    return values[max(rank, 1) - 1]


def host_descriptor() -> dict:
    """Core count and nominal clock, so reports from different hosts are not compared blindly."""
    mhz = None
    try:
        with open("/sys/devices/system/cpu/cpu0/cpufreq/cpuinfo_max_freq") as fh:
            mhz = int(fh.read().strip()) / 1000.0
    except (OSError, ValueError):
        try:
            with open("/proc/cpuinfo") as fh:
                for line in fh:
                    if line.lower().startswith("cpu mhz"):
                        mhz = float(line.split(":", 1)[1])
                        break
        except (OSError, ValueError):
            pass
    model = platform.processor() or ""
    try:
        with open("/proc/cpuinfo") as fh:
            for line in fh:
                if line.startswith("model name"):
                    model = line.split(":", 1)[1].strip()
                    break
    except OSError:
        pass
    return {
        "logical_cores": os.cpu_count() or 1,
        "usable_cores": len(available_cores()),
        "nominal_mhz": mhz,
        "cpu_model": model,
        "machine": platform.machine(),
        "system": platform.system(),
        "python": platform.python_version(),
    }


@dataclass
class BenchMatrix:
    modes: Sequence[str] = ("vanilla", "optimized")
    ues: Sequence[int] = (1,)
    taps: Sequence[int] = (1,)
    sparse_n: int = 0
    duration: float = 1.0
    pinning: bool = False
    samples_per_slot: int = 1920
    slot_duration: float = 1e-3
    seed: int = 0
    echo_probes: int = 0

    def __post_init__(self):
        for m in self.modes:
            if m not in ("vanilla", "optimized"):
                raise ValidationError(f"unknown mode {m!r}")
        if any(u < 1 for u in self.ues) or any(t < 1 for t in self.taps):
            raise ValidationError("UE and tap counts must be >= 1")
        if not self.duration > 0:
            raise ValidationError("duration must be positive")

    @property
    def num_slots(self) -> int:
        return max(1, int(round(self.duration / self.slot_duration)))


@dataclass
class BenchReport:
    mode: str
    num_ues: int
    num_taps: int
    sparse_n: int
    pinning: dict | None
    samples_per_slot: int
    slot_duration: float
    num_slots: int
    p50: float
    p90: float
    p99: float
    max: float
    overrun_fraction: float
    ue_timeouts: int
    echo_rtt: dict = field(default_factory=dict)
    host: dict = field(default_factory=dict)

    @classmethod
    def from_records(cls, records: list[SlotTimingRecord], **config) -> "BenchReport":
        return cls(p50=percentile(records, 0.5), p90=percentile(records, 0.9),
                   p99=percentile(records, 0.99), max=percentile(records, 1.0),
                   overrun_fraction=sum(r.overrun for r in records) / len(records),
                   num_slots=len(records), **config)


def bench_trace(num_taps: int, seed: int = 0, sample_rate: float = DEFAULT_SAMPLE_RATE,
                doppler_hz: float = 16.2, duration: float = 1.0) -> CirTrace:
    """Fading trace with one path per delay bin and a 3 dB/bin exponential profile."""
    grid = DelayGrid(num_taps, sample_rate)
    pdp = PdpProfile(grid.bin_delays_ns(), -3.0 * np.arange(num_taps), doppler_hz, f"bench-{num_taps}tap")
    return build_3gpp_trace(pdp, grid, duration, seed=seed, label=f"bench-{num_taps}tap-s{seed}")


def _ue_source(ue: int, seed: int):
    gen = qpsk_source(seed, ue)
    return lambda slot, dl: gen(slot, dl.size)


def run_cell(mode: str, num_ues: int, num_taps: int, matrix: BenchMatrix) -> BenchReport:
    ue_ids = list(range(num_ues))
    traces = {u: bench_trace(num_taps, seed=matrix.seed * 1000 + u,
                             sample_rate=matrix.samples_per_slot / matrix.slot_duration) for u in ue_ids}
    pinning = None
    if matrix.pinning:
        cores = available_cores()
        if len(cores) < 2 * num_ues + 1:
            warnings.warn(f"{len(cores)} usable cores for {num_ues} UEs; pinned UE groups will share cores",
                          InsufficientCores)
        pinning = {"gnb": [cores[0]]}
        pinning.update(default_pinning(ue_ids, 2, cores[1:] or cores))
    cfg = SessionConfig(mode=mode, samples_per_slot=matrix.samples_per_slot, slot_duration=matrix.slot_duration,
                        num_taps_n=matrix.sparse_n, traces=traces, pinning=pinning)
    ues = [UeSpec(u, traces[u], source=_ue_source(u, matrix.seed)) for u in ue_ids]
    res = run_session(cfg, ues, matrix.num_slots, echo_probes=min(matrix.echo_probes, matrix.num_slots // 3))
    rtt = {}
    if res.echo_rtts:
        rtt = {"count": len(res.echo_rtts), "median": float(np.median(res.echo_rtts)),
               "p90": percentile(res.echo_rtts, 0.9), "max": max(res.echo_rtts)}
    return BenchReport.from_records(
        res.records, mode=mode, num_ues=num_ues, num_taps=num_taps, sparse_n=matrix.sparse_n,
        pinning=pinning, samples_per_slot=matrix.samples_per_slot, slot_duration=matrix.slot_duration,
        ue_timeouts=len(res.ue_timeouts), echo_rtt=rtt, host=host_descriptor())


def run_bench(matrix: BenchMatrix | dict, progress=None) -> list[BenchReport]:
    """One report per (mode, UEs, taps) cell, run one after another."""
    if isinstance(matrix, dict):
        matrix = BenchMatrix(**matrix)
    if matrix.pinning and len(available_cores()) < 2 * max(matrix.ues):
        warnings.warn(f"host has {len(available_cores())} usable cores; pinned runs want "
                      f"{2 * max(matrix.ues)}", InsufficientCores)
    reports = []
    for mode in matrix.modes:
        for n_ue in matrix.ues:
            for n_tap in matrix.taps:
                rep = run_cell(mode, n_ue, n_tap, matrix)
                if progress:
                    progress(rep)
                reports.append(rep)
    return reports


# -- report output -----------------------------------------------------------

_CSV_FIELDS = ["mode", "num_ues", "num_taps", "sparse_n", "pinning", "samples_per_slot", "slot_duration",
               "num_slots", "p50", "p90", "p99", "max", "overrun_fraction", "ue_timeouts",
               "echo_rtt_median", "echo_rtt_count", "host_logical_cores", "host_nominal_mhz", "host_cpu_model"]


def _csv_row(r: BenchReport) -> dict:
    return {
        **{k: getattr(r, k) for k in _CSV_FIELDS[:14] if k != "pinning"},
        "pinning": json.dumps(r.pinning) if r.pinning else "",
        "echo_rtt_median": r.echo_rtt.get("median", ""),
        "echo_rtt_count": r.echo_rtt.get("count", 0),
        "host_logical_cores": r.host.get("logical_cores", ""),
        "host_nominal_mhz": r.host.get("nominal_mhz", ""),
        "host_cpu_model": r.host.get("cpu_model", ""),
    }


def render_report(reports: Sequence[BenchReport], fmt: str = "json") -> str:
    if fmt == "json":
        doc = {"format": "tinytwin-bench/1", "host": host_descriptor(),
               "reports": [asdict(r) for r in reports]}
        return json.dumps(doc, indent=2) + "\n"
    if fmt == "csv":
        buf = io.StringIO()
        w = csv.DictWriter(buf, fieldnames=_CSV_FIELDS, lineterminator="\n")
        w.writeheader()
        for r in reports:
            w.writerow(_csv_row(r))
        return buf.getvalue()
    if fmt in ("markdown", "markdown-table", "md"):
        host = host_descriptor()
        lines = [f"Host: {host['cpu_model'] or host['machine']}, {host['logical_cores']} logical cores, "
                 f"nominal {host['nominal_mhz'] or 'unknown'} MHz", "",
                 "| mode | UEs | taps | sparse n | pinned | slots | p50 (ms) | p90 (ms) | p99 (ms) | max (ms) "
                 "| overrun | UE timeouts | echo RTT median (ms) |",
                 "|---|---|---|---|---|---|---|---|---|---|---|---|---|"]
        for r in reports:
            rtt = f"{r.echo_rtt['median'] * 1e3:.3f}" if r.echo_rtt else "-"
            lines.append(
                f"| {r.mode} | {r.num_ues} | {r.num_taps} | {r.sparse_n} | {'yes' if r.pinning else 'no'} "
                f"| {r.num_slots} | {r.p50 * 1e3:.3f} | {r.p90 * 1e3:.3f} | {r.p99 * 1e3:.3f} | {r.max * 1e3:.3f} "
                f"| {r.overrun_fraction:.2%} | {r.ue_timeouts} | {rtt} |")
        return "\n".join(lines) + "\n"
    raise ValidationError(f"unknown report format {fmt!r}; choose from {FORMATS}")


def emit_report(reports: Sequence[BenchReport], path, fmt: str | None = None) -> Path:
    """Write ``reports`` to ``path``; the format defaults from the file suffix."""
    path = Path(path)
    if fmt is None:
        fmt = {".csv": "csv", ".md": "markdown"}.get(path.suffix.lower(), "json")
    text = render_report(reports, fmt)
    try:
        path.write_text(text, encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write report {path}: {exc}") from exc
    return path


def load_report(path) -> list[BenchReport]:
    """Read back a JSON report written by :func:`emit_report`."""
    with open(path, encoding="utf-8") as fh:
        doc = json.load(fh)
    return [BenchReport(**r) for r in doc["reports"]]
