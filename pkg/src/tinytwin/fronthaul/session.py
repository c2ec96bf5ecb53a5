"""Session configuration, slot pacing and CPU pinning."""
from __future__ import annotations

import os
import time
import warnings
from dataclasses import dataclass, field
from typing import Iterable, Mapping

from ..chan_model import CirTrace, load_trace
from ..errors import InvalidCore, ValidationError

MODES = ("vanilla", "optimized")


@dataclass
class SessionConfig:
    """Parameters fixed for the lifetime of one gNB session.

    ``traces`` maps UE id to a :class:`CirTrace` or a CIRT path.  The gNB only
    needs them in vanilla mode, where it convolves uplink streams itself.
    ``num_taps_n`` is the sparse budget; 0 convolves with every tap.
    """

    mode: str = "optimized"
    samples_per_slot: int = 1920
    slot_duration: float = 1e-3
    num_taps_n: int = 0
    traces: dict = field(default_factory=dict)
    noise_power: float = 0.0
    noise_seed: int = 0
    pinning: dict | None = None
    uplink_deadline: float = 0.02

    def __post_init__(self):
        if self.mode not in MODES:
            raise ValidationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.samples_per_slot < 1:
            raise ValidationError("samples_per_slot must be >= 1")
        if not self.slot_duration > 0:
            raise ValidationError("slot_duration must be positive")
        if self.num_taps_n < 0:
            raise ValidationError("num_taps_n must be >= 0")
        if self.noise_power < 0:
            raise ValidationError("noise_power must be >= 0")
        if not self.uplink_deadline > 0:
            raise ValidationError("uplink_deadline must be positive")
        self.traces = {int(k): v for k, v in self.traces.items()}
        for ue, tr in self.traces.items():
            if isinstance(tr, CirTrace):
                check_trace_fits(tr, self.samples_per_slot, ue)

    @property
    def optimized(self) -> bool:
        return self.mode == "optimized"

    @property
    def sample_rate(self) -> float:
        return self.samples_per_slot / self.slot_duration

    def trace_for(self, ue_id: int) -> CirTrace | None:
        tr = self.traces.get(int(ue_id))
        if tr is None or isinstance(tr, CirTrace):
            return tr
        tr = load_trace(tr)
        check_trace_fits(tr, self.samples_per_slot, ue_id)
        self.traces[int(ue_id)] = tr
        return tr


def check_trace_fits(trace: CirTrace, samples_per_slot: int, ue_id=None) -> None:
    if trace.num_bins > samples_per_slot:
        raise ValidationError(
            f"trace for UE {ue_id} has {trace.num_bins} taps but slots carry only "
            f"{samples_per_slot} samples")


class SlotClock:
    """Paces slots against a monotonic epoch; slot indices only move forward."""

    def __init__(self, slot_duration: float, epoch: float | None = None, start_slot: int = 0):
        self.slot_duration = float(slot_duration)
        self.epoch = time.perf_counter() if epoch is None else epoch
        self.epoch_ns = time.time_ns() - int((time.perf_counter() - self.epoch) * 1e9)
        self.current_slot = start_slot - 1

    def slot_time(self, slot: int) -> float:
        """Nominal start of ``slot`` on the ``perf_counter`` timeline."""
        return self.epoch + slot * self.slot_duration

    def advance(self) -> int:
        """Sleep until the next slot boundary (no sleep when behind) and return its index."""
        self.current_slot += 1
        target = self.slot_time(self.current_slot)
        remaining = target - time.perf_counter()
        if remaining > 2e-4:
            time.sleep(remaining - 1e-4)
        while time.perf_counter() < target:
            pass
        return self.current_slot


# -- CPU pinning -------------------------------------------------------------

def host_cores() -> int:
    return os.cpu_count() or 1


def available_cores() -> list[int]:
    if hasattr(os, "sched_getaffinity"):
        return sorted(os.sched_getaffinity(0))
    return list(range(host_cores()))


def pin_worker(worker_id: int, cores) -> None:
    """Bind a worker (thread id or pid; 0 is the caller) to the given core ids."""
    if isinstance(cores, int):
        cores = [cores]
    cores = [int(c) for c in cores]
    if not cores:
        return
    n = host_cores()
    bad = [c for c in cores if c < 0 or c >= n]
    if bad:
        raise InvalidCore(f"core ids {bad} invalid on a host with {n} cores")
    if not hasattr(os, "sched_setaffinity"):
        warnings.warn("CPU affinity is not supported on this platform; pinning skipped", RuntimeWarning)
        return
    try:
        os.sched_setaffinity(worker_id, set(cores))
    except OSError as exc:
        raise InvalidCore(f"cannot pin worker {worker_id} to {cores}: {exc}") from exc


def current_affinity(worker_id: int = 0) -> set[int]:
    return set(os.sched_getaffinity(worker_id)) if hasattr(os, "sched_getaffinity") else set()


def default_pinning(ue_ids: Iterable[int], cores_per_ue: int = 2,
                    cores: list[int] | None = None) -> dict[str, list[int]]:
    """Two cores per UE worker group, assigned round-robin over the usable cores."""
    cores = cores or available_cores()
    out = {}
    for i, ue in enumerate(sorted(ue_ids)):
        out[f"ue{ue}"] = sorted({cores[(cores_per_ue * i + j) % len(cores)] for j in range(cores_per_ue)})
    return out


def pinning_for(pinning: Mapping | None, worker: str) -> list[int] | None:
    if not pinning:
        return None
    cores = pinning.get(worker)
    return list(cores) if cores is not None else None
