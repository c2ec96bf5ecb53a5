"""Channel impulse response containers and the CIRT binary trace format.

A trace is a ``T x L`` grid of complex taps: ``T`` time steps (1 ms apart by
default) by ``L`` delay bins, one bin per IQ sample period.  Replay past the
last step wraps around, so a short trace can drive an arbitrarily long run.

File layout (little-endian)::

    "CIRT" | version u16 | flags u16 | num_steps u32 | num_bins u32
    | bin_spacing_ns f64 | time_step_us f64 | carrier_freq_hz f64
    | label_len u16 | label (UTF-8) | taps: num_steps*num_bins*(f32 re, f32 im)
"""
from __future__ import annotations

import json
import math
import os
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import (
    BadMagic,
    IoFailure,
    NonFiniteTap,
    StepOutOfRange,
    TraceFormatError,
    Truncated,
    UnsupportedVersion,
    ValidationError,
)

MAGIC = b"CIRT"
VERSION = 1
_FIXED_HEADER = struct.Struct("<4sHHIIdddH")
FIXED_HEADER_SIZE = _FIXED_HEADER.size  # 42 bytes, label follows
TAP_BYTES = 8

DEFAULT_SAMPLE_RATE = 1.92e6
DEFAULT_TIME_STEP = 1e-3
DEFAULT_CARRIER = 3.5e9


@dataclass(frozen=True)
class DelayGrid:
    """Uniform delay grid aligned to the IQ sample clock (one bin per sample)."""

    num_bins: int
    sample_rate: float

    def __post_init__(self):
        if int(self.num_bins) != self.num_bins or self.num_bins < 1:
            raise ValidationError(f"num_bins must be a positive integer, got {self.num_bins}")
        if not (self.sample_rate > 0 and math.isfinite(self.sample_rate)):
            raise ValidationError(f"sample_rate must be positive, got {self.sample_rate}")
        object.__setattr__(self, "num_bins", int(self.num_bins))
        object.__setattr__(self, "sample_rate", float(self.sample_rate))

    @property
    def bin_spacing_ns(self) -> float:
        return 1e9 / self.sample_rate

    @property
    def bin_spacing(self) -> float:
        """Bin spacing in seconds."""
        return 1.0 / self.sample_rate

    @property
    def span_ns(self) -> float:
        return self.num_bins * self.bin_spacing_ns

    def bin_delays_ns(self) -> np.ndarray:
        return np.arange(self.num_bins) * self.bin_spacing_ns

    @classmethod
    def from_spacing_ns(cls, num_bins: int, bin_spacing_ns: float) -> "DelayGrid":
        if not bin_spacing_ns > 0:
            raise ValidationError(f"bin spacing must be positive, got {bin_spacing_ns}")
        rate = 1e9 / bin_spacing_ns
        # recover the integral/decimal rate the spacing was derived from
        for cand in (float(round(rate)), round(rate, 3)):
            if cand > 0 and 1e9 / cand == bin_spacing_ns:
                rate = cand
                break
        grid = cls(num_bins, rate)
        # spacing * rate must be 1 to within rounding of the reciprocal
        if abs(grid.bin_spacing_ns * grid.sample_rate / 1e9 - 1.0) > 4 * np.finfo(float).eps:
            raise ValidationError("bin spacing and sample rate are not reciprocal")
        return grid


@dataclass(frozen=True, eq=False)
class CirTrace:
    """Replayable time-varying channel: ``taps[step, bin]`` as complex64."""

    grid: DelayGrid
    taps: np.ndarray
    time_step: float = DEFAULT_TIME_STEP
    carrier_freq: float = DEFAULT_CARRIER
    label: str = ""

    def __post_init__(self):
        taps = np.asarray(self.taps)
        if taps.ndim == 1:
            taps = taps[:, None] if self.grid.num_bins == 1 else taps[None, :]
        if taps.ndim != 2 or taps.shape[1] != self.grid.num_bins or taps.shape[0] < 1:
            raise ValidationError(
                f"taps must have shape (T, {self.grid.num_bins}), got {np.shape(self.taps)}")
        taps = np.ascontiguousarray(taps, dtype=np.complex64)
        bad = ~np.isfinite(taps.view(np.float32))
        if bad.any():
            first = int(np.flatnonzero(bad)[0]) // 2
            step, b = divmod(first, self.grid.num_bins)
            raise NonFiniteTap(f"non-finite tap at step {step}, bin {b}")
        if not (self.time_step > 0 and math.isfinite(self.time_step)):
            raise ValidationError(f"time_step must be positive, got {self.time_step}")
        if not math.isfinite(self.carrier_freq):
            raise ValidationError("carrier_freq must be finite")
        taps.flags.writeable = False
        object.__setattr__(self, "taps", taps)

    @property
    def num_steps(self) -> int:
        return self.taps.shape[0]

    @property
    def num_bins(self) -> int:
        return self.grid.num_bins

    def step_taps(self, step: int) -> np.ndarray:
        """Taps for ``step``; steps past the end wrap modulo ``num_steps``."""
        return self.taps[int(step) % self.num_steps]

    def step_power(self) -> np.ndarray:
        """Total tap power per step, linear."""
        t = self.taps.astype(np.complex128)
        return np.sum(t.real ** 2 + t.imag ** 2, axis=1)

    def __eq__(self, other):
        if not isinstance(other, CirTrace):
            return NotImplemented
        return (
            self.grid == other.grid
            and self.time_step == other.time_step
            and self.carrier_freq == other.carrier_freq
            and self.label == other.label
            and self.taps.shape == other.taps.shape
            and self.taps.tobytes() == other.taps.tobytes()
        )

    __hash__ = None


@dataclass
class PdpProfile:
    """Power delay profile; powers are normalized to unit total on construction."""

    path_delays: Sequence[float]
    path_powers_db: Sequence[float]
    doppler_hz: float = 0.0
    name: str = ""
    path_powers: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        delays = np.asarray(self.path_delays, dtype=float)
        powers_db = np.asarray(self.path_powers_db, dtype=float)
        if delays.ndim != 1 or delays.size < 1 or delays.shape != powers_db.shape:
            raise ValidationError("path_delays and path_powers_db must be equal-length, non-empty")
        if np.any(np.diff(delays) < 0):
            raise ValidationError("path delays must be sorted non-decreasing")
        if np.any(delays < 0) or not np.all(np.isfinite(delays)) or not np.all(np.isfinite(powers_db)):
            raise ValidationError("path delays must be finite and non-negative")
        if self.doppler_hz < 0:
            raise ValidationError("doppler_hz must be >= 0")
        lin = 10.0 ** (powers_db / 10.0)
        lin = lin / lin.sum()
        self.path_delays = delays
        self.path_powers = lin
        self.path_powers_db = 10.0 * np.log10(lin)

    @classmethod
    def from_json(cls, path, doppler_hz: float = 0.0) -> "PdpProfile":
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
        order = np.argsort(np.asarray(doc["delays_ns"], dtype=float), kind="stable")
        delays = np.asarray(doc["delays_ns"], dtype=float)[order]
        powers = np.asarray(doc["powers_db"], dtype=float)[order]
        return cls(delays, powers, doppler_hz=doppler_hz, name=doc.get("name", Path(path).stem))


@dataclass(frozen=True)
class SparseTaps:
    """Top-n taps of one step as parallel, bin-ascending arrays."""

    indices: np.ndarray
    gains: np.ndarray
    num_bins: int

    def __post_init__(self):
        idx = np.ascontiguousarray(self.indices, dtype=np.int64).ravel()
        gains = np.ascontiguousarray(self.gains, dtype=np.complex128).ravel()
        if idx.size != gains.size or idx.size > self.num_bins:
            raise ValidationError("sparse taps need equal-length indices and gains, at most num_bins long")
        if idx.size and (idx[0] < 0 or idx[-1] >= self.num_bins or np.any(np.diff(idx) <= 0)):
            raise ValidationError("sparse tap bins must be strictly increasing within [0, num_bins)")
        object.__setattr__(self, "indices", idx)
        object.__setattr__(self, "gains", gains)

    @property
    def entries(self):
        return list(zip(self.indices.tolist(), self.gains.tolist()))

    def __len__(self):
        return len(self.indices)


# -- file I/O ----------------------------------------------------------------

def _encode_header(trace: CirTrace) -> bytes:
    label = trace.label.encode("utf-8")
    if len(label) > 0xFFFF:
        raise ValidationError("label longer than 65535 bytes")
    head = _FIXED_HEADER.pack(
        MAGIC, VERSION, 0, trace.num_steps, trace.num_bins,
        trace.grid.bin_spacing_ns, trace.time_step * 1e6, trace.carrier_freq, len(label))
    return head + label


def write_trace(trace: CirTrace, path, sidecar: bool = False, extra_meta: dict | None = None) -> None:
    """Write ``trace`` as CIRT. Optionally emit a ``<name>.meta.json`` sidecar."""
    taps = np.asarray(trace.taps)
    if not np.all(np.isfinite(taps.view(np.float32))):
        raise NonFiniteTap("refusing to write non-finite taps")
    payload = np.ascontiguousarray(taps, dtype="<c8").tobytes()
    data = _encode_header(trace) + payload
    path = Path(path)
    try:
        tmp = path.with_name(path.name + ".part")
        tmp.write_bytes(data)
        os.replace(tmp, path)
        if sidecar:
            meta = trace_header(trace)
            meta.update(extra_meta or {})
            sidecar_path(path).write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    except OSError as exc:
        raise IoFailure(f"cannot write trace {path}: {exc}") from exc


def sidecar_path(path) -> Path:
    path = Path(path)
    stem = path.name[:-5] if path.name.endswith(".cirt") else path.name
    return path.with_name(stem + ".meta.json")


def trace_header(trace: CirTrace) -> dict:
    return {
        "version": VERSION,
        "num_steps": trace.num_steps,
        "num_bins": trace.num_bins,
        "bin_spacing_ns": trace.grid.bin_spacing_ns,
        "sample_rate": trace.grid.sample_rate,
        "time_step_us": trace.time_step * 1e6,
        "carrier_freq_hz": trace.carrier_freq,
        "label": trace.label,
    }


def parse_trace(data: bytes) -> CirTrace:
    if len(data) < 4:
        raise Truncated("file shorter than magic", offset=len(data))
    if data[:4] != MAGIC:
        raise BadMagic(f"expected magic {MAGIC!r}, found {bytes(data[:4])!r}", offset=0)
    if len(data) < FIXED_HEADER_SIZE:
        raise Truncated("header truncated", offset=len(data))
    _, version, _flags, steps, bins, spacing_ns, step_us, carrier, label_len = \
        _FIXED_HEADER.unpack_from(data, 0)
    if version != VERSION:
        raise UnsupportedVersion(f"unsupported CIRT version {version}", offset=4)
    label_end = FIXED_HEADER_SIZE + label_len
    if len(data) < label_end:
        raise Truncated("label truncated", offset=len(data))
    try:
        label = bytes(data[FIXED_HEADER_SIZE:label_end]).decode("utf-8")
    except UnicodeDecodeError as exc:
        raise TraceFormatError(f"label is not valid UTF-8: {exc.reason}",
                                    offset=FIXED_HEADER_SIZE + exc.start) from None
    expected = label_end + steps * bins * TAP_BYTES
    if len(data) < expected:
        raise Truncated(f"payload truncated: need {expected} bytes, have {len(data)}",
                        offset=len(data))
    if len(data) > expected:
        raise Truncated(f"trailing bytes after payload ({len(data) - expected})", offset=expected)
    if steps < 1 or bins < 1:
        raise Truncated("empty tap grid", offset=12)
    raw = np.frombuffer(data, dtype="<f4", count=steps * bins * 2, offset=label_end)
    bad = ~np.isfinite(raw)
    if bad.any():
        first = int(np.flatnonzero(bad)[0])
        raise NonFiniteTap("non-finite tap value", offset=label_end + 4 * first)
    try:
        grid = DelayGrid.from_spacing_ns(bins, spacing_ns)
        taps = raw.view("<c8").astype(np.complex64).reshape(steps, bins)
        return CirTrace(grid, taps, time_step=step_us * 1e-6, carrier_freq=carrier, label=label)
    except ValidationError as exc:
        raise TraceFormatError(f"invalid header field: {exc}", offset=16) from None


def load_trace(path) -> CirTrace:
    try:
        data = Path(path).read_bytes()
    except OSError as exc:
        raise IoFailure(f"cannot read trace {path}: {exc}") from exc
    return parse_trace(data)


def file_size(num_steps: int, num_bins: int, label: str = "") -> int:
    return FIXED_HEADER_SIZE + len(label.encode("utf-8")) + num_steps * num_bins * TAP_BYTES


def tap_power_db(trace: CirTrace, step: int) -> float:
    """Total tap power of one step in dB (``-inf`` for an all-zero step)."""
    if not 0 <= step < trace.num_steps:
        raise StepOutOfRange(f"step {step} outside [0, {trace.num_steps})")
    h = trace.taps[step].astype(np.complex128)
    p = float(np.sum(h.real ** 2 + h.imag ** 2))
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(p))


def identity_trace(sample_rate: float = DEFAULT_SAMPLE_RATE, label: str = "identity") -> CirTrace:
    return CirTrace(DelayGrid(1, sample_rate), np.ones((1, 1), np.complex64), label=label)
