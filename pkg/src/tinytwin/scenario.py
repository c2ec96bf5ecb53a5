"""Scenario documents (TOML or JSON) and trace generator specs shared by the CLI."""
from __future__ import annotations

import json
import re
import sys
from dataclasses import dataclass
from pathlib import Path

from .chan_model import DEFAULT_CARRIER, DEFAULT_SAMPLE_RATE, CirTrace, DelayGrid, identity_trace, load_trace
from .errors import ValidationError
from .fronthaul.session import MODES, SessionConfig
from .trace_gen import (
    build_3gpp_trace,
    doppler_from_speed,
    gen_periodic_snr_trace,
    load_profile,
    min_bins_for,
)

if sys.version_info >= (3, 11):
    import tomllib
else:  # pragma: no cover
    import tomli as tomllib

_UNITS = {"us": 1e-6, "ms": 1e-3, "s": 1.0, "m": 60.0, "min": 60.0, "h": 3600.0}
_DURATION = re.compile(r"^\s*([0-9]*\.?[0-9]+(?:[eE][-+]?[0-9]+)?)\s*(us|ms|s|min|m|h)?\s*$")


def parse_duration(value) -> float:
    """Seconds from ``60``, ``"60s"``, ``"500ms"``, ``"2m"``; bare numbers are seconds."""
    if isinstance(value, (int, float)) and not isinstance(value, bool):
        seconds = float(value)
    else:
        m = _DURATION.match(str(value))
        if not m:
            raise ValidationError(f"cannot parse duration {value!r}")
        seconds = float(m.group(1)) * _UNITS[m.group(2) or "s"]
    if not seconds > 0:
        raise ValidationError(f"duration must be positive, got {value!r}")
    return seconds


def parse_snr_range(text: str) -> tuple[float, float]:
    """``"20:0"`` -> ``(20.0, 0.0)``."""
    try:
        hi, lo = (float(x) for x in str(text).split(":"))
    except ValueError:
        raise ValidationError(f"SNR range must look like HIGH:LOW, got {text!r}") from None
    return hi, lo


# -- trace generator specs ---------------------------------------------------

@dataclass
class TraceSpec:
    """How to synthesize a trace.

    ``profile`` is ``uma``/``umi``/``rma`` (or a profile JSON path),
    ``synthetic-periodic`` or ``identity``.
    """

    profile: str
    speed_kmh: float | None = None
    doppler_hz: float | None = None
    duration: float = 10.0
    seed: int = 0
    carrier_freq: float = DEFAULT_CARRIER
    sample_rate: float = DEFAULT_SAMPLE_RATE
    num_bins: int | None = None
    period: float = 10.0
    snr_high_db: float = 20.0
    snr_low_db: float = 0.0
    label: str | None = None

    @classmethod
    def from_dict(cls, doc: dict, sample_rate: float | None = None) -> "TraceSpec":
        doc = dict(doc)
        if "profile" not in doc:
            raise ValidationError("generator spec needs a 'profile'")
        unknown = set(doc) - {"profile", "speed_kmh", "doppler_hz", "duration", "seed", "carrier_freq",
                              "sample_rate", "num_bins", "period", "snr", "label"}
        if unknown:
            raise ValidationError(f"unknown generator keys {sorted(unknown)}")
        if "duration" in doc:
            doc["duration"] = parse_duration(doc["duration"])
        if "period" in doc:
            doc["period"] = parse_duration(doc["period"])
        if "snr" in doc:
            doc["snr_high_db"], doc["snr_low_db"] = parse_snr_range(doc.pop("snr"))
        if sample_rate is not None:
            doc.setdefault("sample_rate", sample_rate)
        spec = cls(**doc)
        spec.validate()
        return spec

    @property
    def resolved_doppler(self) -> float:
        if self.doppler_hz is not None:
            return float(self.doppler_hz)
        if self.speed_kmh is not None:
            return doppler_from_speed(self.speed_kmh, self.carrier_freq)
        return 0.0

    def validate(self) -> None:
        if self.speed_kmh is not None and self.doppler_hz is not None:
            raise ValidationError("give either speed_kmh or doppler_hz, not both")
        if self.speed_kmh is not None and self.speed_kmh < 0:
            raise ValidationError("speed must be >= 0")
        if not self.duration > 0:
            raise ValidationError("duration must be positive")
        if self.num_bins is not None and self.num_bins < 1:
            raise ValidationError("num_bins must be >= 1")
        if self.profile not in ("identity", "synthetic-periodic"):
            load_profile(self.profile)  # raises for unknown names

    def build(self) -> CirTrace:
        if self.profile == "identity":
            return identity_trace(self.sample_rate)
        if self.profile == "synthetic-periodic":
            grid = DelayGrid(self.num_bins or 1, self.sample_rate)
            return gen_periodic_snr_trace(self.period, self.snr_high_db, self.snr_low_db, self.duration,
                                          grid=grid, carrier_freq=self.carrier_freq)
        pdp = load_profile(self.profile, self.resolved_doppler)
        bins = self.num_bins or min_bins_for(pdp.path_delays, self.sample_rate)
        grid = DelayGrid(bins, self.sample_rate)
        label = self.label
        if label is None:
            speed = f"{self.speed_kmh:g}kmh" if self.speed_kmh is not None else f"fd{self.resolved_doppler:g}Hz"
            label = f"{pdp.name}-{speed}-s{self.seed}"
        return build_3gpp_trace(pdp, grid, self.duration, self.seed, carrier_freq=self.carrier_freq, label=label)

    def meta(self) -> dict:
        return {"generator": self.profile, "doppler_hz": self.resolved_doppler, "speed_kmh": self.speed_kmh,
                "seed": self.seed, "duration_s": self.duration}


# -- scenarios ---------------------------------------------------------------

@dataclass
class UeEntry:
    ue_id: int
    trace_path: Path | None = None
    generator: TraceSpec | None = None
    pinning: list[int] | None = None

    def load(self, sample_rate: float) -> CirTrace:
        if self.trace_path is not None:
            return load_trace(self.trace_path)
        if self.generator is not None:
            return self.generator.build()
        return identity_trace(sample_rate)


@dataclass
class ScenarioConfig:
    ues: list[UeEntry]
    mode: str = "optimized"
    samples_per_slot: int = 1920
    slot_duration: float = 1e-3
    noise_power: float = 0.0
    noise_seed: int = 0
    num_taps_n: int = 0
    duration: float = 1.0
    gnb_host: str = "127.0.0.1"
    gnb_port: int = 0
    metrics_addr: str | None = None
    summary: Path | None = None
    offered_bits_per_slot: int = 10_000
    uplink_deadline: float = 0.02
    gnb_pinning: list[int] | None = None
    source: Path | None = None

    @property
    def num_slots(self) -> int:
        return max(1, int(round(self.duration / self.slot_duration)))

    @property
    def sample_rate(self) -> float:
        return self.samples_per_slot / self.slot_duration

    def pinning_map(self) -> dict | None:
        pins = {f"ue{u.ue_id}": u.pinning for u in self.ues if u.pinning}
        if self.gnb_pinning:
            pins["gnb"] = self.gnb_pinning
        return pins or None

    def session_config(self, traces: dict | None = None) -> SessionConfig:
        return SessionConfig(mode=self.mode, samples_per_slot=self.samples_per_slot,
                             slot_duration=self.slot_duration, num_taps_n=self.num_taps_n,
                             traces=traces or {}, noise_power=self.noise_power, noise_seed=self.noise_seed,
                             pinning=self.pinning_map(), uplink_deadline=self.uplink_deadline)


_TOP_KEYS = {"mode", "samples_per_slot", "slot_duration", "noise_power", "noise_seed", "num_taps_n", "duration",
             "metrics_addr", "summary", "offered_bits_per_slot", "uplink_deadline", "gnb", "ue"}


def parse_scenario(doc: dict, base_dir: Path | str = ".") -> ScenarioConfig:
    """Validate a scenario document; relative trace paths resolve against ``base_dir``."""
    base_dir = Path(base_dir)
    unknown = set(doc) - _TOP_KEYS
    if unknown:
        raise ValidationError(f"unknown scenario keys {sorted(unknown)}")
    mode = doc.get("mode", "optimized")
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}, got {mode!r}")
    sps = int(doc.get("samples_per_slot", 1920))
    slot = parse_duration(doc.get("slot_duration", 1e-3))
    ue_docs = doc.get("ue", [])
    if not isinstance(ue_docs, list) or not ue_docs:
        raise ValidationError("scenario needs at least one [[ue]] entry")
    ues, seen = [], set()
    for i, u in enumerate(ue_docs):
        if "id" not in u:
            raise ValidationError(f"UE entry {i} has no id")
        ue_id = int(u["id"])
        if ue_id in seen:
            raise ValidationError(f"duplicate UE id {ue_id}")
        seen.add(ue_id)
        extra = set(u) - {"id", "trace", "generator", "pinning"}
        if extra:
            raise ValidationError(f"UE {ue_id}: unknown keys {sorted(extra)}")
        if "trace" in u and "generator" in u:
            raise ValidationError(f"UE {ue_id}: give either trace or generator, not both")
        path = gen = None
        if "trace" in u:
            path = Path(u["trace"])
            if not path.is_absolute():
                path = base_dir / path
            if not path.is_file():
                raise ValidationError(f"UE {ue_id}: trace file {path} does not exist")
        elif "generator" in u:
            gen = TraceSpec.from_dict(u["generator"], sample_rate=sps / slot)
        pins = u.get("pinning")
        ues.append(UeEntry(ue_id, path, gen, [int(c) for c in pins] if pins else None))
    gnb = doc.get("gnb", {})
    summary = doc.get("summary")
    cfg = ScenarioConfig(
        ues=ues, mode=mode, samples_per_slot=sps, slot_duration=slot,
        noise_power=float(doc.get("noise_power", 0.0)), noise_seed=int(doc.get("noise_seed", 0)),
        num_taps_n=int(doc.get("num_taps_n", 0)), duration=parse_duration(doc.get("duration", 1.0)),
        gnb_host=gnb.get("host", "127.0.0.1"), gnb_port=int(gnb.get("port", 0)),
        metrics_addr=doc.get("metrics_addr"),
        summary=(base_dir / summary) if summary else None,
        offered_bits_per_slot=int(doc.get("offered_bits_per_slot", 10_000)),
        uplink_deadline=parse_duration(doc.get("uplink_deadline", 0.02)),
        gnb_pinning=[int(c) for c in gnb["pinning"]] if gnb.get("pinning") else None,
    )
    cfg.session_config()  # runs the remaining field checks
    return cfg


def load_scenario(path) -> ScenarioConfig:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise ValidationError(f"cannot read scenario {path}: {exc}") from exc
    try:
        if path.suffix.lower() == ".json":
            doc = json.loads(raw)
        else:
            doc = tomllib.loads(raw.decode("utf-8"))
    except (ValueError, tomllib.TOMLDecodeError) as exc:
        raise ValidationError(f"scenario {path} is not valid {path.suffix or 'TOML'}: {exc}") from exc
    cfg = parse_scenario(doc, path.parent)
    cfg.source = path
    return cfg
