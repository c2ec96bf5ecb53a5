"""Synthesis and import of CIR traces.

Three sources feed the replay engine:

* statistical channels: a power delay profile whose paths fade as independent
  sum-of-sinusoids Rayleigh processes;
* a synthetic single-tap trace whose SNR ramps down linearly in dB and repeats;
* external continuous-delay path lists (CSV) gridded with two-bin linear splitting.
"""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from importlib import resources
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .chan_model import (
    DEFAULT_CARRIER,
    DEFAULT_SAMPLE_RATE,
    DEFAULT_TIME_STEP,
    CirTrace,
    DelayGrid,
    PdpProfile,
    load_trace,
)
from .errors import (
    GridTooShort,
    MalformedRow,
    NonMonotonicTime,
    NyquistViolation,
    ValidationError,
)

# the customary 3e8 m/s: 5 km/h at 3.5 GHz gives 16.2 Hz, 60 km/h gives 194.4 Hz
SPEED_OF_LIGHT = 3.0e8
_ON_GRID_TOL = 1e-9
_CHUNK = 1 << 15


def doppler_from_speed(speed_kmh: float, carrier_freq: float = DEFAULT_CARRIER) -> float:
    """Maximum Doppler shift ``v * f_c / c`` in Hz."""
    return speed_kmh / 3.6 * carrier_freq / SPEED_OF_LIGHT


def _num_steps(duration: float, time_step: float) -> int:
    n = duration / time_step
    steps = int(round(n))
    if abs(n - steps) > 1e-6 * max(1.0, n):
        steps = int(math.floor(n))
    return steps


@dataclass(frozen=True)
class JakesConfig:
    doppler_hz: float
    duration: float
    seed: int = 0
    num_sinusoids: int = 32
    time_step: float = DEFAULT_TIME_STEP

    def __post_init__(self):
        if self.doppler_hz < 0 or not math.isfinite(self.doppler_hz):
            raise ValidationError(f"doppler_hz must be finite and >= 0, got {self.doppler_hz}")
        if self.num_sinusoids < 8:
            raise ValidationError("num_sinusoids must be >= 8")
        if not self.time_step > 0:
            raise ValidationError("time_step must be positive")
        if self.doppler_hz * self.time_step >= 0.5:
            raise NyquistViolation(
                f"f_d * time_step = {self.doppler_hz * self.time_step:.3f} >= 0.5; "
                "fading process would alias")
        if self.num_steps < 1:
            raise ValidationError("duration must cover at least one time step")

    @property
    def num_steps(self) -> int:
        return _num_steps(self.duration, self.time_step)


def gen_jakes_gains(cfg: JakesConfig) -> np.ndarray:
    """Unit-mean-power Rayleigh fading sequence, one complex gain per step.

    Sum of ``M`` complex sinusoids with arrival angles spaced ``2*pi/M`` apart,
    a random common angle offset and independent random phases.  Autocorrelation
    approaches ``J0(2*pi*f_d*tau)``.
    """
    return gen_jakes_bank(cfg, 1)[0]


def _golden_stride(k: int) -> int:
    """Stride coprime to ``k`` near ``0.618 k``: consecutive paths land far apart."""
    stride = max(1, round(k * 0.6180339887))
    while math.gcd(stride, k) != 1:
        stride += 1
    return stride


def gen_jakes_bank(cfg: JakesConfig, num_paths: int) -> np.ndarray:
    """``num_paths`` independent fading sequences, shape ``(K, T)``.

    Every row is a sum of ``M`` sinusoids whose arrival angles are spaced
    ``2*pi/M`` apart, so each row alone has the Jakes spectrum.  Rows get
    distinct angle offsets, which gives every path its own set of Doppler
    frequencies.  A delay bin that sums several paths therefore keeps the
    Jakes spectrum too; with shared frequencies the path gains would beat
    against each other and reshape it.  Phases are drawn per path from
    ``path_seed(cfg.seed, k)``.
    """
    rng = np.random.default_rng(np.random.SeedSequence(_seed_words(cfg.seed)))
    n, m = cfg.num_steps, cfg.num_sinusoids
    u = rng.uniform(0.0, 1.0)
    sign = rng.choice((-1.0, 1.0))
    # offsets near 0 or pi mirror a row's angle set onto itself and pair up
    # its Doppler frequencies, so they stay inside (pi/16, 15pi/16)
    slot = (np.arange(num_paths) * _golden_stride(num_paths)) % num_paths
    theta = sign * (np.pi / 16 + (7 * np.pi / 8) * (slot + u) / num_paths)
    rot = np.empty(num_paths)
    phases = np.empty((num_paths, m))
    for k in range(num_paths):
        prng = np.random.default_rng(np.random.SeedSequence(_seed_words(path_seed(cfg.seed, k))))
        rot[k] = prng.uniform(-np.pi, np.pi)
        phases[k] = prng.uniform(-np.pi, np.pi, m)
    if cfg.doppler_hz == 0:
        # static channel: unit-magnitude gain per path
        return np.repeat(np.exp(1j * rot)[:, None], n, axis=1)

    idx = np.arange(m)
    alpha = (2 * np.pi * (idx[None, :] + 1) - np.pi + theta[:, None]) / m
    omega = 2 * np.pi * cfg.doppler_hz * np.cos(alpha)  # (K, M)
    coef = np.exp(1j * (phases + rot[:, None])) / math.sqrt(m)
    out = np.empty((num_paths, n), dtype=np.complex128)
    for start in range(0, n, _CHUNK):
        t = np.arange(start, min(n, start + _CHUNK)) * cfg.time_step
        for k in range(num_paths):
            out[k, start:start + t.size] = coef[k] @ np.exp(1j * np.outer(omega[k], t))
    return out


def _seed_words(seed) -> list[int]:
    if isinstance(seed, (list, tuple)):
        words = []
        for s in seed:
            words.extend(_seed_words(s))
        return words
    seed = int(seed)
    if seed < 0:
        seed &= (1 << 64) - 1
    return [seed & 0xFFFFFFFF, (seed >> 32) & 0xFFFFFFFF]


def path_seed(seed: int, path_index: int) -> tuple[int, int]:
    """Seed for the fading process of one path, derived from the trace seed."""
    return (int(seed), int(path_index) + 1)


# -- delay gridding ------------------------------------------------------------

def resample_weights(delays_ns: Sequence[float], grid: DelayGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Two-bin linear split of each delay: lower bins, upper bins, upper weights."""
    pos = np.asarray(delays_ns, dtype=float) / grid.bin_spacing_ns
    if np.any(pos < 0) or not np.all(np.isfinite(pos)):
        raise ValidationError("path delays must be finite and >= 0")
    lo = np.floor(pos)
    frac = pos - lo
    snap_up = frac > 1 - _ON_GRID_TOL
    lo[snap_up] += 1
    frac[snap_up] = 0.0
    frac[frac < _ON_GRID_TOL] = 0.0
    lo = lo.astype(np.int64)
    hi = lo + 1
    needs = np.where(frac > 0, hi, lo)
    if needs.size and needs.max() >= grid.num_bins:
        worst = float(np.max(delays_ns))
        raise GridTooShort(
            f"delay {worst:.3f} ns needs bin {int(needs.max())} but the grid has "
            f"{grid.num_bins} bins of {grid.bin_spacing_ns:.3f} ns")
    return lo, hi, frac


def resample_paths(paths: Iterable[tuple[float, complex]], grid: DelayGrid) -> np.ndarray:
    """Grid one step's continuous-delay paths onto ``grid``; returns ``L`` complex taps."""
    paths = list(paths)
    taps = np.zeros(grid.num_bins, dtype=np.complex128)
    if not paths:
        return taps
    delays = np.array([p[0] for p in paths], dtype=float)
    gains = np.array([p[1] for p in paths], dtype=np.complex128)
    if not np.all(np.isfinite(gains.view(float))):
        raise ValidationError("path gains must be finite")
    lo, hi, frac = resample_weights(delays, grid)
    np.add.at(taps, lo, gains * (1.0 - frac))
    upper = frac > 0
    np.add.at(taps, hi[upper], gains[upper] * frac[upper])
    return taps


def gridding_matrix(delays_ns: Sequence[float], grid: DelayGrid) -> np.ndarray:
    """``K x L`` real matrix mapping path gains to bin taps."""
    lo, hi, frac = resample_weights(delays_ns, grid)
    w = np.zeros((len(lo), grid.num_bins))
    k = np.arange(len(lo))
    np.add.at(w, (k, lo), 1.0 - frac)
    upper = frac > 0
    np.add.at(w, (k[upper], hi[upper]), frac[upper])
    return w


def min_bins_for(delays_ns: Sequence[float], sample_rate: float) -> int:
    pos = np.asarray(delays_ns, dtype=float) * sample_rate / 1e9
    pos = np.where(np.abs(pos - np.round(pos)) < _ON_GRID_TOL, np.round(pos), pos)
    return int(np.max(np.ceil(pos))) + 1 if len(pos) else 1


# -- statistical profiles ----------------------------------------------------

def profile_names() -> list[str]:
    root = resources.files("tinytwin") / "profiles"
    return sorted(p.name[:-5] for p in root.iterdir() if p.name.endswith(".json"))


def load_profile(name_or_path, doppler_hz: float = 0.0) -> PdpProfile:
    """Load a PDP either from a JSON path or a shipped profile name (``uma``, ``umi``, ``rma``)."""
    path = Path(str(name_or_path))
    if path.suffix == ".json" and path.exists():
        return PdpProfile.from_json(path, doppler_hz=doppler_hz)
    res = resources.files("tinytwin") / "profiles" / f"{str(name_or_path).lower()}.json"
    if not res.is_file():
        raise ValidationError(f"unknown profile {name_or_path!r}; shipped: {', '.join(profile_names())}")
    with resources.as_file(res) as p:
        return PdpProfile.from_json(p, doppler_hz=doppler_hz)


def build_3gpp_trace(pdp: PdpProfile, grid: DelayGrid, duration: float, seed: int,
                     time_step: float = DEFAULT_TIME_STEP, num_sinusoids: int = 32,
                     carrier_freq: float = DEFAULT_CARRIER, label: str | None = None) -> CirTrace:
    """Animate ``pdp`` with uncorrelated fading per path and grid it onto ``grid``."""
    if duration < time_step:
        raise ValidationError("duration must be at least one time step")
    weights = gridding_matrix(pdp.path_delays, grid)
    # linear splitting conserves complex gain, not power; rescale so the
    # expected per-step power of the gridded trace is exactly 1
    scale = 1.0 / math.sqrt(float((weights ** 2 * pdp.path_powers[:, None]).sum()))
    cfg = JakesConfig(pdp.doppler_hz, duration, seed=seed,
                      num_sinusoids=num_sinusoids, time_step=time_step)
    bank = gen_jakes_bank(cfg, len(pdp.path_powers))
    bank *= (np.sqrt(pdp.path_powers) * scale)[:, None]
    taps = bank.T @ weights
    if label is None:
        label = f"{pdp.name}-fd{pdp.doppler_hz:.1f}Hz"
    return CirTrace(grid, taps, time_step=time_step, carrier_freq=carrier_freq, label=label)


def gridded_pdp(pdp: PdpProfile, grid: DelayGrid) -> np.ndarray:
    """Expected per-bin power of a trace built from ``pdp``, normalized to unit total."""
    w = gridding_matrix(pdp.path_delays, grid)
    per_bin = (w ** 2 * pdp.path_powers[:, None]).sum(axis=0)
    return per_bin / per_bin.sum()


# -- synthetic periodic SNR --------------------------------------------------

def periodic_snr_offset_db(t, period: float, snr_high_db: float, snr_low_db: float):
    """Tap power relative to the high point: 0 dB at each period start, ramping to low-high."""
    phase = np.mod(np.asarray(t, dtype=float), period) / period
    return -(snr_high_db - snr_low_db) * phase


def gen_periodic_snr_trace(period: float, snr_high_db: float, snr_low_db: float,
                           duration: float, grid: DelayGrid | None = None,
                           time_step: float = DEFAULT_TIME_STEP,
                           carrier_freq: float = DEFAULT_CARRIER) -> CirTrace:
    """Single-tap trace whose power sweeps linearly in dB from high to low, then repeats.

    The tap sits in bin 0 with zero phase.  Its power is expressed relative to
    the high point, so pairing the trace with ``signal/noise = snr_high_db``
    yields an SNR sweep from ``snr_high_db`` down to ``snr_low_db``.
    """
    if not period > 0:
        raise ValidationError("period must be positive")
    if duration < period:
        raise ValidationError("duration must be at least one period")
    if snr_low_db > snr_high_db:
        raise ValidationError("snr_low_db must not exceed snr_high_db")
    grid = grid or DelayGrid(1, DEFAULT_SAMPLE_RATE)
    steps = _num_steps(duration, time_step)
    rel_db = periodic_snr_offset_db(np.arange(steps) * time_step, period, snr_high_db, snr_low_db)
    taps = np.zeros((steps, grid.num_bins), dtype=np.complex128)
    taps[:, 0] = 10.0 ** (rel_db / 20.0)
    label = f"periodic-snr-{snr_high_db:g}to{snr_low_db:g}dB-{period:g}s"
    return CirTrace(grid, taps, time_step=time_step, carrier_freq=carrier_freq, label=label)


# -- external import ---------------------------------------------------------

def _read_path_rows(path):
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        for lineno, row in enumerate(csv.reader(fh), start=1):
            if not row or not "".join(row).strip() or row[0].lstrip().startswith("#"):
                continue
            if len(row) != 4:
                raise MalformedRow(lineno, f"expected 4 fields, got {len(row)}")
            try:
                t, d, re, im = (float(x) for x in row)
            except ValueError:
                if not rows and lineno == 1:
                    continue  # header line
                raise MalformedRow(lineno, "non-numeric field") from None
            if not all(math.isfinite(v) for v in (t, d, re, im)) or d < 0:
                raise MalformedRow(lineno, "fields must be finite and delay >= 0")
            if rows and t < rows[-1][1]:
                raise NonMonotonicTime(lineno)
            rows.append((lineno, t, d, complex(re, im)))
    return rows


def import_external_cir(path, format: str = "csv-paths", grid: DelayGrid | None = None,
                        time_step: float = DEFAULT_TIME_STEP,
                        carrier_freq: float = DEFAULT_CARRIER, label: str | None = None) -> CirTrace:
    """Import a CIR trace from an external file.

    ``csv-paths`` rows are ``time_s, delay_ns, re, im``.  Rows are bucketed to
    the nearest time step, each bucket is gridded with :func:`resample_paths`,
    and steps without rows repeat the previous step.  ``cirt`` delegates to
    :func:`~tinytwin.chan_model.load_trace`.
    """
    if format == "cirt":
        return load_trace(path)
    if format != "csv-paths":
        raise ValidationError(f"unknown import format {format!r}")
    rows = _read_path_rows(path)
    if not rows:
        raise MalformedRow(1, "no data rows")
    if grid is None:
        grid = DelayGrid(min_bins_for([r[2] for r in rows], DEFAULT_SAMPLE_RATE), DEFAULT_SAMPLE_RATE)
    steps_idx = [int(round(r[1] / time_step)) for r in rows]
    first = steps_idx[0]
    num_steps = steps_idx[-1] - first + 1
    taps = np.zeros((num_steps, grid.num_bins), dtype=np.complex128)
    filled = np.zeros(num_steps, dtype=bool)
    i = 0
    while i < len(rows):
        j = i
        while j < len(rows) and steps_idx[j] == steps_idx[i]:
            j += 1
        s = steps_idx[i] - first
        taps[s] = resample_paths([(r[2], r[3]) for r in rows[i:j]], grid)
        filled[s] = True
        i = j
    for s in range(1, num_steps):
        if not filled[s]:
            taps[s] = taps[s - 1]
    return CirTrace(grid, taps, time_step=time_step, carrier_freq=carrier_freq,
                    label=label if label is not None else Path(path).stem)
