"""Streaming time-varying FIR convolution of IQ slots.

Each slot is convolved with the taps of its trace step.  A :class:`ConvState`
carries the last ``L - 1`` input samples across slot boundaries so that the
concatenated slot outputs equal one linear convolution of the whole stream
with a piecewise-constant channel.

Full and sparse paths share one direct-form kernel that accumulates taps in
ascending bin order; with every tap selected the sparse path is bit-identical
to the full one.
"""
from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .chan_model import SparseTaps
from .errors import NonPositiveNoise, TapLengthMismatch, ValidationError


class Direction(enum.IntEnum):
    DOWNLINK = 0
    UPLINK = 1


@dataclass
class IqFrame:
    slot_index: int
    ue_id: int
    samples: np.ndarray
    direction: Direction = Direction.DOWNLINK

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.complex64)
        if self.samples.ndim != 1:
            raise ValidationError("IQ frame samples must be one-dimensional")

    def __len__(self):
        return self.samples.size


@dataclass
class ConvState:
    """Last ``L - 1`` input samples of the previous slot (zeros at stream start)."""

    num_taps: int
    tail: np.ndarray = field(default=None)

    def __post_init__(self):
        if self.num_taps < 1:
            raise ValidationError("num_taps must be >= 1")
        if self.tail is None:
            self.tail = np.zeros(self.num_taps - 1, dtype=np.complex64)
        else:
            self.tail = np.ascontiguousarray(self.tail, dtype=np.complex64)
            if self.tail.size != self.num_taps - 1:
                raise TapLengthMismatch(
                    f"tail holds {self.tail.size} samples, expected {self.num_taps - 1}")


@numba.njit(cache=True, nogil=True)
def _fir(ext, offset, idx, gains, out):
    # out[k] = sum_j gains[j] * ext[offset + k - idx[j]], j ascending.  Taps are
    # the outer loop so the sample loop is contiguous and vectorizes; each
    # out[k] still sees the same float64 operations in the same order.
    n = out.size
    acc_re = np.zeros(n)
    acc_im = np.zeros(n)
    m = ext.size
    xr = np.empty(m)
    xi = np.empty(m)
    for i in range(m):
        xr[i] = ext[i].real
        xi[i] = ext[i].imag
    for j in range(idx.size):
        gr = gains[j].real
        gi = gains[j].imag
        start = offset - idx[j]
        for k in range(n):
            a = xr[start + k]
            b = xi[start + k]
            acc_re[k] += gr * a - gi * b
            acc_im[k] += gr * b + gi * a
    for k in range(n):
        out[k] = complex(acc_re[k], acc_im[k])


def _extend(samples: np.ndarray, state: ConvState) -> np.ndarray:
    if state.num_taps == 1:
        return samples
    return np.concatenate((state.tail, samples))


def _next_state(ext: np.ndarray, state: ConvState) -> ConvState:
    keep = state.num_taps - 1
    if keep == 0:
        return ConvState(1)
    return ConvState(state.num_taps, ext[ext.size - keep:].copy())


def _run(frame: IqFrame, idx: np.ndarray, gains: np.ndarray, state: ConvState):
    ext = _extend(frame.samples, state)
    out = np.empty(frame.samples.size, dtype=np.complex64)
    if idx.size:
        _fir(ext, state.num_taps - 1, idx, gains, out)
    else:
        out[:] = 0
    result = IqFrame(frame.slot_index, frame.ue_id, out, frame.direction)
    return result, _next_state(ext, state)


def convolve_full(frame: IqFrame, taps, state: ConvState):
    """Convolve one slot with all ``L`` taps; returns ``(output_frame, new_state)``."""
    taps = np.asarray(taps, dtype=np.complex128).ravel()
    if taps.size != state.num_taps:
        raise TapLengthMismatch(f"state sized for {state.num_taps} taps, got {taps.size}")
    return _run(frame, np.arange(taps.size, dtype=np.int64), taps, state)


def convolve_sparse(frame: IqFrame, sparse: SparseTaps, state: ConvState):
    """Convolve with the selected taps only; the state still tracks all ``L`` bins."""
    if sparse.num_bins != state.num_taps:
        raise TapLengthMismatch(f"state sized for {state.num_taps} taps, sparse set for {sparse.num_bins}")
    return _run(frame, sparse.indices, sparse.gains, state)


def select_top_n(taps, n: int) -> SparseTaps:
    """The ``min(n, L)`` largest-magnitude taps, ties to the smaller bin, sorted by bin."""
    if n < 1:
        raise ValidationError("n must be >= 1")
    taps = np.asarray(taps, dtype=np.complex128).ravel()
    L = taps.size
    if n >= L:
        idx = np.arange(L, dtype=np.int64)
    else:
        mag = taps.real ** 2 + taps.imag ** 2
        # stable sort on -|h|^2 keeps the lower bin first among equal magnitudes
        idx = np.sort(np.argsort(-mag, kind="stable")[:n]).astype(np.int64)
    return SparseTaps(idx, taps[idx].copy(), L)


def convolve(frame: IqFrame, taps, state: ConvState, top_n: int = 0):
    """Full convolution when ``top_n`` is 0 or covers every bin, sparse otherwise."""
    taps = np.asarray(taps)
    if top_n and top_n < taps.size:
        return convolve_sparse(frame, select_top_n(taps, top_n), state)
    return convolve_full(frame, taps, state)


def slot_snr_db(frame_out: IqFrame | None, taps, signal_power: float, noise_power: float) -> float:
    """Channel-defined SNR ``sum|h|^2 * P_sig / P_noise`` in dB; frame contents are ignored."""
    if not noise_power > 0:
        raise NonPositiveNoise(f"noise_power must be > 0, got {noise_power}")
    h = np.asarray(taps, dtype=np.complex128)
    gain = float(np.sum(h.real ** 2 + h.imag ** 2))
    with np.errstate(divide="ignore"):
        return float(10.0 * np.log10(gain * signal_power / noise_power))


def noise_rng(seed: int, slot_index: int, ue_id: int) -> np.random.Generator:
    words = [int(seed) & 0xFFFFFFFF, (int(seed) >> 32) & 0xFFFFFFFF,
             int(slot_index) & 0xFFFFFFFF, (int(slot_index) >> 32) & 0xFFFFFFFF, int(ue_id) & 0xFFFFFFFF]
    return np.random.default_rng(np.random.SeedSequence(words))


def add_awgn(frame: IqFrame, noise_power: float, seed: int) -> IqFrame:
    """Add circular complex Gaussian noise of variance ``noise_power`` per sample."""
    if noise_power < 0:
        raise ValidationError("noise_power must be >= 0")
    if noise_power == 0:
        return IqFrame(frame.slot_index, frame.ue_id, frame.samples.copy(), frame.direction)
    rng = noise_rng(seed, frame.slot_index, frame.ue_id)
    sigma = math.sqrt(noise_power / 2.0)
    noise = rng.standard_normal((frame.samples.size, 2), dtype=np.float32) * np.float32(sigma)
    out = frame.samples + noise.view(np.complex64).ravel()
    return IqFrame(frame.slot_index, frame.ue_id, out, frame.direction)


def warmup() -> None:
    """Trigger JIT compilation so the first real slot is not charged for it."""
    f = IqFrame(0, 0, np.zeros(4, np.complex64))
    convolve_full(f, np.ones(2), ConvState(2))
