"""Link abstraction: SNR -> MCS -> transport-block outcome -> buffer and counters."""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, replace
from importlib import resources

import numpy as np

from ..conv import IqFrame, noise_rng, slot_snr_db
from ..errors import ValidationError


@dataclass(frozen=True)
class McsRow:
    snr_threshold_db: float
    mcs: int
    bits_per_slot: int


class McsTable:
    """Ordered SNR thresholds; ``select`` picks the highest row whose threshold is <= SNR."""

    def __init__(self, rows):
        rows = [r if isinstance(r, McsRow) else McsRow(float(r[0]), int(r[1]), int(r[2])) for r in rows]
        if not rows:
            raise ValidationError("MCS table is empty")
        thr = np.array([r.snr_threshold_db for r in rows])
        bits = np.array([r.bits_per_slot for r in rows])
        mcs = [r.mcs for r in rows]
        if np.any(np.diff(thr) <= 0):
            raise ValidationError("MCS thresholds must be strictly increasing")
        if np.any(np.diff(bits) <= 0) or np.any(bits <= 0):
            raise ValidationError("bits_per_slot must be positive and strictly increasing")
        if mcs != sorted(set(mcs)):
            raise ValidationError("MCS indices must be unique and increasing")
        self.rows = rows
        self._thr = thr
        self._by_mcs = {r.mcs: r for r in rows}

    @classmethod
    def from_json(cls, path=None) -> "McsTable":
        if path is None:
            text = (resources.files("tinytwin") / "telemetry" / "mcs_table.json").read_text(encoding="utf-8")
        else:
            with open(path, encoding="utf-8") as fh:
                text = fh.read()
        doc = json.loads(text)
        return cls([(r["snr_threshold_db"], r["mcs"], r["bits_per_slot"]) for r in doc["rows"]])

    @property
    def max_mcs(self) -> int:
        return self.rows[-1].mcs

    def row(self, mcs: int) -> McsRow:
        try:
            return self._by_mcs[int(mcs)]
        except KeyError:
            raise ValidationError(f"MCS {mcs} not in table") from None

    def threshold(self, mcs: int) -> float:
        return self.row(mcs).snr_threshold_db

    def bits_per_slot(self, mcs: int) -> int:
        return self.row(mcs).bits_per_slot


_DEFAULT_TABLE = None


def default_mcs_table() -> McsTable:
    global _DEFAULT_TABLE
    if _DEFAULT_TABLE is None:
        _DEFAULT_TABLE = McsTable.from_json()
    return _DEFAULT_TABLE


def select_mcs(snr_db: float, table: McsTable | None = None) -> int:
    table = table or default_mcs_table()
    i = int(np.searchsorted(table._thr, snr_db, side="right")) - 1
    return table.rows[max(i, 0)].mcs


def tb_outcome(snr_db: float, mcs: int, table: McsTable | None = None, seed: int = 0,
               slot: int = 0, ue: int = 0, margin_db: float = 0.0, stochastic: bool = False) -> bool:
    """Whether a transport block at ``mcs`` decodes at ``snr_db``.

    Default is a hard cliff at ``threshold(mcs) - margin_db``.  The stochastic
    variant fails with probability ``sigmoid((threshold - snr) / 0.5 dB)``,
    drawn deterministically from ``(seed, slot, ue)``.
    """
    table = table or default_mcs_table()
    thr = table.threshold(mcs) - margin_db
    if not stochastic:
        return bool(snr_db >= thr)
    z = (thr - snr_db) / 0.5
    p_fail = 1.0 / (1.0 + math.exp(-z)) if z > -700 else 0.0
    u = noise_rng(seed ^ 0x5EED_7B, slot, ue).random()
    return bool(u >= p_fail)


@dataclass(frozen=True)
class LinkState:
    ue_id: int
    slot_index: int = -1
    snr_db: float = float("nan")
    mcs: int = 0
    tb_success: bool = True
    bits_delivered: int = 0
    drops: int = 0
    buffer_bits: int = 0
    offered_bits: int = 0
    bits_lost: int = 0


@dataclass(frozen=True)
class SlotOutcome:
    slot_index: int
    snr_db: float
    mcs: int
    tb_success: bool


def update_link(state: LinkState, outcome: SlotOutcome, offered_bits: int,
                table: McsTable | None = None) -> LinkState:
    """Queue ``offered_bits``, then serve one grant at the outcome's MCS.

    A failed block forfeits its grant and counts one drop; an empty queue
    schedules nothing.  ``offered == delivered + buffer + lost`` always holds.
    """
    table = table or default_mcs_table()
    if offered_bits < 0:
        raise ValidationError("offered_bits must be >= 0")
    buffer = state.buffer_bits + int(offered_bits)
    grant = min(buffer, table.bits_per_slot(outcome.mcs))
    buffer -= grant
    delivered, drops, lost = state.bits_delivered, state.drops, state.bits_lost
    success = outcome.tb_success
    if grant:
        if success:
            delivered += grant
        else:
            drops += 1
            lost += grant
    else:
        success = True
    return replace(state, slot_index=outcome.slot_index, snr_db=outcome.snr_db, mcs=outcome.mcs,
                   tb_success=success, bits_delivered=delivered, drops=drops, buffer_bits=buffer,
                   offered_bits=state.offered_bits + int(offered_bits), bits_lost=lost)


def realized_snr_db(rx: np.ndarray, noise_power: float) -> float:
    """SNR a receiver sees in one slot, estimated from received power: ``(P_rx - N0) / N0``."""
    y = np.asarray(rx)
    p = float(np.mean(y.real.astype(np.float64) ** 2 + y.imag.astype(np.float64) ** 2))
    return 10.0 * math.log10(max(p - noise_power, 1e-12 * noise_power) / noise_power)


class LinkMonitor:
    """Per-UE link adaptation driven by the replayed channel.

    MCS follows the channel-defined SNR of the slot's taps.  Decoding is judged
    on the SNR realized in the noisy received frame, so transport blocks fail
    when the noise realization dips below the selected MCS threshold.
    """

    def __init__(self, ue_id: int, noise_power: float, signal_power: float = 1.0,
                 offered_bits_per_slot: int = 10_000, table: McsTable | None = None,
                 seed: int = 0, margin_db: float = 0.0, stochastic: bool = False, registry=None,
                 keep_history: bool = False):
        if not noise_power > 0:
            raise ValidationError("link monitoring needs noise_power > 0")
        self.table = table or default_mcs_table()
        self.noise_power = noise_power
        self.signal_power = signal_power
        self.offered = int(offered_bits_per_slot)
        self.seed = seed
        self.margin_db = margin_db
        self.stochastic = stochastic
        self.state = LinkState(ue_id)
        # one LinkState per slot when requested, for time-series analysis
        self.history: list[LinkState] | None = [] if keep_history else None
        self.registry = registry
        if registry is not None:
            registry.register_ue(ue_id)

    def on_slot(self, slot_index: int, taps, rx: IqFrame | np.ndarray) -> LinkState:
        samples = rx.samples if isinstance(rx, IqFrame) else rx
        snr = slot_snr_db(None, taps, self.signal_power, self.noise_power)
        mcs = select_mcs(snr, self.table)
        realized = realized_snr_db(samples, self.noise_power)
        ok = tb_outcome(realized, mcs, self.table, self.seed, slot_index, self.state.ue_id,
                        self.margin_db, self.stochastic)
        self.state = update_link(self.state, SlotOutcome(slot_index, snr, mcs, ok), self.offered, self.table)
        if self.history is not None:
            self.history.append(self.state)
        if self.registry is not None:
            self.registry.set_link(self.state)
        return self.state
