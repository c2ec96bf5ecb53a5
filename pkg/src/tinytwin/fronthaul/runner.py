"""In-process orchestration of one gNB and a set of UEs over loopback TCP."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

from ..chan_model import CirTrace
from ..errors import SessionFailure
from ..telemetry.link import LinkMonitor
from .gnb import GnbServer, SlotTimingRecord
from .session import SessionConfig, pinning_for
from .ue import UeClient

log = logging.getLogger(__name__)


@dataclass
class UeSpec:
    ue_id: int
    trace: CirTrace | None = None
    source: object = None
    sink: object = None
    cores: list | None = None


@dataclass
class SessionResult:
    records: list[SlotTimingRecord]
    ue_timeouts: list[tuple[int, int]]
    link_states: dict = field(default_factory=dict)
    echo_rtts: list[float] = field(default_factory=list)
    ue_slots: dict = field(default_factory=dict)

    @property
    def overrun_fraction(self) -> float:
        if not self.records:
            return 0.0
        return sum(r.overrun for r in self.records) / len(self.records)


def run_session(cfg: SessionConfig, ues: list[UeSpec], num_slots: int, *, registry=None,
                gnb_source=None, gnb_sink=None, link: bool | None = None,
                offered_bits_per_slot: int = 10_000, link_seed: int = 0,
                echo_probes: int = 0, echo_payload: bytes = b"",
                host: str = "127.0.0.1", port: int = 0) -> SessionResult:
    """Start a gNB, connect every UE, run ``num_slots`` slots and tear down.

    ``link`` attaches a :class:`LinkMonitor` to each UE (default: whenever the
    session has a noise power).  ``echo_probes`` echo probes are sent while the
    slot loop runs; their RTTs come back in the result.  If any UE fails to
    connect, everything started so far is closed and the error propagates.
    """
    ids = [u.ue_id for u in ues]
    if len(set(ids)) != len(ids):
        raise SessionFailure(f"duplicate UE ids in {ids}")
    if link is None:
        link = cfg.noise_power > 0
    gnb = GnbServer(cfg, host, port, source=gnb_source, sink=gnb_sink, registry=registry)
    clients: list[UeClient] = []
    monitors = {}
    try:
        for spec in ues:
            monitor = None
            if link:
                monitor = LinkMonitor(spec.ue_id, cfg.noise_power, offered_bits_per_slot=offered_bits_per_slot,
                                      seed=link_seed, registry=registry)
                monitors[spec.ue_id] = monitor
            trace = spec.trace if spec.trace is not None else cfg.trace_for(spec.ue_id)
            cores = spec.cores or pinning_for(cfg.pinning, f"ue{spec.ue_id}")
            clients.append(UeClient(*gnb.address, spec.ue_id, trace, source=spec.source, sink=spec.sink,
                                    link_monitor=monitor, cores=cores))
        gnb.wait_for_ues(len(clients))
        for c in clients:
            c.start()
        rtts: list[float] = []
        if echo_probes:
            gnb.start(num_slots)
            try:
                rtts = gnb.echo_rtt(echo_payload, echo_probes, timeout=max(10.0, num_slots * cfg.slot_duration * 2))
            finally:
                gnb.join()
        else:
            gnb.run(num_slots)
    except BaseException:
        # roll back everything started so far (BYE goes out on close)
        for c in clients:
            c.close()
        gnb.close()
        raise
    gnb.close()
    for c in clients:
        c.join(timeout=5)
    return SessionResult(
        records=list(gnb.records),
        ue_timeouts=list(gnb.ue_timeouts),
        link_states={u: m.state for u, m in monitors.items()},
        echo_rtts=rtts,
        ue_slots={c.ue_id: c.slots_processed for c in clients},
    )
