"""UE side of the virtual RF plane: per-UE channel replay and uplink generation."""
from __future__ import annotations

import logging
import socket
import threading
import time

import numpy as np

from ..chan_model import CirTrace, identity_trace
from ..conv import ConvState, Direction, IqFrame, add_awgn, convolve, warmup
from ..errors import ConnectionLost, HandshakeRejected, ProtocolError, ValidationError
from .protocol import (
    HelloAck,
    MsgType,
    WireMessage,
    pack_echo,
    read_message,
    send_iq,
    send_message,
    unpack_echo,
    unpack_iq,
    unpack_time_sync,
)
from .session import check_trace_fits, pin_worker

log = logging.getLogger(__name__)


def relay_source(slot: int, dl: np.ndarray) -> np.ndarray:
    """Default uplink: send back what was received on the downlink."""
    return dl


def constant_source(value: complex = 1.0):
    def source(slot: int, dl: np.ndarray) -> np.ndarray:
        return np.full(dl.size, value, dtype=np.complex64)
    return source


class UeClient:
    """One UE connection.

    Every downlink slot is convolved with this UE's trace step ``slot mod T``
    (plus AWGN when the session sets a noise power) and handed to ``sink``.
    The uplink frame from ``source(slot, received)`` is convolved here in
    optimized mode and sent raw in vanilla mode, where the gNB applies the
    channel.  Downlink and uplink keep separate convolution state.
    """

    def __init__(self, host: str, port: int, ue_id: int, trace: CirTrace | None = None,
                 source=None, sink=None, link_monitor=None, cores=None, connect_timeout: float = 5.0):
        warmup()
        self.ue_id = int(ue_id)
        self.trace = trace if trace is not None else identity_trace()
        self.source = source or relay_source
        self.sink = sink
        self.link_monitor = link_monitor
        self.cores = list(cores) if cores else None
        self.last_slot = -1
        self.slots_processed = 0
        self.compute_durations: list[float] = []
        self.error: BaseException | None = None
        self._pending_echo: list[tuple[int, bytes]] = []
        self._thread: threading.Thread | None = None
        try:
            self.sock = socket.create_connection((host, port), timeout=connect_timeout)
        except OSError as exc:
            raise ConnectionLost(f"cannot reach gNB at {host}:{port}: {exc}") from exc
        self.sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        try:
            self._handshake()
        except BaseException:
            self.sock.close()
            raise
        self.sock.settimeout(None)

    def _handshake(self):
        send_message(self.sock, WireMessage(MsgType.HELLO, self.ue_id, 0))
        msg = read_message(self.sock)
        if msg.msg_type != MsgType.HELLO_ACK:
            raise HandshakeRejected(f"expected HELLO_ACK, got {msg.msg_type.name}")
        ack = HelloAck.unpack(msg.payload)
        if not ack.accepted:
            raise HandshakeRejected(f"gNB refused UE {self.ue_id}")
        self.ack = ack
        check_trace_fits(self.trace, ack.samples_per_slot, self.ue_id)
        sync = read_message(self.sock)
        if sync.msg_type != MsgType.TIME_SYNC:
            raise HandshakeRejected(f"expected TIME_SYNC, got {sync.msg_type.name}")
        self.epoch_ns, self.slot_ns = unpack_time_sync(sync.payload)
        L = self.trace.num_bins
        self.dl_state = ConvState(L)
        self.ul_state = ConvState(L)

    @property
    def optimized(self) -> bool:
        return self.ack.optimized

    def process_slot(self, slot: int, dl: np.ndarray) -> np.ndarray | None:
        """Apply the downlink channel and build this slot's uplink frame."""
        if slot <= self.last_slot:
            log.warning("UE %d dropped out-of-order slot %d", self.ue_id, slot)
            return None
        self.last_slot = slot
        ack = self.ack
        taps = self.trace.step_taps(slot)
        rx, self.dl_state = convolve(IqFrame(slot, self.ue_id, dl), taps, self.dl_state, ack.num_taps_n)
        if ack.noise_power > 0:
            rx = add_awgn(rx, ack.noise_power, ack.noise_seed)
        if self.link_monitor is not None:
            self.link_monitor.on_slot(slot, taps, rx)
        if self.sink is not None:
            self.sink(slot, rx.samples)
        ul = np.ascontiguousarray(self.source(slot, rx.samples), dtype=np.complex64)
        if ul.size != ack.samples_per_slot:
            raise ValidationError(f"uplink source produced {ul.size} samples, slot needs {ack.samples_per_slot}")
        if ack.optimized:
            out, self.ul_state = convolve(IqFrame(slot, self.ue_id, ul, Direction.UPLINK), taps,
                                          self.ul_state, ack.num_taps_n)
            ul = out.samples
        self.slots_processed += 1
        return ul

    def run(self) -> None:
        """Serve slots until the gNB says BYE or the connection drops."""
        if self.cores:
            pin_worker(0, self.cores)
        try:
            while True:
                msg = read_message(self.sock)
                if msg.msg_type == MsgType.IQ_DL:
                    t0 = time.perf_counter()
                    s = msg.slot_index
                    ul = self.process_slot(s, unpack_iq(msg.payload))
                    if ul is None:
                        continue
                    # echo probes received during the previous slot ride back with this one
                    for probe, data in self._pending_echo:
                        send_message(self.sock, WireMessage(MsgType.ECHO_RESP, self.ue_id, s, pack_echo(probe, data)))
                    self._pending_echo.clear()
                    send_iq(self.sock, MsgType.IQ_UL, self.ue_id, s, ul)
                    self.compute_durations.append(time.perf_counter() - t0)
                elif msg.msg_type == MsgType.ECHO_REQ:
                    self._pending_echo.append(unpack_echo(msg.payload))
                elif msg.msg_type == MsgType.TIME_SYNC:
                    self.epoch_ns, self.slot_ns = unpack_time_sync(msg.payload)
                elif msg.msg_type == MsgType.BYE:
                    break
        except ConnectionLost as exc:
            self.error = exc
            log.info("UE %d connection lost: %s", self.ue_id, exc)
        except (ProtocolError, ValidationError) as exc:
            self.error = exc
            log.error("UE %d stopped: %s", self.ue_id, exc)
        finally:
            self.close()

    def start(self) -> threading.Thread:
        self._thread = threading.Thread(target=self.run, name=f"ue-{self.ue_id}", daemon=True)
        self._thread.start()
        return self._thread

    def join(self, timeout: float | None = None) -> None:
        if self._thread is not None:
            self._thread.join(timeout)

    def close(self) -> None:
        try:
            send_message(self.sock, WireMessage(MsgType.BYE, self.ue_id, 0))
        except (ConnectionLost, OSError):
            pass
        try:
            self.sock.close()
        except OSError:
            pass
