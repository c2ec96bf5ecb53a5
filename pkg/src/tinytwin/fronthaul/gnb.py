"""gNB side of the virtual RF plane: TCP server, slot loop and uplink aggregation."""
from __future__ import annotations

import logging
import socket
import threading
import time
from dataclasses import dataclass

import numpy as np

from ..conv import ConvState, Direction, IqFrame, add_awgn, convolve, noise_rng, warmup
from ..errors import ConnectionLost, EchoTimeout, ProtocolError, SessionFailure, ValidationError
from .protocol import (
    HelloAck,
    MsgType,
    WireMessage,
    pack_echo,
    pack_iq,
    pack_time_sync,
    read_message,
    send_message,
    unpack_echo,
    unpack_iq,
    HEADER,
    WIRE_MAGIC,
    WIRE_VERSION,
)
from .session import SessionConfig, SlotClock, pin_worker, pinning_for

log = logging.getLogger(__name__)

AGGREGATE_NOISE_ID = 0xFFFFFFFF
DL_SOURCE_ID = 0xFFFFFFFE


def qpsk_source(seed: int = 0, stream_id: int = DL_SOURCE_ID):
    """Full-amplitude unit-power pseudo-random IQ, deterministic per slot."""
    scale = np.float32(1 / np.sqrt(2))

    def source(slot: int, n: int) -> np.ndarray:
        bits = noise_rng(seed, slot, stream_id).integers(0, 2, size=(n, 2), dtype=np.int8)
        return ((1 - 2 * bits).astype(np.float32) * scale).view(np.complex64).ravel()

    return source


@dataclass(frozen=True)
class SlotTimingRecord:
    slot_index: int
    compute_duration: float
    deadline: float

    @property
    def overrun(self) -> bool:
        return self.compute_duration > self.deadline


class _UeLink:
    def __init__(self, ue_id: int, sock: socket.socket):
        self.ue_id = ue_id
        self.sock = sock
        self.alive = True
        self.frames: dict[int, np.ndarray] = {}
        self.cond = threading.Condition()
        self.send_lock = threading.Lock()
        self.state: ConvState | None = None
        self.trace = None
        self.thread: threading.Thread | None = None

    def put(self, slot: int, samples: np.ndarray) -> None:
        with self.cond:
            self.frames[slot] = samples
            self.cond.notify_all()

    def take(self, slot: int, deadline: float):
        with self.cond:
            while slot not in self.frames and self.alive:
                remaining = deadline - time.perf_counter()
                if remaining <= 0:
                    break
                self.cond.wait(remaining)
            frame = self.frames.pop(slot, None)
            for stale in [s for s in self.frames if s < slot]:
                del self.frames[stale]
            return frame

    def close(self):
        with self.cond:
            self.alive = False
            self.cond.notify_all()
        try:
            self.sock.close()
        except OSError:
            pass


class GnbServer:
    """Accepts UE connections and runs the slot loop.

    Each slot the same downlink frame goes to every UE, then one uplink frame
    per UE is awaited (zeros after ``uplink_deadline``).  Vanilla mode
    convolves each raw uplink with that UE's channel here, one UE after
    another; optimized mode receives already-convolved uplinks and only sums
    them, in ascending UE id order.
    """

    def __init__(self, cfg: SessionConfig, host: str = "127.0.0.1", port: int = 0,
                 source=None, sink=None, registry=None, max_ues: int | None = None):
        warmup()
        self.cfg = cfg
        self.source = source or qpsk_source(cfg.noise_seed)
        self.sink = sink
        self.registry = registry
        self.max_ues = max_ues
        self.records: list[SlotTimingRecord] = []
        self.ue_timeouts: list[tuple[int, int]] = []
        self._links: dict[int, _UeLink] = {}
        self._lock = threading.Condition()
        self._closing = False
        self._clock: SlotClock | None = None
        self._planned_epoch_ns = time.time_ns()
        self._echo_lock = threading.Lock()
        self._echo_pending: list = []   # probes waiting to be sent
        self._echo_sent: dict = {}      # probe_id -> (request slot, result list, event)
        self._echo_replies: list = []   # (probe_id, reply slot) from reader threads
        self._next_probe = 1
        self._run_thread = None
        self._listener = socket.create_server((host, port))
        self._listener.settimeout(0.2)
        self.address = self._listener.getsockname()[:2]
        self._accept_thread = threading.Thread(target=self._accept_loop, name="gnb-accept", daemon=True)
        self._accept_thread.start()

    # -- connection handling ---------------------------------------------

    @property
    def ue_ids(self) -> list[int]:
        with self._lock:
            return sorted(u for u, l in self._links.items() if l.alive)

    def wait_for_ues(self, count: int, timeout: float = 10.0) -> None:
        end = time.monotonic() + timeout
        with self._lock:
            while len([l for l in self._links.values() if l.alive]) < count:
                remaining = end - time.monotonic()
                if remaining <= 0:
                    raise SessionFailure(f"only {len(self._links)} of {count} UEs connected")
                self._lock.wait(remaining)

    def _accept_loop(self):
        while not self._closing:
            try:
                sock, _ = self._listener.accept()
            except socket.timeout:
                continue
            except OSError:
                break
            threading.Thread(target=self._handshake, args=(sock,), daemon=True).start()

    def _handshake(self, sock: socket.socket):
        sock.setsockopt(socket.IPPROTO_TCP, socket.TCP_NODELAY, 1)
        sock.settimeout(5.0)
        try:
            hello = read_message(sock)
        except (ProtocolError, ConnectionLost, OSError) as exc:
            log.warning("handshake failed: %s", exc)
            sock.close()
            return
        ue = hello.ue_id
        reason = None
        trace = None
        if hello.msg_type != MsgType.HELLO:
            reason = "expected HELLO"
        else:
            with self._lock:
                if ue in self._links and self._links[ue].alive:
                    reason = f"UE id {ue} already connected"
                elif self.max_ues is not None and len(self._links) >= self.max_ues:
                    reason = "session full"
            if reason is None and not self.cfg.optimized:
                try:
                    trace = self.cfg.trace_for(ue)
                except Exception as exc:  # surfaced to the UE as a rejection
                    reason = f"trace for UE {ue} unusable: {exc}"
                if trace is None and reason is None:
                    reason = f"no trace configured for UE {ue} (vanilla mode convolves at the gNB)"
        ack = HelloAck(reason is None, self.cfg.optimized, self.cfg.samples_per_slot,
                       self.cfg.num_taps_n, self.cfg.noise_power, self.cfg.noise_seed)
        try:
            send_message(sock, WireMessage(MsgType.HELLO_ACK, ue, 0, ack.pack()))
            if reason is not None:
                log.warning("rejected UE %d: %s", ue, reason)
                sock.close()
                return
            epoch_ns = self._clock.epoch_ns if self._clock else self._planned_epoch_ns
            send_message(sock, WireMessage(MsgType.TIME_SYNC, ue, 0, pack_time_sync(
                epoch_ns, int(round(self.cfg.slot_duration * 1e9)))))
        except ConnectionLost:
            sock.close()
            return
        sock.settimeout(None)
        link = _UeLink(ue, sock)
        if trace is not None:
            link.trace = trace
            link.state = ConvState(trace.num_bins)
        link.thread = threading.Thread(target=self._reader, args=(link,), name=f"gnb-rx-{ue}", daemon=True)
        with self._lock:
            self._links[ue] = link
            self._lock.notify_all()
        link.thread.start()
        log.info("UE %d connected", ue)

    def _reader(self, link: _UeLink):
        try:
            while link.alive:
                msg = read_message(link.sock)
                if msg.msg_type == MsgType.IQ_UL:
                    link.put(msg.slot_index, unpack_iq(msg.payload))
                elif msg.msg_type == MsgType.ECHO_RESP:
                    probe, _ = unpack_echo(msg.payload)
                    with self._echo_lock:
                        self._echo_replies.append((probe, msg.slot_index))
                elif msg.msg_type == MsgType.BYE:
                    break
        except (ConnectionLost, ProtocolError) as exc:
            if not self._closing:
                log.warning("UE %d link lost: %s", link.ue_id, exc)
        finally:
            link.close()

    # -- slot loop -------------------------------------------------------

    def run(self, num_slots: int, start_slot: int = 0) -> list[SlotTimingRecord]:
        """Run ``num_slots`` slots in the calling thread; returns their timing records."""
        cores = pinning_for(self.cfg.pinning, "gnb")
        if cores:
            pin_worker(0, cores)
        with self._lock:
            links = [self._links[u] for u in sorted(self._links) if self._links[u].alive]
        if not links:
            raise SessionFailure("no UEs connected")
        clock = SlotClock(self.cfg.slot_duration, start_slot=start_slot)
        self._clock = clock
        sync = pack_time_sync(clock.epoch_ns, int(round(self.cfg.slot_duration * 1e9)))
        for link in links:
            self._send(link, WireMessage(MsgType.TIME_SYNC, link.ue_id, start_slot, sync))
        n = self.cfg.samples_per_slot
        records = []
        for _ in range(num_slots):
            s = clock.advance()
            t0 = time.perf_counter()
            self._service_echo_replies(s, t0)
            dl = np.ascontiguousarray(self.source(s, n), dtype=np.complex64)
            payload = pack_iq(dl)
            for link in links:
                self._send_iq(link, s, payload)
            self._send_echo_requests(s, t0, links)
            agg = np.zeros(n, dtype=np.complex64)
            deadline = t0 + self.cfg.uplink_deadline
            for link in links:
                ul = link.take(s, deadline) if link.alive else None
                if ul is None or ul.size != n:
                    self.ue_timeouts.append((s, link.ue_id))
                    ul = np.zeros(n, dtype=np.complex64)
                if not self.cfg.optimized:
                    frame = IqFrame(s, link.ue_id, ul, Direction.UPLINK)
                    out, link.state = convolve(frame, link.trace.step_taps(s), link.state, self.cfg.num_taps_n)
                    ul = out.samples
                agg += ul
            if self.cfg.noise_power > 0:
                agg = add_awgn(IqFrame(s, AGGREGATE_NOISE_ID, agg, Direction.UPLINK),
                               self.cfg.noise_power, self.cfg.noise_seed).samples
            t1 = time.perf_counter()
            rec = SlotTimingRecord(s, t1 - t0, self.cfg.slot_duration)
            records.append(rec)
            if self.registry is not None:
                self.registry.observe_slot(rec.compute_duration)
            if self.sink is not None:
                self.sink(s, agg)
        self.records.extend(records)
        return records

    def start(self, num_slots: int, start_slot: int = 0) -> threading.Thread:
        """Run the slot loop in a background thread (see :meth:`join`)."""
        self._run_error = None

        def target():
            try:
                self.run(num_slots, start_slot)
            except BaseException as exc:  # re-raised from join()
                self._run_error = exc

        self._run_thread = threading.Thread(target=target, name="gnb-slots", daemon=True)
        self._run_thread.start()
        return self._run_thread

    def join(self, timeout: float | None = None) -> list[SlotTimingRecord]:
        if self._run_thread is not None:
            self._run_thread.join(timeout)
            if self._run_thread.is_alive():
                raise SessionFailure("slot loop did not finish in time")
            if self._run_error is not None:
                raise self._run_error
        return self.records

    def _send_iq(self, link: _UeLink, slot: int, payload: bytes):
        head = HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(MsgType.IQ_DL), link.ue_id, slot, len(payload), 0)
        self._send_raw(link, head + payload)

    def _send(self, link: _UeLink, msg: WireMessage):
        try:
            with link.send_lock:
                send_message(link.sock, msg)
        except ConnectionLost:
            link.close()

    def _send_raw(self, link: _UeLink, data: bytes):
        if not link.alive:
            return
        try:
            with link.send_lock:
                link.sock.sendall(data)
        except OSError:
            link.close()

    # -- echo probe ------------------------------------------------------

    def _send_echo_requests(self, slot: int, started: float, links):
        with self._echo_lock:
            if not self._echo_pending:
                return
            probe_id, ue_id, data, result, done = self._echo_pending.pop(0)
            self._echo_sent[probe_id] = (slot, started, result, done)
        target = next((l for l in links if l.ue_id == ue_id), None) if ue_id is not None else links[0]
        if target is None:
            raise ValidationError(f"echo target UE {ue_id} not connected")
        self._send(target, WireMessage(MsgType.ECHO_REQ, target.ue_id, slot, pack_echo(probe_id, data)))

    def _service_echo_replies(self, slot: int, now: float):
        with self._echo_lock:
            ready = [r for r in self._echo_replies if r[1] < slot]
            self._echo_replies = [r for r in self._echo_replies if r[1] >= slot]
            for probe_id, _ in ready:
                entry = self._echo_sent.pop(probe_id, None)
                if entry is None:
                    continue
                req_slot, req_start, result, done = entry
                # slot-grid distance plus whatever lateness the loop picked up
                # during the round trip; backlog from before the request is not
                # charged to it
                grid = (slot - req_slot) * self._clock.slot_duration
                lag_req = req_start - self._clock.slot_time(req_slot)
                lag_now = now - self._clock.slot_time(slot)
                result.append(grid + max(0.0, lag_now - lag_req))
                if len(result) >= result.expected:
                    done.set()

    def echo_rtt(self, payload: bytes = b"", count: int = 1, ue_id: int | None = None,
                 timeout: float = 10.0) -> list[float]:
        """Round-trip times of ``count`` echo probes; needs a running slot loop."""
        result = _RttList(count)
        done = threading.Event()
        with self._echo_lock:
            for _ in range(count):
                self._echo_pending.append((self._next_probe, ue_id, bytes(payload), result, done))
                self._next_probe += 1
        if count == 0:
            return []
        if not done.wait(timeout):
            raise EchoTimeout(f"{len(result)} of {count} echo replies within {timeout} s")
        return list(result)

    # -- shutdown --------------------------------------------------------

    def close(self):
        self._closing = True
        with self._lock:
            links = list(self._links.values())
        for link in links:
            if link.alive:
                self._send(link, WireMessage(MsgType.BYE, link.ue_id, 0))
            link.close()
        try:
            self._listener.close()
        except OSError:
            pass
        self._accept_thread.join(timeout=2)

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _RttList(list):
    def __init__(self, expected: int):
        super().__init__()
        self.expected = expected
