"""Length-prefixed binary framing for the gNB/UE fronthaul link.

Every message is a fixed 24-byte little-endian header followed by
``payload_len`` bytes::

    magic u32 = 0x54545731 ("TTW1") | version u8 = 1 | msg_type u8
    | ue_id u32 | slot_index u64 | payload_len u32 | reserved u16

IQ payloads are interleaved float32 (I, Q) pairs, 8 bytes per sample.
"""
from __future__ import annotations

import enum
import socket
import struct
from dataclasses import dataclass

import numpy as np

from ..errors import (
    ConnectionLost,
    LengthMismatch,
    ShortRead,
    UnknownType,
    WireBadMagic,
    WireVersionError,
)

WIRE_MAGIC = 0x54545731
WIRE_VERSION = 1
HEADER = struct.Struct("<IBBIQIH")
HEADER_SIZE = HEADER.size
MAX_PAYLOAD = 1 << 24


class MsgType(enum.IntEnum):
    HELLO = 1
    HELLO_ACK = 2
    IQ_DL = 3
    IQ_UL = 4
    TIME_SYNC = 5
    ECHO_REQ = 6
    ECHO_RESP = 7
    BYE = 8


_IQ_TYPES = (MsgType.IQ_DL, MsgType.IQ_UL)
_TYPES = frozenset(int(t) for t in MsgType)


@dataclass(frozen=True)
class WireMessage:
    msg_type: MsgType
    ue_id: int = 0
    slot_index: int = 0
    payload: bytes = b""


def encode(msg: WireMessage) -> bytes:
    payload = bytes(msg.payload)
    if len(payload) > MAX_PAYLOAD:
        raise LengthMismatch(f"payload of {len(payload)} bytes exceeds {MAX_PAYLOAD}")
    return HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(msg.msg_type), msg.ue_id,
                       msg.slot_index, len(payload), 0) + payload


def decode_header(buf) -> tuple[MsgType, int, int, int]:
    """Validate a header; returns ``(msg_type, ue_id, slot_index, payload_len)``."""
    if len(buf) < HEADER_SIZE:
        raise ShortRead(f"need {HEADER_SIZE} header bytes, have {len(buf)}")
    magic, version, mtype, ue_id, slot, plen, _reserved = HEADER.unpack_from(buf, 0)
    if magic != WIRE_MAGIC:
        raise WireBadMagic(f"bad magic 0x{magic:08x}", offset=0)
    if version != WIRE_VERSION:
        raise WireVersionError(f"unsupported wire version {version}")
    if mtype not in _TYPES:
        raise UnknownType(f"unknown message type {mtype}")
    if plen > MAX_PAYLOAD:
        raise LengthMismatch(f"declared payload {plen} exceeds {MAX_PAYLOAD}")
    mtype = MsgType(mtype)
    if mtype in _IQ_TYPES and plen % 8:
        raise LengthMismatch(f"IQ payload of {plen} bytes is not a whole number of samples")
    return mtype, ue_id, slot, plen


def decode(buf) -> WireMessage:
    """Decode exactly one message occupying all of ``buf``."""
    mtype, ue_id, slot, plen = decode_header(buf)
    if len(buf) != HEADER_SIZE + plen:
        raise LengthMismatch(f"header declares {plen} payload bytes, buffer holds {len(buf) - HEADER_SIZE}")
    return WireMessage(mtype, ue_id, slot, bytes(buf[HEADER_SIZE:]))


# -- payload helpers ---------------------------------------------------------

def pack_iq(samples) -> bytes:
    return np.ascontiguousarray(samples, dtype="<c8").tobytes()


def unpack_iq(payload) -> np.ndarray:
    if len(payload) % 8:
        raise LengthMismatch("IQ payload is not a whole number of samples")
    return np.frombuffer(payload, dtype="<c8").astype(np.complex64)


_ACK = struct.Struct("<BBIIdQ")


@dataclass(frozen=True)
class HelloAck:
    accepted: bool
    optimized: bool
    samples_per_slot: int
    num_taps_n: int
    noise_power: float
    noise_seed: int

    def pack(self) -> bytes:
        return _ACK.pack(int(self.accepted), int(self.optimized), self.samples_per_slot,
                         self.num_taps_n, self.noise_power, self.noise_seed)

    @classmethod
    def unpack(cls, payload) -> "HelloAck":
        if len(payload) != _ACK.size:
            raise LengthMismatch(f"HELLO_ACK payload must be {_ACK.size} bytes")
        a, o, sps, n, noise, seed = _ACK.unpack(payload)
        return cls(bool(a), bool(o), sps, n, noise, seed)


_SYNC = struct.Struct("<qq")


def pack_time_sync(epoch_ns: int, slot_duration_ns: int) -> bytes:
    return _SYNC.pack(epoch_ns, slot_duration_ns)


def unpack_time_sync(payload) -> tuple[int, int]:
    if len(payload) != _SYNC.size:
        raise LengthMismatch(f"TIME_SYNC payload must be {_SYNC.size} bytes")
    return _SYNC.unpack(payload)


_ECHO = struct.Struct("<I")


def pack_echo(probe_id: int, data: bytes = b"") -> bytes:
    return _ECHO.pack(probe_id) + bytes(data)


def unpack_echo(payload) -> tuple[int, bytes]:
    if len(payload) < _ECHO.size:
        raise LengthMismatch("echo payload shorter than probe id")
    return _ECHO.unpack_from(payload)[0], bytes(payload[_ECHO.size:])


# -- socket framing ----------------------------------------------------------

def _recv_exact(sock: socket.socket, n: int) -> bytearray:
    buf = bytearray(n)
    view = memoryview(buf)
    got = 0
    while got < n:
        try:
            r = sock.recv_into(view[got:], n - got)
        except OSError as exc:
            raise ConnectionLost(str(exc)) from exc
        if r == 0:
            raise ConnectionLost(f"peer closed after {got} of {n} bytes")
        got += r
    return buf


def read_message(sock: socket.socket) -> WireMessage:
    head = _recv_exact(sock, HEADER_SIZE)
    mtype, ue_id, slot, plen = decode_header(head)
    payload = bytes(_recv_exact(sock, plen)) if plen else b""
    return WireMessage(mtype, ue_id, slot, payload)


def send_message(sock: socket.socket, msg: WireMessage) -> None:
    try:
        sock.sendall(encode(msg))
    except OSError as exc:
        raise ConnectionLost(str(exc)) from exc


def send_iq(sock: socket.socket, mtype: MsgType, ue_id: int, slot: int, samples) -> None:
    payload = pack_iq(samples)
    head = HEADER.pack(WIRE_MAGIC, WIRE_VERSION, int(mtype), ue_id, slot, len(payload), 0)
    try:
        sock.sendall(head + payload)
    except OSError as exc:
        raise ConnectionLost(str(exc)) from exc
