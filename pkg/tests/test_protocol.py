import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from tinytwin.errors import BadMagic, LengthMismatch, ProtocolError, ShortRead, UnknownType, WireVersionError
from tinytwin.fronthaul.protocol import (
    HEADER_SIZE,
    MAX_PAYLOAD,
    HelloAck,
    MsgType,
    WireMessage,
    decode,
    decode_header,
    encode,
    pack_echo,
    pack_iq,
    pack_time_sync,
    unpack_echo,
    unpack_iq,
    unpack_time_sync,
)


def fuzz_inputs(rng, count):
    """Random byte strings: pure noise, valid-magic prefixes and mutated valid encodings."""
    valid = encode(WireMessage(MsgType.IQ_UL, 3, 77, pack_iq(np.ones(4, np.complex64))))
    for i in range(count):
        kind = i % 3
        if kind == 0:
            yield rng.bytes(int(rng.integers(0, 64)))
        elif kind == 1:
            yield struct.pack("<IB", 0x54545731, 1) + rng.bytes(int(rng.integers(0, 60)))
        else:
            b = bytearray(valid)
            for _ in range(int(rng.integers(1, 4))):
                b[int(rng.integers(0, len(b)))] = int(rng.integers(0, 256))
            yield bytes(b[:int(rng.integers(0, len(b) + 1))])


def test_header_is_24_bytes():
    assert HEADER_SIZE == 24
    raw = encode(WireMessage(MsgType.HELLO, ue_id=7))
    assert len(raw) == 24
    assert decode(raw) == WireMessage(MsgType.HELLO, 7, 0, b"")


def test_header_layout():
    raw = encode(WireMessage(MsgType.IQ_DL, 0x01020304, 0x1122334455667788, b"\xaa" * 8))
    assert raw[:4] == struct.pack("<I", 0x54545731) and raw[:4] == b"1WTT"
    assert raw[4] == 1 and raw[5] == 3
    assert struct.unpack_from("<I", raw, 6)[0] == 0x01020304
    assert struct.unpack_from("<Q", raw, 10)[0] == 0x1122334455667788
    assert struct.unpack_from("<I", raw, 18)[0] == 8
    assert raw[22:24] == b"\0\0"


def test_iq_payload_length():
    samples = (np.arange(1024) + 1j * np.arange(1024)).astype(np.complex64)
    raw = encode(WireMessage(MsgType.IQ_DL, 1, 5, pack_iq(samples)))
    assert len(raw) - HEADER_SIZE == 1024 * 8 == 8192
    back = unpack_iq(decode(raw).payload)
    assert np.array_equal(back, samples)
    # interleaved float32 I then Q
    assert np.array_equal(np.frombuffer(raw[24:40], "<f4"), [0, 0, 1, 1])


def test_corrupted_magic():
    raw = bytearray(encode(WireMessage(MsgType.BYE)))
    raw[0] ^= 0xFF
    with pytest.raises(BadMagic):
        decode(bytes(raw))


def test_typed_errors():
    good = encode(WireMessage(MsgType.ECHO_REQ, 1, 2, b"abcd"))
    with pytest.raises(ShortRead):
        decode(good[:23])
    bad_ver = bytearray(good)
    bad_ver[4] = 2
    with pytest.raises(WireVersionError):
        decode(bytes(bad_ver))
    bad_type = bytearray(good)
    bad_type[5] = 9
    with pytest.raises(UnknownType):
        decode(bytes(bad_type))
    with pytest.raises(LengthMismatch):
        decode(good + b"x")
    with pytest.raises(LengthMismatch):
        decode(good[:-1])
    odd_iq = encode(WireMessage(MsgType.IQ_UL, 0, 0, b"1234567"))
    with pytest.raises(LengthMismatch):
        decode(odd_iq)
    huge = struct.pack("<IBBIQIH", 0x54545731, 1, 8, 0, 0, MAX_PAYLOAD + 1, 0)
    with pytest.raises(LengthMismatch):
        decode_header(huge)


msgs = st.builds(
    WireMessage,
    msg_type=st.sampled_from(list(MsgType)),
    ue_id=st.integers(0, 2**32 - 1),
    slot_index=st.integers(0, 2**64 - 1),
    payload=st.binary(max_size=256),
).filter(lambda m: m.msg_type not in (MsgType.IQ_DL, MsgType.IQ_UL) or len(m.payload) % 8 == 0)


@settings(max_examples=500)
@given(msgs)
def test_round_trip_all_types(m):
    assert decode(encode(m)) == m


@settings(max_examples=2000)
@given(st.binary(max_size=80))
def test_decoder_totality(data):
    try:
        decode(data)
    except ProtocolError:
        pass


def test_decoder_fuzz_random_and_mutated():
    rng = np.random.default_rng(0)
    outcomes = set()
    for blob in fuzz_inputs(rng, 30_000):
        try:
            decode(blob)
            outcomes.add("ok")
        except ProtocolError as exc:
            outcomes.add(type(exc).__name__)
    # the mix reaches every error branch
    assert {"ShortRead", "WireBadMagic", "UnknownType", "LengthMismatch", "WireVersionError"} <= outcomes


def test_helpers_round_trip():
    ack = HelloAck(True, False, 1920, 4, 0.01, 99)
    assert HelloAck.unpack(ack.pack()) == ack
    assert unpack_time_sync(pack_time_sync(123, 1_000_000)) == (123, 1_000_000)
    assert unpack_echo(pack_echo(5, b"xy")) == (5, b"xy")
    with pytest.raises(LengthMismatch):
        HelloAck.unpack(b"short")
    with pytest.raises(LengthMismatch):
        unpack_echo(b"ab")
