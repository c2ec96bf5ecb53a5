from .gnb import GnbServer, SlotTimingRecord, qpsk_source
from .protocol import HelloAck, MsgType, WireMessage, decode, encode
from .runner import SessionResult, UeSpec, run_session
from .session import SessionConfig, SlotClock, default_pinning, pin_worker
from .ue import UeClient, constant_source, relay_source

__all__ = [
    "GnbServer", "SlotTimingRecord", "qpsk_source", "HelloAck", "MsgType", "WireMessage",
    "decode", "encode", "SessionResult", "UeSpec", "run_session", "SessionConfig", "SlotClock",
    "default_pinning", "pin_worker", "UeClient", "constant_source", "relay_source",
]
