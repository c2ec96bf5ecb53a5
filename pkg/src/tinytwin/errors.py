"""Exception hierarchy shared across tinytwin modules."""


class TinyTwinError(Exception):
    """Base class for every error raised by tinytwin."""


class ValidationError(TinyTwinError, ValueError):
    """Arguments or configuration failed validation before any side effect."""


class IoFailure(TinyTwinError, OSError):
    pass


# -- trace files -------------------------------------------------------------

class TraceFormatError(TinyTwinError):
    """A CIRT file could not be parsed. ``offset`` is the byte offset of the fault."""

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class BadMagic(TraceFormatError):
    pass


class UnsupportedVersion(TraceFormatError):
    pass


class Truncated(TraceFormatError):
    pass


class NonFiniteTap(TraceFormatError, ValidationError):
    pass


class StepOutOfRange(TinyTwinError, IndexError):
    pass


# -- trace generation --------------------------------------------------------

class NyquistViolation(ValidationError):
    pass


class GridTooShort(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, line, message="malformed row"):
        super().__init__(f"line {line}: {message}")
        self.line = line


class NonMonotonicTime(ValidationError):
    def __init__(self, line):
        super().__init__(f"line {line}: time went backwards")
        self.line = line


# -- convolution -------------------------------------------------------------

class TapLengthMismatch(ValidationError):
    pass


class NonPositiveNoise(ValidationError):
    pass


# -- fronthaul ---------------------------------------------------------------

class ProtocolError(TinyTwinError):
    """Typed decode failure for the wire protocol."""


class ShortRead(ProtocolError):
    pass


class WireBadMagic(ProtocolError, BadMagic):
    def __init__(self, message, offset=0):
        ProtocolError.__init__(self, f"{message} (at byte offset {offset})")
        self.offset = offset


class WireVersionError(ProtocolError):
    pass


class UnknownType(ProtocolError):
    pass


class LengthMismatch(ProtocolError):
    pass


class ConnectionLost(TinyTwinError, ConnectionError):
    pass


class HandshakeRejected(TinyTwinError):
    pass


class UeTimeout(TinyTwinError):
    def __init__(self, slot, ue_id):
        super().__init__(f"uplink frame for slot {slot} from UE {ue_id} missed its deadline")
        self.slot = slot
        self.ue_id = ue_id


class SlotOverrun(TinyTwinError):
    pass


class InvalidCore(ValidationError):
    pass


class EchoTimeout(TinyTwinError, TimeoutError):
    pass


# -- telemetry / bench -------------------------------------------------------

class BindFailure(TinyTwinError, OSError):
    pass


class EmptySample(ValidationError):
    pass


class InsufficientCores(UserWarning):
    pass


class SessionFailure(TinyTwinError):
    pass
