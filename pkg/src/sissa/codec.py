"""SOME/IP header encoding and decoding.

Wire layout (all multi-byte fields big-endian)::

    0      4        8          12  13  14  15  16
    | MsgID | Length | ReqID    |PV |IV |MT |RC | payload ...

``Length`` counts the bytes from the Request ID to the end of the message,
so it is always ``8 + len(payload)``.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from enum import IntEnum
from typing import NamedTuple

HEADER_SIZE = 16
_HEADER = struct.Struct(">HHIHHBBBB")


class MessageType(IntEnum):
    REQUEST = 0x00
    REQUEST_NO_RETURN = 0x01
    NOTIFICATION = 0x02
    RESPONSE = 0x80
    ERROR = 0x81


class ReturnCode(IntEnum):
    E_OK = 0x00
    E_NOT_OK = 0x01
    E_UNKNOWN_SERVICE = 0x02
    E_WRONG_INTERFACE_VERSION = 0x08


_MESSAGE_TYPES = frozenset(int(m) for m in MessageType)
_RETURN_CODES = frozenset(int(r) for r in ReturnCode)


class CodecError(ValueError):
    """Base class for every classified encode/decode failure."""


class LengthMismatchError(CodecError):
    pass


class TruncatedInputError(CodecError):
    pass


class UnknownMessageTypeError(CodecError):
    pass


class UnknownReturnCodeError(CodecError):
    pass


class MessageId(NamedTuple):
    service_id: int
    method_id: int

    def to_u32(self) -> int:
        return (self.service_id << 16) | self.method_id

    @classmethod
    def from_u32(cls, value: int) -> "MessageId":
        return cls((value >> 16) & 0xFFFF, value & 0xFFFF)


class RequestId(NamedTuple):
    client_id: int
    session_id: int

    def to_u32(self) -> int:
        return (self.client_id << 16) | self.session_id

    @classmethod
    def from_u32(cls, value: int) -> "RequestId":
        return cls((value >> 16) & 0xFFFF, value & 0xFFFF)


def _check_width(name: str, value: int, bits: int) -> None:
    if not 0 <= value < (1 << bits):
        raise CodecError(f"{name}={value!r} does not fit in {bits} bits")


@dataclass(frozen=True)
class SomeIpPacket:
    service_id: int
    method_id: int
    length: int
    client_id: int
    session_id: int
    protocol_version: int
    interface_version: int
    message_type: MessageType
    return_code: ReturnCode
    payload: bytes = b""

    def __post_init__(self):
        _check_width("service_id", self.service_id, 16)
        _check_width("method_id", self.method_id, 16)
        _check_width("length", self.length, 32)
        _check_width("client_id", self.client_id, 16)
        _check_width("session_id", self.session_id, 16)
        _check_width("protocol_version", self.protocol_version, 8)
        _check_width("interface_version", self.interface_version, 8)
        # coerce plain ints so equality after a decode round-trip is exact
        object.__setattr__(self, "message_type", MessageType(self.message_type))
        object.__setattr__(self, "return_code", ReturnCode(self.return_code))
        object.__setattr__(self, "payload", bytes(self.payload))

    @classmethod
    def build(
        cls,
        service_id: int,
        method_id: int,
        client_id: int,
        session_id: int,
        message_type: MessageType,
        return_code: ReturnCode = ReturnCode.E_OK,
        payload: bytes = b"",
        interface_version: int = 1,
        protocol_version: int = 1,
    ) -> "SomeIpPacket":
        """Construct a packet with the length field derived from the payload."""
        return cls(
            service_id=service_id,
            method_id=method_id,
            length=8 + len(payload),
            client_id=client_id,
            session_id=session_id,
            protocol_version=protocol_version,
            interface_version=interface_version,
            message_type=message_type,
            return_code=return_code,
            payload=payload,
        )

    @property
    def message_id(self) -> MessageId:
        return MessageId(self.service_id, self.method_id)

    @property
    def request_id(self) -> RequestId:
        return RequestId(self.client_id, self.session_id)

    def replace(self, **changes) -> "SomeIpPacket":
        fields = {
            "service_id": self.service_id,
            "method_id": self.method_id,
            "length": self.length,
            "client_id": self.client_id,
            "session_id": self.session_id,
            "protocol_version": self.protocol_version,
            "interface_version": self.interface_version,
            "message_type": self.message_type,
            "return_code": self.return_code,
            "payload": self.payload,
        }
        fields.update(changes)
        if "payload" in changes and "length" not in changes:
            fields["length"] = 8 + len(fields["payload"])
        return SomeIpPacket(**fields)


def encode_packet(p: SomeIpPacket) -> bytes:
    if p.length != 8 + len(p.payload):
        raise LengthMismatchError(
            f"length field {p.length} != 8 + payload size {len(p.payload)}"
        )
    return (
        _HEADER.pack(
            p.service_id,
            p.method_id,
            p.length,
            p.client_id,
            p.session_id,
            p.protocol_version,
            p.interface_version,
            int(p.message_type),
            int(p.return_code),
        )
        + p.payload
    )


def decode_packet(buf: bytes) -> SomeIpPacket:
    """Decode exactly one SOME/IP message occupying all of ``buf``."""
    buf = bytes(buf)
    if len(buf) < HEADER_SIZE:
        raise TruncatedInputError(f"need {HEADER_SIZE} header bytes, got {len(buf)}")
    (service_id, method_id, length, client_id, session_id,
     pv, iv, mt, rc) = _HEADER.unpack_from(buf)
    if length < 8:
        raise LengthMismatchError(f"length field {length} below minimum of 8")
    total = 8 + length
    if len(buf) < total:
        raise TruncatedInputError(f"length field implies {total} bytes, got {len(buf)}")
    if len(buf) > total:
        raise LengthMismatchError(f"{len(buf) - total} trailing bytes after message")
    if mt not in _MESSAGE_TYPES:
        raise UnknownMessageTypeError(f"message type 0x{mt:02X}")
    if rc not in _RETURN_CODES:
        raise UnknownReturnCodeError(f"return code 0x{rc:02X}")
    return SomeIpPacket(
        service_id, method_id, length, client_id, session_id,
        pv, iv, MessageType(mt), ReturnCode(rc), buf[HEADER_SIZE:],
    )


def validate_exchange(req: SomeIpPacket, res: SomeIpPacket) -> bool:
    """True when ``res`` is a well-formed answer to ``req``."""
    if req.message_type != MessageType.REQUEST:
        return False
    if res.message_type not in (MessageType.RESPONSE, MessageType.ERROR):
        return False
    return (
        req.message_id == res.message_id
        and req.request_id == res.request_id
        and req.protocol_version == res.protocol_version
        and req.interface_version == res.interface_version
    )
