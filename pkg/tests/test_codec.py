import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sissa.codec import (
    HEADER_SIZE,
    CodecError,
    LengthMismatchError,
    MessageId,
    MessageType,
    RequestId,
    ReturnCode,
    SomeIpPacket,
    TruncatedInputError,
    UnknownMessageTypeError,
    UnknownReturnCodeError,
    decode_packet,
    encode_packet,
    validate_exchange,
)

u16 = st.integers(0, 0xFFFF)
u8 = st.integers(0, 0xFF)

packets = st.builds(
    SomeIpPacket.build,
    service_id=u16,
    method_id=u16,
    client_id=u16,
    session_id=u16,
    message_type=st.sampled_from(list(MessageType)),
    return_code=st.sampled_from(list(ReturnCode)),
    payload=st.binary(max_size=64),
    interface_version=u8,
    protocol_version=u8,
)


def test_golden_bytes():
    p = SomeIpPacket.build(0x1234, 0x8001, 0x0042, 0x0007, MessageType.RESPONSE,
                           ReturnCode.E_NOT_OK, b"\xde\xad", interface_version=3)
    # assembled by hand from the wire layout
    want = bytes([0x12, 0x34, 0x80, 0x01, 0, 0, 0, 10, 0x00, 0x42, 0x00, 0x07,
                  0x01, 0x03, 0x80, 0x01, 0xDE, 0xAD])
    assert encode_packet(p) == want
    assert decode_packet(want) == p


def test_length_counts_from_request_id():
    p = SomeIpPacket.build(1, 2, 3, 4, MessageType.REQUEST, payload=b"x" * 5)
    assert p.length == 13
    assert len(encode_packet(p)) == HEADER_SIZE + 5


def test_id_packing():
    assert MessageId(0xABCD, 0x0102).to_u32() == 0xABCD0102
    assert MessageId.from_u32(0xABCD0102) == (0xABCD, 0x0102)
    assert RequestId.from_u32(RequestId(7, 65535).to_u32()) == (7, 65535)


@settings(max_examples=300, deadline=None)
@given(packets)
def test_roundtrip(p):
    assert decode_packet(encode_packet(p)) == p


@settings(max_examples=300, deadline=None)
@given(packets, st.data())
def test_mutation_never_crashes(p, data):
    buf = bytearray(encode_packet(p))
    i = data.draw(st.integers(0, len(buf) - 1))
    buf[i] = data.draw(u8.filter(lambda b: b != buf[i]))
    try:
        q = decode_packet(bytes(buf))
    except CodecError:
        return
    assert q != p
    assert encode_packet(q) == bytes(buf)


@pytest.mark.parametrize("buf, exc", [
    (b"", TruncatedInputError),
    (b"\x00" * 15, TruncatedInputError),
    (bytes([0, 1, 0, 1, 0, 0, 0, 7]) + b"\x00" * 8, LengthMismatchError),
    (bytes([0, 1, 0, 1, 0, 0, 0, 12]) + b"\x00" * 8, TruncatedInputError),
    (bytes([0, 1, 0, 1, 0, 0, 0, 8]) + b"\x00" * 8 + b"!", LengthMismatchError),
    (bytes([0, 1, 0, 1, 0, 0, 0, 8, 0, 0, 0, 0, 1, 1, 0x03, 0]), UnknownMessageTypeError),
    (bytes([0, 1, 0, 1, 0, 0, 0, 8, 0, 0, 0, 0, 1, 1, 0x00, 0x05]), UnknownReturnCodeError),
])
def test_classified_errors(buf, exc):
    with pytest.raises(exc):
        decode_packet(buf)


def test_encode_rejects_inconsistent_length():
    p = SomeIpPacket(1, 1, 20, 1, 1, 1, 1, MessageType.REQUEST, ReturnCode.E_OK, b"ab")
    with pytest.raises(LengthMismatchError):
        encode_packet(p)


@pytest.mark.parametrize("field, value", [("service_id", 1 << 16), ("session_id", -1),
                                          ("interface_version", 256)])
def test_field_width(field, value):
    kw = dict(service_id=1, method_id=1, client_id=1, session_id=1,
              message_type=MessageType.REQUEST)
    kw[field] = value
    with pytest.raises(CodecError):
        SomeIpPacket.build(**kw)


def test_replace_keeps_length_consistent():
    p = SomeIpPacket.build(1, 1, 1, 1, MessageType.REQUEST, payload=b"abc")
    q = p.replace(payload=b"abcdef")
    assert q.length == 14
    assert decode_packet(encode_packet(q)) == q


def test_validate_exchange():
    req = SomeIpPacket.build(0x10, 0x1, 5, 9, MessageType.REQUEST)
    res = req.replace(message_type=MessageType.RESPONSE)
    assert validate_exchange(req, res)
    assert validate_exchange(req, res.replace(message_type=MessageType.ERROR,
                                              return_code=ReturnCode.E_NOT_OK))
    assert not validate_exchange(req, res.replace(session_id=10))
    assert not validate_exchange(req, res.replace(interface_version=2))
    assert not validate_exchange(req, req)
    assert not validate_exchange(res, res)
