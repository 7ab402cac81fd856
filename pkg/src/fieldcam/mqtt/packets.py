"""MQTT 3.1.1 control packet codec.

Wire format: a fixed header whose first byte carries the packet type and
flags, a variable-length remaining-length field (1..4 continuation-coded
bytes, max 268,435,455), then the variable header and payload.  Every
encoded packet is therefore at least two bytes.

Only the packet types this system exchanges are supported; UNSUBSCRIBE and
UNSUBACK decode to an error rather than silently passing through.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass, field
from enum import IntEnum

from ..errors import LengthOverflow, MalformedPacket

MAX_REMAINING_LENGTH = 268_435_455  # 256 MB - 1, the 4-byte encoding cap
PROTOCOL_NAME = b"MQTT"
PROTOCOL_LEVEL = 4  # MQTT 3.1.1


class PacketType(IntEnum):
    CONNECT = 1
    CONNACK = 2
    PUBLISH = 3
    PUBACK = 4
    PUBREC = 5
    PUBREL = 6
    PUBCOMP = 7
    SUBSCRIBE = 8
    SUBACK = 9
    PINGREQ = 12
    PINGRESP = 13
    DISCONNECT = 14


# Packet types whose fixed-header flags must be exactly 0b0010.
_FLAGS_0010 = {PacketType.PUBREL, PacketType.SUBSCRIBE}
# Types carrying a packet identifier in the variable header.
_WITH_PACKET_ID = {
    PacketType.PUBACK,
    PacketType.PUBREC,
    PacketType.PUBREL,
    PacketType.PUBCOMP,
    PacketType.SUBSCRIBE,
    PacketType.SUBACK,
}


@dataclass
class ControlPacket:
    """One MQTT control packet in decoded form.

    Field usage varies by type: PUBLISH uses topic/payload/qos/dup/retain
    and packet_id when qos > 0; CONNECT uses client_id/clean_session/
    keepalive; SUBSCRIBE uses topics (list of (filter, qos)); SUBACK uses
    return_codes; CONNACK uses session_present/return_code; the ack types
    use packet_id only.
    """

    packet_type: PacketType
    dup: bool = False
    qos: int = 0
    retain: bool = False
    topic: str | None = None
    packet_id: int | None = None
    payload: bytes = b""
    client_id: str | None = None
    clean_session: bool = True
    keepalive: int = 60
    session_present: bool = False
    return_code: int = 0
    topics: list[tuple[str, int]] = field(default_factory=list)
    return_codes: list[int] = field(default_factory=list)

    def __post_init__(self):
        if self.qos not in (0, 1, 2):
            raise MalformedPacket(f"QoS {self.qos} outside 0..2")


def encode_remaining_length(n: int) -> bytes:
    """Continuation-bit encoding: 7 value bits per byte, MSB = more follows."""
    if not 0 <= n <= MAX_REMAINING_LENGTH:
        raise LengthOverflow(f"remaining length {n} outside 0..{MAX_REMAINING_LENGTH}")
    out = bytearray()
    while True:
        digit = n % 128
        n //= 128
        if n > 0:
            digit |= 0x80
        out.append(digit)
        if n == 0:
            return bytes(out)


def decode_remaining_length(data: bytes, offset: int = 0) -> tuple[int, int]:
    """Decode at *offset*; returns (value, bytes consumed).

    Raises MalformedPacket on a truncated field or a fourth byte that still
    sets its continuation bit (a fifth byte is never legal).
    """
    multiplier = 1
    value = 0
    consumed = 0
    while True:
        if offset + consumed >= len(data):
            raise MalformedPacket("truncated remaining-length field")
        byte = data[offset + consumed]
        value += (byte & 0x7F) * multiplier
        consumed += 1
        if not byte & 0x80:
            return value, consumed
        if consumed == 4:
            raise MalformedPacket("remaining-length continuation past 4 bytes")
        multiplier *= 128


def _utf8_field(text: str) -> bytes:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise MalformedPacket("UTF-8 field longer than 65535 bytes")
    return struct.pack("!H", len(raw)) + raw


def _read_utf8(data: bytes, i: int) -> tuple[str, int]:
    if i + 2 > len(data):
        raise MalformedPacket("truncated UTF-8 length prefix")
    (n,) = struct.unpack_from("!H", data, i)
    i += 2
    if i + n > len(data):
        raise MalformedPacket("truncated UTF-8 field")
    try:
        return data[i : i + n].decode("utf-8"), i + n
    except UnicodeDecodeError as exc:
        raise MalformedPacket(f"invalid UTF-8: {exc}") from exc


def _read_u16(data: bytes, i: int) -> tuple[int, int]:
    if i + 2 > len(data):
        raise MalformedPacket("truncated 16-bit field")
    (n,) = struct.unpack_from("!H", data, i)
    return n, i + 2


def _encode_body(p: ControlPacket) -> tuple[int, bytes]:
    """Returns (fixed-header flags, variable header + payload)."""
    t = p.packet_type
    if t == PacketType.CONNECT:
        if p.client_id is None:
            raise MalformedPacket("CONNECT requires a client_id")
        connect_flags = 0x02 if p.clean_session else 0x00
        body = (
            _utf8_field("MQTT")
            + bytes([PROTOCOL_LEVEL, connect_flags])
            + struct.pack("!H", p.keepalive)
            + _utf8_field(p.client_id)
        )
        return 0, body
    if t == PacketType.CONNACK:
        return 0, bytes([1 if p.session_present else 0, p.return_code])
    if t == PacketType.PUBLISH:
        if p.topic is None:
            raise MalformedPacket("PUBLISH requires a topic")
        flags = (0x08 if p.dup else 0) | (p.qos << 1) | (0x01 if p.retain else 0)
        body = _utf8_field(p.topic)
        if p.qos > 0:
            if p.packet_id is None:
                raise MalformedPacket("QoS>0 PUBLISH requires a packet_id")
            body += struct.pack("!H", p.packet_id)
        return flags, body + p.payload
    if t in (PacketType.PUBACK, PacketType.PUBREC, PacketType.PUBREL, PacketType.PUBCOMP):
        if p.packet_id is None:
            raise MalformedPacket(f"{t.name} requires a packet_id")
        flags = 0x02 if t == PacketType.PUBREL else 0
        return flags, struct.pack("!H", p.packet_id)
    if t == PacketType.SUBSCRIBE:
        if p.packet_id is None or not p.topics:
            raise MalformedPacket("SUBSCRIBE requires a packet_id and topics")
        body = struct.pack("!H", p.packet_id)
        for topic, qos in p.topics:
            if qos not in (0, 1, 2):
                raise MalformedPacket(f"subscription QoS {qos} outside 0..2")
            body += _utf8_field(topic) + bytes([qos])
        return 0x02, body
    if t == PacketType.SUBACK:
        if p.packet_id is None or not p.return_codes:
            raise MalformedPacket("SUBACK requires a packet_id and return codes")
        return 0, struct.pack("!H", p.packet_id) + bytes(p.return_codes)
    if t in (PacketType.PINGREQ, PacketType.PINGRESP, PacketType.DISCONNECT):
        return 0, b""
    raise MalformedPacket(f"unsupported packet type {t}")


def encode_packet(p: ControlPacket) -> bytes:
    flags, body = _encode_body(p)
    if len(body) > MAX_REMAINING_LENGTH:
        raise LengthOverflow(f"packet body of {len(body)} bytes exceeds the protocol cap")
    head = bytes([(p.packet_type << 4) | flags])
    return head + encode_remaining_length(len(body)) + body


def decode_packet(data: bytes) -> ControlPacket:
    """Decode one complete packet; extra trailing bytes are an error."""
    packet, consumed = decode_packet_from(data)
    if consumed != len(data):
        raise MalformedPacket(f"{len(data) - consumed} trailing bytes after packet")
    return packet


def decode_packet_from(data: bytes, offset: int = 0) -> tuple[ControlPacket, int]:
    """Decode one packet starting at *offset*; returns (packet, end offset)."""
    if len(data) - offset < 2:
        raise MalformedPacket("packet shorter than the two-byte minimum")
    first = data[offset]
    type_value = first >> 4
    flags = first & 0x0F
    try:
        ptype = PacketType(type_value)
    except ValueError as exc:
        raise MalformedPacket(f"unsupported packet type {type_value}") from exc
    length, consumed = decode_remaining_length(data, offset + 1)
    body_start = offset + 1 + consumed
    body_end = body_start + length
    if body_end > len(data):
        raise MalformedPacket("truncated packet body")
    body = data[body_start:body_end]

    if ptype in _FLAGS_0010:
        if flags != 0x02:
            raise MalformedPacket(f"{ptype.name} flags must be 0b0010, got {flags:#06b}")
    elif ptype != PacketType.PUBLISH and flags != 0:
        raise MalformedPacket(f"{ptype.name} reserved flags must be 0, got {flags:#06b}")

    packet = _decode_body(ptype, flags, body)
    return packet, body_end


def _decode_body(ptype: PacketType, flags: int, body: bytes) -> ControlPacket:
    if ptype == PacketType.CONNECT:
        name, i = _read_utf8(body, 0)
        if name != "MQTT" or i >= len(body) or body[i] != PROTOCOL_LEVEL:
            raise MalformedPacket("not an MQTT 3.1.1 CONNECT")
        connect_flags = body[i + 1]
        if connect_flags & 0x01:
            raise MalformedPacket("CONNECT reserved flag bit set")
        keepalive, i = _read_u16(body, i + 2)
        client_id, i = _read_utf8(body, i)
        if i != len(body):
            raise MalformedPacket("unsupported CONNECT payload fields (will/auth)")
        return ControlPacket(
            PacketType.CONNECT,
            client_id=client_id,
            clean_session=bool(connect_flags & 0x02),
            keepalive=keepalive,
        )
    if ptype == PacketType.CONNACK:
        if len(body) != 2:
            raise MalformedPacket("CONNACK body must be 2 bytes")
        return ControlPacket(
            PacketType.CONNACK,
            session_present=bool(body[0] & 0x01),
            return_code=body[1],
        )
    if ptype == PacketType.PUBLISH:
        qos = (flags >> 1) & 0x03
        if qos == 3:
            raise MalformedPacket("PUBLISH QoS bits 0b11 are reserved")
        topic, i = _read_utf8(body, 0)
        packet_id = None
        if qos > 0:
            packet_id, i = _read_u16(body, i)
        return ControlPacket(
            PacketType.PUBLISH,
            dup=bool(flags & 0x08),
            qos=qos,
            retain=bool(flags & 0x01),
            topic=topic,
            packet_id=packet_id,
            payload=body[i:],
        )
    if ptype in (PacketType.PUBACK, PacketType.PUBREC, PacketType.PUBREL, PacketType.PUBCOMP):
        if len(body) != 2:
            raise MalformedPacket(f"{ptype.name} body must be 2 bytes")
        pid, _ = _read_u16(body, 0)
        return ControlPacket(ptype, packet_id=pid)
    if ptype == PacketType.SUBSCRIBE:
        pid, i = _read_u16(body, 0)
        topics: list[tuple[str, int]] = []
        while i < len(body):
            topic, i = _read_utf8(body, i)
            if i >= len(body):
                raise MalformedPacket("SUBSCRIBE entry missing its QoS byte")
            qos = body[i]
            if qos > 2:
                raise MalformedPacket(f"subscription QoS {qos} outside 0..2")
            topics.append((topic, qos))
            i += 1
        if not topics:
            raise MalformedPacket("SUBSCRIBE with no topic filters")
        return ControlPacket(PacketType.SUBSCRIBE, packet_id=pid, topics=topics)
    if ptype == PacketType.SUBACK:
        pid, i = _read_u16(body, 0)
        codes = list(body[i:])
        if not codes:
            raise MalformedPacket("SUBACK with no return codes")
        for code in codes:
            if code not in (0, 1, 2, 0x80):
                raise MalformedPacket(f"SUBACK return code {code:#x} invalid")
        return ControlPacket(PacketType.SUBACK, packet_id=pid, return_codes=codes)
    if ptype in (PacketType.PINGREQ, PacketType.PINGRESP, PacketType.DISCONNECT):
        if body:
            raise MalformedPacket(f"{ptype.name} must have an empty body")
        return ControlPacket(ptype)
    raise MalformedPacket(f"unsupported packet type {ptype}")
