"""Minimal MQTT 3.1.1 stack: codec, broker, client sessions, lossy links."""

from .packets import (
    ControlPacket,
    PacketType,
    decode_packet,
    decode_remaining_length,
    encode_packet,
    encode_remaining_length,
)
from .network import Link, NetConditions
from .broker import Broker
from .client import MqttClient

__all__ = [
    "ControlPacket",
    "PacketType",
    "decode_packet",
    "decode_remaining_length",
    "encode_packet",
    "encode_remaining_length",
    "Link",
    "NetConditions",
    "Broker",
    "MqttClient",
]
