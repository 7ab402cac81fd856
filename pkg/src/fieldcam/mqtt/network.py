"""Deterministic lossy transport between MQTT endpoints.

Every packet crossing a :class:`Link` is encoded to its wire form, subjected
to a seeded drop decision, and (if it survives) decoded again at delivery
time after a fixed latency.  The same seed and event sequence always produce
the same drop pattern, which makes QoS behavior under loss exactly
reproducible.
"""

from __future__ import annotations

import random
from dataclasses import dataclass
from typing import Callable, Optional

from ..clock import Scheduler
from .packets import ControlPacket, decode_packet, encode_packet


@dataclass(frozen=True)
class NetConditions:
    """Loss and delay applied to each packet independently.

    drop_probability 1.0 is allowed for harness tests that want a black
    hole; QoS liveness guarantees only hold below 1.
    """

    drop_probability: float = 0.0
    latency: float = 0.050
    rng_seed: int = 0

    def __post_init__(self):
        if not 0.0 <= self.drop_probability <= 1.0:
            raise ValueError("drop_probability must be within [0, 1]")
        if self.latency < 0:
            raise ValueError("latency cannot be negative")


@dataclass
class TransferRecord:
    """One packet observed on a link, delivered or not."""

    time: float
    direction: str
    packet: ControlPacket
    delivered: bool


def net_transfer(
    scheduler: Scheduler,
    rng: random.Random,
    conditions: NetConditions,
    deliver: Callable[[ControlPacket, float], None],
    packet: ControlPacket,
) -> Optional[float]:
    """Schedule *packet* for delivery, or drop it.

    Returns the delivery time, or None when the drop roll consumed the
    packet.  The rng is advanced exactly once per call either way, so replay
    with the same seed reproduces the identical drop set.
    """
    wire = encode_packet(packet)
    if rng.random() < conditions.drop_probability:
        return None
    when = scheduler.now + conditions.latency
    scheduler.call_at(when, lambda: deliver(decode_packet(wire), when))
    return when


class Link:
    """Bidirectional packet pipe between a client ("a") and a broker ("b")."""

    def __init__(
        self,
        scheduler: Scheduler,
        conditions: NetConditions | None = None,
        label: str = "",
    ):
        self.scheduler = scheduler
        self.conditions = conditions or NetConditions()
        self.label = label
        self._rng = random.Random(self.conditions.rng_seed)
        self._a_handler: Optional[Callable[[ControlPacket, float], None]] = None
        self._b_handler: Optional[Callable[[ControlPacket, float], None]] = None
        self.records: list[TransferRecord] = []
        self.up = True

    def bind_a(self, handler: Callable[[ControlPacket, float], None]) -> None:
        self._a_handler = handler

    def bind_b(self, handler: Callable[[ControlPacket, float], None]) -> None:
        self._b_handler = handler

    def send_to_b(self, packet: ControlPacket) -> None:
        self._send(packet, "a->b", self._b_handler)

    def send_to_a(self, packet: ControlPacket) -> None:
        self._send(packet, "b->a", self._a_handler)

    def _send(self, packet, direction, handler) -> None:
        if not self.up or handler is None:
            self.records.append(
                TransferRecord(self.scheduler.now, direction, packet, False)
            )
            return
        when = net_transfer(self.scheduler, self._rng, self.conditions, handler, packet)
        self.records.append(
            TransferRecord(self.scheduler.now, direction, packet, when is not None)
        )

    def delivered(self, direction: str | None = None) -> list[ControlPacket]:
        return [
            r.packet
            for r in self.records
            if r.delivered and (direction is None or r.direction == direction)
        ]
