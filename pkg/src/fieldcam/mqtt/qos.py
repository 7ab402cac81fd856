"""Per-session QoS delivery state machines, shared by broker and clients.

Sender side: QoS 0 sends once and stores nothing.  QoS 1 stores the message
and retransmits (DUP set) until PUBACK.  QoS 2 retransmits the PUBLISH until
PUBREC, then retransmits PUBREL until PUBCOMP.

Receiver side: QoS 2 PUBLISH packets are acknowledged every time but handed
to the application only the first time their packet id is seen; the id is
released by PUBREL, after which a stray PUBREL still gets an idempotent
PUBCOMP.
"""

from __future__ import annotations

from enum import Enum, auto
from typing import Callable, Optional

from ..clock import Scheduler
from ..errors import ProtocolViolation
from .packets import ControlPacket, PacketType

# Retransmission timeout in virtual seconds; retries are unbounded.
DEFAULT_RETRY_INTERVAL = 1.0


class SendPhase(Enum):
    AWAIT_PUBACK = auto()
    AWAIT_PUBREC = auto()
    AWAIT_PUBCOMP = auto()


class _Outbound:
    __slots__ = ("packet_id", "topic", "payload", "qos", "phase", "generation",
                 "publish_count", "on_complete")

    def __init__(self, packet_id, topic, payload, qos, phase, on_complete):
        self.packet_id = packet_id
        self.topic = topic
        self.payload = payload
        self.qos = qos
        self.phase = phase
        self.generation = 0
        self.publish_count = 0
        self.on_complete = on_complete


class QosSender:
    """Outbound delivery manager for one session."""

    def __init__(
        self,
        scheduler: Scheduler,
        send: Callable[[ControlPacket], None],
        retry_interval: float = DEFAULT_RETRY_INTERVAL,
    ):
        self.scheduler = scheduler
        self.send = send
        self.retry_interval = retry_interval
        self.inflight: dict[int, _Outbound] = {}
        self._next_pid = 0

    def _allocate_pid(self) -> int:
        for _ in range(0xFFFF):
            self._next_pid = self._next_pid % 0xFFFF + 1
            if self._next_pid not in self.inflight:
                return self._next_pid
        raise ProtocolViolation("no free packet identifiers")

    @property
    def quiescent(self) -> bool:
        return not self.inflight

    def publish(
        self,
        topic: str,
        payload: bytes,
        qos: int,
        retain: bool = False,
        on_complete: Optional[Callable[[int], None]] = None,
    ) -> Optional[int]:
        """Send a message; returns its packet id, or None for QoS 0."""
        if qos == 0:
            self.send(
                ControlPacket(PacketType.PUBLISH, topic=topic, payload=payload,
                              qos=0, retain=retain)
            )
            if on_complete:
                on_complete(0)
            return None
        pid = self._allocate_pid()
        phase = SendPhase.AWAIT_PUBACK if qos == 1 else SendPhase.AWAIT_PUBREC
        entry = _Outbound(pid, topic, payload, qos, phase, on_complete)
        self.inflight[pid] = entry
        self._send_publish(entry)
        self._arm_timer(entry)
        return pid

    def _send_publish(self, entry: _Outbound) -> None:
        self.send(
            ControlPacket(
                PacketType.PUBLISH,
                topic=entry.topic,
                payload=entry.payload,
                qos=entry.qos,
                packet_id=entry.packet_id,
                dup=entry.publish_count > 0,
            )
        )
        entry.publish_count += 1

    def _arm_timer(self, entry: _Outbound) -> None:
        generation = entry.generation
        self.scheduler.call_later(
            self.retry_interval, self._on_timeout, entry.packet_id, generation
        )

    def _on_timeout(self, pid: int, generation: int) -> None:
        entry = self.inflight.get(pid)
        if entry is None or entry.generation != generation:
            return
        if entry.phase in (SendPhase.AWAIT_PUBACK, SendPhase.AWAIT_PUBREC):
            self._send_publish(entry)
        else:
            self.send(ControlPacket(PacketType.PUBREL, packet_id=pid))
        self._arm_timer(entry)

    def handle_ack(self, packet: ControlPacket) -> None:
        """Process PUBACK / PUBREC / PUBCOMP addressed to this sender."""
        pid = packet.packet_id
        entry = self.inflight.get(pid)
        if entry is None:
            raise ProtocolViolation(
                f"{packet.packet_type.name} for unknown packet id {pid}"
            )
        if packet.packet_type == PacketType.PUBACK:
            if entry.phase is not SendPhase.AWAIT_PUBACK:
                raise ProtocolViolation("PUBACK for a QoS 2 message")
            self._complete(entry)
        elif packet.packet_type == PacketType.PUBREC:
            if entry.phase is SendPhase.AWAIT_PUBACK:
                raise ProtocolViolation("PUBREC for a QoS 1 message")
            if entry.phase is SendPhase.AWAIT_PUBREC:
                entry.phase = SendPhase.AWAIT_PUBCOMP
                entry.generation += 1
                self.send(ControlPacket(PacketType.PUBREL, packet_id=pid))
                self._arm_timer(entry)
            # duplicate PUBREC while awaiting PUBCOMP: PUBREL retry timer
            # already covers it
        elif packet.packet_type == PacketType.PUBCOMP:
            if entry.phase is not SendPhase.AWAIT_PUBCOMP:
                raise ProtocolViolation("PUBCOMP before PUBREC completed")
            self._complete(entry)
        else:
            raise ProtocolViolation(f"{packet.packet_type.name} is not an ack")

    def _complete(self, entry: _Outbound) -> None:
        entry.generation += 1
        del self.inflight[entry.packet_id]
        if entry.on_complete:
            entry.on_complete(entry.packet_id)


class QosReceiver:
    """Inbound delivery manager: acknowledges and deduplicates."""

    def __init__(
        self,
        send: Callable[[ControlPacket], None],
        deliver: Callable[[ControlPacket], None],
    ):
        self.send = send
        self.deliver = deliver
        self.inbound_qos2_ids: set[int] = set()

    def handle_publish(self, packet: ControlPacket) -> None:
        if packet.qos == 0:
            self.deliver(packet)
            return
        if packet.qos == 1:
            self.deliver(packet)
            self.send(ControlPacket(PacketType.PUBACK, packet_id=packet.packet_id))
            return
        pid = packet.packet_id
        if pid not in self.inbound_qos2_ids:
            self.inbound_qos2_ids.add(pid)
            self.deliver(packet)
        self.send(ControlPacket(PacketType.PUBREC, packet_id=pid))

    def handle_pubrel(self, packet: ControlPacket) -> None:
        # Idempotent: release the id if held, acknowledge regardless.
        self.inbound_qos2_ids.discard(packet.packet_id)
        self.send(ControlPacket(PacketType.PUBCOMP, packet_id=packet.packet_id))
