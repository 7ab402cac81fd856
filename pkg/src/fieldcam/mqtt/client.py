"""Client-side MQTT session for simulated endpoints.

A client binds to a transport send function (usually one side of a
:class:`~fieldcam.mqtt.network.Link`), connects, subscribes, and publishes
at QoS 0/1/2 with the shared delivery state machines.  Application messages
arrive through the ``on_message`` callback.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

from ..clock import Scheduler
from ..errors import ProtocolViolation
from .broker import Broker
from .network import Link, NetConditions
from .packets import ControlPacket, PacketType
from .qos import DEFAULT_RETRY_INTERVAL, QosReceiver, QosSender

logger = logging.getLogger(__name__)


class MqttClient:
    def __init__(
        self,
        client_id: str,
        scheduler: Scheduler,
        on_message: Optional[Callable[[str, bytes], None]] = None,
        retry_interval: float = DEFAULT_RETRY_INTERVAL,
    ):
        self.client_id = client_id
        self.scheduler = scheduler
        self.on_message = on_message
        self.retry_interval = retry_interval
        self.connected = False
        self.on_connect: Optional[Callable[[], None]] = None
        self._transport: Optional[Callable[[ControlPacket], None]] = None
        self._sender: Optional[QosSender] = None
        self._receiver: Optional[QosReceiver] = None
        self._sub_pid = 0
        self.granted: dict[int, list[int]] = {}

    # -- transport wiring --------------------------------------------------

    def bind(self, transport_send: Callable[[ControlPacket], None]) -> None:
        self._transport = transport_send
        self._sender = QosSender(self.scheduler, transport_send, self.retry_interval)
        self._receiver = QosReceiver(transport_send, self._deliver)

    def handle(self, packet: ControlPacket, now: float) -> None:
        """Entry point for packets arriving from the transport."""
        t = packet.packet_type
        if t == PacketType.CONNACK:
            if packet.return_code == 0:
                self.connected = True
                if self.on_connect:
                    self.on_connect()
            else:
                logger.warning("broker refused connection: code %d", packet.return_code)
        elif t == PacketType.PUBLISH:
            self._receiver.handle_publish(packet)
        elif t == PacketType.PUBREL:
            self._receiver.handle_pubrel(packet)
        elif t in (PacketType.PUBACK, PacketType.PUBREC, PacketType.PUBCOMP):
            self._sender.handle_ack(packet)
        elif t == PacketType.SUBACK:
            self.granted[packet.packet_id] = packet.return_codes
        elif t == PacketType.PINGRESP:
            pass
        else:
            raise ProtocolViolation(f"unexpected {t.name} from broker")

    def _deliver(self, packet: ControlPacket) -> None:
        if self.on_message:
            self.on_message(packet.topic, packet.payload)

    # -- protocol actions ----------------------------------------------------

    def connect(self, clean_session: bool = True, keepalive: int = 60) -> None:
        if self._transport is None:
            raise RuntimeError("client is not bound to a transport")
        self._transport(
            ControlPacket(
                PacketType.CONNECT,
                client_id=self.client_id,
                clean_session=clean_session,
                keepalive=keepalive,
            )
        )

    def subscribe(self, topic: str, qos: int = 0) -> int:
        self._sub_pid = self._sub_pid % 0xFFFF + 1
        self._transport(
            ControlPacket(
                PacketType.SUBSCRIBE,
                packet_id=self._sub_pid,
                topics=[(topic, qos)],
            )
        )
        return self._sub_pid

    def publish(
        self,
        topic: str,
        payload: bytes,
        qos: int = 0,
        on_complete: Optional[Callable[[int], None]] = None,
    ) -> Optional[int]:
        if not self.connected:
            raise ProtocolViolation("publish before CONNACK")
        return self._sender.publish(topic, payload, qos, on_complete=on_complete)

    def disconnect(self) -> None:
        if self._transport is not None:
            self._transport(ControlPacket(PacketType.DISCONNECT))
        self.connected = False

    @property
    def quiescent(self) -> bool:
        return self._sender is None or self._sender.quiescent


def connect_over_link(
    client: MqttClient,
    broker: Broker,
    scheduler: Scheduler,
    conditions: NetConditions | None = None,
    label: str = "",
) -> Link:
    """Wire a client and broker together through a lossy link."""
    link = Link(scheduler, conditions, label or client.client_id)
    conn = broker.attach(link.send_to_a)
    link.bind_b(conn.handle)
    link.bind_a(client.handle)
    client.bind(link.send_to_b)
    return link
