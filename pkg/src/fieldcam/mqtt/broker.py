"""In-process MQTT 3.1.1 broker.

Event-driven and single-threaded: every inbound packet or timer fires one
step on a totally ordered virtual clock, so no locking is needed.  Sessions
are clean-session only, topic matching is exact-string (no wildcards), and
retained messages / wills are not implemented.
"""

from __future__ import annotations

import logging
from typing import Callable, Optional

from ..clock import Scheduler
from ..errors import ProtocolViolation
from .packets import ControlPacket, PacketType
from .qos import DEFAULT_RETRY_INTERVAL, QosReceiver, QosSender

logger = logging.getLogger(__name__)

CONNECTION_ACCEPTED = 0
REFUSED_IDENTIFIER = 2


class ClientSession:
    """Broker-side state for one connected client."""

    def __init__(self, broker: "Broker", client_id: str,
                 send: Callable[[ControlPacket], None]):
        self.broker = broker
        self.client_id = client_id
        self.send = send
        self.subscriptions: dict[str, int] = {}
        self.sender = QosSender(broker.scheduler, send, broker.retry_interval)
        self.receiver = QosReceiver(send, self._route_inbound)

    def _route_inbound(self, packet: ControlPacket) -> None:
        self.broker.route(packet, self)

    @property
    def outbound_inflight(self):
        return self.sender.inflight

    @property
    def inbound_qos2_ids(self):
        return self.receiver.inbound_qos2_ids


class BrokerConnection:
    """One attachment point; becomes a session after CONNECT."""

    def __init__(self, broker: "Broker", send: Callable[[ControlPacket], None]):
        self.broker = broker
        self.send = send
        self.session: Optional[ClientSession] = None
        self.closed = False

    def handle(self, packet: ControlPacket, now: float) -> None:
        if self.closed:
            return
        try:
            self.broker.handle(self, packet)
        except ProtocolViolation as exc:
            logger.warning("closing connection after protocol violation: %s", exc)
            self.close()

    def close(self) -> None:
        self.closed = True
        if self.session is not None:
            self.broker._drop_session(self.session)
            self.session = None


class Broker:
    """Exact-topic publish/subscribe hub with QoS 0/1/2 forwarding."""

    def __init__(self, scheduler: Scheduler,
                 retry_interval: float = DEFAULT_RETRY_INTERVAL):
        self.scheduler = scheduler
        self.retry_interval = retry_interval
        self.sessions: dict[str, ClientSession] = {}
        self._connections: dict[str, BrokerConnection] = {}
        self.reachable = True
        # (topic, payload, publisher client_id) for inspection by tests
        self.published_log: list[tuple[str, bytes, str]] = []

    def attach(self, send: Callable[[ControlPacket], None]) -> BrokerConnection:
        """Create a connection endpoint that delivers outbound via *send*."""
        return BrokerConnection(self, send)

    def handle(self, conn: BrokerConnection, packet: ControlPacket) -> None:
        if conn.session is None:
            if packet.packet_type != PacketType.CONNECT:
                raise ProtocolViolation(
                    f"{packet.packet_type.name} before CONNECT"
                )
            self._connect(conn, packet)
            return
        session = conn.session
        t = packet.packet_type
        if t == PacketType.CONNECT:
            raise ProtocolViolation("second CONNECT on one connection")
        if t == PacketType.PUBLISH:
            session.receiver.handle_publish(packet)
        elif t == PacketType.PUBREL:
            session.receiver.handle_pubrel(packet)
        elif t in (PacketType.PUBACK, PacketType.PUBREC, PacketType.PUBCOMP):
            session.sender.handle_ack(packet)
        elif t == PacketType.SUBSCRIBE:
            granted = []
            for topic, qos in packet.topics:
                session.subscriptions[topic] = qos
                granted.append(qos)
            session.send(
                ControlPacket(PacketType.SUBACK, packet_id=packet.packet_id,
                              return_codes=granted)
            )
        elif t == PacketType.PINGREQ:
            session.send(ControlPacket(PacketType.PINGRESP))
        elif t == PacketType.DISCONNECT:
            conn.close()
        else:
            raise ProtocolViolation(f"unexpected {t.name} from client")

    def _connect(self, conn: BrokerConnection, packet: ControlPacket) -> None:
        client_id = packet.client_id or ""
        if not client_id:
            conn.send(ControlPacket(PacketType.CONNACK,
                                    return_code=REFUSED_IDENTIFIER))
            raise ProtocolViolation("empty client id")
        # Clean-session only: a reconnect discards all prior state.
        old = self._connections.get(client_id)
        if old is not None and old is not conn:
            old.close()
        session = ClientSession(self, client_id, conn.send)
        self.sessions[client_id] = session
        self._connections[client_id] = conn
        conn.session = session
        conn.send(ControlPacket(PacketType.CONNACK, session_present=False,
                                return_code=CONNECTION_ACCEPTED))

    def _drop_session(self, session: ClientSession) -> None:
        if self.sessions.get(session.client_id) is session:
            del self.sessions[session.client_id]
            self._connections.pop(session.client_id, None)

    def route(self, packet: ControlPacket, origin: ClientSession) -> None:
        """Fan a PUBLISH out to every session subscribed to its exact topic.

        Each subscriber receives the message at min(publish QoS,
        subscription QoS) through its own outbound state machine.
        """
        self.published_log.append((packet.topic, packet.payload, origin.client_id))
        for session in list(self.sessions.values()):
            sub_qos = session.subscriptions.get(packet.topic)
            if sub_qos is None:
                continue
            effective = min(packet.qos, sub_qos)
            session.sender.publish(packet.topic, packet.payload, effective)

    @property
    def quiescent(self) -> bool:
        return all(s.sender.quiescent for s in self.sessions.values())
