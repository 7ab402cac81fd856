"""Real-TCP transport: the same broker core and wire codec over sockets.

The in-process broker is single-threaded by design, so the TCP layer
serializes all broker entry points behind one lock and runs retransmission
timers on a wall-clock scheduler thread.  External MQTT 3.1.1 clients can
interoperate: frames on the wire are the bit-exact protocol format.
"""

from __future__ import annotations

import heapq
import itertools
import logging
import socket
import threading
import time
from typing import Callable, Optional

from ..errors import MalformedPacket
from .broker import Broker
from .packets import (
    ControlPacket,
    PacketType,
    decode_packet,
    decode_remaining_length,
    encode_packet,
)
from .qos import QosReceiver

logger = logging.getLogger(__name__)

DEFAULT_PORT = 1883


class WallClockScheduler:
    """Thread-backed scheduler with the same surface the broker needs."""

    def __init__(self):
        self._heap: list[tuple[float, int, Callable, tuple]] = []
        self._seq = itertools.count()
        self._cond = threading.Condition()
        self._running = False
        self._thread: Optional[threading.Thread] = None

    @property
    def now(self) -> float:
        return time.monotonic()

    def call_at(self, when: float, fn: Callable, *args) -> None:
        with self._cond:
            heapq.heappush(self._heap, (when, next(self._seq), fn, args))
            self._cond.notify()

    def call_later(self, delay: float, fn: Callable, *args) -> None:
        self.call_at(self.now + delay, fn, *args)

    def start(self) -> None:
        self._running = True
        self._thread = threading.Thread(target=self._run, daemon=True)
        self._thread.start()

    def stop(self) -> None:
        with self._cond:
            self._running = False
            self._cond.notify()
        if self._thread is not None:
            self._thread.join(timeout=2.0)

    def _run(self) -> None:
        while True:
            with self._cond:
                if not self._running:
                    return
                if not self._heap:
                    self._cond.wait(timeout=0.5)
                    continue
                when, _, fn, args = self._heap[0]
                delay = when - self.now
                if delay > 0:
                    self._cond.wait(timeout=min(delay, 0.5))
                    continue
                heapq.heappop(self._heap)
            try:
                fn(*args)
            except Exception:
                logger.exception("timer callback failed")


def read_packet(sock: socket.socket) -> Optional[ControlPacket]:
    """Read exactly one MQTT frame; None on orderly EOF."""
    first = _read_exact(sock, 1)
    if first is None:
        return None
    header = bytearray(first)
    for _ in range(4):
        byte = _read_exact(sock, 1)
        if byte is None:
            raise MalformedPacket("connection closed inside a frame")
        header.extend(byte)
        if not byte[0] & 0x80:
            break
    length, _ = decode_remaining_length(bytes(header), 1)
    body = b""
    if length:
        body = _read_exact(sock, length)
        if body is None:
            raise MalformedPacket("connection closed inside a frame")
    return decode_packet(bytes(header) + body)


def _read_exact(sock: socket.socket, n: int) -> Optional[bytes]:
    data = bytearray()
    while len(data) < n:
        chunk = sock.recv(n - len(data))
        if not chunk:
            return None
        data.extend(chunk)
    return bytes(data)


class TcpBroker:
    """Socket server front end for :class:`~fieldcam.mqtt.broker.Broker`."""

    def __init__(self, host: str = "127.0.0.1", port: int = DEFAULT_PORT,
                 retry_interval: float = 2.0):
        self.host = host
        self.port = port
        self.scheduler = WallClockScheduler()
        self.core = Broker(self.scheduler, retry_interval)
        self._lock = threading.RLock()
        self._server: Optional[socket.socket] = None
        self._threads: list[threading.Thread] = []
        self._running = False

    def start(self) -> None:
        self._server = socket.socket(socket.AF_INET, socket.SOCK_STREAM)
        self._server.setsockopt(socket.SOL_SOCKET, socket.SO_REUSEADDR, 1)
        self._server.bind((self.host, self.port))
        self.port = self._server.getsockname()[1]
        self._server.listen()
        self._running = True
        self.scheduler.start()
        accept_thread = threading.Thread(target=self._accept_loop, daemon=True)
        accept_thread.start()
        self._threads.append(accept_thread)

    def stop(self) -> None:
        self._running = False
        if self._server is not None:
            try:
                self._server.close()
            except OSError:
                pass
        self.scheduler.stop()

    def _accept_loop(self) -> None:
        while self._running:
            try:
                sock, addr = self._server.accept()
            except OSError:
                return
            thread = threading.Thread(target=self._serve_client,
                                      args=(sock, addr), daemon=True)
            thread.start()
            self._threads.append(thread)

    def _serve_client(self, sock: socket.socket, addr) -> None:
        send_lock = threading.Lock()

        def send(packet: ControlPacket) -> None:
            try:
                with send_lock:
                    sock.sendall(encode_packet(packet))
            except OSError:
                pass

        with self._lock:
            conn = self.core.attach(send)
        try:
            while self._running:
                packet = read_packet(sock)
                if packet is None:
                    break
                with self._lock:
                    conn.handle(packet, self.scheduler.now)
                if conn.closed:
                    break
        except (MalformedPacket, OSError) as exc:
            logger.info("client %s dropped: %s", addr, exc)
        finally:
            with self._lock:
                conn.close()
            try:
                sock.close()
            except OSError:
                pass


class TcpMqttClient:
    """Small blocking client for the command-line send/receive modes."""

    def __init__(self, client_id: str, host: str, port: int,
                 on_message: Optional[Callable[[str, bytes], None]] = None,
                 timeout: float = 10.0):
        self.client_id = client_id
        self.host = host
        self.port = port
        self.on_message = on_message
        self.timeout = timeout
        self.sock: Optional[socket.socket] = None
        self._next_pid = 0
        self._receiver = QosReceiver(self._send_raw, self._deliver)

    def _send_raw(self, packet: ControlPacket) -> None:
        self.sock.sendall(encode_packet(packet))

    def _deliver(self, packet: ControlPacket) -> None:
        if self.on_message:
            self.on_message(packet.topic, packet.payload)

    def connect(self) -> None:
        self.sock = socket.create_connection((self.host, self.port),
                                             timeout=self.timeout)
        self._send_raw(ControlPacket(PacketType.CONNECT, client_id=self.client_id))
        ack = self._wait_for({PacketType.CONNACK})
        if ack.return_code != 0:
            raise ConnectionError(f"broker refused connection: {ack.return_code}")

    def subscribe(self, topic: str, qos: int = 0) -> None:
        self._next_pid += 1
        self._send_raw(ControlPacket(PacketType.SUBSCRIBE, packet_id=self._next_pid,
                                     topics=[(topic, qos)]))
        self._wait_for({PacketType.SUBACK})

    def publish(self, topic: str, payload: bytes, qos: int = 0) -> None:
        """Publish and, for QoS > 0, block until the handshake completes."""
        if qos == 0:
            self._send_raw(ControlPacket(PacketType.PUBLISH, topic=topic,
                                         payload=payload, qos=0))
            return
        self._next_pid += 1
        pid = self._next_pid
        self._send_raw(ControlPacket(PacketType.PUBLISH, topic=topic,
                                     payload=payload, qos=qos, packet_id=pid))
        if qos == 1:
            self._wait_for({PacketType.PUBACK}, packet_id=pid)
        else:
            self._wait_for({PacketType.PUBREC}, packet_id=pid)
            self._send_raw(ControlPacket(PacketType.PUBREL, packet_id=pid))
            self._wait_for({PacketType.PUBCOMP}, packet_id=pid)

    def _wait_for(self, types: set, packet_id: Optional[int] = None) -> ControlPacket:
        deadline = time.monotonic() + self.timeout
        while time.monotonic() < deadline:
            packet = read_packet(self.sock)
            if packet is None:
                raise ConnectionError("broker closed the connection")
            if packet.packet_type in types and (
                packet_id is None or packet.packet_id == packet_id
            ):
                return packet
            self._dispatch(packet)
        raise TimeoutError(f"no {types} within {self.timeout}s")

    def _dispatch(self, packet: ControlPacket) -> None:
        if packet.packet_type == PacketType.PUBLISH:
            self._receiver.handle_publish(packet)
        elif packet.packet_type == PacketType.PUBREL:
            self._receiver.handle_pubrel(packet)

    def loop(self, duration: float) -> None:
        """Pump inbound publishes for *duration* seconds."""
        deadline = time.monotonic() + duration
        self.sock.settimeout(0.2)
        try:
            while time.monotonic() < deadline:
                try:
                    packet = read_packet(self.sock)
                except socket.timeout:
                    continue
                if packet is None:
                    return
                self._dispatch(packet)
        finally:
            self.sock.settimeout(self.timeout)

    def disconnect(self) -> None:
        if self.sock is not None:
            try:
                self._send_raw(ControlPacket(PacketType.DISCONNECT))
                self.sock.close()
            except OSError:
                pass
            self.sock = None
