"""Serial-attached LTE Cat-M1 modem emulation.

The modem speaks an AT-command dialect over an in-memory duplex byte
channel: commands are "\\r"-terminated, every command line is echoed back
verbatim before its response, responses are "\\r\\n"-framed, and unsolicited
result codes (RDY, +QMTOPEN, +QMTCONN, +QMTPUB) appear on their own.  MQTT
publish commands drop the channel into data mode, where payload bytes
accumulate until a 0x1A terminator (an optional trailing carriage return is
swallowed).

Bytes cross the channel at the configured baud rate using the 9-bits-per-
byte effective framing (8 data bits + stop bit), so large payloads take
realistic virtual time.  Response latencies are configurable but validated
against each command's maximum response time.
"""

from __future__ import annotations

import logging
import re
from collections import deque
from dataclasses import dataclass
from datetime import datetime, timedelta, timezone
from typing import Callable, Optional

from .clock import Scheduler
from .errors import AlreadyPowered
from .metrics import SignalProfile
from .mqtt.broker import Broker
from .mqtt.client import MqttClient, connect_over_link
from .mqtt.network import NetConditions

logger = logging.getLogger(__name__)

MAX_PUBLISH_PAYLOAD = 1548
DATA_TERMINATOR = 0x1A

# Maximum response time per command, from the modem's application notes.
MRT_TABLE = {
    "CSQ": 0.3,
    "QMTOPEN": 75.0,
    "QMTCONN": 75.0,
    "QMTPUB": 15.0,
    "QLTS": 0.3,
}

_QMTOPEN_RE = re.compile(rb'^AT\+QMTOPEN=(\d+),"([^"]*)",(\d+)$')
_QMTCONN_RE = re.compile(rb'^AT\+QMTCONN=(\d+),"([^"]*)"$')
_QMTPUB_RE = re.compile(rb'^AT\+QMTPUB=(\d+),(\d+),(\d+),(\d+),"([^"]*)"$')


@dataclass(frozen=True)
class ModemTimings:
    """Simulated response latencies; each must respect its command's MRT.

    The URC latencies default to just under the firmware's wait budgets,
    mirroring a modem whose responses arrive close to the experimentally
    tuned waits.
    """

    rdy_delay: float = 1.5
    ok_latency: float = 0.02
    csq_latency: float = 0.1
    qmtopen_urc_latency: float = 4.5
    qmtconn_query_latency: float = 0.1
    prompt_latency: float = 0.25
    qmtpub_urc_latency: float = 0.45
    qlts_latency: float = 0.1

    def __post_init__(self):
        if not 0 <= self.rdy_delay <= 3.0:
            raise ValueError("RDY must appear within 3 s of power-on")
        checks = [
            (self.csq_latency, MRT_TABLE["CSQ"], "CSQ"),
            (self.qmtopen_urc_latency, MRT_TABLE["QMTOPEN"], "QMTOPEN"),
            (self.qmtconn_query_latency, MRT_TABLE["QMTCONN"], "QMTCONN query"),
            (self.prompt_latency, MRT_TABLE["QMTPUB"], "QMTPUB prompt"),
            (self.qmtpub_urc_latency, MRT_TABLE["QMTPUB"], "QMTPUB"),
            (self.qlts_latency, MRT_TABLE["QLTS"], "QLTS"),
        ]
        for latency, mrt, name in checks:
            if not 0 <= latency <= mrt:
                raise ValueError(f"{name} latency {latency}s exceeds its {mrt}s MRT")


# -- serial plumbing ---------------------------------------------------------

class TranscriptLog:
    """Timestamped record of both directions of the serial channel."""

    def __init__(self):
        self.entries: list[tuple[float, str, str, bytes]] = []

    def record(self, t: float, direction: str, kind: str, data: bytes) -> None:
        self.entries.append((t, direction, kind, data))

    @staticmethod
    def _render(kind: str, data: bytes) -> str:
        if kind == "data":
            return f"<data {len(data)}B>"
        if kind == "data-end":
            return "<data-end 0x1A 0x0D>"
        text = data.decode("ascii", errors="replace")
        return text.replace("\r", "\\r").replace("\n", "\\n")

    def lines(self) -> list[str]:
        return [
            f"{t:10.3f} {direction} {self._render(kind, data)}"
            for t, direction, kind, data in self.entries
        ]

    def write_to(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(self.lines()) + "\n")


class SerialLine:
    """One direction of the channel; a chunk is readable once its last byte
    has crossed the wire."""

    def __init__(self, scheduler: Scheduler, baud: int = 115200,
                 frame_bits: int = 9,
                 on_ready: Optional[Callable[[float], None]] = None):
        self.scheduler = scheduler
        self.byte_time = frame_bits / baud
        self.on_ready = on_ready
        self._pending: deque[tuple[float, bytes]] = deque()
        self._busy_until = 0.0

    def write(self, data: bytes, at: Optional[float] = None) -> float:
        """Queue *data*; returns the virtual time its last byte arrives."""
        start = max(self.scheduler.now if at is None else at, self._busy_until)
        ready = start + len(data) * self.byte_time
        self._busy_until = ready
        self._pending.append((ready, data))
        if self.on_ready is not None:
            self.scheduler.call_at(ready, self.on_ready, ready)
        return ready

    def read(self, now: float) -> bytes:
        out = bytearray()
        while self._pending and self._pending[0][0] <= now:
            out.extend(self._pending.popleft()[1])
        return bytes(out)

    def next_ready(self) -> Optional[float]:
        return self._pending[0][0] if self._pending else None

    def clear(self) -> None:
        self._pending.clear()


class SerialChannel:
    """Duplex device<->modem byte stream with a shared transcript.

    TX entries are device-to-modem writes, RX entries modem-to-device;
    both are stamped with the time the writer starts sending.
    """

    def __init__(self, scheduler: Scheduler, baud: int = 115200,
                 frame_bits: int = 9):
        self.scheduler = scheduler
        self.transcript = TranscriptLog()
        self.to_modem = SerialLine(scheduler, baud, frame_bits)
        self.to_device = SerialLine(scheduler, baud, frame_bits)

    def device_write(self, data: bytes, kind: str = "line") -> float:
        self.transcript.record(self.scheduler.now, "TX", kind, data)
        return self.to_modem.write(data)

    def device_read(self, now: float) -> bytes:
        return self.to_device.read(now)

    def modem_write(self, data: bytes, at: Optional[float] = None,
                    kind: str = "line") -> float:
        t = self.scheduler.now if at is None else at
        self.transcript.record(t, "RX", kind, data)
        return self.to_device.write(data, at=at)

    def modem_read(self, now: float) -> bytes:
        return self.to_modem.read(now)

    def next_activity(self) -> Optional[float]:
        times = [t for t in (self.to_modem.next_ready(), self.to_device.next_ready())
                 if t is not None]
        return min(times) if times else None


# -- the modem itself --------------------------------------------------------

class _LinkSlot:
    """State of one MQTT connection index (0..5)."""

    __slots__ = ("state", "client", "host", "port", "connect_requested")

    def __init__(self):
        self.state = "closed"  # closed | opened | connecting | connected
        self.client: Optional[MqttClient] = None
        self.host = ""
        self.port = 0
        self.connect_requested = False


class ModemSim:
    """BG96-class modem behavior bound to an in-process MQTT broker."""

    def __init__(
        self,
        scheduler: Scheduler,
        channel: SerialChannel,
        broker: Optional[Broker] = None,
        signal: Optional[SignalProfile] = None,
        timings: Optional[ModemTimings] = None,
        net_conditions: Optional[NetConditions] = None,
        base_datetime: Optional[datetime] = None,
    ):
        self.scheduler = scheduler
        self.channel = channel
        self.broker = broker
        self.signal = signal or SignalProfile()
        self.timings = timings or ModemTimings()
        self.net_conditions = net_conditions or NetConditions(latency=0.05)
        self.base_datetime = base_datetime or datetime(
            2024, 1, 2, 3, 4, 5, tzinfo=timezone(timedelta(hours=10))
        )
        self.powered_at: Optional[float] = None
        self.echo_enabled = True
        self.links: dict[int, _LinkSlot] = {i: _LinkSlot() for i in range(6)}
        self._line_buffer = bytearray()
        self._data_mode: Optional[dict] = None
        self._swallow_cr = False
        channel.to_modem.on_ready = self._on_serial_ready

    # -- power ---------------------------------------------------------------

    @property
    def powered(self) -> bool:
        return self.powered_at is not None

    def power_on(self, t: float) -> None:
        if self.powered:
            raise AlreadyPowered("modem is already powered")
        self.powered_at = t
        self.channel.modem_write(b"\r\nRDY\r\n", at=t + self.timings.rdy_delay)

    def power_off(self, t: float) -> None:
        for slot in self.links.values():
            if slot.client is not None:
                slot.client.disconnect()
        self.links = {i: _LinkSlot() for i in range(6)}
        self.powered_at = None
        self._line_buffer.clear()
        self._data_mode = None
        self._swallow_cr = False
        self.echo_enabled = True

    def registered(self, now: float) -> bool:
        return self.powered and now - self.powered_at >= self.signal.attach_delay

    # -- serial surface --------------------------------------------------------

    def feed_serial(self, data: bytes, t: Optional[float] = None) -> None:
        """Queue bytes toward the modem; they are handled after wire time.

        Time is owned by the scheduler; *t* is accepted for call-site
        clarity but must not be in the scheduler's past.
        """
        del t
        self.channel.device_write(data)

    def poll_serial(self, t: Optional[float] = None) -> bytes:
        """Read whatever the modem has emitted up to *t* (default: now)."""
        return self.channel.device_read(self.scheduler.now if t is None else t)

    # -- serial input --------------------------------------------------------

    def _on_serial_ready(self, now: float) -> None:
        self.pump(now)

    def pump(self, now: float) -> None:
        """Consume any bytes that have finished arriving."""
        data = self.channel.modem_read(now)
        if not data:
            return
        if not self.powered:
            return  # bytes into an unpowered modem vanish
        i = 0
        while i < len(data):
            if self._data_mode is not None:
                i = self._consume_data(data, i, now)
            else:
                i = self._consume_command_bytes(data, i, now)

    def _consume_data(self, data: bytes, i: int, now: float) -> int:
        end = data.find(DATA_TERMINATOR, i)
        if end == -1:
            self._data_mode["payload"].extend(data[i:])
            return len(data)
        self._data_mode["payload"].extend(data[i:end])
        self._finish_publish(now)
        self._swallow_cr = True
        return end + 1

    def _consume_command_bytes(self, data: bytes, i: int, now: float) -> int:
        if self._swallow_cr:
            self._swallow_cr = False
            if data[i : i + 1] == b"\r":
                i += 1
        end = data.find(b"\r", i)
        if end == -1:
            self._line_buffer.extend(data[i:])
            return len(data)
        self._line_buffer.extend(data[i:end])
        line = bytes(self._line_buffer)
        self._line_buffer.clear()
        if line:
            if self.echo_enabled:
                self.channel.modem_write(line + b"\r", at=now)
            self._handle_command(line, now)
        return end + 1

    # -- responses -------------------------------------------------------------

    def _respond(self, now: float, latency: float, *lines: bytes) -> None:
        body = b"".join(b"\r\n" + line + b"\r\n" for line in lines)
        self.channel.modem_write(body, at=now + latency)

    def _urc(self, at: float, line: bytes) -> None:
        self.channel.modem_write(b"\r\n" + line + b"\r\n", at=at)

    # -- command dispatch --------------------------------------------------------

    def _handle_command(self, line: bytes, now: float) -> None:
        cmd = line.strip()
        upper = cmd.upper()
        if upper == b"AT":
            self._respond(now, self.timings.ok_latency, b"OK")
        elif upper in (b"ATE0", b"ATE1"):
            self.echo_enabled = upper.endswith(b"1")
            self._respond(now, self.timings.ok_latency, b"OK")
        elif upper == b"AT+CSQ":
            self._handle_csq(now)
        elif upper.startswith(b"AT+QMTOPEN="):
            self._handle_qmtopen(cmd, now)
        elif upper == b"AT+QMTCONN?":
            self._handle_qmtconn_query(now)
        elif upper.startswith(b"AT+QMTCONN="):
            self._handle_qmtconn(cmd, now)
        elif upper.startswith(b"AT+QMTPUB="):
            self._handle_qmtpub(cmd, now)
        elif upper in (b"AT+QLTS=2", b"AT+QLTS"):
            self._handle_qlts(now)
        else:
            logger.debug("unknown command %r", cmd)
            self._respond(now, self.timings.ok_latency, b"ERROR")

    def _handle_csq(self, now: float) -> None:
        if self.registered(now):
            report = f"+CSQ: {self.signal.csq_when_registered},0"
        else:
            report = f"+CSQ: {self.signal.csq_when_searching},99"
        self._respond(now, self.timings.csq_latency, report.encode(), b"OK")

    def _handle_qmtopen(self, cmd: bytes, now: float) -> None:
        m = _QMTOPEN_RE.match(cmd)
        if not m:
            self._respond(now, self.timings.ok_latency, b"ERROR")
            return
        cid = int(m.group(1))
        if cid not in self.links:
            self._respond(now, self.timings.ok_latency, b"ERROR")
            return
        slot = self.links[cid]
        self._respond(now, self.timings.ok_latency, b"OK")
        if slot.state != "closed":
            self._urc(now + self.timings.ok_latency, f"+QMTOPEN: {cid},2".encode())
            return
        slot.host = m.group(2).decode("ascii", "replace")
        slot.port = int(m.group(3))

        def finish():
            if self.broker is not None and self.broker.reachable:
                slot.state = "opened"
                self._urc(self.scheduler.now, f"+QMTOPEN: {cid},0".encode())
            else:
                self._urc(self.scheduler.now, f"+QMTOPEN: {cid},3".encode())

        self.scheduler.call_at(now + self.timings.qmtopen_urc_latency, finish)

    def _handle_qmtconn(self, cmd: bytes, now: float) -> None:
        m = _QMTCONN_RE.match(cmd)
        if not m:
            self._respond(now, self.timings.ok_latency, b"ERROR")
            return
        cid = int(m.group(1))
        slot = self.links.get(cid)
        if slot is None or slot.state != "opened":
            self._respond(now, self.timings.ok_latency, b"ERROR")
            return
        client_id = m.group(2).decode("utf-8", "replace")
        self._respond(now, self.timings.ok_latency, b"OK")
        slot.state = "connecting"
        slot.connect_requested = True
        client = MqttClient(client_id, self.scheduler)
        slot.client = client
        connect_over_link(client, self.broker, self.scheduler, self.net_conditions,
                          label=f"modem-link-{cid}")

        def on_connect():
            slot.state = "connected"
            self._urc(self.scheduler.now, f"+QMTCONN: {cid},0,0".encode())

        client.on_connect = on_connect
        client.connect()

    def _handle_qmtconn_query(self, now: float) -> None:
        states = {"connecting": 2, "connected": 3}
        lines = [
            f"+QMTCONN: {cid},{states[slot.state]}".encode()
            for cid, slot in self.links.items()
            if slot.connect_requested and slot.state in states
        ]
        lines.append(b"OK")
        self._respond(now, self.timings.qmtconn_query_latency, *lines)

    def _handle_qmtpub(self, cmd: bytes, now: float) -> None:
        m = _QMTPUB_RE.match(cmd)
        if not m:
            self._respond(now, self.timings.ok_latency, b"ERROR")
            return
        cid, msgid, qos, retain = (int(m.group(k)) for k in range(1, 5))
        slot = self.links.get(cid)
        if slot is None or slot.state != "connected" or qos not in (0, 1, 2):
            self._respond(now, self.timings.ok_latency, b"ERROR")
            return
        topic = m.group(5).decode("utf-8", "replace")
        self._data_mode = {
            "cid": cid,
            "msgid": msgid,
            "qos": qos,
            "retain": bool(retain),
            "topic": topic,
            "payload": bytearray(),
        }
        self.channel.modem_write(b"\r\n> ", at=now + self.timings.prompt_latency)

    def _finish_publish(self, now: float) -> None:
        ctx = self._data_mode
        self._data_mode = None
        cid, msgid = ctx["cid"], ctx["msgid"]
        payload = bytes(ctx["payload"])
        if len(payload) > MAX_PUBLISH_PAYLOAD:
            self._urc(now + self.timings.qmtpub_urc_latency,
                      f"+QMTPUB: {cid},{msgid},2".encode())
            return
        slot = self.links[cid]
        if ctx["qos"] == 0:
            slot.client.publish(ctx["topic"], payload, qos=0)
            self._urc(now + self.timings.qmtpub_urc_latency,
                      f"+QMTPUB: {cid},{msgid},0".encode())
        else:
            def done(_pid):
                self._urc(self.scheduler.now + self.timings.qmtpub_urc_latency,
                          f"+QMTPUB: {cid},{msgid},0".encode())

            slot.client.publish(ctx["topic"], payload, qos=ctx["qos"],
                                on_complete=done)

    def _handle_qlts(self, now: float) -> None:
        if not self.registered(now):
            self._respond(now, self.timings.qlts_latency, b"+CME ERROR: 30")
            return
        stamp = self.base_datetime + timedelta(seconds=int(now))
        offset = stamp.utcoffset() or timedelta(0)
        quarters = int(offset.total_seconds() // 900)
        sign = "+" if quarters >= 0 else "-"
        text = f'+QLTS: "{stamp:%y/%m/%d,%H:%M:%S}{sign}{abs(quarters):02d}"'
        self._respond(now, self.timings.qlts_latency, text.encode(), b"OK")
