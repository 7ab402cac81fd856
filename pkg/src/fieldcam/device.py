"""The transmitter device: power latch, camera stub, virtual SD card, and
the non-blocking cellular state machine that drives the modem.

The cellular handler is written the way memory-constrained firmware runs:
a main loop calls it repeatedly, each call does bounded work (emit at most
one AT command, check at most one wait budget) and returns immediately.
Wait states leave when the expected token shows up in the receive buffer or
when their budget expires, whichever is first; the following ``do_*`` state
inspects the buffer and decides between advancing, retrying, and failing.

The AT sequence per power cycle: wait for the RDY banner, poll AT+CSQ until
the report is something other than 99,99, open the broker link (AT+QMTOPEN),
register the client exactly once (AT+QMTCONN= is never repeated; progress is
polled with AT+QMTCONN? until state 3), then publish the transfer header and
every segment through the ">" data-mode prompt, and finally read network
time (AT+QLTS=2) before powering off.
"""

from __future__ import annotations

import io
import re
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Optional

from .clock import Scheduler
from .errors import CaptureFailed, PoweredOff
from .metrics import TimingParams
from .modem import ModemSim, SerialChannel
from .pipeline import (
    ENCODED_NAME,
    ENCRYPTED_NAME,
    RAW_NAME,
    CipherConfig,
    RawFile,
    SegmentPlan,
    aes128_encrypt,
    b64_encode,
    pad16,
    plan_segments,
    render_header,
)

_CSQ_RE = re.compile(rb"\+?CSQ: (\d+),(\d+)")
_QMTOPEN_URC_RE = re.compile(rb"\+QMTOPEN: (\d+),(\d+)")
_QMTPUB_URC_RE = re.compile(rb"\+QMTPUB: (\d+),(\d+),(\d+)")

JPEG_SOI = b"\xff\xd8"
JPEG_EOI = b"\xff\xd9"


# -- simple hardware models --------------------------------------------------

@dataclass
class PowerLatch:
    """Two-pulse-input power switch; pulses in the current state are no-ops."""

    state: str = "off"
    quiescent_current: float = 8.885e-6
    active_current: float = 0.190
    transitions: list[tuple[float, str]] = field(default_factory=list)

    @property
    def is_on(self) -> bool:
        return self.state == "on"

    def pulse(self, which: str, t: float) -> "PowerLatch":
        if which not in ("on", "off"):
            raise ValueError(f"unknown pulse {which!r}")
        if which != self.state:
            self.state = which
            self.transitions.append((t, which))
        return self


def latch_pulse(latch: PowerLatch, which: str, t: float) -> PowerLatch:
    return latch.pulse(which, t)


class VirtualSd:
    """In-memory file store standing in for the SD card."""

    def __init__(self):
        self.files: dict[str, bytes] = {}

    def write(self, name: str, data: bytes) -> None:
        self.files[name] = bytes(data)

    def read(self, name: str) -> bytes:
        return self.files[name]

    def read_slice(self, name: str, offset: int, length: int) -> bytes:
        return self.files[name][offset : offset + length]

    def size(self, name: str) -> int:
        return len(self.files[name])

    def exists(self, name: str) -> bool:
        return name in self.files


@dataclass
class CameraStub:
    """Returns a fixture JPEG instead of sampling a sensor.

    quality follows the 1..63 camera scale (lower is better) and is carried
    as metadata only.
    """

    fixture_path: str
    width: int = 640
    height: int = 480
    quality: int = 10

    def __post_init__(self):
        if not 1 <= self.quality <= 63:
            raise ValueError("quality must be on the 1..63 scale")

    def capture(self, sd: VirtualSd) -> str:
        try:
            with open(self.fixture_path, "rb") as fh:
                frame = fh.read()
        except OSError as exc:
            raise CaptureFailed(f"fixture unreadable: {exc}") from exc
        if not frame.startswith(JPEG_SOI) or not frame.endswith(JPEG_EOI):
            raise CaptureFailed("fixture is not a complete JPEG stream")
        sd.write(RAW_NAME, frame)
        return RAW_NAME


def write_fixture_jpeg(path, target_size: int = 13568,
                       width: int = 640, height: int = 480) -> bytes:
    """Create a deterministic JPEG of exactly *target_size* bytes.

    A comment segment inserted after the start-of-image marker absorbs the
    size difference, keeping the stream a valid JPEG with its end-of-image
    marker last.
    """
    from PIL import Image, ImageDraw

    base = None
    for quality in (30, 20, 10, 5, 1):
        img = Image.new("RGB", (width, height), (88, 118, 60))
        draw = ImageDraw.Draw(img)
        for i in range(0, height, 32):
            shade = 60 + (i * 3) % 120
            draw.rectangle([0, i, width, i + 16], fill=(shade, 118, 60))
        draw.rectangle([40, 40, 280, 200], fill=(210, 205, 190))
        draw.rectangle([360, 240, 600, 440], fill=(30, 40, 34))
        buf = io.BytesIO()
        img.save(buf, "JPEG", quality=quality)
        candidate = buf.getvalue()
        if len(candidate) + 4 <= target_size:
            base = candidate
            break
    if base is None:
        raise ValueError(f"cannot fit a {width}x{height} frame in {target_size} bytes")
    pad = target_size - len(base) - 4
    if pad + 2 > 0xFFFF:
        raise ValueError(f"target size {target_size} needs more than one comment segment")
    comment = b"\xff\xfe" + (pad + 2).to_bytes(2, "big") + b"\x00" * pad
    data = base[:2] + comment + base[2:]
    assert len(data) == target_size
    with open(path, "wb") as fh:
        fh.write(data)
    return data


# -- the cellular finite state machine ----------------------------------------

class FsmState(Enum):
    WAIT_RDY = "wait_rdy"
    SEND_CSQ = "send_CSQ"
    WAIT_CSQ = "wait_CSQ"
    DO_CSQ = "do_CSQ"
    SEND_QMTOPEN = "send_QMTOPEN"
    WAIT_QMTOPEN = "wait_QMTOPEN"
    DO_QMTOPEN = "do_QMTOPEN"
    SEND_QMTCONN_ONCE = "send_QMTCONN_once"
    POLL_QMTCONN = "poll_QMTCONN"
    WAIT_QMTCONN = "wait_QMTCONN"
    DO_QMTCONN = "do_QMTCONN"
    PUB_HEADER = "pub_header"
    PUB_SEGMENT = "pub_segment"
    WAIT_QMTPUB = "wait_QMTPUB"
    CELLULAR_DONE = "cellular_done"
    CELLULAR_FAILED = "cellular_failed"


FLAG_QMTCONN_SENT = 0x01
FLAG_TRANSFER_COMPLETE = 0x02

MAX_RDY_WAITS = 5
MAX_OPEN_RETRIES = 5
MAX_CONN_POLLS = 5


@dataclass
class FsmConfig:
    timing: TimingParams = field(default_factory=TimingParams)
    connect_id: int = 5
    client_id: str = "clientExample"
    broker_host: str = "broker.hivemq.com"
    broker_port: int = 1883
    topic: str = "testing"
    qos: int = 0
    retain: int = 0


class CellularFsm:
    """Non-blocking AT-command driver publishing one planned transfer."""

    def __init__(self, config: FsmConfig, plan: SegmentPlan,
                 read_segment: Callable[[int, int], bytes]):
        self.config = config
        self.plan = plan
        self.read_segment = read_segment
        self.state = FsmState.WAIT_RDY
        self.flags_reg = 0
        self.wait_started_at: float = 0.0
        self.wait_budget: float = config.timing.rdy_wait
        self.rx_buffer = bytearray()
        self.segment_cursor = -1  # -1 = header publish pending
        self.rdy_waits = 0
        self.open_retries = 0
        self.conn_polls = 0
        self.prompt_pending = False
        self.qlts_sent = False
        self.failure_reason: Optional[str] = None
        self.state_entries: list[tuple[float, str]] = []
        self.publishes: list[tuple[float, int]] = []

    # -- bookkeeping -----------------------------------------------------------

    def start(self, now: float) -> None:
        self.wait_started_at = now
        self.state_entries.append((now, self.state.value))

    def _enter(self, state: FsmState, now: float) -> None:
        self.state = state
        self.state_entries.append((now, state.value))

    def _arm_wait(self, budget: float, now: float) -> None:
        self.wait_started_at = now
        self.wait_budget = budget

    def _elapsed(self, now: float) -> float:
        return now - self.wait_started_at

    @property
    def wait_deadline(self) -> Optional[float]:
        if self.state in (FsmState.WAIT_RDY, FsmState.WAIT_CSQ,
                          FsmState.WAIT_QMTOPEN, FsmState.WAIT_QMTCONN,
                          FsmState.WAIT_QMTPUB) or self.prompt_pending \
                or (self.state is FsmState.CELLULAR_DONE and not self.finished):
            return self.wait_started_at + self.wait_budget
        return None

    @property
    def finished(self) -> bool:
        return bool(self.flags_reg & FLAG_TRANSFER_COMPLETE)

    @property
    def failed(self) -> bool:
        return self.state is FsmState.CELLULAR_FAILED

    def _fail(self, reason: str, now: float) -> None:
        self.failure_reason = reason
        self._enter(FsmState.CELLULAR_FAILED, now)

    # -- helpers ---------------------------------------------------------------

    def _csq_report(self) -> Optional[tuple[int, int]]:
        m = None
        for m in _CSQ_RE.finditer(self.rx_buffer):
            pass
        return (int(m.group(1)), int(m.group(2))) if m else None

    def _conn_ok_token(self) -> bytes:
        return f"+QMTCONN: {self.config.connect_id},3".encode()

    def _current_payload(self) -> bytes:
        if self.segment_cursor < 0:
            return render_header(self.plan).encode("ascii")
        offset = self.segment_cursor * self.plan.segment_size
        return self.read_segment(offset, self.plan.size_of(self.segment_cursor))

    # -- the handler -------------------------------------------------------------

    def step(self, serial_in: bytes, now: float) -> tuple[list[tuple[str, bytes]], bool]:
        """One handler invocation; returns (writes, state changed)."""
        if serial_in:
            self.rx_buffer.extend(serial_in)
        before = self.state
        out: list[tuple[str, bytes]] = []
        handler = getattr(self, "_state_" + self.state.value.lower())
        handler(out, now)
        return out, self.state is not before

    def _command(self, out: list, text: str, budget: float, now: float) -> None:
        """Emit one AT command, resetting the receive window and wait timer."""
        self.rx_buffer.clear()
        out.append(("line", text.encode("ascii") + b"\r"))
        self._arm_wait(budget, now)

    # wait_rdy ------------------------------------------------------------------

    def _state_wait_rdy(self, out, now):
        if b"RDY" in self.rx_buffer:
            self._enter(FsmState.SEND_CSQ, now)
        elif self._elapsed(now) >= self.wait_budget:
            self.rdy_waits += 1
            if self.rdy_waits >= MAX_RDY_WAITS:
                self._fail("modem never announced RDY", now)
            else:
                self._arm_wait(self.config.timing.rdy_wait, now)

    # CSQ polling ----------------------------------------------------------------

    def _state_send_csq(self, out, now):
        self._command(out, "AT+CSQ", self.config.timing.csq_wait, now)
        self._enter(FsmState.WAIT_CSQ, now)

    def _state_wait_csq(self, out, now):
        report = self._csq_report()
        if report is not None and report[0] != 99:
            self._enter(FsmState.DO_CSQ, now)
        elif self._elapsed(now) >= self.wait_budget:
            self._enter(FsmState.DO_CSQ, now)

    def _state_do_csq(self, out, now):
        report = self._csq_report()
        if report is not None and report[0] != 99:
            self._enter(FsmState.SEND_QMTOPEN, now)
        else:
            # keep polling until the report is anything other than 99,99
            self._enter(FsmState.SEND_CSQ, now)

    # broker link ------------------------------------------------------------------

    def _state_send_qmtopen(self, out, now):
        cfg = self.config
        self._command(
            out,
            f'AT+QMTOPEN={cfg.connect_id},"{cfg.broker_host}",{cfg.broker_port}',
            cfg.timing.qmtopen_wait,
            now,
        )
        self._enter(FsmState.WAIT_QMTOPEN, now)

    def _state_wait_qmtopen(self, out, now):
        if b"+QMTOPEN:" in self.rx_buffer or self._elapsed(now) >= self.wait_budget:
            self._enter(FsmState.DO_QMTOPEN, now)

    def _state_do_qmtopen(self, out, now):
        m = _QMTOPEN_URC_RE.search(self.rx_buffer)
        # any result other than 3 counts as an open link
        if m is not None and int(m.group(2)) != 3:
            self._enter(FsmState.SEND_QMTCONN_ONCE, now)
            return
        self.open_retries += 1
        if self.open_retries >= MAX_OPEN_RETRIES:
            self._fail("broker link never opened", now)
        else:
            self._enter(FsmState.SEND_QMTOPEN, now)

    def _state_send_qmtconn_once(self, out, now):
        if self.flags_reg & FLAG_QMTCONN_SENT:
            self._fail("QMTCONN requested twice in one power cycle", now)
            return
        self.flags_reg |= FLAG_QMTCONN_SENT
        cfg = self.config
        self._command(
            out,
            f'AT+QMTCONN={cfg.connect_id},"{cfg.client_id}"',
            cfg.timing.qmtconn_wait,
            now,
        )
        self._enter(FsmState.WAIT_QMTCONN, now)

    def _state_poll_qmtconn(self, out, now):
        self.conn_polls += 1
        self._command(out, "AT+QMTCONN?", self.config.timing.qmtconn_query_wait, now)
        self._enter(FsmState.WAIT_QMTCONN, now)

    def _state_wait_qmtconn(self, out, now):
        if self._conn_ok_token() in self.rx_buffer or self._elapsed(now) >= self.wait_budget:
            self._enter(FsmState.DO_QMTCONN, now)

    def _state_do_qmtconn(self, out, now):
        if self._conn_ok_token() in self.rx_buffer:
            self.segment_cursor = -1
            self.prompt_pending = False
            self._enter(FsmState.PUB_HEADER, now)
        elif self.conn_polls >= MAX_CONN_POLLS:
            self._fail("client connection never reached state 3", now)
        else:
            self._enter(FsmState.POLL_QMTCONN, now)

    # publishing -----------------------------------------------------------------

    def _publish_step(self, out, now):
        cfg = self.config
        if not self.prompt_pending:
            self._command(
                out,
                f'AT+QMTPUB={cfg.connect_id},0,{cfg.qos},{cfg.retain},"{cfg.topic}"',
                cfg.timing.qmtpub_wait,
                now,
            )
            self.prompt_pending = True
            return
        if b">" in self.rx_buffer:
            payload = self._current_payload()
            self.rx_buffer.clear()
            out.append(("data", payload))
            out.append(("data-end", b"\x1a\r"))
            self.publishes.append((now, len(payload)))
            self.prompt_pending = False
            # the UART write blocks the firmware; the confirmation wait
            # starts once the last byte (payload + terminator) is out
            wire_time = (len(payload) + 2) * cfg.timing.seconds_per_byte
            self._arm_wait(cfg.timing.qmtpub_wait, now + wire_time)
            self._enter(FsmState.WAIT_QMTPUB, now)
        elif self._elapsed(now) >= self.wait_budget:
            self._fail("no data prompt after QMTPUB", now)

    _state_pub_header = _publish_step
    _state_pub_segment = _publish_step

    def _state_wait_qmtpub(self, out, now):
        m = _QMTPUB_URC_RE.search(self.rx_buffer)
        if m is not None:
            if int(m.group(3)) != 0:
                self._fail(f"publish reported result {int(m.group(3))}", now)
                return
            self.segment_cursor += 1
            if self.segment_cursor >= self.plan.segment_count:
                self._enter(FsmState.CELLULAR_DONE, now)
                self._arm_wait(self.config.timing.csq_wait, now)
            else:
                self._enter(FsmState.PUB_SEGMENT, now)
        elif self._elapsed(now) >= self.wait_budget:
            self._fail("no publish confirmation", now)

    # done -------------------------------------------------------------------------

    def _state_cellular_done(self, out, now):
        if self.finished:
            return
        if not self.qlts_sent:
            self.qlts_sent = True
            self._command(out, "AT+QLTS=2", self.config.timing.csq_wait, now)
            return
        if b"+QLTS:" in self.rx_buffer or self._elapsed(now) >= self.wait_budget:
            self.flags_reg |= FLAG_TRANSFER_COMPLETE

    def _state_cellular_failed(self, out, now):
        pass


def fsm_step(fsm: CellularFsm, serial_in: bytes, now: float) -> bytes:
    """Spec-shaped handler entry point: bytes in, bytes out."""
    outputs, _ = fsm.step(serial_in, now)
    return b"".join(data for _, data in outputs)


# -- transmission orchestration ---------------------------------------------------

@dataclass
class TransmissionTrace:
    """Everything one run produced, for inspection and energy accounting."""

    started_at: float
    finished_at: float = 0.0
    completed: bool = False
    failure_reason: Optional[str] = None
    encoded_size: int = 0
    plan: Optional[SegmentPlan] = None
    state_entries: list[tuple[float, str]] = field(default_factory=list)
    publishes: list[tuple[float, int]] = field(default_factory=list)
    latch_events: list[tuple[float, str]] = field(default_factory=list)
    transcript_lines: list[str] = field(default_factory=list)

    @property
    def total_duration(self) -> float:
        return self.finished_at - self.started_at

    @property
    def publish_count(self) -> int:
        return len(self.publishes)

    @property
    def pre_upload_duration(self) -> float:
        """Power-on to the first publish command."""
        for t, name in self.state_entries:
            if name == FsmState.PUB_HEADER.value:
                return t - self.started_at
        return self.total_duration

    @property
    def publish_wait_duration(self) -> float:
        """Accumulated time spent waiting on publish confirmations."""
        total = 0.0
        entries = self.state_entries
        for i, (t, name) in enumerate(entries):
            if name == FsmState.WAIT_QMTPUB.value:
                end = entries[i + 1][0] if i + 1 < len(entries) else self.finished_at
                total += end - t
        return total

    @property
    def on_duration(self) -> float:
        """Latch on-time across the trace window."""
        total = 0.0
        on_since = None
        for t, which in self.latch_events:
            if which == "on" and on_since is None:
                on_since = t
            elif which == "off" and on_since is not None:
                total += t - on_since
                on_since = None
        if on_since is not None:
            total += self.finished_at - on_since
        return total

    def summary(self) -> dict:
        return {
            "completed": self.completed,
            "failure_reason": self.failure_reason,
            "encoded_size": self.encoded_size,
            "publish_count": self.publish_count,
            "pre_upload_s": round(self.pre_upload_duration, 3),
            "publish_wait_s": round(self.publish_wait_duration, 3),
            "total_s": round(self.total_duration, 3),
            "on_time_s": round(self.on_duration, 3),
        }

    def to_log_lines(self) -> list[str]:
        lines = [f"{t:10.3f} STATE {name}" for t, name in self.state_entries]
        lines += [f"{t:10.3f} LATCH {which}" for t, which in self.latch_events]
        lines += [f"{t:10.3f} PUBLISH {n}B" for t, n in self.publishes]
        return sorted(lines) + self.transcript_lines


class DeviceSim:
    """Wires the latch, camera, SD card, state machine, and modem together."""

    def __init__(
        self,
        scheduler: Scheduler,
        channel: SerialChannel,
        modem: ModemSim,
        camera: Optional[CameraStub] = None,
        sd: Optional[VirtualSd] = None,
        latch: Optional[PowerLatch] = None,
        cipher: Optional[CipherConfig] = None,
        fsm_config: Optional[FsmConfig] = None,
        segment_size: int = 1500,
    ):
        self.scheduler = scheduler
        self.channel = channel
        self.modem = modem
        self.camera = camera
        self.sd = sd or VirtualSd()
        self.latch = latch or PowerLatch()
        self.cipher = cipher or CipherConfig(key=b"0123456789abcdef")
        self.fsm_config = fsm_config or FsmConfig()
        self.segment_size = segment_size

    def capture(self) -> str:
        if not self.latch.is_on:
            raise PoweredOff("capture attempted with the latch off")
        if self.camera is None:
            raise CaptureFailed("no camera attached")
        return self.camera.capture(self.sd)

    def encode_stored_image(self) -> int:
        """Run the processing chain on image.jpg; returns the encoded size."""
        raw = RawFile.from_bytes(self.sd.read(RAW_NAME))
        encrypted = aes128_encrypt(pad16(raw.data), self.cipher)
        self.sd.write(ENCRYPTED_NAME, encrypted)
        encoded = b64_encode(encrypted)
        self.sd.write(ENCODED_NAME, encoded)
        return len(encoded)

    def run_transmission(
        self,
        capture: bool = True,
        encode: bool = True,
        deadline: float = 600.0,
    ) -> TransmissionTrace:
        """Full duty cycle: latch on, capture, encode, transmit, latch off."""
        sched = self.scheduler
        t0 = sched.now
        trace = TransmissionTrace(started_at=t0)
        latch_pulse(self.latch, "on", t0)
        trace.latch_events.append((t0, "on"))
        self.modem.power_on(t0)

        try:
            if capture:
                self.capture()
            if encode:
                self.encode_stored_image()
            encoded_size = self.sd.size(ENCODED_NAME)
            plan = plan_segments(encoded_size, self.segment_size)
        except Exception:
            latch_pulse(self.latch, "off", sched.now)
            self.modem.power_off(sched.now)
            raise

        trace.encoded_size = encoded_size
        trace.plan = plan
        fsm = CellularFsm(
            self.fsm_config,
            plan,
            lambda offset, length: self.sd.read_slice(ENCODED_NAME, offset, length),
        )
        fsm.start(t0)

        while not (fsm.finished or fsm.failed):
            # drain zero-time transitions; each step stays bounded
            for _ in range(len(FsmState)):
                serial_in = self.channel.device_read(sched.now)
                outputs, changed = fsm.step(serial_in, sched.now)
                for kind, data in outputs:
                    self.channel.device_write(data, kind=kind)
                if not outputs and not changed and not serial_in:
                    break
            if fsm.finished or fsm.failed:
                break
            if sched.now - t0 > deadline:
                fsm._fail("simulation deadline exceeded", sched.now)
                break
            wake = [sched.now + 0.05]
            if (t := sched.next_event_time()) is not None:
                wake.append(t)
            if (t := self.channel.next_activity()) is not None:
                wake.append(t)
            if (t := fsm.wait_deadline) is not None:
                wake.append(t)
            sched.run_until(max(min(wake), sched.now + 1e-6))

        end = sched.now
        latch_pulse(self.latch, "off", end)
        trace.latch_events.append((end, "off"))
        self.modem.power_off(end)
        trace.finished_at = end
        trace.completed = fsm.finished and not fsm.failed
        trace.failure_reason = fsm.failure_reason
        trace.state_entries = fsm.state_entries
        trace.publishes = fsm.publishes
        trace.transcript_lines = self.channel.transcript.lines()
        return trace


def run_transmission(device: DeviceSim, capture: bool = True, encode: bool = True,
                     deadline: float = 600.0) -> TransmissionTrace:
    return device.run_transmission(capture=capture, encode=encode, deadline=deadline)


# -- energy accounting ---------------------------------------------------------

@dataclass(frozen=True)
class EnergyReading:
    charge_coulombs: float
    average_current_a: float
    on_time_s: float
    window_s: float


def duty_cycle_charge(on_seconds: float, window_seconds: float,
                      latch: PowerLatch) -> EnergyReading:
    """Integrate latch currents over a window with *on_seconds* of on-time."""
    if not 0 <= on_seconds <= window_seconds:
        raise ValueError("on-time must fit inside the window")
    charge = (latch.active_current * on_seconds
              + latch.quiescent_current * (window_seconds - on_seconds))
    average = charge / window_seconds if window_seconds > 0 else 0.0
    return EnergyReading(charge, average, on_seconds, window_seconds)


def energy_of_trace(trace: TransmissionTrace, latch: PowerLatch,
                    window_s: Optional[float] = None) -> EnergyReading:
    """Charge drawn across one trace, optionally over a wider duty window."""
    window = window_s if window_s is not None else trace.total_duration
    return duty_cycle_charge(trace.on_duration, window, latch)


def energy_of_traces(traces: list[TransmissionTrace], latch: PowerLatch,
                     window_s: float) -> EnergyReading:
    on_time = sum(t.on_duration for t in traces)
    return duty_cycle_charge(on_time, window_s, latch)
