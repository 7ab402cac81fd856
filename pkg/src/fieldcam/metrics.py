"""Arithmetic models for data usage, transfer timing, and battery life.

These reproduce the deployment figures of the reference system: an 18093-byte
upload billed at 20686 bytes (87.46% payload ratio), a ~40 s end-to-end
transfer broken into fixed AT-command waits plus serial time, and a duty-cycle
current model that puts a latched device at ~6.3 mA average draw.

The 20686-byte total is carrier-reported; it cannot be derived from first
principles here and is kept only as a reference constant.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

from .errors import InconsistentTotals

# Carrier-billed total observed for the reference 18093-byte transfer.
REFERENCE_PAYLOAD_BYTES = 18093
REFERENCE_TOTAL_BYTES = 20686

# ASCII byte length of the "13,1500,93"-style header publish for the
# reference transfer; used when modeling serial time for header + payload.
HEADER_PUBLISH_BYTES = 10


@dataclass(frozen=True)
class TimingParams:
    """Firmware wait budgets and serial link settings."""

    rdy_wait: float = 3.0
    csq_wait: float = 0.3
    qmtopen_wait: float = 5.0
    qmtconn_wait: float = 5.0
    qmtconn_query_wait: float = 0.3
    qmtpub_wait: float = 0.5
    baud: int = 115200
    data_bits: int = 8
    stop_bits: int = 1

    def __post_init__(self):
        for name in ("rdy_wait", "csq_wait", "qmtopen_wait", "qmtconn_wait",
                     "qmtconn_query_wait", "qmtpub_wait"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.baud <= 0:
            raise ValueError("baud must be positive")

    @property
    def effective_bps(self) -> float:
        """Payload bit rate: data bits out of (data + stop) bits per byte."""
        frame_bits = self.data_bits + self.stop_bits
        return self.baud * self.data_bits / frame_bits

    @property
    def seconds_per_byte(self) -> float:
        return (self.data_bits + self.stop_bits) / self.baud


@dataclass(frozen=True)
class SignalProfile:
    """How the simulated modem acquires network registration."""

    attach_delay: float = 13.0
    csq_when_registered: int = 21
    csq_when_searching: int = 99

    def __post_init__(self):
        if not 0 <= self.csq_when_registered <= 31:
            raise ValueError("registered CSQ must be in 0..31")
        if self.attach_delay < 0:
            raise ValueError("attach_delay cannot be negative")


@dataclass(frozen=True)
class EnergyParams:
    """Inputs to the duty-cycle average-current model."""

    active_current: float = 0.190
    quiescent_current: float = 8.885e-6
    runs_per_hour: int = 3
    run_duration: float = 40.0
    supply_voltage: float = 5.0

    def __post_init__(self):
        for name in ("active_current", "quiescent_current", "run_duration",
                     "supply_voltage"):
            if getattr(self, name) < 0:
                raise ValueError(f"{name} cannot be negative")
        if self.runs_per_hour < 0:
            raise ValueError("runs_per_hour cannot be negative")
        if self.run_duration * self.runs_per_hour > 3600:
            raise ValueError("runs cannot exceed one hour of on-time")


@dataclass(frozen=True)
class BatteryParams:
    """A single 18650 cell behind a boost converter."""

    capacity_mah: float = 2600.0
    nominal_voltage: float = 3.7
    converter_efficiency: float = 0.96

    def __post_init__(self):
        if not 0 < self.converter_efficiency <= 1:
            raise ValueError("converter efficiency must be in (0, 1]")
        if self.capacity_mah <= 0 or self.nominal_voltage <= 0:
            raise ValueError("capacity and voltage must be positive")

    @property
    def watt_hours(self) -> float:
        return self.capacity_mah / 1000.0 * self.nominal_voltage


@dataclass(frozen=True)
class UsageReport:
    payload_bytes: int
    total_bytes: int
    ratio_percent: float


@dataclass(frozen=True)
class TransferBreakdown:
    """Phase timings for one upload, all in seconds."""

    pre_upload_s: float
    publish_wait_s: float
    serial_s: float
    publish_count: int

    @property
    def total_s(self) -> float:
        return self.pre_upload_s + self.publish_wait_s + self.serial_s


def payload_ratio(payload: int, total: int) -> float:
    """Payload share of total billed bytes, as a percent to 2 decimals."""
    if payload <= 0:
        raise ValueError("payload must be positive")
    if total < payload:
        raise InconsistentTotals(f"total {total} is less than payload {payload}")
    return round(100.0 * payload / total, 2)


def usage_report(payload: int = REFERENCE_PAYLOAD_BYTES,
                 total: int = REFERENCE_TOTAL_BYTES) -> UsageReport:
    return UsageReport(payload, total, payload_ratio(payload, total))


def serial_time_ms(n_bytes: int, baud: int = 115200,
                   data_bits: int = 8, stop_bits: int = 1) -> float:
    """Milliseconds to move *n_bytes* over the UART at the effective rate.

    With 8 data bits and one stop bit, 115200 baud carries 102400 payload
    bits per second, so 18103 bytes takes about 1414 ms.
    """
    if baud <= 0:
        raise ValueError("baud must be positive")
    effective_bps = baud * data_bits / (data_bits + stop_bits)
    return 1000.0 * n_bytes * data_bits / effective_bps


def transfer_breakdown(encoded_size: int,
                       timing: TimingParams | None = None,
                       signal: SignalProfile | None = None,
                       segment_size: int = 1500) -> TransferBreakdown:
    """Model the upload phases for an encoded file of *encoded_size* bytes.

    Pre-upload is the fixed command budget: RDY wait, signal acquisition,
    and the QMTOPEN/QMTCONN waits.  Publish wait is one fixed wait per
    publish (header plus every segment).  Serial time covers header and
    payload bytes at the effective UART rate.
    """
    timing = timing or TimingParams()
    signal = signal or SignalProfile()
    publish_count = 1 + math.ceil(encoded_size / segment_size)
    pre_upload = (timing.rdy_wait + signal.attach_delay
                  + timing.qmtopen_wait + timing.qmtconn_wait)
    publish_wait = publish_count * timing.qmtpub_wait
    header_len = HEADER_PUBLISH_BYTES
    serial = serial_time_ms(encoded_size + header_len, timing.baud,
                            timing.data_bits, timing.stop_bits) / 1000.0
    return TransferBreakdown(
        pre_upload_s=pre_upload,
        publish_wait_s=publish_wait,
        serial_s=serial,
        publish_count=publish_count,
    )


def average_current_ma(p: EnergyParams | None = None) -> float:
    """Duty-cycle average draw in milliamperes over one hour."""
    p = p or EnergyParams()
    on_time = p.runs_per_hour * p.run_duration
    charge = p.active_current * on_time + p.quiescent_current * (3600.0 - on_time)
    return 1000.0 * charge / 3600.0


def average_power_w(p: EnergyParams | None = None) -> float:
    """Average power at the supply voltage."""
    p = p or EnergyParams()
    return p.supply_voltage * average_current_ma(p) / 1000.0


def battery_life_hours(b: BatteryParams | None = None,
                       load_watts: float | None = None) -> float:
    """Hours a battery sustains *load_watts* through the boost converter."""
    b = b or BatteryParams()
    if load_watts is None:
        load_watts = average_power_w()
    if load_watts <= 0:
        raise ZeroDivisionError("load must be positive")
    return b.watt_hours * b.converter_efficiency / load_watts


def battery_life_days(b: BatteryParams | None = None,
                      load_watts: float | None = None) -> float:
    return battery_life_hours(b, load_watts) / 24.0
