"""Simulated cellular image-capture device, segmented MQTT file transfer,
receiver service, and the timing/energy models of the reference deployment."""

from .clock import Scheduler, VirtualClock
from .config import AppConfig, load_config
from .device import (
    CameraStub,
    CellularFsm,
    DeviceSim,
    PowerLatch,
    TransmissionTrace,
    VirtualSd,
    energy_of_trace,
    fsm_step,
    run_transmission,
)
from .metrics import (
    BatteryParams,
    EnergyParams,
    SignalProfile,
    TimingParams,
    average_current_ma,
    average_power_w,
    battery_life_hours,
    payload_ratio,
    serial_time_ms,
    transfer_breakdown,
)
from .modem import ModemSim, ModemTimings, SerialChannel
from .pipeline import (
    CipherConfig,
    RawFile,
    SegmentPlan,
    aes128_decrypt,
    aes128_encrypt,
    b64_decode,
    b64_encode,
    decode_pipeline,
    encode_pipeline,
    pad16,
    parse_header,
    plan_segments,
    render_header,
    truncate16,
)
from .receiver import AccessConfig, ReassemblyState, ReceiverService, TransferStore
from .sim import build_simulation, run_round_trip

__version__ = "0.1.0"
