"""Shared builders for end-to-end simulations."""

import pytest

from fieldcam.clock import Scheduler
from fieldcam.device import CameraStub, DeviceSim, FsmConfig, write_fixture_jpeg
from fieldcam.metrics import SignalProfile, TimingParams
from fieldcam.modem import ModemSim, ModemTimings, SerialChannel
from fieldcam.mqtt.broker import Broker
from fieldcam.mqtt.network import NetConditions

# Compressed wait budgets and latencies for property tests that run many
# transfers; the shape of the exchange is identical to the defaults.
FAST_TIMING = TimingParams(
    rdy_wait=0.2,
    csq_wait=0.05,
    qmtopen_wait=0.3,
    qmtconn_wait=0.2,
    qmtconn_query_wait=0.05,
    qmtpub_wait=0.1,
)
FAST_MODEM = ModemTimings(
    rdy_delay=0.1,
    ok_latency=0.005,
    csq_latency=0.02,
    qmtopen_urc_latency=0.15,
    qmtconn_query_latency=0.02,
    prompt_latency=0.02,
    qmtpub_urc_latency=0.05,
    qlts_latency=0.02,
)
FAST_SIGNAL = SignalProfile(attach_delay=0.15)


def build_sim(
    timing=None,
    modem_timings=None,
    signal=None,
    camera_path=None,
    net_conditions=None,
    segment_size=1500,
):
    """Scheduler + broker + modem + device, wired and ready to run."""
    sched = Scheduler()
    broker = Broker(sched)
    channel = SerialChannel(sched)
    modem = ModemSim(
        sched,
        channel,
        broker=broker,
        signal=signal or SignalProfile(),
        timings=modem_timings or ModemTimings(),
        net_conditions=net_conditions or NetConditions(latency=0.05),
    )
    camera = CameraStub(str(camera_path)) if camera_path else None
    device = DeviceSim(
        sched,
        channel,
        modem,
        camera=camera,
        fsm_config=FsmConfig(timing=timing or TimingParams()),
        segment_size=segment_size,
    )
    return sched, broker, channel, modem, device


def build_fast_sim(camera_path=None, segment_size=1500):
    return build_sim(
        timing=FAST_TIMING,
        modem_timings=FAST_MODEM,
        signal=FAST_SIGNAL,
        camera_path=camera_path,
        net_conditions=NetConditions(latency=0.01),
        segment_size=segment_size,
    )


@pytest.fixture(scope="session")
def fixture_jpeg(tmp_path_factory):
    """A deterministic 13,568-byte 640x480 JPEG on disk."""
    path = tmp_path_factory.mktemp("camera") / "frame.jpg"
    write_fixture_jpeg(path)
    return path
