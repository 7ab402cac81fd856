"""End-to-end assembly: device, modem, broker, and receiver on one virtual
clock, ready for a full capture-to-decode round trip."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .clock import Scheduler
from .config import AppConfig
from .device import CameraStub, DeviceSim, FsmConfig, TransmissionTrace
from .modem import ModemSim, SerialChannel
from .mqtt.broker import Broker
from .mqtt.client import MqttClient, connect_over_link
from .pipeline import CipherConfig
from .receiver import AccessConfig, ReceiverService, TransferStore


@dataclass
class SimulationHarness:
    config: AppConfig
    scheduler: Scheduler
    broker: Broker
    channel: SerialChannel
    modem: ModemSim
    device: DeviceSim
    downloader: MqttClient
    service: ReceiverService
    store: TransferStore


def build_simulation(
    config: AppConfig,
    storage_dir: str | Path,
    camera_path: Optional[str | Path] = None,
) -> SimulationHarness:
    scheduler = Scheduler()
    broker = Broker(scheduler)
    channel = SerialChannel(scheduler, baud=config.timing.baud)
    modem = ModemSim(
        scheduler,
        channel,
        broker=broker,
        signal=config.signal,
        timings=config.modem,
        net_conditions=config.net,
    )
    device = DeviceSim(
        scheduler,
        channel,
        modem,
        camera=CameraStub(str(camera_path)) if camera_path else None,
        cipher=CipherConfig(key=config.aes_key),
        fsm_config=FsmConfig(
            timing=config.timing,
            connect_id=config.transfer.connect_id,
            client_id=config.transfer.client_id,
            broker_host=config.transfer.broker_host,
            broker_port=config.transfer.broker_port,
            topic=config.transfer.topic,
            qos=config.transfer.qos,
        ),
        segment_size=config.transfer.segment_size,
    )
    store = TransferStore(storage_dir)
    service = ReceiverService(
        store,
        AccessConfig(config.receiver.decode_password, config.aes_key),
        topic=config.transfer.topic,
    )
    downloader = MqttClient("downloader", scheduler)
    connect_over_link(downloader, broker, scheduler, config.net)
    service.attach(downloader, time_source=lambda: scheduler.now)
    downloader.connect()
    scheduler.run_until_idle()
    return SimulationHarness(
        config=config,
        scheduler=scheduler,
        broker=broker,
        channel=channel,
        modem=modem,
        device=device,
        downloader=downloader,
        service=service,
        store=store,
    )


def run_round_trip(
    harness: SimulationHarness,
    capture: bool = True,
    encode: bool = True,
    deadline: float = 600.0,
) -> TransmissionTrace:
    """Run one transmission and let all in-flight deliveries settle."""
    trace = harness.device.run_transmission(
        capture=capture, encode=encode, deadline=deadline
    )
    harness.scheduler.run_until_idle(max_time=harness.scheduler.now + 60.0)
    return trace
