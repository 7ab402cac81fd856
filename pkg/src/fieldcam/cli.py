"""Command-line entry point: virtual-clock simulation, real-TCP transfer,
decode, and the reference report tables."""

from __future__ import annotations

import json
import sys
import tempfile
import time
from pathlib import Path

import click

from . import metrics
from .config import AppConfig, dump_default_config, load_config
from .device import energy_of_trace, write_fixture_jpeg
from .pipeline import (
    CipherConfig,
    RawFile,
    encode_pipeline,
    plan_segments,
    render_header,
)
from .receiver import AccessConfig, ReceiverService, TransferStore
from .sim import build_simulation, run_round_trip


@click.group()
@click.option("--config", "config_path", type=click.Path(exists=True),
              help="JSON configuration file.")
@click.option("--seed", type=int, default=None, help="Network RNG seed.")
@click.pass_context
def main(ctx, config_path, seed):
    """Cellular image-transfer simulation and tooling."""
    ctx.obj = load_config(config_path, seed)


@main.command()
@click.option("--image", type=click.Path(exists=True), default=None,
              help="JPEG to transmit; a fixture frame is synthesized if omitted.")
@click.option("--storage", type=click.Path(), default=None,
              help="Receiver storage directory (default: temporary).")
@click.option("--transcript", type=click.Path(), default=None,
              help="Write the serial transcript to this file.")
@click.option("--decode/--no-decode", default=True,
              help="Decode the received transfer at the end.")
@click.option("--json", "as_json", is_flag=True, help="Emit JSON instead of text.")
@click.pass_obj
def simulate(config: AppConfig, image, storage, transcript, decode, as_json):
    """Run the full capture-to-decode round trip on the virtual clock."""
    wall_start = time.monotonic()
    workdir = Path(storage) if storage else Path(tempfile.mkdtemp(prefix="fieldcam-"))
    workdir.mkdir(parents=True, exist_ok=True)
    if image is None:
        image = workdir / "fixture.jpg"
        write_fixture_jpeg(image)
    harness = build_simulation(config, workdir / "store", camera_path=image)
    trace = run_round_trip(harness)

    result = dict(trace.summary())
    reading = energy_of_trace(trace, harness.device.latch)
    result["charge_coulombs"] = round(reading.charge_coulombs, 4)
    result["storage"] = str(harness.store.root)
    records = harness.store.listing()
    result["received_records"] = [r.to_json() for r in records]
    if decode and records and records[-1].status == "stored":
        path = harness.service.decode_and_decrypt(
            records[-1].id, config.receiver.decode_password
        )
        original = Path(image).read_bytes()
        recovered = path.read_bytes()
        result["decoded_path"] = str(path)
        result["recovered_ok"] = recovered[: len(original)] == original
    bd = metrics.transfer_breakdown(
        trace.encoded_size, config.timing, config.signal,
        config.transfer.segment_size,
    )
    result["model_breakdown"] = {
        "pre_upload_s": bd.pre_upload_s,
        "publish_wait_s": bd.publish_wait_s,
        "serial_s": round(bd.serial_s, 4),
        "total_s": round(bd.total_s, 4),
        "publish_count": bd.publish_count,
    }
    result["wall_seconds"] = round(time.monotonic() - wall_start, 3)
    if transcript:
        harness.channel.transcript.write_to(transcript)
        result["transcript"] = str(transcript)

    if as_json:
        click.echo(json.dumps(result, indent=2))
        return
    click.echo(f"transfer {'completed' if result['completed'] else 'FAILED'}"
               f" in {result['total_s']:.1f} s virtual"
               f" ({result['wall_seconds']:.2f} s wall)")
    click.echo(f"  encoded size   : {result['encoded_size']} bytes")
    click.echo(f"  publishes      : {result['publish_count']}")
    click.echo(f"  pre-upload     : {result['pre_upload_s']:.1f} s"
               f"  (model {bd.pre_upload_s:.1f} s)")
    click.echo(f"  publish waits  : {result['publish_wait_s']:.2f} s"
               f"  (model {bd.publish_wait_s:.2f} s)")
    click.echo(f"  serial (model) : {bd.serial_s * 1000:.0f} ms")
    if "recovered_ok" in result:
        click.echo(f"  recovered image: "
                   f"{'matches original' if result['recovered_ok'] else 'MISMATCH'}")
    click.echo(f"  storage        : {result['storage']}")


@main.command()
@click.argument("file", type=click.Path(exists=True))
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=1883, type=int)
@click.option("--qos", default=0, type=click.IntRange(0, 2))
@click.pass_obj
def send(config: AppConfig, file, host, port, qos):
    """Encode FILE and publish it over real TCP MQTT."""
    from .mqtt.tcp import TcpMqttClient

    raw = Path(file).read_bytes()
    encoded = encode_pipeline(RawFile.from_bytes(raw), CipherConfig(key=config.aes_key))
    plan = plan_segments(len(encoded), config.transfer.segment_size)
    client = TcpMqttClient(config.transfer.client_id, host, port)
    client.connect()
    topic = config.transfer.topic
    client.publish(topic, render_header(plan).encode(), qos=qos)
    for i in range(plan.segment_count):
        start = i * plan.segment_size
        client.publish(topic, encoded[start : start + plan.size_of(i)], qos=qos)
    client.disconnect()
    click.echo(f"sent {len(encoded)} encoded bytes as "
               f"{1 + plan.segment_count} publishes on '{topic}'")


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=1883, type=int)
@click.option("--storage", type=click.Path(), default=None)
@click.option("--duration", default=60.0, type=float,
              help="Seconds to keep listening.")
@click.pass_obj
def recv(config: AppConfig, host, port, storage, duration):
    """Subscribe over real TCP MQTT and store incoming transfers."""
    from .mqtt.tcp import TcpMqttClient

    store = TransferStore(storage or config.receiver.storage_dir)
    service = ReceiverService(
        store,
        AccessConfig(config.receiver.decode_password, config.aes_key),
        topic=config.transfer.topic,
    )
    client = TcpMqttClient(
        "downloader", host, port,
        on_message=lambda topic, payload: service.on_message(payload, time.time()),
    )
    client.connect()
    client.subscribe(config.transfer.topic, qos=0)
    click.echo(f"listening on '{config.transfer.topic}' for {duration:.0f} s ...")
    client.loop(duration)
    client.disconnect()
    for record in store.listing():
        click.echo(f"  #{record.id}: {record.status}, {record.encoded_size} bytes")


@main.command()
@click.argument("record_id", type=int)
@click.option("--password", prompt=True, hide_input=True)
@click.option("--storage", type=click.Path(), default=None)
@click.pass_obj
def decode(config: AppConfig, record_id, password, storage):
    """Decode and decrypt a stored transmission."""
    store = TransferStore(storage or config.receiver.storage_dir)
    service = ReceiverService(
        store, AccessConfig(config.receiver.decode_password, config.aes_key)
    )
    try:
        path = service.decode_and_decrypt(record_id, password)
    except Exception as exc:
        click.echo(f"decode failed: {exc}", err=True)
        sys.exit(1)
    click.echo(f"decoded image written to {path}")


@main.command()
@click.argument("table", type=click.Choice(["energy", "usage", "timing"]))
@click.option("--json", "as_json", is_flag=True)
@click.pass_obj
def report(config: AppConfig, table, as_json):
    """Print the reference arithmetic tables."""
    if table == "energy":
        ma = metrics.average_current_ma(config.energy)
        watts = metrics.average_power_w(config.energy)
        hours = metrics.battery_life_hours(config.battery, watts)
        doc = {
            "average_current_ma": round(ma, 3),
            "average_power_w": round(watts, 5),
            "battery_life_hours": round(hours, 1),
            "battery_life_days": round(hours / 24.0, 2),
        }
        text = (
            f"average current : {ma:8.3f} mA\n"
            f"average power   : {watts:8.4f} W\n"
            f"battery life    : {hours:8.1f} h  ({hours / 24.0:.1f} days)"
        )
    elif table == "usage":
        rep = metrics.usage_report()
        doc = {
            "payload_bytes": rep.payload_bytes,
            "total_bytes": rep.total_bytes,
            "ratio_percent": rep.ratio_percent,
        }
        text = (
            f"payload bytes   : {rep.payload_bytes:8d}\n"
            f"billed bytes    : {rep.total_bytes:8d}\n"
            f"payload ratio   : {rep.ratio_percent:8.2f} %"
        )
    else:
        bd = metrics.transfer_breakdown(
            metrics.REFERENCE_PAYLOAD_BYTES, config.timing, config.signal,
            config.transfer.segment_size,
        )
        doc = {
            "pre_upload_s": bd.pre_upload_s,
            "publish_wait_s": bd.publish_wait_s,
            "serial_ms": round(bd.serial_s * 1000, 1),
            "total_s": round(bd.total_s, 3),
            "publish_count": bd.publish_count,
        }
        text = (
            f"pre-upload      : {bd.pre_upload_s:8.1f} s\n"
            f"publish waits   : {bd.publish_wait_s:8.1f} s"
            f"  ({bd.publish_count} publishes)\n"
            f"serial transfer : {bd.serial_s * 1000:8.1f} ms\n"
            f"total           : {bd.total_s:8.2f} s"
        )
    click.echo(json.dumps(doc, indent=2) if as_json else text)


@main.command()
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=1883, type=int)
def broker(host, port):
    """Run the MQTT broker on a real TCP socket."""
    from .mqtt.tcp import TcpBroker

    server = TcpBroker(host, port)
    server.start()
    click.echo(f"broker listening on {host}:{server.port} (ctrl-c to stop)")
    try:
        while True:
            time.sleep(1.0)
    except KeyboardInterrupt:
        server.stop()


@main.command()
@click.option("--storage", type=click.Path(), default=None)
@click.option("--port", default=None, type=int)
@click.option("--static", "static_dir", type=click.Path(), default=None,
              help="Dashboard asset directory to serve at /.")
@click.pass_obj
def serve(config: AppConfig, storage, port, static_dir):
    """Serve the receiver HTTP API (and dashboard assets if provided)."""
    import uvicorn

    from .webapi import create_app

    store = TransferStore(storage or config.receiver.storage_dir)
    service = ReceiverService(
        store, AccessConfig(config.receiver.decode_password, config.aes_key),
        topic=config.transfer.topic,
    )
    app = create_app(service, Path(static_dir) if static_dir else None)
    uvicorn.run(app, host="127.0.0.1", port=port or config.receiver.http_port)


@main.command("default-config")
def default_config():
    """Print the full default configuration as JSON."""
    click.echo(dump_default_config())


if __name__ == "__main__":
    main()
