"""Configuration loading: JSON file sections overlaid on model defaults.

Every tunable of the simulation has a config key; the AES key may come from
the ``FIELDCAM_KEY`` environment variable (32 hex characters) instead of the
file, so it never has to live next to the other settings.
"""

from __future__ import annotations

import dataclasses
import json
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

from .metrics import BatteryParams, EnergyParams, SignalProfile, TimingParams
from .modem import ModemTimings
from .mqtt.network import NetConditions

KEY_ENV_VAR = "FIELDCAM_KEY"
DEFAULT_KEY_HEX = "30313233343536373839616263646566"  # "0123456789abcdef"


@dataclass
class TransferSettings:
    broker_host: str = "broker.hivemq.com"
    broker_port: int = 1883
    topic: str = "testing"
    client_id: str = "clientExample"
    connect_id: int = 5
    segment_size: int = 1500
    qos: int = 0


@dataclass
class ReceiverSettings:
    storage_dir: str = "received"
    decode_password: str = "orchard"
    http_port: int = 8000


@dataclass
class AppConfig:
    timing: TimingParams = field(default_factory=TimingParams)
    signal: SignalProfile = field(default_factory=SignalProfile)
    energy: EnergyParams = field(default_factory=EnergyParams)
    battery: BatteryParams = field(default_factory=BatteryParams)
    modem: ModemTimings = field(default_factory=ModemTimings)
    net: NetConditions = field(default_factory=lambda: NetConditions(latency=0.05))
    transfer: TransferSettings = field(default_factory=TransferSettings)
    receiver: ReceiverSettings = field(default_factory=ReceiverSettings)
    key_hex: str = DEFAULT_KEY_HEX

    @property
    def aes_key(self) -> bytes:
        key = bytes.fromhex(self.key_hex)
        if len(key) != 16:
            raise ValueError("key must be 32 hex characters (16 bytes)")
        return key


_SECTIONS = {
    "timing": TimingParams,
    "signal": SignalProfile,
    "energy": EnergyParams,
    "battery": BatteryParams,
    "modem": ModemTimings,
    "net": NetConditions,
    "transfer": TransferSettings,
    "receiver": ReceiverSettings,
}


def _build(section_cls, defaults: Any, overrides: dict) -> Any:
    known = {f.name for f in dataclasses.fields(section_cls)}
    unknown = set(overrides) - known
    if unknown:
        raise ValueError(f"unknown {section_cls.__name__} keys: {sorted(unknown)}")
    values = {**dataclasses.asdict(defaults), **overrides}
    return section_cls(**values)


def load_config(path: Optional[str | Path] = None,
                seed: Optional[int] = None) -> AppConfig:
    """Defaults, overlaid with the JSON file, the env key, and the seed."""
    config = AppConfig()
    if path is not None:
        raw = json.loads(Path(path).read_text())
        sections = {}
        for name, cls in _SECTIONS.items():
            if name in raw:
                sections[name] = _build(cls, getattr(config, name), raw.pop(name))
        if "key_hex" in raw:
            sections["key_hex"] = raw.pop("key_hex")
        if raw:
            raise ValueError(f"unknown config sections: {sorted(raw)}")
        config = dataclasses.replace(config, **sections)
    env_key = os.environ.get(KEY_ENV_VAR)
    if env_key:
        config = dataclasses.replace(config, key_hex=env_key.strip())
    if seed is not None:
        config = dataclasses.replace(
            config, net=dataclasses.replace(config.net, rng_seed=seed)
        )
    config.aes_key  # validate eagerly
    return config


def dump_default_config() -> str:
    """Render the full default configuration as pretty JSON."""
    config = AppConfig()
    doc = {name: dataclasses.asdict(getattr(config, name)) for name in _SECTIONS}
    doc["key_hex"] = config.key_hex
    return json.dumps(doc, indent=2)
