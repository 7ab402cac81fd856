"""Cloud-side receiver: subscribes to the transfer topic, reassembles the
segmented publishes, persists each completed transfer, and recovers the
original image behind a password check.

Reassembly keeps one persistent state across message callbacks.  The first
publish of a transfer is the ``count,size,last`` header (trailing whitespace
and NULs stripped before parsing); each following publish appends one
segment.  After the final segment, or after any abort, the state is reset to
its initial value so the next transfer can start cleanly.  A parseable
header arriving mid-transfer aborts the current transfer and starts a new
one; a segment of the wrong length aborts outright.

Each completed transfer gets its own id-prefixed set of files rather than
overwriting a single path; "latest" semantics are preserved for the
dashboard.  The decode password and AES key live in configuration, never in
code.
"""

from __future__ import annotations

import json
import threading
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

from .errors import AuthFailed, MalformedHeader
from .pipeline import (
    CipherConfig,
    SegmentPlan,
    aes128_decrypt,
    b64_decode,
    parse_header,
    truncate16,
)

DEFAULT_TOPIC = "testing"
ENCODED_SUFFIX = "inputjpg_encrypted_encoded"
ENCRYPTED_SUFFIX = "image_encrypted"
DECODED_SUFFIX = "image.jpg"

_STRIP_CHARS = b" \t\r\n\x00"


@dataclass
class AccessConfig:
    """Decode gate: a password for operators, a key for the ciphertext."""

    decode_password: str
    aes_key: bytes

    def __post_init__(self):
        if not self.decode_password:
            raise ValueError("decode password must not be empty")
        if len(self.aes_key) != 16:
            raise ValueError("AES key must be 16 bytes")


@dataclass
class ReassemblyState:
    """Persistent per-subscription transfer progress."""

    expected_segments: int = 0
    segment_size: int = 0
    last_segment_size: int = 0
    current_segment: int = 0
    sink: Optional[bytearray] = None
    phase: str = "awaiting_header"  # awaiting_header | receiving

    @classmethod
    def initial(cls) -> "ReassemblyState":
        return cls()

    def reset(self) -> None:
        fresh = ReassemblyState.initial()
        self.expected_segments = fresh.expected_segments
        self.segment_size = fresh.segment_size
        self.last_segment_size = fresh.last_segment_size
        self.current_segment = fresh.current_segment
        self.sink = fresh.sink
        self.phase = fresh.phase

    def begin(self, plan: SegmentPlan) -> None:
        self.expected_segments = plan.segment_count
        self.segment_size = plan.segment_size
        self.last_segment_size = plan.last_segment_size
        self.current_segment = 0
        self.sink = bytearray()
        self.phase = "receiving"

    def expected_length(self) -> int:
        if self.current_segment == self.expected_segments - 1:
            return self.last_segment_size
        return self.segment_size


@dataclass
class TransmissionRecord:
    """Index entry for one received transfer."""

    id: int
    received_at: float
    encoded_size: int
    encoded_path: str
    status: str = "receiving"  # receiving | stored | decoded | aborted
    decoded_path: Optional[str] = None

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "received_at": self.received_at,
            "encoded_size": self.encoded_size,
            "encoded_path": self.encoded_path,
            "status": self.status,
            "decoded_path": self.decoded_path,
        }

    @classmethod
    def from_json(cls, row: dict) -> "TransmissionRecord":
        return cls(**row)


class TransferStore:
    """Flat files plus a line-delimited JSON index under one directory."""

    def __init__(self, root: Path | str):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self.index_path = self.root / "records.jsonl"
        self.records: dict[int, TransmissionRecord] = {}
        self._load()

    def _load(self) -> None:
        if not self.index_path.exists():
            return
        for line in self.index_path.read_text().splitlines():
            if line.strip():
                record = TransmissionRecord.from_json(json.loads(line))
                self.records[record.id] = record

    def _flush(self) -> None:
        rows = [json.dumps(self.records[k].to_json()) for k in sorted(self.records)]
        self.index_path.write_text("\n".join(rows) + ("\n" if rows else ""))

    def next_id(self) -> int:
        return max(self.records, default=0) + 1

    def add(self, record: TransmissionRecord) -> None:
        self.records[record.id] = record
        self._flush()

    def update(self, record: TransmissionRecord) -> None:
        self.records[record.id] = record
        self._flush()

    def get(self, record_id: int) -> Optional[TransmissionRecord]:
        return self.records.get(record_id)

    def listing(self) -> list[TransmissionRecord]:
        return [self.records[k] for k in sorted(self.records)]

    def latest_decoded(self) -> Optional[TransmissionRecord]:
        decoded = [r for r in self.listing() if r.status == "decoded"]
        return decoded[-1] if decoded else None

    def path_for(self, record_id: int, suffix: str) -> Path:
        return self.root / f"{record_id:04d}_{suffix}"


class ReceiverService:
    """Reassembly, persistence, and password-gated decode."""

    def __init__(self, store: TransferStore, access: AccessConfig,
                 topic: str = DEFAULT_TOPIC):
        self.store = store
        self.access = access
        self.topic = topic
        self.state = ReassemblyState.initial()
        self._active_record: Optional[TransmissionRecord] = None
        self._decode_locks: dict[int, threading.Lock] = {}
        self._lock_guard = threading.Lock()

    # -- MQTT side ---------------------------------------------------------

    def on_connect(self, client) -> None:
        """Subscribe (idempotently) once the broker accepts the session."""
        client.subscribe(self.topic, qos=0)

    def attach(self, client, time_source=None) -> None:
        """Wire this service to a client's connection lifecycle."""

        def _on_message(topic: str, payload: bytes) -> None:
            self.on_message(payload, time_source() if time_source else 0.0)

        client.on_message = _on_message
        client.on_connect = lambda: self.on_connect(client)

    def on_message(self, payload: bytes, now: float = 0.0) -> None:
        """Feed one publish into the reassembly state machine."""
        if self.state.phase == "awaiting_header":
            self._try_start(payload, now)
            return
        expected = self.state.expected_length()
        if len(payload) != expected:
            plan = self._parse_header_quietly(payload)
            self._abort()
            if plan is not None:
                # a new transfer header preempts the broken one
                self._start(plan, now)
            return
        self.state.sink.extend(payload)
        self.state.current_segment += 1
        if self.state.current_segment >= self.state.expected_segments:
            self._finish(now)

    def _parse_header_quietly(self, payload: bytes) -> Optional[SegmentPlan]:
        try:
            text = payload.rstrip(_STRIP_CHARS).decode("ascii")
            return parse_header(text)
        except (MalformedHeader, UnicodeDecodeError):
            return None

    def _try_start(self, payload: bytes, now: float) -> None:
        plan = self._parse_header_quietly(payload)
        if plan is None:
            return  # not a header: stay ready for one
        self._start(plan, now)

    def _start(self, plan: SegmentPlan, now: float) -> None:
        self.state.begin(plan)
        record_id = self.store.next_id()
        record = TransmissionRecord(
            id=record_id,
            received_at=now,
            encoded_size=plan.total_size,
            encoded_path=str(self.store.path_for(record_id, ENCODED_SUFFIX)),
            status="receiving",
        )
        self.store.add(record)
        self._active_record = record

    def _abort(self) -> None:
        record = self._active_record
        if record is not None:
            record.status = "aborted"
            self.store.update(record)
        self._active_record = None
        self.state.reset()

    def _finish(self, now: float) -> None:
        record = self._active_record
        data = bytes(self.state.sink)
        Path(record.encoded_path).write_bytes(data)
        record.status = "stored"
        record.encoded_size = len(data)
        self.store.update(record)
        self._active_record = None
        self.state.reset()

    # -- decode side ---------------------------------------------------------

    def _decode_lock(self, record_id: int) -> threading.Lock:
        with self._lock_guard:
            return self._decode_locks.setdefault(record_id, threading.Lock())

    def decode_and_decrypt(self, record_id: int, password: str) -> Path:
        """Recover the image for a stored record; password checked first."""
        if password != self.access.decode_password:
            raise AuthFailed("wrong decode password")
        record = self.store.get(record_id)
        if record is None:
            raise KeyError(f"no transmission {record_id}")
        lock = self._decode_lock(record_id)
        if not lock.acquire(blocking=False):
            raise RuntimeError(f"decode of {record_id} already in progress")
        try:
            if record.status != "stored":
                raise ValueError(f"record {record_id} is {record.status}, not stored")
            encoded = Path(record.encoded_path).read_bytes()
            cfg = CipherConfig(key=self.access.aes_key)
            encrypted = truncate16(b64_decode(encoded))
            self.store.path_for(record_id, ENCRYPTED_SUFFIX).write_bytes(encrypted)
            image = aes128_decrypt(encrypted, cfg)
            decoded_path = self.store.path_for(record_id, DECODED_SUFFIX)
            decoded_path.write_bytes(image)
            record.status = "decoded"
            record.decoded_path = str(decoded_path)
            self.store.update(record)
            return decoded_path
        finally:
            lock.release()

    def latest_image_bytes(self) -> Optional[bytes]:
        record = self.store.latest_decoded()
        if record is None or not record.decoded_path:
            return None
        return Path(record.decoded_path).read_bytes()
