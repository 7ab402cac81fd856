"""File processing for the transmit path and its inverse.

A captured JPEG goes through zero-padding to a 16-byte boundary, AES-128
encryption, and Base64 encoding before segmentation for publish.  The
receive path undoes the chain: Base64 decode, truncate to the next lower
16-multiple (Base64 padding tolerance can leave stray trailing bytes), and
decrypt.

AES runs in ECB mode with no IV.  That is deliberate: the decrypter works
from nothing but a 16-byte key and a truncated ciphertext, which rules out
a prepended IV.  ECB is cryptographically weak (identical plaintext blocks
produce identical ciphertext blocks); do not reuse this scheme where real
confidentiality matters.

The original file length is never transmitted, so a recovered file keeps
its zero-pad tail.  JPEG viewers ignore bytes after the end-of-image
marker, which is why the round trip is visually lossless.
"""

from __future__ import annotations

import base64
import binascii
import math
from dataclasses import dataclass

from cryptography.hazmat.primitives.ciphers import Cipher, algorithms, modes

from .errors import (
    EmptyFile,
    ExceedsModemLimit,
    InvalidEncoding,
    MalformedHeader,
    TooShort,
    UnpaddedInput,
)

BLOCK = 16
DEFAULT_SEGMENT_SIZE = 1500
MODEM_PUBLISH_LIMIT = 1548

# Conventional names for the three processing stages on disk.
RAW_NAME = "image.jpg"
ENCRYPTED_NAME = "image_encrypted"
ENCODED_NAME = "inputjpg_encrypted_encoded"


@dataclass(frozen=True)
class RawFile:
    """A file staged for transmission."""

    data: bytes
    declared_size: int

    def __post_init__(self):
        if self.declared_size < 1:
            raise EmptyFile("raw file must contain at least one byte")
        if self.declared_size != len(self.data):
            raise ValueError("declared_size does not match data length")

    @classmethod
    def from_bytes(cls, data: bytes) -> "RawFile":
        return cls(data=bytes(data), declared_size=len(data))


@dataclass(frozen=True)
class CipherConfig:
    """AES-128 key material; mode is fixed to ECB (see module docstring)."""

    key: bytes
    mode: str = "ECB"

    def __post_init__(self):
        if len(self.key) != BLOCK:
            raise ValueError("AES-128 key must be exactly 16 bytes")
        if self.mode != "ECB":
            raise ValueError("only ECB mode is supported")

    @classmethod
    def from_hex(cls, hex_key: str) -> "CipherConfig":
        """Build from the 32-hex-character key form used in config files."""
        try:
            key = bytes.fromhex(hex_key.strip())
        except ValueError as exc:
            raise ValueError(f"key is not valid hex: {exc}") from exc
        return cls(key=key)


@dataclass(frozen=True)
class SegmentPlan:
    """How an encoded file splits into publishes."""

    segment_count: int
    segment_size: int
    last_segment_size: int

    def __post_init__(self):
        if self.segment_count < 1:
            raise ValueError("segment_count must be positive")
        if self.segment_size > MODEM_PUBLISH_LIMIT:
            raise ExceedsModemLimit(
                f"segment size {self.segment_size} exceeds the "
                f"{MODEM_PUBLISH_LIMIT}-byte modem publish limit"
            )
        if not 1 <= self.last_segment_size <= self.segment_size:
            raise ValueError("last segment size must be in [1, segment_size]")

    @property
    def total_size(self) -> int:
        return (self.segment_count - 1) * self.segment_size + self.last_segment_size

    def size_of(self, index: int) -> int:
        """Byte length of segment *index* (0-based)."""
        if not 0 <= index < self.segment_count:
            raise IndexError(f"segment index {index} out of range")
        if index == self.segment_count - 1:
            return self.last_segment_size
        return self.segment_size


def pad16(raw: bytes) -> bytes:
    """Append zero bytes until the length is the next multiple of 16."""
    if len(raw) == 0:
        raise EmptyFile("cannot pad an empty file")
    remainder = len(raw) % BLOCK
    if remainder == 0:
        return raw
    return raw + b"\x00" * (BLOCK - remainder)


def _cipher(cfg: CipherConfig) -> Cipher:
    return Cipher(algorithms.AES(cfg.key), modes.ECB())


def aes128_encrypt(padded: bytes, cfg: CipherConfig) -> bytes:
    """Encrypt a 16-aligned byte string; output length equals input length."""
    if len(padded) % BLOCK != 0:
        raise UnpaddedInput(f"length {len(padded)} is not a multiple of 16")
    enc = _cipher(cfg).encryptor()
    return enc.update(padded) + enc.finalize()


def aes128_decrypt(cipher_bytes: bytes, cfg: CipherConfig) -> bytes:
    """Inverse of :func:`aes128_encrypt` under the same key."""
    if len(cipher_bytes) % BLOCK != 0:
        raise UnpaddedInput(f"length {len(cipher_bytes)} is not a multiple of 16")
    dec = _cipher(cfg).decryptor()
    return dec.update(cipher_bytes) + dec.finalize()


def b64_encode(data: bytes) -> bytes:
    """Standard-alphabet Base64 with ``=`` padding and no line breaks."""
    return base64.b64encode(data)


def b64_decode(text: bytes) -> bytes:
    """Decode Base64, tolerating trailing whitespace and NUL bytes only."""
    stripped = text.rstrip(b" \t\r\n\x00")
    try:
        return base64.b64decode(stripped, validate=True)
    except (binascii.Error, ValueError) as exc:
        raise InvalidEncoding(str(exc)) from exc


def truncate16(data: bytes) -> bytes:
    """Drop trailing bytes so the length is the next lower multiple of 16."""
    if len(data) < BLOCK:
        raise TooShort(f"need at least 16 bytes, got {len(data)}")
    return data[: (len(data) // BLOCK) * BLOCK]


def plan_segments(encoded_size: int, segment_size: int = DEFAULT_SEGMENT_SIZE) -> SegmentPlan:
    """Split *encoded_size* bytes into ceil(size/segment_size) publishes."""
    if encoded_size <= 0:
        raise EmptyFile("cannot plan segments for an empty file")
    if segment_size > MODEM_PUBLISH_LIMIT:
        raise ExceedsModemLimit(
            f"segment size {segment_size} exceeds the "
            f"{MODEM_PUBLISH_LIMIT}-byte modem publish limit"
        )
    if segment_size < 1:
        raise ValueError("segment_size must be at least 1")
    count = math.ceil(encoded_size / segment_size)
    last = encoded_size - (count - 1) * segment_size
    return SegmentPlan(segment_count=count, segment_size=segment_size, last_segment_size=last)


def render_header(plan: SegmentPlan) -> str:
    """Render the ``count,size,last`` ASCII header that precedes segments."""
    return f"{plan.segment_count},{plan.segment_size},{plan.last_segment_size}"


def parse_header(text: str) -> SegmentPlan:
    """Parse a ``count,size,last`` header back to a plan.

    Raises:
        MalformedHeader: wrong field count, non-decimal fields, embedded
            whitespace, or values violating the plan invariants.
    """
    fields = text.split(",")
    if len(fields) != 3:
        raise MalformedHeader(f"expected 3 comma-separated fields, got {len(fields)}")
    values = []
    for field in fields:
        if not field.isascii() or not field.isdigit():
            raise MalformedHeader(f"field {field!r} is not a plain decimal integer")
        values.append(int(field))
    count, size, last = values
    try:
        return SegmentPlan(segment_count=count, segment_size=size, last_segment_size=last)
    except (ValueError, ExceedsModemLimit) as exc:
        raise MalformedHeader(str(exc)) from exc


def encode_pipeline(raw: RawFile, cfg: CipherConfig) -> bytes:
    """pad16 -> AES-128 encrypt -> Base64: the full transmit-side chain."""
    return b64_encode(aes128_encrypt(pad16(raw.data), cfg))


def decode_pipeline(encoded: bytes, cfg: CipherConfig) -> bytes:
    """Base64 decode -> truncate16 -> AES-128 decrypt: the receive chain."""
    return aes128_decrypt(truncate16(b64_decode(encoded)), cfg)


def encoded_size_of(raw_size: int) -> int:
    """Length law for the transmit chain: 4 * ceil(ceil(n/16)*16 / 3)."""
    padded = math.ceil(raw_size / BLOCK) * BLOCK
    return 4 * math.ceil(padded / 3)
