"""Single-file model container.

Layout (all integers little-endian u32):

    8-byte magic ``CNERMDL1``
    one length-prefixed UTF-8 metadata block of ``key=value`` lines
    parameter count, then per record: name length, name bytes, rank,
    one u32 per dimension, raw float32 data

Metadata keys are sorted and values must be newline-free (use single-line
JSON for structured values).  Parameter records are sorted by name.  Both
rules make identical models serialize to identical bytes.  Values of any
float dtype are stored as float32.
"""

from __future__ import annotations

import re
import struct
from typing import Sequence

import numpy as np

from .nn import Parameter

MAGIC = b"CNERMDL1"

_KEY_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


class ContainerError(ValueError):
    """Raised for malformed container bytes."""


def _encode_str(s: str) -> bytes:
    raw = s.encode("utf-8")
    return struct.pack("<I", len(raw)) + raw


def _encode_metadata(metadata: dict[str, str]) -> bytes:
    lines = []
    for key in sorted(metadata):
        value = metadata[key]
        if not _KEY_RE.match(key):
            raise ContainerError(f"metadata key {key!r} must match {_KEY_RE.pattern}")
        if "\n" in value:
            raise ContainerError(f"metadata value for {key!r} must not contain newlines")
        lines.append(f"{key}={value}")
    return _encode_str("\n".join(lines))


class _Reader:
    def __init__(self, data: bytes):
        self.data = data
        self.pos = 0

    def take(self, n: int, what: str) -> bytes:
        if self.pos + n > len(self.data):
            raise ContainerError(
                f"truncated container: expected {n} bytes for {what} at offset "
                f"{self.pos}, only {len(self.data) - self.pos} remain"
            )
        chunk = self.data[self.pos:self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what: str) -> int:
        return struct.unpack("<I", self.take(4, what))[0]

    def string(self, what: str) -> str:
        n = self.u32(f"{what} length")
        raw = self.take(n, what)
        try:
            return raw.decode("utf-8")
        except UnicodeDecodeError as e:
            raise ContainerError(f"invalid UTF-8 in {what}: {e}") from e


def _parse_metadata(block: str) -> dict[str, str]:
    metadata: dict[str, str] = {}
    if not block:
        return metadata
    for line in block.split("\n"):
        key, sep, value = line.partition("=")
        if not sep or not _KEY_RE.match(key):
            raise ContainerError(f"malformed metadata line {line!r}")
        if key in metadata:
            raise ContainerError(f"duplicate metadata key {key!r}")
        metadata[key] = value
    return metadata


def container_bytes(metadata: dict[str, str], params: Sequence[Parameter]) -> bytes:
    names = [p.name for p in params]
    if len(set(names)) != len(names):
        dupe = next(n for n in names if names.count(n) > 1)
        raise ContainerError(f"duplicate parameter name {dupe!r}")
    parts = [MAGIC, _encode_metadata(metadata)]
    parts.append(struct.pack("<I", len(params)))
    for p in sorted(params, key=lambda p: p.name):
        value = np.ascontiguousarray(p.value, dtype="<f4")
        parts.append(_encode_str(p.name))
        parts.append(struct.pack("<I", value.ndim))
        parts.append(struct.pack(f"<{value.ndim}I", *value.shape))
        parts.append(value.tobytes())
    return b"".join(parts)


def parse_container(data: bytes) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    """Decode container bytes to (metadata, {name: float32 array})."""
    r = _Reader(data)
    magic = r.take(len(MAGIC), "magic")
    if magic != MAGIC:
        raise ContainerError(
            f"bad magic: expected {MAGIC!r}, got {magic!r}; not a model container"
        )
    metadata = _parse_metadata(r.string("metadata block"))
    arrays: dict[str, np.ndarray] = {}
    for _ in range(r.u32("parameter count")):
        name = r.string("parameter name")
        if name in arrays:
            raise ContainerError(f"duplicate parameter {name!r}")
        rank = r.u32(f"rank of {name!r}")
        if rank > 8:
            raise ContainerError(f"implausible rank {rank} for parameter {name!r}")
        shape = tuple(r.u32(f"dimension of {name!r}") for _ in range(rank))
        count = 1
        for d in shape:
            count *= d
        raw = r.take(4 * count, f"data of {name!r}")
        arrays[name] = np.frombuffer(raw, dtype="<f4").reshape(shape).copy()
    if r.pos != len(data):
        raise ContainerError(
            f"{len(data) - r.pos} trailing bytes after last parameter record"
        )
    return metadata, arrays


def save(path: str, metadata: dict[str, str], params: Sequence[Parameter]) -> None:
    data = container_bytes(metadata, params)
    with open(path, "wb") as f:
        f.write(data)


def load(path: str) -> tuple[dict[str, str], dict[str, np.ndarray]]:
    with open(path, "rb") as f:
        data = f.read()
    try:
        return parse_container(data)
    except ContainerError as e:
        raise ContainerError(f"{path}: {e}") from None


def expect_kind(metadata: dict[str, str], kind: str, path: str = "") -> None:
    """Fail with a clear message when a container holds the wrong model type."""
    got = metadata.get("kind")
    if got != kind:
        where = f"{path}: " if path else ""
        raise ContainerError(f"{where}expected a {kind!r} model, found {got!r}")


def restore_params(params: Sequence[Parameter], arrays: dict[str, np.ndarray],
                   path: str = "") -> None:
    """Copy loaded arrays into a freshly built model's parameters."""
    where = f"{path}: " if path else ""
    by_name = {p.name: p for p in params}
    missing = sorted(set(by_name) - set(arrays))
    extra = sorted(set(arrays) - set(by_name))
    if missing or extra:
        raise ContainerError(
            f"{where}parameter set mismatch: missing {missing or 'none'}, "
            f"unexpected {extra or 'none'}"
        )
    for name, p in by_name.items():
        arr = arrays[name]
        if arr.shape != p.value.shape:
            raise ContainerError(
                f"{where}shape mismatch for {name!r}: container has {arr.shape}, "
                f"model expects {p.value.shape}"
            )
        p.value[...] = arr.astype(p.dtype, copy=False)
