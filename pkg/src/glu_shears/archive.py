"""Safetensors-compatible tensor archive I/O and BF16 <-> F32 conversion.

File layout: an 8-byte little-endian unsigned header length N, then N bytes
of JSON mapping tensor names to {"dtype", "shape", "data_offsets"} (offsets
relative to the first byte after the header), then the raw data region.
A "__metadata__" entry in the header is preserved verbatim. Writers emit
tensors in lexicographic name order with contiguous, unpadded offsets so
that a given archive has exactly one byte representation.
"""

from __future__ import annotations

import json
import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

__all__ = [
    "ArchiveError",
    "TensorEntry",
    "TensorArchive",
    "read_archive",
    "write_archive",
    "bf16_to_f32",
    "f32_to_bf16",
]

DTYPE_SIZES = {"F32": 4, "BF16": 2}


class ArchiveError(ValueError):
    """Malformed or inconsistent tensor archive."""


def f32_to_bf16(x):
    """Truncate float32 to the bfloat16 bit pattern with round-to-nearest-even.

    NaN and Inf pass through (NaNs keep a nonzero mantissa). Scalar input
    returns an int pattern; array input returns a uint16 array.
    """
    arr = np.asarray(x, dtype=np.float32)
    bits = arr.view(np.uint32)
    is_nan = ((bits & np.uint32(0x7F800000)) == np.uint32(0x7F800000)) & (
        (bits & np.uint32(0x007FFFFF)) != np.uint32(0)
    )
    with np.errstate(over="ignore"):
        bias = np.uint32(0x7FFF) + ((bits >> np.uint32(16)) & np.uint32(1))
        rounded = ((bits + bias) >> np.uint32(16)).astype(np.uint16)
    nan16 = ((bits >> np.uint32(16)).astype(np.uint16)) | np.uint16(0x0040)
    out = np.where(is_nan, nan16, rounded)
    if np.ndim(x) == 0:
        return int(out)
    return out.astype(np.uint16)


def bf16_to_f32(h):
    """Widen a bfloat16 bit pattern to float32 (exact; NaN/Inf pass through)."""
    arr = np.asarray(h, dtype=np.uint16)
    bits = arr.astype(np.uint32) << np.uint32(16)
    out = bits.view(np.float32)
    if np.ndim(h) == 0:
        return float(out)
    return out


@dataclass
class TensorEntry:
    kind: str
    shape: tuple[int, ...]
    data: bytes

    def validate(self, name: str) -> None:
        if self.kind not in DTYPE_SIZES:
            raise ArchiveError(f"tensor '{name}': unknown dtype '{self.kind}'")
        if len(self.shape) < 1 or any(int(d) < 1 for d in self.shape):
            raise ArchiveError(f"tensor '{name}': invalid shape {self.shape}")
        expected = int(np.prod(self.shape)) * DTYPE_SIZES[self.kind]
        if len(self.data) != expected:
            raise ArchiveError(
                f"tensor '{name}': byte length {len(self.data)} does not match "
                f"shape {self.shape} ({expected} expected for {self.kind})"
            )

    def to_array(self) -> np.ndarray:
        """Decode to a float32 array (BF16 entries are widened)."""
        if self.kind == "F32":
            arr = np.frombuffer(self.data, dtype="<f4")
        else:
            arr = bf16_to_f32(np.frombuffer(self.data, dtype="<u2"))
        return arr.reshape(self.shape).astype(np.float32)


class TensorArchive:
    """Named tensors with dtype, shape, raw little-endian bytes."""

    def __init__(self, metadata: dict[str, str] | None = None):
        self.entries: dict[str, TensorEntry] = {}
        self.metadata = metadata

    def add(self, name: str, kind: str, shape, data: bytes) -> None:
        if not name or name == "__metadata__":
            raise ArchiveError(f"invalid tensor name '{name}'")
        if name in self.entries:
            raise ArchiveError(f"duplicate tensor name '{name}'")
        entry = TensorEntry(kind, tuple(int(d) for d in shape), bytes(data))
        entry.validate(name)
        self.entries[name] = entry

    def add_array(self, name: str, arr: np.ndarray, kind: str = "F32") -> None:
        arr = np.ascontiguousarray(arr, dtype=np.float32)
        if kind == "F32":
            data = arr.astype("<f4").tobytes()
        elif kind == "BF16":
            data = f32_to_bf16(arr).astype("<u2").tobytes()
        else:
            raise ArchiveError(f"tensor '{name}': unknown dtype '{kind}'")
        self.add(name, kind, arr.shape, data)

    def get_array(self, name: str) -> np.ndarray:
        if name not in self.entries:
            raise ArchiveError(f"missing tensor '{name}'")
        return self.entries[name].to_array()

    def names(self) -> list[str]:
        return sorted(self.entries)

    def __contains__(self, name: str) -> bool:
        return name in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def read_archive(path) -> TensorArchive:
    """Parse an archive file; raises ArchiveError on any structural defect."""
    raw = Path(path).read_bytes()
    if len(raw) < 8:
        raise ArchiveError(f"{path}: truncated file ({len(raw)} bytes, header length missing)")
    (header_len,) = struct.unpack("<Q", raw[:8])
    if 8 + header_len > len(raw):
        raise ArchiveError(
            f"{path}: header length {header_len} points past end of file ({len(raw)} bytes)"
        )
    try:
        header = json.loads(raw[8 : 8 + header_len].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise ArchiveError(f"{path}: header is not valid JSON: {exc}") from exc
    if not isinstance(header, dict):
        raise ArchiveError(f"{path}: header must be a JSON object")

    data = raw[8 + header_len :]
    metadata = header.pop("__metadata__", None)
    archive = TensorArchive(metadata=metadata)
    spans: list[tuple[int, int, str]] = []
    for name, info in header.items():
        try:
            kind = info["dtype"]
            shape = tuple(int(d) for d in info["shape"])
            begin, end = (int(v) for v in info["data_offsets"])
        except (KeyError, TypeError, ValueError) as exc:
            raise ArchiveError(f"{path}: tensor '{name}': malformed header entry") from exc
        if begin < 0 or end < begin or end > len(data):
            raise ArchiveError(
                f"{path}: tensor '{name}': offsets [{begin}, {end}) out of bounds "
                f"for data region of {len(data)} bytes"
            )
        archive.add(name, kind, shape, data[begin:end])
        spans.append((begin, end, name))

    spans.sort()
    for (b0, e0, n0), (b1, e1, n1) in zip(spans, spans[1:]):
        if b1 < e0:
            raise ArchiveError(f"{path}: tensors '{n0}' and '{n1}' overlap in the data region")
    return archive


def write_archive(archive: TensorArchive, path) -> None:
    """Serialize; lexicographic tensor order, contiguous offsets, no padding."""
    header: dict[str, object] = {}
    if archive.metadata is not None:
        header["__metadata__"] = archive.metadata
    offset = 0
    blobs: list[bytes] = []
    for name in sorted(archive.entries):
        entry = archive.entries[name]
        entry.validate(name)
        header[name] = {
            "dtype": entry.kind,
            "shape": list(entry.shape),
            "data_offsets": [offset, offset + len(entry.data)],
        }
        offset += len(entry.data)
        blobs.append(entry.data)
    payload = json.dumps(header, separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as f:
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)
