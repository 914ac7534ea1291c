"""Binary checkpoint container.

Layout (all integers little-endian)::

    b"VDPC" | u32 version | payload | u32 crc32(payload)

    payload = u32 len | UTF-8 "key=value\\n" block
            | u32 tensor count
            | per tensor: u32 len | UTF-8 name | u32 rank | rank x u64 dims
                          | float64 little-endian data
"""

from __future__ import annotations

import struct
import zlib
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List

import numpy as np

from .errors import CheckpointError

MAGIC = b"VDPC"
FORMAT_VERSION = 1


@dataclass
class Checkpoint:
    config: Dict[str, str]
    tensors: Dict[str, np.ndarray]
    epoch: int = 0
    val_history: List[float] = field(default_factory=list)
    version: int = FORMAT_VERSION


def _encode_block(pairs: Dict[str, str]) -> bytes:
    lines = []
    for k, v in pairs.items():
        if "=" in k or "\n" in k or "\n" in v:
            raise CheckpointError(f"config entry {k!r} cannot be stored")
        lines.append(f"{k}={v}\n")
    try:
        return "".join(lines).encode("utf-8")
    except UnicodeEncodeError as exc:
        raise CheckpointError(f"config block is not encodable as UTF-8: {exc}") from None


def _decode_block(raw: bytes) -> Dict[str, str]:
    out = {}
    # split on "\n" only: the writer forbids it, but other line breaks are data
    for line in raw.decode("utf-8").split("\n")[:-1]:
        k, _, v = line.partition("=")
        out[k] = v
    return out


def to_bytes(ckpt: Checkpoint) -> bytes:
    meta = dict(ckpt.config)
    meta["meta.epoch"] = str(ckpt.epoch)
    meta["meta.val_history"] = ",".join(repr(float(v)) for v in ckpt.val_history)
    block = _encode_block(meta)
    parts = [struct.pack("<I", len(block)), block, struct.pack("<I", len(ckpt.tensors))]
    for name, arr in ckpt.tensors.items():
        arr = np.asarray(arr, dtype="<f8", order="C")
        try:
            raw_name = name.encode("utf-8")
        except UnicodeEncodeError as exc:
            raise CheckpointError(f"tensor name {name!r} is not encodable as UTF-8: {exc}") from None
        parts.append(struct.pack("<I", len(raw_name)))
        parts.append(raw_name)
        parts.append(struct.pack("<I", arr.ndim))
        parts.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        parts.append(arr.tobytes())
    payload = b"".join(parts)
    return MAGIC + struct.pack("<I", ckpt.version) + payload + struct.pack("<I", zlib.crc32(payload))


class _Reader:
    def __init__(self, buf: bytes):
        self.buf = buf
        self.pos = 0

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.buf):
            raise CheckpointError("checkpoint payload ends early")
        out = self.buf[self.pos : self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(buf: bytes) -> Checkpoint:
    if len(buf) < 12:
        raise CheckpointError("checkpoint is truncated")
    if buf[:4] != MAGIC:
        raise CheckpointError(f"bad checkpoint magic {buf[:4]!r}")
    (version,) = struct.unpack("<I", buf[4:8])
    if version != FORMAT_VERSION:
        raise CheckpointError(f"checkpoint format version {version} is not supported (expected {FORMAT_VERSION})")
    payload, (crc,) = buf[8:-4], struct.unpack("<I", buf[-4:])
    if zlib.crc32(payload) != crc:
        raise CheckpointError("checkpoint checksum mismatch (file is truncated or corrupted)")
    r = _Reader(payload)
    (block_len,) = r.unpack("<I")
    try:
        meta = _decode_block(r.take(block_len))
    except UnicodeDecodeError as exc:
        raise CheckpointError(f"config block is not UTF-8: {exc}") from None
    (count,) = r.unpack("<I")
    tensors = {}
    for _ in range(count):
        (name_len,) = r.unpack("<I")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<I")
        shape = r.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape, dtype=np.int64))
        arr = np.frombuffer(r.take(8 * size), dtype="<f8").reshape(shape).astype(np.float64)
        tensors[name] = arr
    if r.pos != len(payload):
        raise CheckpointError("checkpoint has trailing bytes")
    epoch = int(meta.pop("meta.epoch", "0"))
    hist = meta.pop("meta.val_history", "")
    history = [float(v) for v in hist.split(",") if v]
    return Checkpoint(meta, tensors, epoch, history, version)


def checkpoint_save(ckpt: Checkpoint, path) -> None:
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_bytes(to_bytes(ckpt))
    tmp.replace(path)


def checkpoint_load(path) -> Checkpoint:
    try:
        buf = Path(path).read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    return from_bytes(buf)
