"""Binary checkpoint format.

Layout: magic ``HMCK``, u32 version, u32 record count, then per record
u32 name length, UTF-8 name, u32 rank, u64 extents, little-endian f64 data.
"""

from __future__ import annotations

import struct
from pathlib import Path

import numpy as np

from .optim import OptimState

MAGIC = b"HMCK"
VERSION = 1


class CheckpointError(ValueError):
    pass


def save_checkpoint(path, tensors: dict[str, np.ndarray]) -> Path:
    path = Path(path)
    chunks = [MAGIC, struct.pack("<II", VERSION, len(tensors))]
    for name, arr in tensors.items():
        arr = np.asarray(arr, dtype="<f8")
        raw = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(raw)))
        chunks.append(raw)
        chunks.append(struct.pack("<I", arr.ndim))
        chunks.append(struct.pack(f"<{arr.ndim}Q", *arr.shape))
        chunks.append(arr.tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path) -> dict[str, np.ndarray]:
    buf = Path(path).read_bytes()
    try:
        return _parse(buf, path)
    except (struct.error, ValueError, UnicodeDecodeError) as exc:
        if isinstance(exc, CheckpointError):
            raise
        raise CheckpointError(f"{path}: truncated or corrupt checkpoint ({exc})") from exc


def _parse(buf: bytes, path) -> dict[str, np.ndarray]:
    if buf[:4] != MAGIC:
        raise CheckpointError(f"{path}: bad magic {buf[:4]!r}")
    version, count = struct.unpack_from("<II", buf, 4)
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported version {version}")
    pos = 12
    out: dict[str, np.ndarray] = {}
    for _ in range(count):
        (nlen,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        name = buf[pos : pos + nlen].decode("utf-8")
        pos += nlen
        (rank,) = struct.unpack_from("<I", buf, pos)
        pos += 4
        shape = struct.unpack_from(f"<{rank}Q", buf, pos)
        pos += 8 * rank
        n = int(np.prod(shape)) if rank else 1
        out[name] = np.frombuffer(buf, dtype="<f8", count=n, offset=pos).reshape(shape).copy()
        pos += 8 * n
    if pos != len(buf):
        raise CheckpointError(f"{path}: {len(buf) - pos} trailing bytes")
    return out


def pack_optimizer(state: OptimState) -> dict[str, np.ndarray]:
    packed = {"opt/step": np.array(float(state.step))}
    for name in state.m:
        packed[f"opt/m/{name}"] = state.m[name]
        packed[f"opt/v/{name}"] = state.v[name]
    return packed


def unpack_optimizer(tensors: dict[str, np.ndarray], state: OptimState) -> OptimState:
    state.step = int(np.asarray(tensors.get("opt/step", 0.0)).reshape(-1)[0])
    for key, arr in tensors.items():
        if key.startswith("opt/m/"):
            state.m[key[6:]] = arr.copy()
        elif key.startswith("opt/v/"):
            state.v[key[6:]] = arr.copy()
    return state
