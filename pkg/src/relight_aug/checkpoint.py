"""Single-file binary checkpoint archive.

Layout (all integers little-endian):

    bytes 0..3   magic ``RLCK``
    u32          format version
    u32          metadata length M
    M bytes      metadata JSON (UTF-8): kind, config, train_steps, extra
    u32          tensor count T
    T records:   u16 name length | name UTF-8 | u8 dtype (0=float32)
                 | u8 ndim | u32 * ndim dims | row-major payload
    32 bytes     SHA-256 over everything before it

The trailing digest makes truncation or bit corruption a hard load error;
a version field mismatch refuses the load outright (no partial state).
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MAGIC = b"RLCK"
FORMAT_VERSION = 1
_DTYPE_CODES = {0: np.dtype("<f4")}


class CheckpointError(RuntimeError):
    """Unreadable, corrupt, or version-incompatible checkpoint."""


@dataclass
class CheckpointData:
    kind: str
    config: dict
    train_steps: int
    tensors: dict[str, np.ndarray]
    extra: dict = field(default_factory=dict)
    format_version: int = FORMAT_VERSION


def save_checkpoint(
    path,
    kind: str,
    config: dict,
    train_steps: int,
    tensors: dict[str, np.ndarray],
    extra: dict | None = None,
) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)

    meta = {
        "kind": kind,
        "config": config,
        "train_steps": int(train_steps),
        "extra": extra or {},
    }
    meta_bytes = json.dumps(meta, sort_keys=True).encode("utf-8")

    buf = io.BytesIO()
    buf.write(MAGIC)
    buf.write(struct.pack("<I", FORMAT_VERSION))
    buf.write(struct.pack("<I", len(meta_bytes)))
    buf.write(meta_bytes)
    buf.write(struct.pack("<I", len(tensors)))
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name], dtype="<f4")
        name_bytes = name.encode("utf-8")
        buf.write(struct.pack("<H", len(name_bytes)))
        buf.write(name_bytes)
        buf.write(struct.pack("<BB", 0, arr.ndim))
        for dim in arr.shape:
            buf.write(struct.pack("<I", dim))
        buf.write(arr.tobytes(order="C"))

    payload = buf.getvalue()
    digest = hashlib.sha256(payload).digest()
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_bytes(payload + digest)
    tmp.replace(path)
    return path


def load_checkpoint(path) -> CheckpointData:
    path = Path(path)
    try:
        raw = path.read_bytes()
    except OSError as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc

    if len(raw) < 4 + 4 + 4 + 32 or raw[:4] != MAGIC:
        raise CheckpointError(f"{path} is not a checkpoint archive (bad magic)")
    payload, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(payload).digest() != digest:
        raise CheckpointError(f"{path} failed integrity check (corrupt archive)")

    view = memoryview(payload)
    offset = 4
    (version,) = struct.unpack_from("<I", view, offset)
    offset += 4
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"{path} has format version {version}, this build reads {FORMAT_VERSION}"
        )
    (meta_len,) = struct.unpack_from("<I", view, offset)
    offset += 4
    try:
        meta = json.loads(bytes(view[offset : offset + meta_len]).decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path} has unreadable metadata: {exc}") from exc
    offset += meta_len

    (count,) = struct.unpack_from("<I", view, offset)
    offset += 4
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", view, offset)
        offset += 2
        name = bytes(view[offset : offset + name_len]).decode("utf-8")
        offset += name_len
        dtype_code, ndim = struct.unpack_from("<BB", view, offset)
        offset += 2
        if dtype_code not in _DTYPE_CODES:
            raise CheckpointError(f"{path}: unknown tensor dtype code {dtype_code}")
        dims = struct.unpack_from(f"<{ndim}I", view, offset) if ndim else ()
        offset += 4 * ndim
        n_bytes = int(np.prod(dims, dtype=np.int64)) * 4 if ndim else 4
        arr = np.frombuffer(view[offset : offset + n_bytes], dtype=_DTYPE_CODES[dtype_code])
        offset += n_bytes
        tensors[name] = arr.reshape(dims).copy()
    if offset != len(payload):
        raise CheckpointError(f"{path}: trailing bytes after tensor section")

    return CheckpointData(
        kind=meta["kind"],
        config=meta["config"],
        train_steps=meta["train_steps"],
        tensors=tensors,
        extra=meta.get("extra", {}),
        format_version=version,
    )
