"""Versioned binary container shared by provider and training checkpoints.

Layout (all integers little-endian):
    magic (8 bytes) | version u16 | metadata length u32 | metadata JSON
    | entry count u32 | shape table | float64 payload | sha256 (32 bytes)
The shape table holds, per entry: name length u16, name, ndim u8, dims u32 * ndim.
"""
import hashlib
import json
import logging
import os
import struct
from typing import Any, Dict, Tuple

import numpy as np

from src.errors import CheckpointError

logger = logging.getLogger(__name__)

MAGIC = b"FNMTCKPT"
VERSION = 1
_DIGEST_SIZE = 32


def encode_container(arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> bytes:
    meta = json.dumps(metadata, sort_keys=True, separators=(",", ":")).encode("utf-8")
    parts = [MAGIC, struct.pack("<HI", VERSION, len(meta)), meta, struct.pack("<I", len(arrays))]
    payload = []
    for name, array in arrays.items():
        array = np.asarray(array, dtype=np.float64)
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", array.ndim))
        parts.append(struct.pack(f"<{array.ndim}I", *array.shape))
        payload.append(np.ascontiguousarray(array, dtype="<f8").tobytes())
    body = b"".join(parts + payload)
    return body + hashlib.sha256(body).digest()


def decode_container(blob: bytes, source: str = "<bytes>") -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if len(blob) < len(MAGIC) + _DIGEST_SIZE or blob[: len(MAGIC)] != MAGIC:
        raise CheckpointError(f"{source}: not a checkpoint container (bad magic bytes)")
    body, stored = blob[:-_DIGEST_SIZE], blob[-_DIGEST_SIZE:]
    actual = hashlib.sha256(body).digest()
    if actual != stored:
        raise CheckpointError(
            f"{source}: checksum mismatch (stored {stored.hex()[:16]}..., computed {actual.hex()[:16]}...)"
        )
    offset = len(MAGIC)
    version, meta_len = struct.unpack_from("<HI", body, offset)
    offset += 6
    if version != VERSION:
        raise CheckpointError(f"{source}: unsupported container version {version} (expected {VERSION})")
    metadata = json.loads(body[offset : offset + meta_len].decode("utf-8"))
    offset += meta_len
    (count,) = struct.unpack_from("<I", body, offset)
    offset += 4
    table = []
    for _ in range(count):
        (name_len,) = struct.unpack_from("<H", body, offset)
        offset += 2
        name = body[offset : offset + name_len].decode("utf-8")
        offset += name_len
        (ndim,) = struct.unpack_from("<B", body, offset)
        offset += 1
        shape = struct.unpack_from(f"<{ndim}I", body, offset)
        offset += 4 * ndim
        table.append((name, tuple(shape)))
    arrays = {}
    for name, shape in table:
        count_values = int(np.prod(shape)) if shape else 1
        nbytes = 8 * count_values
        if offset + nbytes > len(body):
            raise CheckpointError(f"{source}: truncated payload at entry '{name}'")
        arrays[name] = np.frombuffer(body, dtype="<f8", count=count_values, offset=offset).astype(np.float64).reshape(shape)
        offset += nbytes
    if offset != len(body):
        raise CheckpointError(f"{source}: {len(body) - offset} trailing bytes before checksum")
    return arrays, metadata


def write_container(path: str, arrays: Dict[str, np.ndarray], metadata: Dict[str, Any]) -> str:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    blob = encode_container(arrays, metadata)
    with open(path, "wb") as f:
        f.write(blob)
    logger.debug(f"Wrote container {path} ({len(arrays)} entries, {len(blob)} bytes)")
    return path


def read_container(path: str) -> Tuple[Dict[str, np.ndarray], Dict[str, Any]]:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint file {path} not found")
    with open(path, "rb") as f:
        return decode_container(f.read(), source=path)


def parameter_hash(arrays: Dict[str, np.ndarray]) -> str:
    """Order-independent digest of named float64 arrays."""
    digest = hashlib.sha256()
    for name in sorted(arrays):
        array = np.ascontiguousarray(arrays[name], dtype="<f8")
        digest.update(name.encode("utf-8"))
        digest.update(str(array.shape).encode("utf-8"))
        digest.update(array.tobytes())
    return digest.hexdigest()
