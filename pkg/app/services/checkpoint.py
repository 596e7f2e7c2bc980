"""Binary checkpoint of the named parameter tensors.

Layout, all little-endian: ``SCMN`` magic, u32 format version, u32 tensor
count, then per tensor u32 name length, UTF-8 name, u32 rank, u32 dims and
float64 data. An 8-byte BLAKE2b digest of everything before it closes the
file.
"""
import hashlib
import struct
from pathlib import Path
from typing import Dict, Optional, Union

import numpy as np

from app.config import Settings
from app.core.errors import CheckpointError
from app.core.logging import get_logger
from app.services.params import ModelParams
from app.services.tensor import Tensor

logger = get_logger("checkpoint")

MAGIC = b"SCMN"
FORMAT_VERSION = 1
CHECKSUM_SIZE = 8

_U32 = struct.Struct("<I")


def _checksum(payload: bytes) -> bytes:
    return hashlib.blake2b(payload, digest_size=CHECKSUM_SIZE).digest()


def encode_checkpoint(params: ModelParams) -> bytes:
    parts = [MAGIC, _U32.pack(FORMAT_VERSION), _U32.pack(len(params))]
    for name, tensor in params.items():
        encoded = name.encode("utf-8")
        parts.append(_U32.pack(len(encoded)))
        parts.append(encoded)
        parts.append(_U32.pack(tensor.ndim))
        parts.extend(_U32.pack(d) for d in tensor.shape)
        parts.append(np.ascontiguousarray(tensor.data, dtype="<f8").tobytes())
    payload = b"".join(parts)
    return payload + _checksum(payload)


class _Reader:
    def __init__(self, payload: bytes):
        self.payload = payload
        self.offset = 0

    def take(self, n: int) -> bytes:
        if self.offset + n > len(self.payload):
            raise CheckpointError("checkpoint is truncated")
        chunk = self.payload[self.offset:self.offset + n]
        self.offset += n
        return chunk

    def u32(self) -> int:
        return _U32.unpack(self.take(_U32.size))[0]


def decode_checkpoint(blob: bytes) -> ModelParams:
    if len(blob) < len(MAGIC) + 2 * _U32.size + CHECKSUM_SIZE:
        raise CheckpointError("checkpoint is truncated")
    payload, digest = blob[:-CHECKSUM_SIZE], blob[-CHECKSUM_SIZE:]
    if payload[:len(MAGIC)] != MAGIC:
        raise CheckpointError("not a checkpoint file (bad magic)")
    if _checksum(payload) != digest:
        raise CheckpointError("checkpoint checksum mismatch, the file is corrupted")

    reader = _Reader(payload)
    reader.take(len(MAGIC))
    version = reader.u32()
    if version != FORMAT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {version}")

    tensors: Dict[str, Tensor] = {}
    for _ in range(reader.u32()):
        try:
            name = reader.take(reader.u32()).decode("utf-8")
        except UnicodeDecodeError as e:
            raise CheckpointError(f"invalid tensor name: {e}") from e
        shape = tuple(reader.u32() for _ in range(reader.u32()))
        count = int(np.prod(shape, dtype=np.int64))
        data = np.frombuffer(reader.take(8 * count), dtype="<f8").reshape(shape)
        tensors[name] = Tensor(data.astype(np.float64))
    if reader.offset != len(payload):
        raise CheckpointError("trailing bytes after the last tensor")
    return ModelParams(tensors)


def save_checkpoint(params: ModelParams, path: Union[str, Path]) -> None:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_bytes(encode_checkpoint(params))
    except OSError as e:
        raise CheckpointError(f"cannot write checkpoint {path}: {e}") from e
    logger.info("checkpoint_saved", path=str(path), tensors=len(params))


def load_checkpoint(path: Union[str, Path], settings: Optional[Settings] = None) -> ModelParams:
    """Read a checkpoint; with ``settings`` the tensor shapes are validated too"""
    try:
        blob = Path(path).read_bytes()
    except OSError as e:
        raise CheckpointError(f"cannot read checkpoint {path}: {e}") from e
    params = decode_checkpoint(blob)
    if settings is not None:
        params.validate(settings)
    return params
