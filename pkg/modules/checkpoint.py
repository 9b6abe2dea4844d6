"""
DMCK checkpoint files.

Little-endian layout:
    magic "DMCK" | version u32 | count u32
    per parameter: name_len u32 | name (UTF-8) | rank u32 | extents u64 x rank | data f64
Parameters are written in canonical declaration order; state normalization
statistics, when present, follow as ``state_norm.mean`` and ``state_norm.std``.
"""

import logging
import os
import struct
from typing import Dict, Optional, Tuple

import numpy as np

from modules.errors import CheckpointError
from modules.mamba_net import DecisionMambaParams, load_state_dict, named_parameters

logger = logging.getLogger(__name__)

MAGIC = b"DMCK"
VERSION = 1
STATE_MEAN = "state_norm.mean"
STATE_STD = "state_norm.std"


def encode_entries(entries) -> bytes:
    chunks = [MAGIC, struct.pack("<II", VERSION, len(entries))]
    for name, array in entries:
        array = np.ascontiguousarray(array, dtype="<f8")
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack("<I", array.ndim))
        chunks.append(struct.pack(f"<{array.ndim}Q", *array.shape))
        chunks.append(array.tobytes())
    return b"".join(chunks)


class _Reader:
    def __init__(self, blob: bytes, path: str):
        self.blob = blob
        self.offset = 0
        self.path = path

    def take(self, size: int) -> bytes:
        if self.offset + size > len(self.blob):
            raise CheckpointError(f"checkpoint {self.path} is truncated at byte {self.offset}")
        chunk = self.blob[self.offset : self.offset + size]
        self.offset += size
        return chunk

    def unpack(self, fmt: str):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def decode_entries(blob: bytes, path: str = "<bytes>") -> Dict[str, np.ndarray]:
    reader = _Reader(blob, path)
    if reader.take(4) != MAGIC:
        raise CheckpointError(f"{path} is not a DMCK checkpoint (bad magic)")
    version, count = reader.unpack("<II")
    if version != VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint version {version}")
    entries: Dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = reader.unpack("<I")
        try:
            name = reader.take(name_len).decode("utf-8")
        except UnicodeDecodeError:
            raise CheckpointError(f"{path}: parameter name is not UTF-8") from None
        (rank,) = reader.unpack("<I")
        shape = reader.unpack(f"<{rank}Q") if rank else ()
        size = int(np.prod(shape)) if rank else 1
        data = np.frombuffer(reader.take(8 * size), dtype="<f8").astype(np.float64)
        entries[name] = data.reshape(shape)
    if reader.offset != len(blob):
        raise CheckpointError(f"{path} has {len(blob) - reader.offset} trailing bytes")
    return entries


def save_checkpoint(
    path: str,
    params: DecisionMambaParams,
    state_mean: Optional[np.ndarray] = None,
    state_std: Optional[np.ndarray] = None,
) -> str:
    entries = [(name, t.data) for name, t in named_parameters(params)]
    if state_mean is not None:
        entries.append((STATE_MEAN, np.asarray(state_mean)))
        entries.append((STATE_STD, np.asarray(state_std)))
    os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
    with open(path, "wb") as f:
        f.write(encode_entries(entries))
    logger.info("wrote checkpoint with %d entries to %s", len(entries), path)
    return path


def read_checkpoint(path: str) -> Dict[str, np.ndarray]:
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    with open(path, "rb") as f:
        return decode_entries(f.read(), path)


def load_checkpoint(path: str, params: DecisionMambaParams) -> Tuple[Optional[np.ndarray], Optional[np.ndarray]]:
    """Fill ``params`` from ``path``; returns the stored state normalization (or Nones)."""
    entries = read_checkpoint(path)
    mean = entries.pop(STATE_MEAN, None)
    std = entries.pop(STATE_STD, None)
    load_state_dict(params, entries)
    return mean, std
