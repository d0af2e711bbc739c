"""
Flat checkpoint container.

Layout (all integers u32 little-endian)::

    magic b"SRNT" | version | count
    count x ( name_len | name (UTF-8) | ndim | dims... | data (f64 little-endian) )
"""

import struct
from pathlib import Path
from typing import Dict, Union

import numpy as np

from utils.error_handler import DataError

MAGIC = b"SRNT"
FORMAT_VERSION = 1


def save_checkpoint(path: Union[str, Path], state: Dict[str, np.ndarray]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    chunks = [MAGIC, struct.pack("<II", FORMAT_VERSION, len(state))]
    for name, value in state.items():
        value = np.asarray(value, dtype=np.float64)
        encoded = name.encode("utf-8")
        chunks.append(struct.pack("<I", len(encoded)))
        chunks.append(encoded)
        chunks.append(struct.pack(f"<I{value.ndim}I", value.ndim, *value.shape))
        chunks.append(value.astype("<f8").tobytes(order="C"))
    path.write_bytes(b"".join(chunks))
    return path


def load_checkpoint(path: Union[str, Path]) -> Dict[str, np.ndarray]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"checkpoint not found: {path}")
    blob = path.read_bytes()
    if blob[:4] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file")
    try:
        version, count = struct.unpack_from("<II", blob, 4)
        if version != FORMAT_VERSION:
            raise DataError(f"{path}: unsupported checkpoint version {version}")
        offset = 12
        state: Dict[str, np.ndarray] = {}
        for _ in range(count):
            (name_len,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            name = blob[offset:offset + name_len].decode("utf-8")
            offset += name_len
            (ndim,) = struct.unpack_from("<I", blob, offset)
            offset += 4
            shape = struct.unpack_from(f"<{ndim}I", blob, offset)
            offset += 4 * ndim
            size = int(np.prod(shape)) if ndim else 1
            data = np.frombuffer(blob, dtype="<f8", count=size, offset=offset)
            offset += 8 * size
            state[name] = data.astype(np.float64).reshape(shape)
    except struct.error as exc:
        raise DataError(f"{path}: truncated checkpoint") from exc
    except ValueError as exc:
        raise DataError(f"{path}: corrupt checkpoint ({exc})") from exc
    if offset != len(blob):
        raise DataError(f"{path}: {len(blob) - offset} trailing bytes")
    return state
