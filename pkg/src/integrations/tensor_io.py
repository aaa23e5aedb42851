"""
.tns tensor files: little-endian uint32 rank, uint32 extents, then
little-endian float32 data in row-major order.
"""

from pathlib import Path
from typing import Union

import numpy as np

PathLike = Union[str, Path]

_HEADER_DTYPE = np.dtype("<u4")
_DATA_DTYPE = np.dtype("<f4")


class FormatError(ValueError):
    """Raised when a .tns file is malformed."""
    pass


def write_tensor(path: PathLike, array: np.ndarray) -> Path:
    """Write array as float32 (rank 0 arrays are stored with rank 0)."""
    array = np.asarray(array)
    if not np.all(np.isfinite(array)):
        raise FormatError(f"refusing to write non-finite values to {path}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = np.array([array.ndim, *array.shape], dtype=_HEADER_DTYPE)
    with open(path, "wb") as handle:
        handle.write(header.tobytes())
        handle.write(np.ascontiguousarray(array, dtype=_DATA_DTYPE).tobytes())
    return path


def read_tensor(path: PathLike) -> np.ndarray:
    """
    Load a .tns file as a native float32 array.

    Raises:
        FormatError: If the header or data length is inconsistent
    """
    raw = Path(path).read_bytes()
    if len(raw) < 4:
        raise FormatError(f"{path}: missing rank")
    rank = int(np.frombuffer(raw, dtype=_HEADER_DTYPE, count=1)[0])
    header_bytes = 4 * (1 + rank)
    if len(raw) < header_bytes:
        raise FormatError(f"{path}: truncated header for rank {rank}")
    shape = tuple(int(e) for e in np.frombuffer(raw, dtype=_HEADER_DTYPE, count=rank, offset=4))
    if any(e < 1 for e in shape):
        raise FormatError(f"{path}: extents must be positive, got {shape}")
    count = int(np.prod(shape)) if shape else 1
    if len(raw) != header_bytes + 4 * count:
        raise FormatError(f"{path}: expected {count} float32 values after the header")
    data = np.frombuffer(raw, dtype=_DATA_DTYPE, count=count, offset=header_bytes)
    return data.astype(np.float32).reshape(shape)
