"""
Binary PPM (P6) and PGM (P5) reading and writing, 8-bit only.
"""

from pathlib import Path
from typing import Tuple, Union

import numpy as np

PathLike = Union[str, Path]


class FormatError(ValueError):
    """Raised when a file is not a supported netpbm image."""
    pass


def _read_header(raw: bytes) -> Tuple[str, int, int, int, int]:
    """
    Parse magic, width, height and maxval, skipping '#' comments.

    Returns:
        (magic, width, height, maxval, offset of the pixel data)
    """
    tokens = []
    pos = 0
    while len(tokens) < 4:
        while pos < len(raw) and raw[pos:pos + 1].isspace():
            pos += 1
        if pos >= len(raw):
            raise FormatError("truncated netpbm header")
        if raw[pos:pos + 1] == b"#":
            end = raw.find(b"\n", pos)
            pos = len(raw) if end < 0 else end + 1
            continue
        start = pos
        while pos < len(raw) and not raw[pos:pos + 1].isspace():
            pos += 1
        tokens.append(raw[start:pos].decode("ascii", errors="replace"))
    # exactly one whitespace byte separates the header from the pixels
    pos += 1
    magic = tokens[0]
    try:
        width, height, maxval = (int(t) for t in tokens[1:])
    except ValueError as exc:
        raise FormatError(f"bad netpbm header {tokens}") from exc
    return magic, width, height, maxval, pos


def read_netpbm(path: PathLike) -> np.ndarray:
    """
    Load a P5 or P6 file.

    Returns:
        uint8 array [H,W] for PGM, [H,W,3] for PPM

    Raises:
        FormatError: On another magic, a maxval other than 255 or truncated data
    """
    raw = Path(path).read_bytes()
    magic, width, height, maxval, offset = _read_header(raw)
    if magic not in ("P5", "P6"):
        raise FormatError(f"{path}: unsupported magic {magic!r}")
    if maxval != 255:
        raise FormatError(f"{path}: only 8-bit images are supported (maxval {maxval})")
    channels = 3 if magic == "P6" else 1
    count = width * height * channels
    pixels = np.frombuffer(raw, dtype=np.uint8, count=count, offset=offset) if len(raw) - offset >= count else None
    if pixels is None:
        raise FormatError(f"{path}: expected {count} pixel bytes")
    shape = (height, width, 3) if channels == 3 else (height, width)
    return pixels.reshape(shape).copy()


def write_netpbm(path: PathLike, image: np.ndarray) -> Path:
    """
    Write [H,W] uint8 as PGM or [H,W,3] uint8 as PPM.

    Raises:
        FormatError: On a non-uint8 array or an unsupported shape
    """
    image = np.asarray(image)
    if image.dtype != np.uint8:
        raise FormatError(f"netpbm images must be uint8, got {image.dtype}")
    if image.ndim == 2:
        magic = "P5"
    elif image.ndim == 3 and image.shape[2] == 3:
        magic = "P6"
    else:
        raise FormatError(f"cannot write shape {image.shape} as PGM/PPM")
    height, width = image.shape[:2]
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        handle.write(f"{magic}\n{width} {height}\n255\n".encode("ascii"))
        handle.write(np.ascontiguousarray(image).tobytes())
    return path


def read_ppm(path: PathLike) -> np.ndarray:
    image = read_netpbm(path)
    if image.ndim != 3:
        raise FormatError(f"{path}: expected a PPM (P6) image")
    return image


def read_pgm(path: PathLike) -> np.ndarray:
    image = read_netpbm(path)
    if image.ndim != 2:
        raise FormatError(f"{path}: expected a PGM (P5) image")
    return image


def map_to_pgm(values: np.ndarray) -> np.ndarray:
    """Visualize a non-negative map: 0..max maps linearly to 0..255 (all zeros when max <= 0)."""
    values = np.maximum(np.asarray(values, dtype=np.float64), 0)
    peak = values.max() if values.size else 0
    if peak <= 0:
        return np.zeros(values.shape, dtype=np.uint8)
    return np.rint(values / peak * 255).astype(np.uint8)


def saliency_to_pgm(values: np.ndarray) -> np.ndarray:
    """
    round(255 * s) for s in [0, 1].

    Reading back gives k / 255, so a threshold applied after the round trip
    acts on the quantized value: with bg_threshold 0.06 every s below
    15.5 / 255 (about 0.0608) reads as 15 / 255 or less and counts as background.
    """
    return np.rint(np.clip(values, 0, 1) * 255).astype(np.uint8)


def image_to_array(pixels: np.ndarray) -> np.ndarray:
    """uint8 [H,W,3] -> float32 [3,H,W] centered to [-0.5, 0.5]."""
    return (pixels.astype(np.float32) / 255.0 - 0.5).transpose(2, 0, 1).copy()
