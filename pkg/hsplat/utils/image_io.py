"""Image reading and writing: PNG through matplotlib, PFM for float data."""

import logging
import os
import threading
from typing import Optional, Tuple

import matplotlib

matplotlib.use("Agg")
import matplotlib.image as mpimg
import numpy as np
from cachetools import LRUCache
from scipy import ndimage

from hsplat.defaults import DEFAULT_IMAGE_CACHE_SIZE
from hsplat.errors import DataError
from hsplat.utils.file_io import ensure_parent

logger = logging.getLogger(__name__)

_decoded = LRUCache(maxsize=DEFAULT_IMAGE_CACHE_SIZE)
_decoded_lock = threading.Lock()


def clear_image_cache() -> None:
    with _decoded_lock:
        _decoded.clear()


def _to_rgb_float(data: np.ndarray) -> np.ndarray:
    array = np.asarray(data)
    if np.issubdtype(array.dtype, np.integer):
        array = array.astype(np.float64) / float(np.iinfo(array.dtype).max)
    else:
        array = array.astype(np.float64)
    if array.ndim == 2:
        array = np.repeat(array[:, :, None], 3, axis=2)
    if array.ndim != 3 or array.shape[2] not in (3, 4):
        raise DataError(f"unsupported image layout {array.shape}")
    return np.clip(array[:, :, :3], 0.0, 1.0)


def _read_image(path: str) -> np.ndarray:
    if path.lower().endswith(".pfm"):
        return read_pfm(path)
    try:
        data = mpimg.imread(path)
    except (OSError, ValueError, SyntaxError) as exc:
        raise DataError(f"unreadable image {path}: {exc}") from exc
    return _to_rgb_float(data)


def load_image(path: str, *, size: Optional[Tuple[int, int]] = None) -> np.ndarray:
    """Read an image as float64 RGB in [0, 1], optionally resized to (width, height).

    Results are cached by path, modification time and size; callers get a copy.
    """
    if not path or not os.path.isfile(path):
        raise DataError(f"unreadable image {path}: no such file")
    key = (os.path.abspath(path), os.path.getmtime(path), tuple(size) if size else None)
    with _decoded_lock:
        image = _decoded.get(key)
    if image is None:
        image = _read_image(path)
        if size:
            image = resize_image(image, size[0], size[1])
        with _decoded_lock:
            _decoded[key] = image
    return image.copy()


def resize_image(image: np.ndarray, width: int, height: int) -> np.ndarray:
    if image.shape[:2] == (height, width):
        return image.copy()
    factors = (height / image.shape[0], width / image.shape[1], 1.0)
    resized = ndimage.zoom(image, factors, order=1, mode="nearest", grid_mode=True)
    return np.clip(resized[:height, :width], 0.0, 1.0)


def save_png(path: str, image: np.ndarray) -> None:
    """Write an (H, W, 3) float image in [0, 1] as 8-bit PNG."""
    ensure_parent(path)
    quantized = np.round(np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0) * 255.0).astype(np.uint8)
    mpimg.imsave(path, quantized, format="png")


def write_pfm(path: str, image: np.ndarray) -> None:
    """Colour PFM, little-endian, rows stored bottom to top."""
    data = np.asarray(image, dtype=np.float64)
    if data.ndim == 2:
        data = np.repeat(data[:, :, None], 3, axis=2)
    elif data.shape[2] == 2:
        data = np.concatenate([data, np.zeros(data.shape[:2] + (1,))], axis=2)
    height, width = data.shape[:2]
    ensure_parent(path)
    with open(path, "wb") as handle:
        handle.write(f"PF\n{width} {height}\n-1.0\n".encode("ascii"))
        handle.write(np.flipud(data).astype("<f4").tobytes())


def read_pfm(path: str) -> np.ndarray:
    try:
        with open(path, "rb") as handle:
            header = handle.readline().decode("ascii").strip()
            dims = handle.readline().decode("ascii").split()
            scale = float(handle.readline().decode("ascii").strip())
            payload = handle.read()
    except (OSError, UnicodeDecodeError, ValueError) as exc:
        raise DataError(f"unreadable pfm {path}: {exc}") from exc
    if header not in ("PF", "Pf") or len(dims) != 2:
        raise DataError(f"unreadable pfm {path}: bad header")
    width, height = int(dims[0]), int(dims[1])
    channels = 3 if header == "PF" else 1
    dtype = "<f4" if scale < 0 else ">f4"
    expected = width * height * channels * 4
    if len(payload) < expected:
        raise DataError(f"unreadable pfm {path}: truncated payload")
    data = np.frombuffer(payload[:expected], dtype=dtype).reshape(height, width, channels)
    data = np.flipud(data).astype(np.float64)
    return data if channels == 3 else data[:, :, 0]


def sign_map_rgb(values: np.ndarray) -> np.ndarray:
    """Red for positive, green for negative, intensity normalised per image."""
    values = np.asarray(values, dtype=np.float64)
    peak = float(np.max(np.abs(values))) if values.size else 0.0
    scaled = values / peak if peak > 0 else np.zeros_like(values)
    rgb = np.zeros(values.shape + (3,), dtype=np.float64)
    rgb[..., 0] = np.clip(scaled, 0.0, 1.0)
    rgb[..., 1] = np.clip(-scaled, 0.0, 1.0)
    return rgb
