"""Image I/O helpers: deterministic PNG round-trips and PIL/numpy bridges.

Everything in the pipeline treats page images as RGB uint8 arrays of shape
``(height, width, 3)``.  PNG is the only interchange format; encoding is
deterministic, which lets tests compare files byte for byte.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image

from formbench.errors import IngestionError

PathLike = Union[str, Path]


def to_array(image: Image.Image) -> np.ndarray:
    """Convert a PIL image to an RGB uint8 array of shape (H, W, 3)."""
    if image.mode != "RGB":
        image = image.convert("RGB")
    arr = np.asarray(image, dtype=np.uint8)
    return np.ascontiguousarray(arr)


def to_image(arr: np.ndarray) -> Image.Image:
    """Convert an (H, W, 3) uint8 array back to a PIL RGB image."""
    if arr.ndim != 3 or arr.shape[2] != 3:
        raise ValueError(f"expected an (H, W, 3) array, got shape {arr.shape!r}")
    if arr.dtype != np.uint8:
        raise ValueError(f"expected uint8 pixels, got {arr.dtype}")
    return Image.fromarray(arr, mode="RGB")


def load_png(path: PathLike) -> np.ndarray:
    """Load a PNG from disk as an (H, W, 3) uint8 array."""
    p = Path(path)
    try:
        with Image.open(p) as im:
            return to_array(im)
    except FileNotFoundError:
        raise
    except Exception as exc:  # corrupt or non-image file
        raise IngestionError(str(p), f"cannot decode image: {exc}") from exc


def save_png(arr: np.ndarray, path: PathLike) -> None:
    """Write an (H, W, 3) uint8 array to ``path`` as a PNG."""
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    to_image(arr).save(p, format="PNG")


def encode_png(arr: np.ndarray) -> bytes:
    """Encode an (H, W, 3) uint8 array as PNG bytes (deterministic)."""
    buf = io.BytesIO()
    to_image(arr).save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes into an (H, W, 3) uint8 array."""
    with Image.open(io.BytesIO(data)) as im:
        return to_array(im)


def image_size(path: PathLike) -> tuple[int, int]:
    """Return (width, height) of an image file without decoding pixels."""
    p = Path(path)
    try:
        with Image.open(p) as im:
            return im.width, im.height
    except FileNotFoundError:
        raise
    except Exception as exc:
        raise IngestionError(str(p), f"cannot read image header: {exc}") from exc
