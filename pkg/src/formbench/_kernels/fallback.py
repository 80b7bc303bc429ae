"""Numpy implementations of the hot kernels.

Used when the compiled extension is unavailable; also the reference the
benchmark compares against.
"""

from __future__ import annotations

import numpy as np

BACKEND = "numpy"


def fill_rows_linear(img: np.ndarray, px0: int, py0: int, px1: int, py1: int) -> None:
    """Resynthesize img[py0:py1, px0:px1] row by row, in place.

    Each row is linearly interpolated between the pixel column immediately
    left of the region and the one immediately right of it. When the region
    touches one image margin the surviving neighbor column is replicated.
    The region must not touch both margins (caller handles that case).
    """
    height, width = img.shape[:2]
    xl = px0 - 1
    xr = px1
    rows = slice(py0, py1)
    if xl >= 0 and xr < width:
        left = img[rows, xl, :].astype(np.float64)
        right = img[rows, xr, :].astype(np.float64)
        xs = np.arange(px0, px1, dtype=np.float64)
        w = (xs - xl) / (xr - xl)
        vals = left[:, None, :] + (right - left)[:, None, :] * w[None, :, None]
        # round half up to match the compiled kernel bit for bit
        img[rows, px0:px1, :] = np.floor(vals + 0.5).astype(img.dtype)
    elif xl >= 0:
        img[rows, px0:px1, :] = img[rows, xl, :][:, None, :]
    elif xr < width:
        img[rows, px0:px1, :] = img[rows, xr, :][:, None, :]
    else:
        raise ValueError("region spans the full image width")


def pair_contains(boxes: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Closed containment of points[i] in boxes[i].

    boxes: (N, 4) float64 as [x0, y0, x1, y1]; points: (N, 2) float64.
    Returns an (N,) bool array.
    """
    b = np.ascontiguousarray(boxes, dtype=np.float64)
    p = np.ascontiguousarray(points, dtype=np.float64)
    return (
        (b[:, 0] <= p[:, 0])
        & (p[:, 0] <= b[:, 2])
        & (b[:, 1] <= p[:, 1])
        & (p[:, 1] <= b[:, 3])
    )
