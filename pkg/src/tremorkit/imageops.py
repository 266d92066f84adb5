"""Small image primitives: bilinear sampling, crop-resize, HSV conversion.

Coordinate convention: an H x W image covers the continuous rectangle
[0, W) x [0, H); the centre of pixel (row i, col j) is (x=j+0.5, y=i+0.5).
Samples outside the image read as zero.
"""

from __future__ import annotations

import numpy as np


def bilinear_sample(img: np.ndarray, xs: np.ndarray, ys: np.ndarray) -> np.ndarray:
    """Sample ``img`` (H,W[,C]) at continuous positions; zero outside."""
    h, w = img.shape[:2]
    squeeze = img.ndim == 2
    if squeeze:
        img = img[..., None]

    gx = np.asarray(xs, dtype=np.float64) - 0.5
    gy = np.asarray(ys, dtype=np.float64) - 0.5
    x0 = np.floor(gx).astype(np.int64)
    y0 = np.floor(gy).astype(np.int64)
    fx = gx - x0
    fy = gy - y0

    out = np.zeros(gx.shape + (img.shape[2],), dtype=np.float64)
    for dy in (0, 1):
        for dx in (0, 1):
            xi = x0 + dx
            yi = y0 + dy
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            valid = (xi >= 0) & (xi < w) & (yi >= 0) & (yi < h)
            if not valid.any():
                continue
            vals = np.zeros_like(out)
            vals[valid] = img[yi[valid], xi[valid], :]
            out += wgt[..., None] * vals
    if squeeze:
        out = out[..., 0]
    return out


def crop_resize(img: np.ndarray, cx: float, cy: float, side: float,
                out_size: int) -> np.ndarray:
    """Bilinear resample of the square window centred at (cx, cy)."""
    step = side / out_size
    coords = (np.arange(out_size, dtype=np.float64) + 0.5) * step
    xs = cx - side / 2.0 + coords
    ys = cy - side / 2.0 + coords
    gx, gy = np.meshgrid(xs, ys)
    return bilinear_sample(img, gx, gy)


def rgb_to_hsv(rgb: np.ndarray) -> np.ndarray:
    """Vectorised RGB->HSV on an (...,3) array with channels in [0,1]."""
    r, g, b = rgb[..., 0], rgb[..., 1], rgb[..., 2]
    maxc = np.max(rgb, axis=-1)
    minc = np.min(rgb, axis=-1)
    v = maxc
    delta = maxc - minc
    s = np.where(maxc > 0, delta / np.maximum(maxc, 1e-20), 0.0)

    with np.errstate(invalid="ignore", divide="ignore"):
        dz = np.maximum(delta, 1e-20)
        rc = (maxc - r) / dz
        gc = (maxc - g) / dz
        bc = (maxc - b) / dz
    h = np.where(r == maxc, bc - gc, np.where(g == maxc, 2.0 + rc - bc, 4.0 + gc - rc))
    h = np.where(delta > 0, (h / 6.0) % 1.0, 0.0)
    return np.stack([h, s, v], axis=-1)


def hsv_to_rgb(hsv: np.ndarray) -> np.ndarray:
    h, s, v = hsv[..., 0], hsv[..., 1], hsv[..., 2]
    i = np.floor(h * 6.0).astype(np.int64) % 6
    f = h * 6.0 - np.floor(h * 6.0)
    p = v * (1.0 - s)
    q = v * (1.0 - s * f)
    t = v * (1.0 - s * (1.0 - f))

    r = np.choose(i, [v, q, p, p, t, v])
    g = np.choose(i, [t, v, v, q, p, p])
    b = np.choose(i, [p, p, t, v, v, q])
    return np.stack([r, g, b], axis=-1)
