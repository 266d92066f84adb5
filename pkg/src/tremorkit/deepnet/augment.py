"""Training-time clip augmentation: horizontal flip, colour jitter, affine.

One parameter draw applies to every frame of a clip, so temporal dynamics
are preserved. All outputs are clamped to [0, 1].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from ..imageops import bilinear_sample, hsv_to_rgb, rgb_to_hsv


@dataclass
class AugmentConfig:
    flip_p: float = 0.5
    brightness: float = 0.10
    contrast: float = 0.10
    saturation: float = 0.30
    hue: float = 0.10              # fraction of the hue circle
    degrees: float = 30.0
    translate: float = 0.10        # fraction of the side length
    scale_range: tuple = (0.9, 1.5)
    flip: bool = True
    color: bool = True
    affine: bool = True


@dataclass
class AugmentParams:
    flip: bool = False
    brightness: float = 1.0
    contrast: float = 1.0
    saturation: float = 1.0
    hue: float = 0.0
    angle_deg: float = 0.0
    tx: float = 0.0
    ty: float = 0.0
    scale: float = 1.0


def identity_params() -> AugmentParams:
    return AugmentParams()


def sample_params(cfg: AugmentConfig, rng: np.random.Generator) -> AugmentParams:
    p = AugmentParams()
    if cfg.flip:
        p.flip = rng.random() < cfg.flip_p
    if cfg.color:
        p.brightness = 1.0 + rng.uniform(-cfg.brightness, cfg.brightness)
        p.contrast = 1.0 + rng.uniform(-cfg.contrast, cfg.contrast)
        p.saturation = 1.0 + rng.uniform(-cfg.saturation, cfg.saturation)
        p.hue = rng.uniform(-cfg.hue, cfg.hue)
    if cfg.affine:
        p.angle_deg = rng.uniform(-cfg.degrees, cfg.degrees)
        p.tx = rng.uniform(-cfg.translate, cfg.translate)
        p.ty = rng.uniform(-cfg.translate, cfg.translate)
        p.scale = rng.uniform(*cfg.scale_range)
    return p


def _apply_color(clip: np.ndarray, p: AugmentParams) -> np.ndarray:
    out = clip * p.brightness
    mean = out.mean()
    out = mean + (out - mean) * p.contrast
    if p.saturation != 1.0 or p.hue != 0.0:
        frames = np.transpose(out, (1, 2, 3, 0))       # T,H,W,C
        hsv = rgb_to_hsv(np.clip(frames, 0.0, 1.0))
        hsv[..., 0] = (hsv[..., 0] + p.hue) % 1.0
        hsv[..., 1] = np.clip(hsv[..., 1] * p.saturation, 0.0, 1.0)
        out = np.transpose(hsv_to_rgb(hsv), (3, 0, 1, 2))
    return out


def _apply_affine(clip: np.ndarray, p: AugmentParams) -> np.ndarray:
    _, t, h, w = clip.shape
    cy, cx = h / 2.0, w / 2.0
    theta = math.radians(p.angle_deg)
    cos_t, sin_t = math.cos(theta), math.sin(theta)
    # output pixel -> source position (inverse map of rotate+scale then shift)
    ys, xs = np.meshgrid(np.arange(h) + 0.5, np.arange(w) + 0.5, indexing="ij")
    ox = xs - cx - p.tx * w
    oy = ys - cy - p.ty * h
    sx = (cos_t * ox + sin_t * oy) / p.scale + cx
    sy = (-sin_t * ox + cos_t * oy) / p.scale + cy
    out = np.empty_like(clip)
    for ti in range(t):
        frame = np.transpose(clip[:, ti], (1, 2, 0))   # H,W,C
        out[:, ti] = np.transpose(bilinear_sample(frame, sx, sy), (2, 0, 1))
    return out


def apply(clip: np.ndarray, p: AugmentParams) -> np.ndarray:
    """Transform a C,T,H,W clip; the input is never modified."""
    out = np.asarray(clip, dtype=np.float32)
    if p.flip:
        out = out[..., ::-1]
    if (p.brightness, p.contrast, p.saturation, p.hue) != (1.0, 1.0, 1.0, 0.0):
        out = _apply_color(out, p)
    if (p.angle_deg, p.tx, p.ty, p.scale) != (0.0, 0.0, 0.0, 1.0):
        out = _apply_affine(np.ascontiguousarray(out, dtype=np.float64), p)
    return np.clip(out, 0.0, 1.0).astype(np.float32)


def augment(clip: np.ndarray, cfg: AugmentConfig, rng: np.random.Generator) -> np.ndarray:
    return apply(clip, sample_params(cfg, rng))
