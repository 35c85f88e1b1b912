"""Image warps and the stochastic training augmentation.

All warps work on single-channel float arrays and interpolate bilinearly
with half-pixel centers.  Pixels sampled outside the source count as
zero, so outputs stay inside [min(input), max(input)] union {0}.  Warps
that turn out to be identities (same-size resize, zero rotation) return
a bitwise copy of the input instead of resampling.

The augment() draw order is fixed: crop area, crop offsets, flip coin,
rotation angle.  Reordering the draws would silently change every seeded
training run.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ShapeError

Array = np.ndarray


@dataclass(frozen=True)
class AugmentPolicy:
    crop_scale: tuple[float, float] = (0.8, 1.0)
    hflip_prob: float = 0.5
    rotate_degrees: float = 10.0

    def __post_init__(self):
        lo, hi = self.crop_scale
        if not (0.0 < lo <= hi <= 1.0):
            raise ConfigError(f"crop_scale {self.crop_scale} must satisfy 0 < lo <= hi <= 1")
        if not (0.0 <= self.hflip_prob <= 1.0):
            raise ConfigError("hflip_prob must lie in [0, 1]")
        if self.rotate_degrees < 0.0:
            raise ConfigError("rotate_degrees must be non-negative")


def hflip(image: Array) -> Array:
    if image.ndim != 2:
        raise ShapeError("hflip expects a 2-d image")
    return np.ascontiguousarray(image[:, ::-1])


def bilinear_resize(image: Array, out_h: int, out_w: int) -> Array:
    if image.ndim != 2:
        raise ShapeError("bilinear_resize expects a 2-d image")
    h, w = image.shape
    if out_h < 1 or out_w < 1:
        raise ShapeError("output size must be positive")
    if (out_h, out_w) == (h, w):
        return image.copy()
    src_i = np.clip((np.arange(out_h) + 0.5) * (h / out_h) - 0.5, 0.0, h - 1.0)
    src_j = np.clip((np.arange(out_w) + 0.5) * (w / out_w) - 0.5, 0.0, w - 1.0)
    i0 = np.floor(src_i).astype(np.int64)
    j0 = np.floor(src_j).astype(np.int64)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fi = (src_i - i0).astype(np.float32)[:, None]
    fj = (src_j - j0).astype(np.float32)[None, :]
    img = image.astype(np.float32)
    top = img[i0[:, None], j0[None, :]] * (1 - fj) + img[i0[:, None], j1[None, :]] * fj
    bot = img[i1[:, None], j0[None, :]] * (1 - fj) + img[i1[:, None], j1[None, :]] * fj
    return (top * (1 - fi) + bot * fi).astype(np.float32)


def _sample_bilinear_zero(image: Array, ys: Array, xs: Array) -> Array:
    """Bilinear gather at float coordinates; outside-the-image reads are 0."""
    h, w = image.shape
    i0 = np.floor(ys).astype(np.int64)
    j0 = np.floor(xs).astype(np.int64)
    fi = (ys - i0).astype(np.float32)
    fj = (xs - j0).astype(np.float32)
    img = image.astype(np.float32)
    acc = np.zeros(ys.shape, dtype=np.float32)
    for di, wi in ((0, 1.0 - fi), (1, fi)):
        for dj, wj in ((0, 1.0 - fj), (1, fj)):
            ii = i0 + di
            jj = j0 + dj
            valid = (ii >= 0) & (ii < h) & (jj >= 0) & (jj < w)
            vals = img[np.clip(ii, 0, h - 1), np.clip(jj, 0, w - 1)]
            acc += wi * wj * np.where(valid, vals, 0.0)
    return acc


def rotate(image: Array, degrees: float) -> Array:
    """Rotate about the image center, zero padding outside the frame."""
    if image.ndim != 2:
        raise ShapeError("rotate expects a 2-d image")
    if degrees == 0.0:
        return image.copy()
    h, w = image.shape
    theta = np.deg2rad(degrees)
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    jj, ii = np.meshgrid(np.arange(w, dtype=np.float64),
                         np.arange(h, dtype=np.float64))
    dx = jj - cx
    dy = ii - cy
    cos_t, sin_t = np.cos(theta), np.sin(theta)
    xs = cos_t * dx + sin_t * dy + cx
    ys = -sin_t * dx + cos_t * dy + cy
    return _sample_bilinear_zero(image, ys, xs)


def resized_crop(image: Array, top: int, left: int, crop_h: int, crop_w: int,
                 out_h: int, out_w: int) -> Array:
    h, w = image.shape
    if crop_h < 1 or crop_w < 1 or top < 0 or left < 0 \
            or top + crop_h > h or left + crop_w > w:
        raise ShapeError(f"crop [{top}:{top + crop_h}, {left}:{left + crop_w}] "
                         f"outside image {image.shape}")
    return bilinear_resize(image[top:top + crop_h, left:left + crop_w], out_h, out_w)


def augment(image: Array, policy: AugmentPolicy, rng: np.random.Generator) -> Array:
    """One stochastic training view: scaled crop, maybe flip, small rotation."""
    h, w = image.shape
    lo, hi = policy.crop_scale
    area = rng.uniform(lo, hi)
    side = float(np.sqrt(area))
    crop_h = min(h, max(1, int(round(h * side))))
    crop_w = min(w, max(1, int(round(w * side))))
    top = int(rng.integers(0, h - crop_h + 1))
    left = int(rng.integers(0, w - crop_w + 1))
    out = resized_crop(image, top, left, crop_h, crop_w, h, w)
    if rng.random() < policy.hflip_prob:
        out = hflip(out)
    angle = float(rng.uniform(-policy.rotate_degrees, policy.rotate_degrees))
    return rotate(out, angle)
