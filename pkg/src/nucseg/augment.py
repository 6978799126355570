"""Seeded, label-consistent data augmentation.

Parameter sampling is addressed by ``(seed, index)`` through a counter-based
generator, so draws are reproducible and independent of worker scheduling.
Geometric transforms warp image and label maps together (bilinear for the
image, nearest-neighbor for labels); photometric transforms touch the image
only.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .types import ClassMap, InstanceMap, MultiChannelImage


@dataclass(frozen=True)
class AugmentConfig:
    """Ranges and gating probability for every transform.

    Ranges are inclusive ``(lo, hi)`` bounds; a degenerate range pins the
    value.  ``prob`` gates each transform independently.  Hue jitter is in
    8-bit HSV hue units (half degrees), saturation/value jitter are fractions
    of full scale.
    """

    shear_deg: tuple[float, float] = (-5.0, 5.0)
    scale: tuple[float, float] = (0.8, 1.2)
    gauss_blur_sigma: tuple[float, float] = (0.0, 1.0)
    median_kernel: tuple[int, ...] = (3, 5)
    noise_sigma: tuple[float, float] = (0.0, 10.0)
    hue_jitter: float = 8.0
    sat_jitter: float = 0.2
    val_jitter: float = 0.2
    prob: float = 0.5

    def __post_init__(self) -> None:
        for name in ("shear_deg", "scale", "gauss_blur_sigma", "noise_sigma"):
            lo, hi = getattr(self, name)
            if lo > hi:
                raise ValueError(f"{name} range is inverted: {(lo, hi)}")
        if self.scale[0] <= 0.0:
            raise ValueError("scale must stay positive")
        if not self.median_kernel or any(k < 3 or k % 2 == 0 for k in self.median_kernel):
            raise ValueError("median kernels must be odd and >= 3")
        if not 0.0 <= self.prob <= 1.0:
            raise ValueError("prob must be in [0, 1]")
        if min(self.hue_jitter, self.sat_jitter, self.val_jitter) < 0.0:
            raise ValueError("jitter magnitudes must be >= 0")


@dataclass(frozen=True)
class AugmentParams:
    """Concrete transform draws for one sample."""

    apply_affine: bool
    shear_deg: float
    scale: float
    apply_gauss_blur: bool
    gauss_sigma: float
    apply_median: bool
    median_kernel: int
    apply_noise: bool
    noise_sigma: float
    noise_seed: int
    apply_hsv: bool
    hue_delta: float
    sat_delta: float
    val_delta: float

    @property
    def is_identity(self) -> bool:
        return not (
            (self.apply_affine and (self.shear_deg != 0.0 or self.scale != 1.0))
            or (self.apply_gauss_blur and self.gauss_sigma > 0.0)
            or self.apply_median
            or (self.apply_noise and self.noise_sigma > 0.0)
            or (
                self.apply_hsv
                and (self.hue_delta != 0.0 or self.sat_delta != 0.0 or self.val_delta != 0.0)
            )
        )


@dataclass(frozen=True)
class Sample:
    """Image with its paired instance and class maps."""

    image: MultiChannelImage
    instances: InstanceMap
    classes: ClassMap

    def __post_init__(self) -> None:
        hw = (self.image.height, self.image.width)
        if (self.instances.height, self.instances.width) != hw or (
            self.classes.height,
            self.classes.width,
        ) != hw:
            raise ValueError("sample image and label maps must share H, W")


def _rng_at(seed: int, index: int) -> np.random.Generator:
    # Philox counter blocks are partitioned per index, so any (seed, index)
    # stream is independent of draw order elsewhere.
    return np.random.Generator(np.random.Philox(key=np.uint64(seed), counter=int(index) << 128))


def sample_params(cfg: AugmentConfig, rng_seed: int, index: int) -> AugmentParams:
    """Draw transform parameters for sample ``index``; pure in (seed, index).

    Every quantity is drawn unconditionally in a fixed order, so a draw's
    value never depends on which gates fired.
    """
    rng = _rng_at(rng_seed, index)
    gate_affine = rng.uniform() < cfg.prob
    shear = rng.uniform(*cfg.shear_deg)
    scale = rng.uniform(*cfg.scale)
    gate_gauss = rng.uniform() < cfg.prob
    sigma = rng.uniform(*cfg.gauss_blur_sigma)
    gate_median = rng.uniform() < cfg.prob
    kernels = tuple(sorted(cfg.median_kernel))
    kernel = kernels[int(rng.integers(0, len(kernels)))]
    gate_noise = rng.uniform() < cfg.prob
    noise_sigma = rng.uniform(*cfg.noise_sigma)
    gate_hsv = rng.uniform() < cfg.prob
    hue = rng.uniform(-cfg.hue_jitter, cfg.hue_jitter)
    sat = rng.uniform(-cfg.sat_jitter, cfg.sat_jitter)
    val = rng.uniform(-cfg.val_jitter, cfg.val_jitter)
    noise_seed = int(rng.integers(0, 2**63, dtype=np.uint64))
    return AugmentParams(
        apply_affine=bool(gate_affine),
        shear_deg=float(shear),
        scale=float(scale),
        apply_gauss_blur=bool(gate_gauss),
        gauss_sigma=float(sigma),
        apply_median=bool(gate_median),
        median_kernel=int(kernel),
        apply_noise=bool(gate_noise),
        noise_sigma=float(noise_sigma),
        noise_seed=noise_seed,
        apply_hsv=bool(gate_hsv),
        hue_delta=float(hue),
        sat_delta=float(sat),
        val_delta=float(val),
    )


def _reflect_index(idx: np.ndarray, n: int) -> np.ndarray:
    """Map integer indices into [0, n) by symmetric (edge-repeating) reflection."""
    if n == 1:
        return np.zeros_like(idx)
    j = np.mod(idx, 2 * n)
    return np.where(j < n, j, 2 * n - 1 - j)


def _source_coords(shape: tuple[int, int], shear_deg: float, scale: float):
    """Inverse-map output pixel centers through shear(scale(.)) about the center."""
    h, w = shape
    cy, cx = (h - 1) / 2.0, (w - 1) / 2.0
    yy, xx = np.meshgrid(np.arange(h, dtype=np.float64), np.arange(w, dtype=np.float64), indexing="ij")
    dy = yy - cy
    dx = xx - cx
    t = math.tan(math.radians(shear_deg))
    sy = dy / scale + cy
    sx = (dx - t * dy) / scale + cx
    return sy, sx


def _warp_bilinear(plane: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    h, w = plane.shape
    y0 = np.floor(sy).astype(np.int64)
    x0 = np.floor(sx).astype(np.int64)
    wy = sy - y0
    wx = sx - x0
    y0r = _reflect_index(y0, h)
    y1r = _reflect_index(y0 + 1, h)
    x0r = _reflect_index(x0, w)
    x1r = _reflect_index(x0 + 1, w)
    top = (1.0 - wx) * plane[y0r, x0r] + wx * plane[y0r, x1r]
    bot = (1.0 - wx) * plane[y1r, x0r] + wx * plane[y1r, x1r]
    return (1.0 - wy) * top + wy * bot


def _warp_nearest(arr: np.ndarray, sy: np.ndarray, sx: np.ndarray) -> np.ndarray:
    yn = _reflect_index(np.floor(sy + 0.5).astype(np.int64), arr.shape[0])
    xn = _reflect_index(np.floor(sx + 0.5).astype(np.int64), arr.shape[1])
    return arr[yn, xn]


def _rgb_to_hsv(rgb: np.ndarray) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """8-bit RGB to (hue in [0, 180), sat in [0, 1], val in [0, 255])."""
    r, g, b = (rgb[:, :, k].astype(np.float64) for k in range(3))
    mx = np.maximum(np.maximum(r, g), b)
    mn = np.minimum(np.minimum(r, g), b)
    d = mx - mn
    with np.errstate(divide="ignore", invalid="ignore"):
        hr = np.mod((g - b) / d, 6.0)
        hg = (b - r) / d + 2.0
        hb = (r - g) / d + 4.0
        s = d / mx
    hue = np.where(mx == r, hr, np.where(mx == g, hg, hb)) * 30.0
    hue[d == 0] = 0.0
    s[mx == 0] = 0.0
    return hue, s, mx


def _hsv_to_rgb(hue: np.ndarray, s: np.ndarray, v: np.ndarray) -> np.ndarray:
    c = v * s
    hp = hue / 30.0
    x = c * (1.0 - np.abs(np.mod(hp, 2.0) - 1.0))
    m = v - c
    zeros = np.zeros_like(c)
    sector = np.floor(hp).astype(np.int64) % 6
    r = np.choose(sector, (c, x, zeros, zeros, x, c))
    g = np.choose(sector, (x, c, c, x, zeros, zeros))
    b = np.choose(sector, (zeros, zeros, x, c, c, x))
    rgb = np.stack((r + m, g + m, b + m), axis=-1)
    return np.clip(np.floor(rgb + 0.5), 0.0, 255.0).astype(np.uint8)


def apply(params: AugmentParams, s: Sample) -> Sample:
    """Apply sampled transforms to a sample; labels are never interpolated.

    A single affine transform (shear of scale, about the image center, with
    reflect padding) warps the image bilinearly and both label maps by
    nearest neighbor.  Blur, median, additive noise and HSV jitter then apply
    to the image only, in that fixed order.
    """
    img = s.image.data
    inst = s.instances.labels
    cls = s.classes.classes
    changed = False

    if params.apply_affine and (params.shear_deg != 0.0 or params.scale != 1.0):
        sy, sx = _source_coords(img.shape[:2], params.shear_deg, params.scale)
        planes = [_warp_bilinear(img[:, :, k].astype(np.float64), sy, sx) for k in range(img.shape[2])]
        warped = np.stack(planes, axis=-1)
        if img.dtype == np.uint8:
            img = np.clip(np.floor(warped + 0.5), 0.0, 255.0).astype(np.uint8)
        else:
            img = warped
        inst = _warp_nearest(inst, sy, sx)
        cls = _warp_nearest(cls, sy, sx)
        changed = True

    if params.apply_gauss_blur and params.gauss_sigma > 0.0:
        blurred = ndimage.gaussian_filter(
            img.astype(np.float64), sigma=(params.gauss_sigma, params.gauss_sigma, 0.0), mode="reflect"
        )
        img = np.clip(np.floor(blurred + 0.5), 0.0, 255.0).astype(np.uint8) if img.dtype == np.uint8 else blurred
        changed = True

    if params.apply_median:
        k = params.median_kernel
        img = ndimage.median_filter(img, size=(k, k, 1), mode="reflect")
        changed = True

    if params.apply_noise and params.noise_sigma > 0.0:
        rng = np.random.Generator(np.random.Philox(key=np.uint64(params.noise_seed)))
        sigma = params.noise_sigma if img.dtype == np.uint8 else params.noise_sigma / 255.0
        noisy = img.astype(np.float64) + rng.normal(0.0, sigma, size=img.shape)
        img = np.clip(np.floor(noisy + 0.5), 0.0, 255.0).astype(np.uint8) if img.dtype == np.uint8 else noisy
        changed = True

    hsv_active = params.hue_delta != 0.0 or params.sat_delta != 0.0 or params.val_delta != 0.0
    if params.apply_hsv and hsv_active and img.shape[2] == 3 and img.dtype == np.uint8:
        hue, sat, val = _rgb_to_hsv(img)
        hue = np.mod(hue + params.hue_delta, 180.0)
        sat = np.clip(sat + params.sat_delta, 0.0, 1.0)
        val = np.clip(val + params.val_delta * 255.0, 0.0, 255.0)
        img = _hsv_to_rgb(hue, sat, val)
        changed = True

    if not changed:
        return s
    return Sample(MultiChannelImage(img), InstanceMap(inst), ClassMap(cls))
