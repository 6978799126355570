"""Contrast enhancement and multi-color-space channel stacking.

RGB tiles are optionally CLAHE-enhanced per channel, then combined with
saturation (HSV) and red/blue chrominance (YCrCb, BT.601 full-range) planes
into a single multi-channel image.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .types import MultiChannelImage, merge_channels

SELECTORS = ("B", "G", "R", "S", "Cr", "Cb")
DEFAULT_ORDER = ("B", "G", "R", "S", "Cr", "Cb")

_RGB_INDEX = {"R": 0, "G": 1, "B": 2}


@dataclass(frozen=True)
class ClaheParams:
    """CLAHE settings: tile grid is ``(tx, ty)`` counts along width/height.

    ``clip_limit`` is relative to the uniform bin height; values <= 0 disable
    clipping entirely (plain adaptive histogram equalization).
    """

    tile_grid: tuple[int, int] = (8, 8)
    clip_limit: float = 2.0

    def __post_init__(self) -> None:
        tx, ty = self.tile_grid
        if tx < 1 or ty < 1:
            raise ValueError(f"tile grid counts must be >= 1, got {self.tile_grid}")


@dataclass(frozen=True)
class StackConfig:
    """Channel selection and enhancement settings for :func:`preprocess_tile`.

    ``channel_order`` lists unique selectors from ``{B, G, R, S, Cr, Cb}``.
    When ``derive_from_enhanced`` is false (default) the S/Cr/Cb planes are
    computed from the raw RGB values even if CLAHE is enabled.
    """

    channel_order: tuple[str, ...] = DEFAULT_ORDER
    clahe: ClaheParams | None = ClaheParams()
    derive_from_enhanced: bool = False

    def __post_init__(self) -> None:
        order = tuple(self.channel_order)
        if not order:
            raise ValueError("channel_order must not be empty")
        for sel in order:
            if sel not in SELECTORS:
                raise ValueError(f"unknown channel selector: {sel!r}")
        if len(set(order)) != len(order):
            raise ValueError("channel selectors must be unique")
        object.__setattr__(self, "channel_order", order)


def _round_half_up(x: np.ndarray) -> np.ndarray:
    return np.floor(x + 0.5)


def extract_plane(img: MultiChannelImage, selector: str) -> np.ndarray:
    """Extract one u8 plane from an RGB image.

    B/G/R copy the corresponding channel.  S is 8-bit HSV saturation,
    ``round(255 * (max - min) / max)`` with S = 0 on black pixels.  Cr/Cb are
    BT.601 full-range chrominances with +128 offset:
    ``Y = 0.299 R + 0.587 G + 0.114 B``,
    ``Cr = clamp(round((R - Y) * 0.713 + 128))``,
    ``Cb = clamp(round((B - Y) * 0.564 + 128))``.
    """
    if img.channels != 3:
        raise ValueError(f"extract_plane needs a 3-channel RGB image, got C={img.channels}")
    if img.data.dtype != np.uint8:
        raise ValueError("extract_plane needs a u8 image")
    if selector in _RGB_INDEX:
        return img.plane(_RGB_INDEX[selector]).copy()
    r = img.plane(0).astype(np.float64)
    g = img.plane(1).astype(np.float64)
    b = img.plane(2).astype(np.float64)
    if selector == "S":
        mx = np.maximum(np.maximum(r, g), b)
        mn = np.minimum(np.minimum(r, g), b)
        with np.errstate(divide="ignore", invalid="ignore"):
            s = _round_half_up(255.0 * (mx - mn) / mx)
        s[mx == 0] = 0.0
        return s.astype(np.uint8)
    y = 0.299 * r + 0.587 * g + 0.114 * b
    if selector == "Cr":
        cr = _round_half_up((r - y) * 0.713 + 128.0)
        return np.clip(cr, 0.0, 255.0).astype(np.uint8)
    if selector == "Cb":
        cb = _round_half_up((b - y) * 0.564 + 128.0)
        return np.clip(cb, 0.0, 255.0).astype(np.uint8)
    raise ValueError(f"unknown channel selector: {selector!r}")


def _tile_luts(plane: np.ndarray, params: ClaheParams) -> np.ndarray:
    """Per-tile equalization LUTs for an already tile-padded plane.

    Returns an int64 table of shape ``(ty, tx, 256)``.  Constant tiles (all
    mass in one histogram bin) keep an identity LUT so they are fixpoints.
    """
    tx, ty = params.tile_grid
    hp, wp = plane.shape
    th, tw = hp // ty, wp // tx
    area = th * tw
    identity = np.arange(256, dtype=np.int64)
    luts = np.empty((ty, tx, 256), dtype=np.int64)
    clip = 0
    if params.clip_limit > 0:
        clip = max(1, int(params.clip_limit * area / 256.0))
    for j in range(ty):
        for i in range(tx):
            tile = plane[j * th : (j + 1) * th, i * tw : (i + 1) * tw]
            hist = np.bincount(tile.ravel(), minlength=256)
            if hist.max() == area:  # constant tile: cdf_min == area
                luts[j, i] = identity
                continue
            if clip:
                excess = int(np.maximum(hist - clip, 0).sum())
                hist = np.minimum(hist, clip)
                q, r = divmod(excess, 256)
                hist = hist + q
                hist[:r] += 1
            cdf = np.cumsum(hist)
            cdf_min = int(cdf[np.argmax(cdf > 0)])
            denom = area - cdf_min
            if denom <= 0:
                luts[j, i] = identity
                continue
            lut = _round_half_up((cdf - cdf_min) / denom * 255.0)
            luts[j, i] = np.clip(lut, 0, 255).astype(np.int64)
    return luts


def clahe_plane(plane: np.ndarray, params: ClaheParams = ClaheParams()) -> np.ndarray:
    """Contrast-limited adaptive histogram equalization of a u8 plane.

    The plane is padded to tile multiples by edge reflection, a 256-bin
    histogram is clipped per tile (absolute clip ``max(1, clip * area / 256)``
    with the excess redistributed uniformly: integer quotient to all bins,
    remainder to the lowest-index bins), each tile's cdf becomes a LUT via
    ``round((cdf - cdf_min) / (area - cdf_min) * 255)``, and every pixel is
    mapped by bilinear interpolation of the four nearest tile-center LUTs
    (clamped at the borders) before the padding is cropped off.
    """
    plane = np.asarray(plane)
    if plane.ndim != 2 or plane.dtype != np.uint8:
        raise ValueError("clahe_plane needs a 2-D u8 plane")
    tx, ty = params.tile_grid
    h, w = plane.shape
    if h < ty or w < tx:
        raise ValueError("plane smaller than one tile per axis")
    th = -(-h // ty)
    tw = -(-w // tx)
    padded = np.pad(plane, ((0, th * ty - h), (0, tw * tx - w)), mode="symmetric")
    luts = _tile_luts(padded, params)

    hp, wp = padded.shape
    fy = np.clip((np.arange(hp) + 0.5) / th - 0.5, 0.0, ty - 1.0)
    fx = np.clip((np.arange(wp) + 0.5) / tw - 0.5, 0.0, tx - 1.0)
    ty0 = fy.astype(np.int64)
    tx0 = fx.astype(np.int64)
    ty1 = np.minimum(ty0 + 1, ty - 1)
    tx1 = np.minimum(tx0 + 1, tx - 1)
    wy = (fy - ty0)[:, None]
    wx = (fx - tx0)[None, :]

    idx = padded.astype(np.int64)
    l00 = luts[ty0[:, None], tx0[None, :], idx]
    l01 = luts[ty0[:, None], tx1[None, :], idx]
    l10 = luts[ty1[:, None], tx0[None, :], idx]
    l11 = luts[ty1[:, None], tx1[None, :], idx]
    top = (1.0 - wx) * l00 + wx * l01
    bot = (1.0 - wx) * l10 + wx * l11
    out = (1.0 - wy) * top + wy * bot
    return _round_half_up(out).astype(np.uint8)[:h, :w]


def preprocess_tile(img: MultiChannelImage, cfg: StackConfig = StackConfig()) -> MultiChannelImage:
    """Build the stacked multi-channel input for one RGB tile.

    When CLAHE is configured, R, G and B are enhanced independently and the
    B/G/R output channels come from the enhanced planes; S/Cr/Cb are derived
    from the raw RGB unless ``cfg.derive_from_enhanced`` is set.
    """
    if img.channels != 3:
        raise ValueError(f"preprocess_tile needs a 3-channel RGB image, got C={img.channels}")
    if img.data.dtype != np.uint8:
        raise ValueError("preprocess_tile needs a u8 image")
    if cfg.clahe is not None:
        enhanced = merge_channels([clahe_plane(img.plane(k), cfg.clahe) for k in range(3)])
    else:
        enhanced = img
    chroma_src = enhanced if cfg.derive_from_enhanced else img
    planes = []
    for sel in cfg.channel_order:
        src = enhanced if sel in _RGB_INDEX else chroma_src
        planes.append(extract_plane(src, sel))
    return merge_channels(planes)
