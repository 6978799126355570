"""Core raster and label types shared by every stage of the pipeline.

All types wrap numpy arrays in row-major ``(H, W[, C])`` layout.  The wrapped
buffers are copied on construction and marked read-only, so instances are
immutable and safe to share between threads or worker processes.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# Nucleus classes, in the fixed id order used throughout the pipeline.
CLASS_NAMES = {
    1: "neutrophil",
    2: "epithelial",
    3: "lymphocyte",
    4: "plasma",
    5: "eosinophil",
    6: "connective",
}
N_CLASSES = 6

# Evaluation-report column order: (abbreviation, class id).
REPORT_COLUMNS = (
    ("pla", 4),
    ("neu", 1),
    ("epi", 2),
    ("lym", 3),
    ("eos", 5),
    ("con", 6),
)


def _frozen_copy(arr: np.ndarray, dtype=None) -> np.ndarray:
    out = np.array(arr, dtype=dtype, copy=True, order="C")
    out.flags.writeable = False
    return out


@dataclass(frozen=True)
class MultiChannelImage:
    """``H x W x C`` raster with uint8 or float64 channels.

    uint8 channels carry ordinary 8-bit intensities; float64 channels are
    expected to hold unit-interval data and must be finite.
    """

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.data)
        if arr.ndim != 3:
            raise ValueError(f"image must be (H, W, C), got shape {arr.shape}")
        if arr.shape[2] < 1:
            raise ValueError("image needs at least one channel")
        if arr.dtype == np.uint8:
            frozen = _frozen_copy(arr)
        elif np.issubdtype(arr.dtype, np.floating):
            if not np.isfinite(arr).all():
                raise ValueError("float image contains non-finite values")
            frozen = _frozen_copy(arr, dtype=np.float64)
        else:
            raise ValueError(f"unsupported image dtype {arr.dtype}; use u8 or float")
        object.__setattr__(self, "data", frozen)

    @property
    def height(self) -> int:
        return self.data.shape[0]

    @property
    def width(self) -> int:
        return self.data.shape[1]

    @property
    def channels(self) -> int:
        return self.data.shape[2]

    def plane(self, k: int) -> np.ndarray:
        """Read-only view of channel ``k``."""
        return self.data[:, :, k]


@dataclass(frozen=True)
class InstanceMap:
    """``H x W`` integer labels; 0 is background, each positive id one nucleus."""

    labels: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.labels)
        if arr.ndim != 2:
            raise ValueError(f"instance map must be (H, W), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"instance labels must be integer, got {arr.dtype}")
        if arr.size and arr.min() < 0:
            raise ValueError("negative instance label")
        object.__setattr__(self, "labels", _frozen_copy(arr, dtype=np.int64))

    @property
    def height(self) -> int:
        return self.labels.shape[0]

    @property
    def width(self) -> int:
        return self.labels.shape[1]

    def ids(self) -> np.ndarray:
        """Sorted positive instance ids present in the map."""
        u = np.unique(self.labels)
        return u[u > 0]


@dataclass(frozen=True)
class ClassMap:
    """``H x W`` class labels in ``[0, 6]``; 0 is background."""

    classes: np.ndarray

    def __post_init__(self) -> None:
        arr = np.asarray(self.classes)
        if arr.ndim != 2:
            raise ValueError(f"class map must be (H, W), got shape {arr.shape}")
        if not np.issubdtype(arr.dtype, np.integer):
            raise ValueError(f"class labels must be integer, got {arr.dtype}")
        if arr.size and (arr.min() < 0 or arr.max() > N_CLASSES):
            raise ValueError("class id out of range")
        object.__setattr__(self, "classes", _frozen_copy(arr, dtype=np.uint8))

    @property
    def height(self) -> int:
        return self.classes.shape[0]

    @property
    def width(self) -> int:
        return self.classes.shape[1]


@dataclass(frozen=True)
class HoVerMaps:
    """Per-pixel horizontal/vertical centroid offsets, normalized to [-1, 1].

    ``h`` holds signed horizontal offsets and ``v`` vertical offsets; both are
    exactly zero on background pixels of the instance map they were generated
    from.
    """

    h: np.ndarray
    v: np.ndarray

    def __post_init__(self) -> None:
        h = np.asarray(self.h, dtype=np.float64)
        v = np.asarray(self.v, dtype=np.float64)
        if h.ndim != 2 or h.shape != v.shape:
            raise ValueError(f"h/v must be equal (H, W) planes, got {h.shape} and {v.shape}")
        for name, arr in (("h", h), ("v", v)):
            if not np.isfinite(arr).all():
                raise ValueError(f"{name} map contains non-finite values")
            if arr.size and (arr.min() < -1.0 or arr.max() > 1.0):
                raise ValueError(f"{name} map outside [-1, 1]")
        object.__setattr__(self, "h", _frozen_copy(h))
        object.__setattr__(self, "v", _frozen_copy(v))

    @property
    def height(self) -> int:
        return self.h.shape[0]

    @property
    def width(self) -> int:
        return self.h.shape[1]


def split_channels(img: MultiChannelImage) -> list[np.ndarray]:
    """Split an image into its ``C`` single-channel planes, order preserved."""
    return [img.plane(k) for k in range(img.channels)]


def merge_channels(planes: list[np.ndarray]) -> MultiChannelImage:
    """Stack ``H x W`` planes back into a channel-interleaved image.

    Inverse of :func:`split_channels`; plane ``k`` becomes channel ``k``.
    """
    if not planes:
        raise ValueError("merge_channels needs at least one plane")
    arrs = [np.asarray(p) for p in planes]
    shape = arrs[0].shape
    if any(a.ndim != 2 or a.shape != shape for a in arrs):
        raise ValueError("inconsistent plane shapes")
    if any(a.dtype != arrs[0].dtype for a in arrs):
        raise ValueError("inconsistent plane dtypes")
    return MultiChannelImage(np.stack(arrs, axis=-1))
