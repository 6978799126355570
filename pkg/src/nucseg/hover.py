"""Horizontal/vertical offset target maps and watershed post-processing.

Target generation encodes, for every nucleus pixel, the signed offset from
the instance centroid, normalized per instance and per axis to [-1, 1].  The
sharp sign flips of these maps between touching nuclei are what the
post-processing exploits: gradients of the predicted maps become a boundary
energy, markers are carved out of the foreground away from boundaries, and a
marker-controlled watershed assigns every foreground pixel to a nucleus.
"""

from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .types import HoVerMaps, InstanceMap, N_CLASSES


@dataclass(frozen=True)
class PredictionMaps:
    """Decoder outputs for one tile.

    ``np_prob`` is the nuclear-pixel probability in [0, 1], ``hv`` the
    regressed offset maps, ``tp_prob`` an optional per-pixel distribution
    over the 7 classes (background + 6 nucleus types).
    """

    np_prob: np.ndarray
    hv: HoVerMaps
    tp_prob: np.ndarray | None = None

    def __post_init__(self) -> None:
        p = np.asarray(self.np_prob, dtype=np.float64)
        if p.ndim != 2:
            raise ValueError(f"np_prob must be (H, W), got {p.shape}")
        if not np.isfinite(p).all() or p.min() < 0.0 or p.max() > 1.0:
            raise ValueError("np_prob must be finite probabilities in [0, 1]")
        if p.shape != (self.hv.height, self.hv.width):
            raise ValueError("np_prob and hv shapes disagree")
        object.__setattr__(self, "np_prob", p)
        if self.tp_prob is not None:
            t = np.asarray(self.tp_prob, dtype=np.float64)
            if t.shape != p.shape + (N_CLASSES + 1,):
                raise ValueError(f"tp_prob must be (H, W, {N_CLASSES + 1}), got {t.shape}")
            if not np.isfinite(t).all():
                raise ValueError("tp_prob contains non-finite values")
            if not np.allclose(t.sum(axis=2), 1.0, atol=1e-5):
                raise ValueError("tp_prob rows must sum to 1")
            object.__setattr__(self, "tp_prob", t)


@dataclass(frozen=True)
class PostprocParams:
    np_threshold: float = 0.5
    sobel_aperture: int = 5
    boundary_threshold: float = 0.4
    min_object_px: int = 10
    marker_open_radius: int = 2
    smooth_kernel: int = 3

    def __post_init__(self) -> None:
        if not 0.0 < self.np_threshold < 1.0:
            raise ValueError("np_threshold must be in (0, 1)")
        if not 0.0 < self.boundary_threshold < 1.0:
            raise ValueError("boundary_threshold must be in (0, 1)")
        if self.sobel_aperture < 3 or self.sobel_aperture % 2 == 0:
            raise ValueError("bad aperture")
        if self.min_object_px < 0 or self.marker_open_radius < 0 or self.smooth_kernel < 1:
            raise ValueError("sizes must be non-negative")


def make_targets(instances: InstanceMap) -> tuple[HoVerMaps, np.ndarray]:
    """Generate offset target maps and the binary nucleus mask.

    For each instance, the centroid is the arithmetic mean of its pixel
    coordinates; horizontal offsets are ``x - cx`` and vertical ``y - cy``.
    Within the instance, positive offsets are divided by the maximum positive
    value and negative offsets by the magnitude of the minimum (per axis;
    division is skipped when the extremum is 0), giving values in [-1, 1]
    with background exactly 0.
    """
    lab = instances.labels
    h = np.zeros(lab.shape, dtype=np.float64)
    v = np.zeros(lab.shape, dtype=np.float64)
    objects = ndimage.find_objects(lab)
    for iid in instances.ids():
        sl = objects[iid - 1]
        box = lab[sl]
        ys, xs = np.nonzero(box == iid)
        hh = xs - xs.mean()
        vv = ys - ys.mean()
        for arr in (hh, vv):
            pos = arr > 0
            if pos.any():
                arr[pos] /= arr[pos].max()
            neg = arr < 0
            if neg.any():
                arr[neg] /= -arr[neg].min()
        h[sl][ys, xs] = hh
        v[sl][ys, xs] = vv
    return HoVerMaps(h, v), (lab > 0).astype(np.uint8)


def _sobel_kernels(aperture: int) -> tuple[np.ndarray, np.ndarray]:
    """Derivative and smoothing kernels; aperture 3 gives [-1,0,1] / [1,2,1]."""
    smooth = np.array([1.0])
    for _ in range(aperture - 1):
        smooth = np.convolve(smooth, [1.0, 1.0])
    deriv = np.array([-1.0, 0.0, 1.0])
    for _ in range(aperture - 3):
        deriv = np.convolve(deriv, [1.0, 1.0])
    return deriv, smooth


def sobel_plane(plane: np.ndarray, axis: str, aperture: int = 5) -> np.ndarray:
    """Separable derivative filter with reflected borders.

    ``axis='x'`` differentiates along columns and smooths along rows;
    ``axis='y'`` is the transpose.  The kernels are the binomial-smoothed
    central differences of the requested aperture.
    """
    plane = np.asarray(plane, dtype=np.float64)
    if plane.ndim != 2:
        raise ValueError("sobel_plane needs a 2-D plane")
    if aperture % 2 == 0 or aperture < 3 or aperture > min(plane.shape):
        raise ValueError("bad aperture")
    deriv, smooth = _sobel_kernels(aperture)
    if axis == "x":
        out = ndimage.correlate1d(plane, deriv, axis=1, mode="reflect")
        return ndimage.correlate1d(out, smooth, axis=0, mode="reflect")
    if axis == "y":
        out = ndimage.correlate1d(plane, deriv, axis=0, mode="reflect")
        return ndimage.correlate1d(out, smooth, axis=1, mode="reflect")
    raise ValueError(f"axis must be 'x' or 'y', got {axis!r}")


def label_components(binary: np.ndarray, min_size: int = 0) -> InstanceMap:
    """Label 8-connected foreground components 1..K in first-pixel scan order.

    Components smaller than ``min_size`` pixels are dropped (set to 0); the
    surviving labels stay contiguous in scan order.
    """
    binary = np.asarray(binary).astype(bool)
    lab, n = ndimage.label(binary, structure=np.ones((3, 3), dtype=np.int8))
    if n == 0:
        return InstanceMap(np.zeros(binary.shape, dtype=np.int64))
    flat = lab.ravel()
    ids, first = np.unique(flat, return_index=True)
    keep = ids > 0
    ids, first = ids[keep], first[keep]
    counts = np.bincount(flat, minlength=n + 1)
    remap = np.zeros(n + 1, dtype=np.int64)
    nxt = 1
    for iid in ids[np.argsort(first)]:
        if counts[iid] >= min_size:
            remap[iid] = nxt
            nxt += 1
    return InstanceMap(remap[lab])


def _minmax_normalize(plane: np.ndarray) -> np.ndarray:
    """Scale to [0, 1] by the plane's own range; constant planes become 0."""
    lo = plane.min()
    hi = plane.max()
    if hi - lo == 0.0:
        return np.zeros_like(plane)
    return (plane - lo) / (hi - lo)


def _disk(radius: int) -> np.ndarray:
    yy, xx = np.mgrid[-radius : radius + 1, -radius : radius + 1]
    return (yy * yy + xx * xx) <= radius * radius


_N4 = ((-1, 0), (1, 0), (0, -1), (0, 1))


def _watershed(surface: np.ndarray, markers: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Flood ``mask`` from ``markers`` in increasing ``surface`` order.

    4-connected Meyer flooding: the priority queue is keyed on the candidate
    pixel's surface value, with insertion order breaking value ties (marker
    seeds are enqueued in ascending marker id, then scan order).  Fully
    deterministic for identical inputs.
    """
    hgt, wid = surface.shape
    out = markers.astype(np.int64).copy()
    ys, xs = np.nonzero(markers)
    order = np.lexsort((xs, ys, markers[ys, xs]))
    heap: list[tuple[float, int, int, int]] = []
    seq = 0
    for i in order:
        y, x = int(ys[i]), int(xs[i])
        heap.append((float(surface[y, x]), seq, y, x))
        seq += 1
    heapq.heapify(heap)
    mask = mask.astype(bool)
    while heap:
        _, _, y, x = heapq.heappop(heap)
        lab = out[y, x]
        for dy, dx in _N4:
            ny, nx = y + dy, x + dx
            if 0 <= ny < hgt and 0 <= nx < wid and mask[ny, nx] and out[ny, nx] == 0:
                out[ny, nx] = lab
                heapq.heappush(heap, (float(surface[ny, nx]), seq, ny, nx))
                seq += 1
    return out


def instance_classes(labels: np.ndarray, votes: np.ndarray) -> list[int]:
    """Majority class vote per instance id 1..K.

    Background votes (0) are ignored unless an instance has nothing else;
    ties go to the lower class id.
    """
    n = int(labels.max())
    out = []
    for iid in range(1, n + 1):
        ballot = np.bincount(votes[labels == iid], minlength=N_CLASSES + 1)
        fg = ballot[1:]
        if fg.sum() == 0:
            out.append(0)
        else:
            out.append(int(fg.argmax()) + 1)
    return out


def postprocess(
    maps: PredictionMaps, params: PostprocParams = PostprocParams()
) -> tuple[InstanceMap, list[int]]:
    """Turn prediction maps into labeled, classified instances.

    Pipeline: threshold the nucleus probability and drop small components;
    build a boundary energy from min-max normalized sobel responses of the
    offset maps; carve markers out of the foreground away from strong
    boundaries (binary opening with a disk, small markers dropped); flood the
    smoothed inverse energy with a marker-controlled watershed; finally vote
    each instance's class from ``tp_prob`` (class 0 when absent).
    """
    q = label_components(maps.np_prob > params.np_threshold, params.min_object_px).labels > 0
    if not q.any():
        return InstanceMap(np.zeros(q.shape, dtype=np.int64)), []

    gx = _minmax_normalize(sobel_plane(maps.hv.h, "x", params.sobel_aperture))
    gy = _minmax_normalize(sobel_plane(maps.hv.v, "y", params.sobel_aperture))
    boundary = np.maximum(1.0 - gx, 1.0 - gy) - (1.0 - q)
    np.clip(boundary, 0.0, None, out=boundary)

    energy = (1.0 - boundary) * q
    energy = ndimage.uniform_filter(energy, size=params.smooth_kernel, mode="reflect")

    markers = q & ~(boundary >= params.boundary_threshold)
    if params.marker_open_radius > 0:
        st = _disk(params.marker_open_radius)
        markers = ndimage.binary_erosion(markers, st, border_value=1)
        markers = ndimage.binary_dilation(markers, st, border_value=0)
    marker_map = label_components(markers, params.min_object_px).labels

    labels = _watershed(-energy, marker_map, q)
    inst = InstanceMap(labels)
    if maps.tp_prob is None:
        return inst, [0] * int(labels.max())
    return inst, instance_classes(labels, maps.tp_prob.argmax(axis=2))
