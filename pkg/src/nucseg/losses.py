"""Reference loss kernels with analytic input gradients.

All classification losses take raw logits and apply softmax internally, so
the returned gradients are with respect to the logits and exercise the full
chain.  Values are non-negative and reach 0 (up to smoothing terms) at a
perfect prediction.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .hover import HoVerMaps, _sobel_kernels, sobel_plane


@dataclass(frozen=True)
class LossInput:
    """Pixel logits with their target classes.

    ``targets`` may be given as an ``(N,)`` vector of class indices or an
    ``(N, C)`` one-hot matrix; it is normalized to indices.  ``rare_classes``
    marks the classes treated as rare by the asymmetric losses and defaults
    to every nonzero class.
    """

    logits: np.ndarray
    targets: np.ndarray
    rare_classes: frozenset[int] | None = None

    def __post_init__(self) -> None:
        z = np.asarray(self.logits, dtype=np.float64)
        if z.ndim != 2 or z.shape[1] < 2:
            raise ValueError(f"logits must be (N, C>=2), got {z.shape}")
        if not np.isfinite(z).all():
            raise ValueError("logits contain non-finite values")
        n, c = z.shape
        t = np.asarray(self.targets)
        if t.ndim == 2:
            if t.shape != (n, c):
                raise ValueError(f"one-hot targets must be {z.shape}, got {t.shape}")
            tf = t.astype(np.float64)
            if not (np.isin(tf, (0.0, 1.0)).all() and (tf.sum(axis=1) == 1.0).all()):
                raise ValueError("one-hot rows must contain a single 1")
            t = tf.argmax(axis=1)
        elif t.ndim == 1:
            if t.shape[0] != n:
                raise ValueError("targets length must match logits rows")
        else:
            raise ValueError("targets must be (N,) indices or (N, C) one-hot")
        t = t.astype(np.int64)
        if t.min() < 0 or t.max() >= c:
            raise ValueError("target class out of range")
        rare = self.rare_classes
        rare = frozenset(range(1, c)) if rare is None else frozenset(int(r) for r in rare)
        if any(r < 0 or r >= c for r in rare):
            raise ValueError("rare class out of range")
        z = z.copy()
        z.flags.writeable = False
        t.flags.writeable = False
        object.__setattr__(self, "logits", z)
        object.__setattr__(self, "targets", t)
        object.__setattr__(self, "rare_classes", rare)

    @property
    def n_pixels(self) -> int:
        return self.logits.shape[0]

    @property
    def n_classes(self) -> int:
        return self.logits.shape[1]

    def one_hot(self) -> np.ndarray:
        g = np.zeros(self.logits.shape, dtype=np.float64)
        g[np.arange(self.n_pixels), self.targets] = 1.0
        return g

    def rare_mask(self) -> np.ndarray:
        """Per-class boolean vector of the rare set."""
        m = np.zeros(self.n_classes, dtype=bool)
        m[list(self.rare_classes)] = True
        return m


@dataclass(frozen=True)
class UflParams:
    lam: float = 0.5
    delta: float = 0.6
    gamma: float = 0.5
    smooth: float = 1e-6

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lam must be in [0, 1]")
        if not 0.0 < self.delta < 1.0:
            raise ValueError("delta must be in (0, 1)")
        if not 0.0 <= self.gamma < 1.0:
            raise ValueError("gamma must be in [0, 1)")


@dataclass(frozen=True)
class LossResult:
    value: float
    grad_logits: np.ndarray


def _softmax(z: np.ndarray) -> np.ndarray:
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _chain_softmax(p: np.ndarray, dldp: np.ndarray) -> np.ndarray:
    """Backpropagate a probability-space gradient through softmax, rowwise."""
    inner = (dldp * p).sum(axis=1, keepdims=True)
    return p * (dldp - inner)


def dice_loss(inp: LossInput, smooth: float = 1e-6) -> LossResult:
    """Soft multi-class Dice loss, averaged over classes.

    Per class ``D_c = (2 sum(p g) + s) / (sum(p) + sum(g) + s)``; the value is
    ``mean_c(1 - D_c)``.
    """
    p = _softmax(inp.logits)
    g = inp.one_hot()
    c = inp.n_classes
    inter = (p * g).sum(axis=0)
    denom = p.sum(axis=0) + g.sum(axis=0) + smooth
    numer = 2.0 * inter + smooth
    value = float(np.mean(1.0 - numer / denom))
    # d(1 - D_c)/dp_ic = -(2 g_ic denom_c - numer_c) / denom_c^2, averaged over C
    dldp = -(2.0 * g * denom - numer) / denom**2 / c
    return LossResult(value, _chain_softmax(p, dldp))


def asym_focal_loss(inp: LossInput, delta: float = 0.6, gamma: float = 0.5) -> LossResult:
    """Asymmetric focal loss: focal suppression only on non-rare pixels.

    ``(1/N) [ delta * sum_rare(-ln p_t)
            + (1 - delta) * sum_other(-(1 - p_t)^gamma ln p_t) ]``
    where ``p_t`` is the probability of the true class.
    """
    p = _softmax(inp.logits)
    n = inp.n_pixels
    rows = np.arange(n)
    pt = p[rows, inp.targets]
    lnpt = np.log(pt)
    rare = inp.rare_mask()[inp.targets]
    q = 1.0 - pt
    q_safe = np.where(q > 0.0, q, 1.0)
    qg = np.where(q > 0.0, q_safe**gamma, 1.0 if gamma == 0.0 else 0.0)
    value = float(
        (delta * -lnpt[rare].sum() + (1.0 - delta) * (-(qg * lnpt))[~rare].sum()) / n
    )
    # d/dp_t of each pixel's contribution
    dldpt = np.empty(n)
    dldpt[rare] = -delta / pt[rare]
    # d/dp [-(1-p)^g ln p] = g (1-p)^(g-1) ln p - (1-p)^g / p
    qgm1 = np.where(q > 0.0, q_safe ** (gamma - 1.0), 0.0)
    dldpt[~rare] = (1.0 - delta) * (gamma * qgm1 * lnpt - qg / pt)[~rare]
    dldpt /= n
    dldp = np.zeros_like(p)
    dldp[rows, inp.targets] = dldpt
    return LossResult(value, _chain_softmax(p, dldp))


def asym_focal_tversky_loss(
    inp: LossInput, delta: float = 0.6, gamma: float = 0.5, smooth: float = 1e-6
) -> LossResult:
    """Asymmetric focal Tversky loss.

    Per class the Tversky index weights false negatives by ``delta`` and
    false positives by ``1 - delta``; rare classes contribute
    ``(1 - TI)^(1 - gamma)``, the rest ``1 - TI``, summed over classes.
    ``gamma = 1`` is permitted: rare classes then contribute the constant 1.
    """
    p = _softmax(inp.logits)
    g = inp.one_hot()
    inter = (p * g).sum(axis=0)
    # denominator simplifies to delta sum(g) + (1 - delta) sum(p) + s
    denom = delta * g.sum(axis=0) + (1.0 - delta) * p.sum(axis=0) + smooth
    ti = (inter + smooth) / denom
    omt = 1.0 - ti
    rare = inp.rare_mask()
    contrib = np.where(rare, np.where(omt > 0.0, omt, 0.0) ** (1.0 - gamma), omt)
    value = float(contrib.sum())
    # d(contrib_c)/dTI_c; the (1-TI)^(-gamma) factor is clamped to 0 at TI = 1,
    # which only occurs at exact saturation
    omt_safe = np.where(omt > 0.0, omt, 1.0)
    dcontrib_dti = np.where(
        rare, -(1.0 - gamma) * np.where(omt > 0.0, omt_safe ** (-gamma), 0.0), -1.0
    )
    # dTI_c/dp_ic = (g_ic denom_c - (inter_c + s)(1 - delta)) / denom_c^2
    dti_dp = (g * denom - (inter + smooth) * (1.0 - delta)) / denom**2
    dldp = dcontrib_dti * dti_dp
    return LossResult(value, _chain_softmax(p, dldp))


def unified_focal_loss(inp: LossInput, params: UflParams = UflParams()) -> LossResult:
    """Convex combination of asymmetric focal and focal-Tversky losses."""
    f = asym_focal_loss(inp, params.delta, params.gamma)
    t = asym_focal_tversky_loss(inp, params.delta, params.gamma, params.smooth)
    value = params.lam * f.value + (1.0 - params.lam) * t.value
    grad = params.lam * f.grad_logits + (1.0 - params.lam) * t.grad_logits
    return LossResult(float(value), grad)


@dataclass(frozen=True)
class HvLossResult:
    value: float
    grad_h: np.ndarray
    grad_v: np.ndarray


def _hv_planes(maps) -> tuple[np.ndarray, np.ndarray]:
    if isinstance(maps, HoVerMaps):
        return maps.h, maps.v
    arr = np.asarray(maps, dtype=np.float64)
    if arr.ndim != 3 or arr.shape[2] != 2:
        raise ValueError(f"hv maps must be HoVerMaps or (H, W, 2), got {arr.shape}")
    return arr[:, :, 0], arr[:, :, 1]


def _correlate1d_adjoint(u: np.ndarray, w: np.ndarray, axis: int) -> np.ndarray:
    """Adjoint of reflected-border 1-D correlation along ``axis``."""
    if axis == 0:
        return _correlate1d_adjoint(u.T, w, 1).T
    n = u.shape[1]
    p = (len(w) - 1) // 2
    t = np.zeros((u.shape[0], n + 2 * p))
    for j, wj in enumerate(w):
        t[:, j : j + n] += wj * u
    out = t[:, p : p + n].copy()
    for k in range(p):
        out[:, k] += t[:, p - 1 - k]  # left pad position -1-k mirrors to k
        out[:, n - 1 - k] += t[:, n + p + k]  # right pad position n+k mirrors back
    return out


def _sobel_adjoint(u: np.ndarray, axis: str, aperture: int) -> np.ndarray:
    deriv, smooth = _sobel_kernels(aperture)
    if axis == "x":
        out = _correlate1d_adjoint(u, smooth, axis=0)
        return _correlate1d_adjoint(out, deriv, axis=1)
    out = _correlate1d_adjoint(u, smooth, axis=1)
    return _correlate1d_adjoint(out, deriv, axis=0)


def hv_loss(pred, target, nuclei_mask: np.ndarray, aperture: int = 5) -> HvLossResult:
    """Offset-map regression loss: per-channel MSE plus a masked gradient MSE.

    The second term compares the x-gradient of the horizontal channel and the
    y-gradient of the vertical channel (sobel, aperture 5 by default) over
    the nucleus pixels only; an empty mask drops that term.
    """
    ph, pv = _hv_planes(pred)
    th, tv = _hv_planes(target)
    mask = np.asarray(nuclei_mask).astype(bool)
    if not (ph.shape == th.shape == mask.shape):
        raise ValueError("hv_loss shapes disagree")
    npx = ph.size
    dh = ph - th
    dv = pv - tv
    value = float((dh**2).sum() / npx + (dv**2).sum() / npx)
    grad_h = 2.0 * dh / npx
    grad_v = 2.0 * dv / npx
    nmask = int(mask.sum())
    if nmask > 0:
        rh = sobel_plane(dh, "x", aperture) * mask
        rv = sobel_plane(dv, "y", aperture) * mask
        value += float((rh**2).sum() / nmask + (rv**2).sum() / nmask)
        grad_h = grad_h + 2.0 / nmask * _sobel_adjoint(rh, "x", aperture)
        grad_v = grad_v + 2.0 / nmask * _sobel_adjoint(rv, "y", aperture)
    return HvLossResult(value, grad_h, grad_v)


@dataclass(frozen=True)
class HvInput:
    """Bundle of predicted maps, target maps and nucleus mask for hv_loss."""

    pred: object
    target: object
    mask: np.ndarray


@dataclass(frozen=True)
class CompositeWeights:
    w_ufl: float = 4.0
    w_dice: float = 1.0
    w_hv: float = 1.0


@dataclass(frozen=True)
class CompositeResult:
    value: float
    np_grad: np.ndarray
    tp_grad: np.ndarray
    grad_h: np.ndarray
    grad_v: np.ndarray


def composite_loss(
    np_in: LossInput,
    tp_in: LossInput,
    hv_in: HvInput,
    weights: CompositeWeights = CompositeWeights(),
    ufl: UflParams = UflParams(),
    dice_smooth: float = 1e-6,
) -> CompositeResult:
    """Weighted training objective over the three decoder branches.

    ``sum_{b in {np, tp}} (w_ufl UFL_b + w_dice Dice_b) + w_hv hv_loss``;
    gradients are reported per branch.
    """
    value = 0.0
    grads = []
    for branch in (np_in, tp_in):
        u = unified_focal_loss(branch, ufl)
        d = dice_loss(branch, dice_smooth)
        value += weights.w_ufl * u.value + weights.w_dice * d.value
        grads.append(weights.w_ufl * u.grad_logits + weights.w_dice * d.grad_logits)
    hv = hv_loss(hv_in.pred, hv_in.target, hv_in.mask)
    value += weights.w_hv * hv.value
    return CompositeResult(
        float(value),
        grads[0],
        grads[1],
        weights.w_hv * hv.grad_h,
        weights.w_hv * hv.grad_v,
    )
