"""Sharpness-aware minimization over a user-supplied differentiable objective.

Each step evaluates the gradient twice: once at the current point ``w`` and
once at the adversarially perturbed point ``w + rho * g1 / ||g1||``; the base
optimizer (SGD, optionally with momentum) then updates ``w`` with the
perturbed gradient.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

# An objective maps a parameter vector to (loss, gradient of same length).
Objective = Callable[[np.ndarray], tuple[float, np.ndarray]]


@dataclass(frozen=True)
class SamConfig:
    """Step size, perturbation radius and base-optimizer settings.

    ``momentum = 0`` selects plain SGD; a positive value selects heavy-ball
    SGD with that coefficient.
    """

    lr: float
    steps: int = 1
    rho: float = 0.05
    momentum: float = 0.0
    eps_guard: float = 1e-12

    def __post_init__(self) -> None:
        if not (np.isfinite(self.rho) and self.rho >= 0.0):
            raise ValueError("rho must be finite and >= 0")
        if self.lr <= 0.0:
            raise ValueError("lr must be > 0")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError("momentum must be in [0, 1)")
        if self.steps < 1:
            raise ValueError("steps must be >= 1")
        if self.eps_guard < 0.0:
            raise ValueError("eps_guard must be >= 0")


def _evaluate(f: Objective, w: np.ndarray) -> tuple[float, np.ndarray]:
    loss, grad = f(w)
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != w.shape:
        raise ValueError(f"gradient shape {grad.shape} does not match parameters {w.shape}")
    if not (np.isfinite(loss) and np.isfinite(grad).all()):
        raise ValueError("objective diverged")
    return float(loss), grad


def _step(
    w: np.ndarray, f: Objective, cfg: SamConfig, velocity: np.ndarray
) -> tuple[np.ndarray, np.ndarray, float, float]:
    """One SAM update; returns (w', velocity', loss at w, ||g1||)."""
    loss, g1 = _evaluate(f, w)
    g1_norm = float(np.linalg.norm(g1))
    if cfg.rho == 0.0 or g1_norm == 0.0:
        w_adv = w  # epsilon vanishes; keep w bitwise-identical
    else:
        w_adv = w + cfg.rho * g1 / (g1_norm + cfg.eps_guard)
    _, g2 = _evaluate(f, w_adv)
    if cfg.momentum > 0.0:
        velocity = cfg.momentum * velocity + g2
        update = velocity
    else:
        update = g2
    return w - cfg.lr * update, velocity, loss, g1_norm


def sam_step(w: np.ndarray, f: Objective, cfg: SamConfig) -> np.ndarray:
    """Single SAM update of ``w`` (momentum state starts at zero)."""
    w = np.asarray(w, dtype=np.float64)
    w_next, _, _, _ = _step(w, f, cfg, np.zeros_like(w))
    return w_next


def optimize(
    f: Objective, w0: np.ndarray, cfg: SamConfig
) -> tuple[np.ndarray, list[tuple[int, float, float]]]:
    """Run ``cfg.steps`` SAM updates from ``w0``.

    Returns the final parameters and a trace of ``(step, loss, ||grad||)``
    of length ``steps + 1``, whose first entry describes the initial point.
    """
    w = np.asarray(w0, dtype=np.float64).copy()
    velocity = np.zeros_like(w)
    trace: list[tuple[int, float, float]] = []
    for k in range(cfg.steps):
        w_next, velocity, loss, g1_norm = _step(w, f, cfg, velocity)
        trace.append((k, loss, g1_norm))
        w = w_next
    loss, grad = _evaluate(f, w)
    trace.append((cfg.steps, loss, float(np.linalg.norm(grad))))
    return w, trace
