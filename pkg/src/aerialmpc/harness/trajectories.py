"""End-effector reference generators."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TrajectorySample:
    p: np.ndarray  # desired end-effector position (m)
    v: np.ndarray  # trajectory velocity (m/s)
    d_g: float  # maximum diameter of the trajectory (m)
    t: float


def clover_trajectory(t: float, scale: float = 0.5, period: float = 40.0,
                      center=(0.0, 0.0, 1.0)) -> TrajectorySample:
    """Four-leaf rose ``r = scale * cos(2 theta)`` in the horizontal plane, ``theta = 2 pi t / period``."""
    if period <= 0:
        raise ValueError("period must be positive")
    w = 2 * np.pi / period
    th = w * t
    r = scale * np.cos(2 * th)
    dr = -2 * scale * w * np.sin(2 * th)
    c, s = np.cos(th), np.sin(th)
    p = np.asarray(center, float) + np.array([r * c, r * s, 0.0])
    v = np.array([dr * c - r * w * s, dr * s + r * w * c, 0.0])
    return TrajectorySample(p=p, v=v, d_g=2.0 * scale, t=t)


def linear_target_trajectory(t: float, start, velocity, offset=(0.0, 0.0, 0.0),
                             d_g: float = 0.0) -> TrajectorySample:
    start = np.asarray(start, float)
    velocity = np.asarray(velocity, float)
    return TrajectorySample(p=start + velocity * t + np.asarray(offset, float), v=velocity.copy(),
                            d_g=d_g, t=t)


def moving_target_trajectory(t: float, start=(0.0, 1.4, 0.0), velocity=(0.0, 0.05, 0.0),
                             height: float = 0.6) -> TrajectorySample:
    """Point target moving along +y; the end-effector follows ``height`` above it."""
    if t < 0:
        raise ValueError("time must be non-negative")
    return linear_target_trajectory(t, start, velocity, offset=(0.0, 0.0, height), d_g=0.0)
