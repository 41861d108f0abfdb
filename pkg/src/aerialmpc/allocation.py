"""Expected-motion metric and the weight allocation it drives."""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np


class Mode(enum.Enum):
    FLIGHT = "flight"
    COORDINATED = "coordinated"
    HOVER = "hover"
    CONFIG_ADJUST = "config_adjust"


@dataclass(frozen=True)
class AllocationParams:
    d_f: float = 1.0
    d_h: float = 0.075
    d_edge: float = 0.38
    k_mp: float = 1.0
    k_mn: float = 1.0
    k_q: float = 1000.0
    k_m: float = 10.0
    k_d: float = 100.0
    w2_0: np.ndarray = field(default_factory=lambda: np.ones(9))
    w4_0: np.ndarray = field(default_factory=lambda: np.ones(3))

    def __post_init__(self):
        object.__setattr__(self, "w2_0", np.asarray(self.w2_0, dtype=float).reshape(9))
        object.__setattr__(self, "w4_0", np.asarray(self.w4_0, dtype=float).reshape(3))
        if min(self.d_f, self.d_h, self.d_edge) <= 0:
            raise ValueError("allocation distances must be positive")
        if not (self.d_h < self.d_f and self.d_h < self.d_edge):
            raise ValueError("hover boundary must lie inside both d_f and d_edge")
        if min(self.k_mp, self.k_mn, self.k_q, self.k_m, self.k_d) <= 0:
            raise ValueError("allocation gains must be positive")


@dataclass(frozen=True)
class AllocationState:
    gamma: float
    mode: Mode
    w_q: float
    w_m: float
    w_d: float
    W2: np.ndarray
    W4: np.ndarray


def compute_gamma(d_e: float, d_o: float, d_g: float, params: AllocationParams) -> float:
    """Expected-motion metric in [-1, 1].

    Cases are tried in order and the first match wins. A trajectory too large for hover
    manipulation (``d_g >= d_h``) that is already reached (``d_e <= d_h``) with the arm inside
    the learning space matches none of them; it is scored as coordinated manipulation with
    ``(k_mp + d_h) / (k_mp + d_g)``, which tends to 1 as ``d_g`` shrinks to ``d_h``.
    """
    p = params
    d_f = p.d_h if d_g < p.d_h else p.d_f
    if d_e > d_f:
        return 0.0
    if p.d_h < d_e <= d_f and d_o < p.d_h:
        return (p.k_mp + p.d_h) / (p.k_mp + d_e)
    if d_e <= p.d_h and d_o < p.d_h and d_g < p.d_h:
        return 1.0
    if d_o >= p.d_h:
        return -p.k_mn * min(d_o - p.d_h, p.d_edge - p.d_h) / (p.d_edge - p.d_h)
    return (p.k_mp + p.d_h) / (p.k_mp + d_g)


def compute_weights(gamma: float, d_o: float, params: AllocationParams) -> tuple[float, float, float]:
    w_q = params.k_q * (gamma**2 + 0.1)
    # |gamma| keeps w_m positive and finite in configuration-adjustment mode
    w_m = params.k_m / (abs(gamma) + 0.01)
    w_d = params.k_d * d_o / (1.1 + gamma)
    return w_q, w_m, w_d


def assemble_weight_matrices(w_q: float, w_m: float, w_d: float,
                             params: AllocationParams) -> tuple[np.ndarray, np.ndarray]:
    """Diagonals of W2 and W4."""
    scale = np.array([w_q] * 3 + [w_m] * 6)
    return scale * params.w2_0, w_d * params.w4_0


def classify_mode(gamma: float) -> Mode:
    if gamma < 0:
        return Mode.CONFIG_ADJUST
    if gamma == 0:
        return Mode.FLIGHT
    if gamma >= 1:
        return Mode.HOVER
    return Mode.COORDINATED


def allocate(d_e: float, d_o: float, d_g: float, params: AllocationParams) -> AllocationState:
    gamma = compute_gamma(d_e, d_o, d_g, params)
    w_q, w_m, w_d = compute_weights(gamma, d_o, params)
    W2, W4 = assemble_weight_matrices(w_q, w_m, w_d, params)
    return AllocationState(gamma, classify_mode(gamma), w_q, w_m, w_d, W2, W4)
