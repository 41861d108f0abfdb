"""Projected-Newton solver for convex box-constrained quadratic programs.

    minimize 0.5 x'Hx + g'x   subject to   lo <= x <= hi
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg


@dataclass
class QpResult:
    x: np.ndarray
    objective: float
    iterations: int
    converged: bool
    kkt: float


def objective(H, g, x) -> float:
    return float(0.5 * x @ H @ x + g @ x)


def kkt_residual(H, g, x, lo, hi) -> float:
    """Infinity norm of the projected-gradient step ``x - P(x - grad)``, scaled by ``1 + |g|_inf``."""
    grad = H @ x + g
    r = x - np.clip(x - grad, lo, hi)
    return float(np.max(np.abs(r), initial=0.0) / (1.0 + np.max(np.abs(g), initial=0.0)))


def _singular_direction(Hff, gf):
    """Least-squares Newton step plus a long step along the gradient's null-space part,
    where the objective is linear and only the bounds stop it."""
    step = np.linalg.lstsq(Hff, gf, rcond=None)[0]
    null = gf - Hff @ step
    d = -step
    size = np.max(np.abs(null), initial=0.0)
    if size > 1e-12 * (1.0 + np.max(np.abs(gf))):
        d -= null * (1e6 / size)
    return d


def _newton_direction(H, grad, free):
    d = np.zeros_like(grad)
    if not free.any():
        return d
    Hff = H[np.ix_(free, free)]
    try:
        c = scipy.linalg.cho_factor(Hff, check_finite=False)
        d[free] = -scipy.linalg.cho_solve(c, grad[free], check_finite=False)
    except np.linalg.LinAlgError:
        d[free] = _singular_direction(Hff, grad[free])
    if not np.all(np.isfinite(d)) or grad @ d > 0:
        d[free] = _singular_direction(Hff, grad[free])
    return d


def solve_box_qp(H, g, lo, hi, x0=None, tol: float = 1e-8, max_iter: int = 100) -> QpResult:
    """Projected Newton with an Armijo search along the projection arc.

    The iterate stays inside the box at every step, so a non-converged result is still
    feasible; it is the best iterate seen.
    """
    H = np.asarray(H, dtype=float)
    g = np.asarray(g, dtype=float)
    n = len(g)
    lo = np.broadcast_to(np.asarray(lo, dtype=float), (n,))
    hi = np.broadcast_to(np.asarray(hi, dtype=float), (n,))
    if np.any(lo > hi):
        raise ValueError("box bounds are not ordered")
    x = np.clip(np.zeros(n) if x0 is None else np.asarray(x0, dtype=float), lo, hi)
    f = objective(H, g, x)
    kkt = kkt_residual(H, g, x, lo, hi)
    it = 0
    while kkt > tol and it < max_iter:
        grad = H @ x + g
        eps = min(1e-9, kkt)
        binding = ((x <= lo + eps) & (grad > 0)) | ((x >= hi - eps) & (grad < 0))
        d = _newton_direction(H, grad, ~binding)
        t = 1.0
        while True:
            x_new = np.clip(x + t * d, lo, hi)
            f_new = objective(H, g, x_new)
            if f_new <= f + 1e-4 * grad @ (x_new - x) or t < 1e-12:
                break
            t *= 0.5
        it += 1
        if f_new > f:
            # no descent left at working precision
            break
        x, f = x_new, f_new
        kkt = kkt_residual(H, g, x, lo, hi)
    return QpResult(x=x, objective=f, iterations=it, converged=kkt <= tol, kkt=kkt)
