"""Tracking metrics over a run log."""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np


@dataclass
class RunMetrics:
    n_cycles: int = 0
    mean_error: float = float("nan")
    max_error: float = float("nan")
    catch_up_time: float = float("nan")
    converged: bool = False
    mode_sequence: list[str] = field(default_factory=list)
    mode_fractions: dict[str, float] = field(default_factory=dict)
    gamma_min: float = float("nan")
    gamma_max: float = float("nan")
    solve_ms_p50: float = float("nan")
    solve_ms_p99: float = float("nan")
    solve_ms_max: float = float("nan")
    status: str = "ok"

    def to_dict(self) -> dict:
        return asdict(self)


def stable_window_start(times, errors, threshold: float = 0.05, hold: float = 2.0) -> int | None:
    """Index of the first sample after which the error stays below ``threshold`` for ``hold``
    seconds without interruption, or None."""
    times = np.asarray(times, float)
    below = np.asarray(errors, float) < threshold
    start = None
    for i, ok in enumerate(below):
        if not ok:
            start = None
            continue
        if start is None:
            start = i
        if times[i] - times[start] >= hold:
            return start
    return None


def collapse_modes(modes) -> list[str]:
    seq = []
    for m in modes:
        if not seq or seq[-1] != m:
            seq.append(m)
    return seq


def compute_metrics(times, errors, gammas=None, modes=None, solve_times=None,
                    threshold: float = 0.05, hold: float = 2.0) -> RunMetrics:
    """Errors are Euclidean end-effector position errors (m); ``solve_times`` in seconds.

    Mean and max are taken over the stable window; when it is never reached the whole log is
    used and ``converged`` is False.
    """
    times = np.asarray(times, float)
    errors = np.asarray(errors, float)
    m = RunMetrics(n_cycles=len(times))
    if len(times) == 0:
        m.status = "empty"
        return m
    start = stable_window_start(times, errors, threshold, hold)
    window = errors[start:] if start is not None else errors
    m.converged = start is not None
    m.catch_up_time = float(times[start]) if start is not None else float("nan")
    m.mean_error = float(np.mean(window))
    m.max_error = float(np.max(window))
    if gammas is not None and len(gammas):
        g = np.asarray(gammas, float)
        m.gamma_min, m.gamma_max = float(g.min()), float(g.max())
    if modes is not None and len(modes):
        modes = list(modes)
        m.mode_sequence = collapse_modes(modes)
        names, counts = np.unique(modes, return_counts=True)
        m.mode_fractions = {str(n): float(c) / len(modes) for n, c in zip(names, counts)}
    if solve_times is not None and len(solve_times):
        ms = 1e3 * np.asarray(solve_times, float)
        m.solve_ms_p50 = float(np.percentile(ms, 50))
        m.solve_ms_p99 = float(np.percentile(ms, 99))
        m.solve_ms_max = float(ms.max())
    if not m.converged:
        m.status = "not_converged"
    return m
