"""Fixed-step explicit integrators."""

from __future__ import annotations

import numpy as np


def euler_path(f, y0, t0: float, t1: float, n_steps: int) -> np.ndarray:
    """Forward Euler; returns the states at all ``n_steps + 1`` grid times."""
    h = (t1 - t0) / n_steps
    y = np.array(y0, dtype=np.float64)
    out = [y.copy()]
    for i in range(n_steps):
        y = y + h * f(y, t0 + i * h)
        out.append(y.copy())
    return np.stack(out)


def rk4_path(f, y0, t0: float, t1: float, n_steps: int, record_at=None) -> dict[int, np.ndarray] | np.ndarray:
    """Classical 4th-order Runge-Kutta.

    With ``record_at`` (a sequence of step indices) only those states are
    kept, keyed by step index; otherwise the full path is returned.
    """
    h = (t1 - t0) / n_steps
    y = np.array(y0, dtype=np.float64)
    keep = None if record_at is None else set(record_at)
    out = {} if keep is not None else [y.copy()]
    if keep is not None and 0 in keep:
        out[0] = y.copy()
    for i in range(n_steps):
        t = t0 + i * h
        k1 = f(y, t)
        k2 = f(y + 0.5 * h * k1, t + 0.5 * h)
        k3 = f(y + 0.5 * h * k2, t + 0.5 * h)
        k4 = f(y + h * k3, t + h)
        y = y + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if keep is None:
            out.append(y.copy())
        elif i + 1 in keep:
            out[i + 1] = y.copy()
    return out if keep is not None else np.stack(out)
