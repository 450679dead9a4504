"""Fixed-step classical RK4 for batched (X, V) systems."""

from __future__ import annotations

import numpy as np


class FlowError(RuntimeError):
    pass


def step_sizes(duration: float, dt: float) -> np.ndarray:
    """Steps covering ``duration`` (either sign) with |step| = dt, last one shortened."""
    if not dt > 0:
        raise ValueError(f"dt must be positive, got {dt}")
    span = abs(duration)
    n_full = int(np.floor(span / dt + 1e-9))
    steps = [dt] * n_full
    rest = span - n_full * dt
    if rest > 1e-9 * dt:
        steps.append(rest)
    return np.sign(duration) * np.array(steps, dtype=float) if steps else np.zeros(0)


def rk4_step(rhs, t, X, V, h, k1=None):
    """One RK4 step; t and h may be per-row arrays of shape (N,)."""
    a1, b1 = rhs(t, X, V) if k1 is None else k1
    hx = h[:, None] if np.ndim(h) else h
    a2, b2 = rhs(t + 0.5 * h, X + 0.5 * hx * a1, V + 0.5 * hx * b1)
    a3, b3 = rhs(t + 0.5 * h, X + 0.5 * hx * a2, V + 0.5 * hx * b2)
    a4, b4 = rhs(t + h, X + hx * a3, V + hx * b3)
    X = X + (hx / 6.0) * (a1 + 2.0 * a2 + 2.0 * a3 + a4)
    V = V + (hx / 6.0) * (b1 + 2.0 * b2 + 2.0 * b3 + b4)
    return X, V


def run(rhs, X0, V0, t0: float, duration: float, dt: float, record: bool = True):
    """Integrate from t0 over ``duration``; returns (t_grid, X, V).

    With ``record`` the arrays carry a leading time axis, otherwise only the
    final state is returned.
    """
    steps = step_sizes(duration, dt)
    t_grid = t0 + np.concatenate([[0.0], np.cumsum(steps)])
    t_grid[-1] = t0 + duration
    X, V = np.array(X0, dtype=float), np.array(V0, dtype=float)
    if record:
        Xs = np.empty((len(steps) + 1,) + X.shape)
        Vs = np.empty((len(steps) + 1,) + V.shape)
        Xs[0], Vs[0] = X, V
    for k, h in enumerate(steps):
        X, V = rk4_step(rhs, t_grid[k], X, V, h)
        if record:
            Xs[k + 1], Vs[k + 1] = X, V
    if record:
        return t_grid, Xs, Vs
    return t_grid, X, V


def run_rows(rhs, X0, V0, t0, durations, dt: float):
    """Final states of rows (N, 3) that each start at their own t0 and run
    their own duration, with the same step rule as ``run``.

    Rows that have finished take zero steps, which RK4 leaves unchanged, so
    each row sees exactly the step sequence ``run`` would give it. ``rhs``
    receives per-row times of shape (N,).
    """
    X, V = np.array(X0, dtype=float), np.array(V0, dtype=float)
    t0 = np.broadcast_to(np.asarray(t0, dtype=float), (len(X),))
    durations = np.broadcast_to(np.asarray(durations, dtype=float), (len(X),))
    per_row = [step_sizes(d, dt) for d in durations]
    n = max((len(s) for s in per_row), default=0)
    H = np.zeros((n, len(X)))
    for i, s in enumerate(per_row):
        H[: len(s), i] = s
    times = t0 + np.concatenate([np.zeros((1, len(X))), np.cumsum(H, axis=0)[:-1]]) if n else t0[None]
    for k in range(n):
        X, V = rk4_step(rhs, times[k], X, V, H[k])
    return X, V
