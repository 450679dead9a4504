"""Backward light-cone coordinates along a sub-luminal trajectory.

For a trajectory X with |Xdot| < 1 the map (s, w) -> X_s - s w sends
[0, t] x S^2 onto the ball B(X_t, t). Its inverse is found from the root of
g(s) = |X_s - z| - s, which is strictly decreasing. The trajectory is taken
piecewise linear between grid nodes, so Xdot is constant on each step.

``grad_omega`` is stored as the Jacobian matrix J[i, j] = d omega_i / d z_j.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .flow3d import PairedTrajectory, Trajectory
from .spherequad import SphereRule


class ConeDomainError(ValueError):
    pass


class DegenerateApexError(ConeDomainError):
    pass


@dataclass(frozen=True)
class ConeChart:
    s: float
    omega: np.ndarray
    jac: float
    grad_s: np.ndarray
    grad_omega: np.ndarray
    cell: int = -1

    def point(self, traj: Trajectory) -> np.ndarray:
        """Phi_X(s, omega) = X_s - s omega."""
        return position(traj, np.array([self.s]), np.array([self.cell]))[0] - self.s * self.omega


@dataclass(frozen=True)
class ConeCharts:
    """Vectorized charts; ``ok`` marks queries that inverted successfully."""

    s: np.ndarray
    omega: np.ndarray
    jac: np.ndarray
    grad_s: np.ndarray
    grad_omega: np.ndarray
    cell: np.ndarray
    ok: np.ndarray

    def __getitem__(self, i) -> ConeChart:
        return ConeChart(
            float(self.s[i]), self.omega[i], float(self.jac[i]), self.grad_s[i],
            self.grad_omega[i], int(self.cell[i]),
        )


def position(traj: Trajectory, s, cell) -> np.ndarray:
    t = traj.t_grid
    u = traj.cell_velocity()
    return traj.X[cell] + (s - t[cell])[:, None] * u[cell]


def _g_nodes(traj, k, Z):
    return np.linalg.norm(traj.X[k] - Z, axis=1) - traj.t_grid[k]


def invert_cone_batch(traj: Trajectory, Z, tol: float = 1e-12, t_index: int | None = None) -> ConeCharts:
    """Invert the cone map for many query points at once; never raises.

    Queries outside B(X_t, t) or within 10 tol of the apex get ok=False.
    """
    Z = np.atleast_2d(np.asarray(Z, dtype=float))
    n = traj.n_steps if t_index is None else int(t_index)
    N = len(Z)
    t = traj.t_grid
    u_all = traj.cell_velocity()
    gT = _g_nodes(traj, np.full(N, n), Z)
    inside = gT < 0
    # cell search: g(t_lo) >= 0 > g(t_hi)
    lo = np.zeros(N, dtype=np.int64)
    hi = np.full(N, n, dtype=np.int64)
    while True:
        active = hi - lo > 1
        if not active.any():
            break
        mid = (lo + hi) // 2
        gm = _g_nodes(traj, mid, Z)
        pos = gm >= 0
        lo = np.where(active & pos, mid, lo)
        hi = np.where(active & ~pos, mid, hi)
    k = np.minimum(lo, max(n - 1, 0))
    a, b = t[k].copy(), t[np.minimum(k + 1, len(t) - 1)].copy()
    uk = u_all[k] if n > 0 else np.zeros((N, 3))
    Xk = traj.X[k]
    tk = t[k]

    def g(s):
        return np.linalg.norm(Xk + (s - tk)[:, None] * uk - Z, axis=1) - s

    for _ in range(200):
        width = b - a
        if (width <= 0.25 * tol).all():
            break
        m = 0.5 * (a + b)
        gm = g(m)
        a = np.where(gm >= 0, m, a)
        b = np.where(gm >= 0, b, m)
    s = 0.5 * (a + b)
    Xs = Xk + (s - tk)[:, None] * uk
    r = Xs - Z
    rn = np.linalg.norm(r, axis=1)
    ok = inside & (s >= 10.0 * tol) & (rn > 0)
    omega = r / np.where(rn > 0, rn, 1.0)[:, None]
    wu = np.sum(omega * uk, axis=1)
    jac = s**2 * np.abs(wu - 1.0)
    grad_s = omega / (wu - 1.0)[:, None]
    ss = np.where(s > 0, s, 1.0)
    grad_omega = (
        (uk - omega)[:, :, None] * omega[:, None, :] / (wu - 1.0)[:, None, None]
        - np.eye(3)
    ) / ss[:, None, None]
    return ConeCharts(s, omega, jac, grad_s, grad_omega, k, ok)


def invert_cone(traj: Trajectory, z, tol: float = 1e-12) -> ConeChart:
    z = np.asarray(z, dtype=float).reshape(3)
    T = traj.T
    dist = float(np.linalg.norm(z - traj.X[-1]))
    if not dist < T:
        raise ConeDomainError(f"z={z.tolist()} lies outside B(X_T, T): |z - X_T|={dist:.6g} >= T={T:.6g}")
    charts = invert_cone_batch(traj, z[None], tol)
    if not charts.ok[0]:
        raise DegenerateApexError(f"z={z.tolist()} is within {10 * tol:g} of the cone apex (s={charts.s[0]:.3g})")
    return charts[0]


def cone_domain_check(traj: Trajectory, t_index: int, n_probe: int, rule: SphereRule, seed: int = 0, tol: float = 1e-12):
    """(max outward violation, coverage fraction) of Phi_X([0, t] x S^2) vs B(X_t, t)."""
    if not 0 <= t_index <= traj.n_steps:
        raise IndexError(f"t_index {t_index} outside 0..{traj.n_steps}")
    if t_index == 0:
        return 0.0, 1.0
    t = traj.t_grid[t_index]
    Xt = traj.X[t_index]
    s = traj.t_grid[: t_index + 1]
    pts = traj.X[: t_index + 1, None, :] - s[:, None, None] * rule.nodes[None]
    violation = max(0.0, float(np.max(np.linalg.norm(pts - Xt, axis=-1)) - t))
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n_probe, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    Z = Xt + t * np.cbrt(rng.random(n_probe))[:, None] * d
    ch = invert_cone_batch(traj, Z, tol, t_index)
    back = position(traj, ch.s, ch.cell) - ch.s[:, None] * ch.omega
    good = ch.ok & (np.linalg.norm(back - Z, axis=1) <= 10 * tol + 1e-12 * (1 + t))
    return violation, float(np.mean(good))


def grad_check(chart: ConeChart, traj: Trajectory, z, h: float = 1e-5, tol: float = 1e-13, retries: int = 3):
    """Relative errors of the analytic grad_s and grad_omega vs central differences.

    A stencil that lands in a different trajectory cell than the chart (where
    Xdot jumps) is retried with h / 10.
    """
    z = np.asarray(z, dtype=float).reshape(3)
    for _ in range(retries + 1):
        probes = np.concatenate([z + h * np.eye(3), z - h * np.eye(3)])
        ch = invert_cone_batch(traj, probes, tol)
        if not ch.ok.all():
            raise ConeDomainError("finite-difference stencil leaves the cone domain")
        if (ch.cell == chart.cell).all():
            break
        h /= 10.0
    fd_s = (ch.s[:3] - ch.s[3:]) / (2 * h)
    # column j of the Jacobian is d omega / d z_j
    fd_w = ((ch.omega[:3] - ch.omega[3:]) / (2 * h)).T
    es = np.linalg.norm(fd_s - chart.grad_s) / max(np.linalg.norm(chart.grad_s), 1e-300)
    ew = np.linalg.norm(fd_w - chart.grad_omega) / max(np.linalg.norm(chart.grad_omega), 1e-300)
    return float(es), float(ew)


def stability_gap(pair: PairedTrajectory, z, v_max: float, tol: float = 1e-12):
    """Gaps |s_X - s_Xd|, |w_X - w_Xd| and their ratios to the displacement bounds.

    Bounds: K max_{s <= min} |X_s - Xd_s| and K max |X - Xd| (1/s_X + 1/s_Xd)
    with K = sqrt(1 + v_max^2).
    """
    c1 = invert_cone(pair.base, z, tol)
    c2 = invert_cone(pair.shifted, z, tol)
    gap_s = abs(c1.s - c2.s)
    gap_w = float(np.linalg.norm(c1.omega - c2.omega))
    Kv = np.sqrt(1.0 + v_max**2)

    def max_disp(upto):
        t = pair.base.t_grid
        k = np.searchsorted(t, upto, side="right")
        d = np.linalg.norm(pair.base.X[:k] - pair.shifted.X[:k], axis=1)
        cell = np.array([min(max(k - 1, 0), pair.base.n_steps - 1)])
        end = position(pair.base, np.array([upto]), cell) - position(pair.shifted, np.array([upto]), cell)
        return max(float(d.max(initial=0.0)), float(np.linalg.norm(end)))

    b_s = Kv * max_disp(min(c1.s, c2.s))
    b_w = Kv * max_disp(max(c1.s, c2.s)) * (1.0 / c1.s + 1.0 / c2.s)

    def ratio(g, b):
        if b > 0:
            return g / b
        return 0.0 if g == 0 else np.inf

    return gap_s, gap_w, ratio(gap_s, b_s), ratio(gap_w, b_w)


def jacobian_volume_check(traj: Trajectory, t_index: int, n_samples: int, seed: int = 0, tol: float = 1e-12):
    """Monte Carlo estimate of int_{B(X_t, t)} dz / J_X(z) against 4 pi t.

    Samples z = X_0 + rho u from the apex (u uniform on S^2, rho uniform up to
    the ball boundary); the weight 4 pi rho_max rho^2 / J stays bounded near
    the apex, unlike uniform ball sampling. Returns (estimate, exact, rel_err).
    """
    t = traj.t_grid[t_index]
    x0, Xt = traj.X[0], traj.X[t_index]
    c = x0 - Xt
    rng = np.random.default_rng(seed)
    u = rng.standard_normal((n_samples, 3))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    uc = u @ c
    rho_max = -uc + np.sqrt(uc**2 - c @ c + t**2)
    rho = rho_max * rng.random(n_samples)
    Z = x0 + rho[:, None] * u
    ch = invert_cone_batch(traj, Z, tol, t_index)
    w = np.where(ch.ok, 4.0 * np.pi * rho_max * rho**2 / np.where(ch.ok, ch.jac, 1.0), 0.0)
    est = float(np.mean(w))
    exact = 4.0 * np.pi * t
    return est, exact, abs(est - exact) / exact
