"""Relativistic characteristics dX/dt = V / sqrt(1 + |V|^2), dV/dt = F(t, X, V).

Forces are callables ``force(t, X, V) -> (N, 3)`` on batches. Besides single
trajectories this module provides a streaming sweep that integrates a base
ensemble together with all of its delta-shifted copies and accumulates the
stability functionals on the fly, without storing trajectories.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .integrate import FlowError, rk4_step, run, run_rows, step_sizes
from .rng import unit_directions, uniform_points

__all__ = [
    "FlowError",
    "PhasePoint",
    "Trajectory",
    "PairedTrajectory",
    "Ensemble",
    "FunctionalReport",
    "relativistic_rhs",
    "integrate_batch",
    "integrate_trajectory",
    "flow_map",
    "jacobian_estimate",
    "jacobian_estimates",
    "semigroup_residual",
    "semigroup_residuals",
    "pair_trajectories",
    "displacement_A",
    "truncate_omega_K",
    "functional_Q",
    "functional_I_delta",
    "pushforward_density",
    "sweep_pairs",
]


def vhat(V):
    V = np.asarray(V, dtype=float)
    return V / np.sqrt(1.0 + np.sum(V * V, axis=-1, keepdims=True))


@dataclass(frozen=True)
class PhasePoint:
    x: np.ndarray
    v: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.x, dtype=float).reshape(3)
        v = np.asarray(self.v, dtype=float).reshape(3)
        if not (np.isfinite(x).all() and np.isfinite(v).all()):
            raise ValueError("phase point must be finite")
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "v", v)

    @classmethod
    def from_array(cls, z) -> "PhasePoint":
        z = np.asarray(z, dtype=float)
        return cls(z[:3], z[3:6])

    def as_array(self) -> np.ndarray:
        return np.concatenate([self.x, self.v])


@dataclass(frozen=True)
class Trajectory:
    t_grid: np.ndarray
    X: np.ndarray
    V: np.ndarray

    @property
    def n_steps(self) -> int:
        return len(self.t_grid) - 1

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t_grid)

    @property
    def T(self) -> float:
        return float(self.t_grid[-1] - self.t_grid[0])

    def cell_velocity(self) -> np.ndarray:
        """(X[k+1] - X[k]) / dt_k, held constant on each step."""
        return np.diff(self.X, axis=0) / self.dt[:, None]

    def speed_ratios(self) -> np.ndarray:
        return np.linalg.norm(np.diff(self.X, axis=0), axis=1) / self.dt

    @property
    def start(self) -> PhasePoint:
        return PhasePoint(self.X[0], self.V[0])


@dataclass(frozen=True)
class PairedTrajectory:
    base: Trajectory
    shifted: Trajectory
    delta: tuple
    A: np.ndarray

    @property
    def delta_norm(self) -> float:
        return float(np.linalg.norm(np.concatenate(self.delta)))

    def sup_dx2(self) -> float:
        return float(np.max(np.sum((self.base.X - self.shifted.X) ** 2, axis=1)))

    def int_dv2(self) -> float:
        dv2 = np.sum((self.base.V - self.shifted.V) ** 2, axis=1)
        return float(np.sum(dv2[:-1] * self.base.dt))

    def discrepancy(self) -> float:
        """sup_t |X - X^delta|^2 + int_0^T |V - V^delta|^2 dt on the grid."""
        return self.sup_dx2() + self.int_dv2()

    def kinetic_ratio(self) -> float:
        """max_k |Xdot - Xdot^delta|^2 / (4 |V - V^delta|^2) at the nodes (<= 1)."""
        dxd = np.sum((vhat(self.base.V) - vhat(self.shifted.V)) ** 2, axis=1)
        dv = 4.0 * np.sum((self.base.V - self.shifted.V) ** 2, axis=1)
        ok = dv > 0
        if not ok.any():
            return 0.0
        return float(np.max(dxd[ok] / dv[ok]))

    def telescoping(self) -> tuple[float, float]:
        """(sum_k |dV_k|^2 dt_k / A[k+1], log(A[n] / delta^2)); the first never exceeds the second."""
        dv2 = np.sum((self.base.V - self.shifted.V) ** 2, axis=1)[:-1]
        lhs = float(np.sum(dv2 * self.base.dt / self.A[1:]))
        return lhs, float(np.log(self.A[-1] / self.delta_norm**2))


@dataclass(frozen=True)
class Ensemble:
    """Seeded uniform sample of an axis-aligned box in R^6."""

    lo: np.ndarray
    hi: np.ndarray
    n: int
    seed: int
    points: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(6)
        hi = np.asarray(self.hi, dtype=float).reshape(6)
        if not (hi > lo).all():
            raise ValueError("domain box must have hi > lo in every coordinate")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)
        pts = uniform_points(self.seed, self.n, lo, hi)
        pts.setflags(write=False)
        object.__setattr__(self, "points", pts)

    @classmethod
    def cube(cls, half_width: float, n: int, seed: int) -> "Ensemble":
        return cls(-half_width * np.ones(6), half_width * np.ones(6), n, seed)

    @property
    def volume(self) -> float:
        return float(np.prod(self.hi - self.lo))

    @property
    def weight(self) -> float:
        return self.volume / self.n

    def directions(self) -> np.ndarray:
        """Seeded unit directions in R^6, one per point."""
        return unit_directions(self.seed, self.n, 6)

    def phase_point(self, i: int) -> PhasePoint:
        return PhasePoint.from_array(self.points[i])


@dataclass
class FunctionalReport:
    delta: float
    K: float
    Q: float
    Q_K: float
    omega_K_fraction: float
    I_delta: float = float("nan")
    psi_estimate: float = float("nan")

    def __post_init__(self):
        if self.Q < 0:
            raise ValueError("Q must be nonnegative")
        if not 0.0 <= self.omega_K_fraction <= 1.0:
            raise ValueError("omega_K_fraction must lie in [0, 1]")


def relativistic_rhs(force):
    def rhs(t, X, V):
        F = np.asarray(force(t, X, V), dtype=float)
        if not np.isfinite(F).all():
            bad = np.flatnonzero(~np.isfinite(F.reshape(-1, 3)).all(axis=1))[0]
            tb = float(t[bad]) if np.ndim(t) else float(t)
            raise FlowError(
                f"non-finite force at t={tb!r}, x={np.asarray(X).reshape(-1, 3)[bad].tolist()}"
            )
        return vhat(V), F

    return rhs


def integrate_batch(force, X0, V0, T: float, dt: float, t0: float = 0.0, record: bool = True):
    """Integrate many phase points at once; returns (t_grid, X, V)."""
    return run(relativistic_rhs(force), X0, V0, t0, T, dt, record=record)


def integrate_trajectory(force, p0: PhasePoint, T: float, dt: float, t0: float = 0.0) -> Trajectory:
    t, X, V = integrate_batch(force, p0.x[None], p0.v[None], T, dt, t0)
    return Trajectory(t, X[:, 0], V[:, 0])


def flow_map(force, t: float, dt: float, t0: float = 0.0):
    """Time-t map of the flow started at t0, acting on (N, 6) or (6,) arrays."""

    def phi(z):
        z = np.asarray(z, dtype=float)
        zz = z.reshape(-1, 6)
        _, X, V = integrate_batch(force, zz[:, :3], zz[:, 3:], t, dt, t0, record=False)
        return np.concatenate([X, V], axis=1).reshape(z.shape)

    return phi


def jacobian_estimates(flow, P, h: float) -> np.ndarray:
    """Central-difference 6x6 Jacobian determinants of ``flow`` at each row of P."""
    P = np.atleast_2d(np.asarray(P, dtype=float))
    n = len(P)
    eye = h * np.eye(6)
    probes = np.concatenate([P[:, None, :] + eye, P[:, None, :] - eye], axis=1)
    out = flow(probes.reshape(-1, 6)).reshape(n, 12, 6)
    J = (out[:, :6] - out[:, 6:]) / (2.0 * h)
    if not np.isfinite(J).all():
        raise FlowError("non-finite difference stencil in jacobian estimate")
    # rows of J are derivatives along e_j, so det(J^T) = det(J)
    return np.linalg.det(J)


def jacobian_estimate(flow, p, h: float) -> float:
    z = p.as_array() if isinstance(p, PhasePoint) else np.asarray(p, dtype=float)
    return float(jacobian_estimates(flow, z[None], h)[0])


def semigroup_residual(force, p0: PhasePoint, t: float, s: float, dt: float) -> float:
    """|phi_{0,t+s}(p0) - phi_{t,t+s}(phi_{0,t}(p0))| in R^6.

    The field depends on time, so the second leg restarts the clock at t.
    """
    if t < 0 or s < 0:
        raise ValueError("t and s must be nonnegative")
    if s == 0:
        return 0.0
    return float(semigroup_residuals(force, p0.as_array()[None], [t], [s], dt)[0])


def semigroup_residuals(force, P, t, s, dt: float) -> np.ndarray:
    """Batched semigroup residuals, one (t, s) split per row of P (N, 6).

    The force must accept per-row times (closed-form fields do).
    """
    P = np.atleast_2d(np.asarray(P, dtype=float))
    t = np.asarray(t, dtype=float).reshape(-1)
    s = np.asarray(s, dtype=float).reshape(-1)
    if (t < 0).any() or (s < 0).any():
        raise ValueError("t and s must be nonnegative")
    rhs = relativistic_rhs(force)
    X0, V0 = P[:, :3], P[:, 3:]
    Xd, Vd = run_rows(rhs, X0, V0, 0.0, t + s, dt)
    Xm, Vm = run_rows(rhs, X0, V0, 0.0, t, dt)
    Xc, Vc = run_rows(rhs, Xm, Vm, t, s, dt)
    res = np.linalg.norm(np.concatenate([Xd - Xc, Vd - Vc], axis=1), axis=1)
    return np.where(s == 0, 0.0, res)


def displacement_A(base: Trajectory, shifted: Trajectory, delta_norm: float) -> np.ndarray:
    """A[k] = |delta|^2 + max_{j<=k} |dX_j|^2 + sum_{j<k} |dV_j|^2 dt_j."""
    dx2 = np.sum((base.X - shifted.X) ** 2, axis=1)
    dv2 = np.sum((base.V - shifted.V) ** 2, axis=1)
    run_int = np.concatenate([[0.0], np.cumsum(dv2[:-1] * base.dt)])
    return delta_norm**2 + np.maximum.accumulate(dx2) + run_int


def pair_trajectories(force, p0: PhasePoint, delta, T: float, dt: float) -> PairedTrajectory:
    d1 = np.asarray(delta[0], dtype=float).reshape(3)
    d2 = np.asarray(delta[1], dtype=float).reshape(3)
    dn = float(np.linalg.norm(np.concatenate([d1, d2])))
    if not dn > 0:
        raise ValueError("delta must be nonzero")
    X0 = np.stack([p0.x, p0.x + d1])
    V0 = np.stack([p0.v, p0.v + d2])
    t, X, V = integrate_batch(force, X0, V0, T, dt)
    base = Trajectory(t, X[:, 0], V[:, 0])
    shifted = Trajectory(t, X[:, 1], V[:, 1])
    return PairedTrajectory(base, shifted, (d1, d2), displacement_A(base, shifted, dn))


def _force_time_integral(force, X0, V0, T, dt, chunk=4096):
    """Left Riemann sum of |F(t, X_t, V_t)| along each trajectory."""
    rhs = relativistic_rhs(force)
    steps = step_sizes(T, dt)
    out = np.zeros(len(X0))
    for a in range(0, len(X0), chunk):
        X, V = X0[a:a + chunk].copy(), V0[a:a + chunk].copy()
        acc = np.zeros(len(X))
        t = 0.0
        for h in steps:
            k1 = rhs(t, X, V)
            acc += np.linalg.norm(k1[1], axis=1) * h
            X, V = rk4_step(rhs, t, X, V, h, k1)
            t += h
        out[a:a + chunk] = acc
    return out


def truncate_omega_K(ensemble: Ensemble, force, T: float, dt: float, K: float, delta: float | None = None):
    """Indices whose force time-integrals stay <= K, and the excluded fraction.

    With ``delta`` the shifted member of each pair (seeded directions) must
    satisfy the bound too.
    """
    if not K > 0:
        raise ValueError("K must be positive")
    P = ensemble.points
    if np.isinf(K):
        return np.arange(len(P)), 0.0
    ok = _force_time_integral(force, P[:, :3], P[:, 3:], T, dt) <= K
    if delta is not None:
        Ps = P + delta * ensemble.directions()
        ok &= _force_time_integral(force, Ps[:, :3], Ps[:, 3:], T, dt) <= K
    idx = np.flatnonzero(ok)
    return idx, 1.0 - len(idx) / len(P)


def functional_Q(
    pairs,
    weight: float,
    delta: float,
    cap: bool = True,
    K: float = np.inf,
    omega_K=None,
    T: float | None = None,
) -> FunctionalReport:
    """Q = weight * sum log(1 + (D ^ 1) / delta^2) over pairs, D = sup|dX|^2 + int|dV|^2.

    ``cap=False`` drops the ^1. ``Q_K`` is always the uncapped sum over the
    pairs indexed by ``omega_K`` (all pairs if None).
    """
    D = np.array([p.discrepancy() for p in pairs])
    return _report_from_D(D, weight, delta, cap, K, omega_K, T)


def _report_from_D(D, weight, delta, cap, K, omega_K, T):
    D = np.asarray(D, dtype=float)
    Dc = np.minimum(D, 1.0) if cap else D
    Q = weight * float(np.sum(np.log1p(Dc / delta**2)))
    keep = np.arange(len(D)) if omega_K is None else np.asarray(omega_K, dtype=int)
    Q_K = weight * float(np.sum(np.log1p(D[keep] / delta**2)))
    frac = 1.0 - len(keep) / len(D) if len(D) else 0.0
    psi = Q / T if T else float("nan")
    return FunctionalReport(delta, K, Q, Q_K, frac, psi_estimate=psi)


def nu_sup(nu, K: float, n: int = 2000, seed: int = 0) -> float:
    """max |nu(v)| over a seeded sample of the ball B(0, K) (1 if nu is None)."""
    if nu is None:
        return 1.0
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    v = K * np.cbrt(rng.random(n))[:, None] * d
    v = np.concatenate([np.zeros((1, 3)), v, K * d])
    return float(np.max(np.abs(nu(v))))


def functional_I_delta(pairs, G, nu=None, K: float = np.inf, weight: float = 1.0) -> float:
    """nu(K) * weight * sum over pairs of the discrete double time integral

        sum_k dt_k |dV_k| / A_k * |sum_{j<k} (G(t_j, X^d_j) - G(t_j, X_j)) dt_j|.
    """
    if not pairs:
        return 0.0
    nuK = nu_sup(nu, K if np.isfinite(K) else 1e3)
    total = 0.0
    for p in pairs:
        t, dt = p.base.t_grid, p.base.dt
        gb = np.stack([np.asarray(G(t[k], p.base.X[k][None])).reshape(3) for k in range(len(dt))])
        gs = np.stack([np.asarray(G(t[k], p.shifted.X[k][None])).reshape(3) for k in range(len(dt))])
        S = np.concatenate([np.zeros((1, 3)), np.cumsum((gs - gb) * dt[:, None], axis=0)[:-1]])
        dv = np.linalg.norm(p.base.V[:-1] - p.shifted.V[:-1], axis=1)
        total += float(np.sum(dt * dv / p.A[:-1] * np.linalg.norm(S, axis=1)))
    return nuK * weight * total


def pushforward_density(force, f0, t: float, dt: float, probe) -> np.ndarray:
    """f(t, z) = f0(backward flow of z from time t to 0) for probes z (N, 6)."""
    probe = np.atleast_2d(np.asarray(probe, dtype=float))
    if not np.isfinite(probe).all():
        raise ValueError("probe grid must be finite")
    if t == 0:
        return np.asarray(f0(probe[:, :3], probe[:, 3:]))
    back = flow_map(force, -t, dt, t0=t)(probe)
    return np.asarray(f0(back[:, :3], back[:, 3:]))


@dataclass
class SweepResult:
    """Per-point outputs of ``sweep_pairs``; arrays indexed [shift, point]."""

    deltas: np.ndarray
    sup_dx2: np.ndarray
    int_dv2: np.ndarray
    force_integral_base: np.ndarray
    force_integral_shifted: np.ndarray
    I_terms: np.ndarray
    steps: np.ndarray

    @property
    def D(self) -> np.ndarray:
        return self.sup_dx2 + self.int_dv2


def _sweep_chunk(force, P, shifts, deltas, steps, G):
    m, n = len(shifts), len(P)
    X = np.concatenate([P[None, :, :3], P[None, :, :3] + shifts[:, :, :3]]).reshape(-1, 3)
    V = np.concatenate([P[None, :, 3:], P[None, :, 3:] + shifts[:, :, 3:]]).reshape(-1, 3)
    rhs = relativistic_rhs(force)
    d2 = (deltas**2)[:, None]
    fint = np.zeros((m + 1, n))
    sup = np.zeros((m, n))
    intv = np.zeros((m, n))
    iterm = np.zeros((m, n))
    S = np.zeros((m, n, 3))
    t = 0.0
    for h in steps:
        k1 = rhs(t, X, V)
        F = k1[1].reshape(m + 1, n, 3)
        fint += np.sqrt(np.sum(F * F, axis=-1)) * h
        Xr, Vr = X.reshape(m + 1, n, 3), V.reshape(m + 1, n, 3)
        dx = Xr[1:] - Xr[0]
        dv = Vr[1:] - Vr[0]
        dv2 = np.sum(dv * dv, axis=-1)
        sup = np.maximum(sup, np.sum(dx * dx, axis=-1))
        A = d2 + sup + intv
        Gr = F if G is None else np.asarray(G(t, X)).reshape(m + 1, n, 3)
        iterm += h * np.sqrt(dv2) / A * np.sqrt(np.sum(S * S, axis=-1))
        S += (Gr[1:] - Gr[0]) * h
        intv += dv2 * h
        X, V = rk4_step(rhs, t, X, V, h, k1)
        t += h
    Xr = X.reshape(m + 1, n, 3)
    dx = Xr[1:] - Xr[0]
    sup = np.maximum(sup, np.sum(dx * dx, axis=-1))
    return sup, intv, fint[0], fint[1:], iterm


def sweep_pairs(
    force,
    points,
    directions,
    deltas,
    T: float,
    dt: float,
    G=None,
    chunk: int = 2000,
    workers: int = 1,
) -> SweepResult:
    """Integrate base points with every delta-shift in lockstep.

    ``G=None`` reuses the force values at the nodes as the G field (exact for
    velocity-independent forces). Points are processed in fixed chunks and
    reassembled in index order, so results do not depend on ``workers``.
    """
    P = np.asarray(points, dtype=float)
    dirs = np.asarray(directions, dtype=float)
    deltas = np.asarray(deltas, dtype=float)
    steps = step_sizes(T, dt)
    jobs = []
    for a in range(0, len(P), chunk):
        sl = slice(a, min(len(P), a + chunk))
        shifts = deltas[:, None, None] * dirs[None, sl]
        jobs.append((P[sl], shifts))

    def work(job):
        return _sweep_chunk(force, job[0], job[1], deltas, steps, G)

    if workers > 1:
        with ThreadPoolExecutor(workers) as ex:
            parts = list(ex.map(work, jobs))
    else:
        parts = [work(j) for j in jobs]
    sup = np.concatenate([p[0] for p in parts], axis=1)
    intv = np.concatenate([p[1] for p in parts], axis=1)
    fb = np.concatenate([p[2] for p in parts])
    fs = np.concatenate([p[3] for p in parts], axis=1)
    it = np.concatenate([p[4] for p in parts], axis=1)
    return SweepResult(deltas, sup, intv, fb, fs, it, steps)
