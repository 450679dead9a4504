"""One-dimensional transport driven by a sum of travelling waves.

    dX/dt = alpha(V),   dV/dt = F(t, X) = sum_n mu_n F0(X - xi_n t).

A trajectory resonates with speed n while alpha(V) stays close to xi_n; the
resonant intervals, their total length l_n and count k_n feed an adaptive
normalization delta_bar and the stability functional R_delta.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable

import numpy as np
from scipy.stats import qmc

from .integrate import run
from .rng import unit_directions, uniform_points


@dataclass(frozen=True)
class AlphaSpec:
    """Advection speed alpha: R^d -> R with its Lipschitz and noncharacteristic constants."""

    alpha: Callable
    lipschitz_constant: float
    nonchar_constant: float
    dim: int = 1
    box: tuple = (-2.0, 2.0)

    def __call__(self, v):
        return np.asarray(self.alpha(np.asarray(v, dtype=float)), dtype=float)

    def lipschitz_quotient(self, n: int = 2000, seed: int = 0) -> float:
        rng = np.random.default_rng(seed)
        lo, hi = self.box
        a = rng.uniform(lo, hi, (n, self.dim))
        b = rng.uniform(lo, hi, (n, self.dim))
        num = np.abs(self(a) - self(b))
        den = np.linalg.norm(a - b, axis=1)
        return float(np.max(num / den))

    def nonchar_ratio(self, etas=(0.1, 0.01), n_w: int = 20, m: int = 17, seed: int = 0) -> float:
        """max over (eta, w) of |{v in box : |alpha(v) - w| <= eta}| / (C eta).

        Volumes are estimated from 2^m scrambled Sobol points, which keeps the
        sampling error well below the 5% slack at eta = 0.01.
        """
        rng = np.random.default_rng(seed)
        lo, hi = self.box
        v = lo + (hi - lo) * qmc.Sobol(self.dim, seed=rng).random_base2(m)
        av = self(v)
        vol = (hi - lo) ** self.dim
        ws = rng.uniform(av.min(), av.max(), n_w)
        worst = 0.0
        for eta in etas:
            for w in ws:
                meas = vol * np.mean(np.abs(av - w) <= eta)
                worst = max(worst, meas / (self.nonchar_constant * eta))
        return worst


def identity_alpha() -> AlphaSpec:
    return AlphaSpec(lambda v: v[..., 0], 1.0, 2.0, 1)


def sawtooth(x):
    """1-periodic sawtooth 2 frac(x) - 1 with values in [-1, 1)."""
    x = np.asarray(x, dtype=float)
    return np.clip(2.0 * (x - np.floor(x)) - 1.0, -1.0, 1.0)


@dataclass(frozen=True)
class MultiSpeedForce:
    profile: Callable
    speeds: np.ndarray
    weights: np.ndarray
    gamma: float
    profile_sup: float = 1.0
    tail_weight_bound: float = 0.0
    tail_moment_bound: float = 0.0

    def __post_init__(self):
        sp = np.asarray(self.speeds, dtype=float)
        mu = np.asarray(self.weights, dtype=float)
        if sp.shape != mu.shape or sp.ndim != 1:
            raise ValueError("speeds and weights must be 1-D of equal length")
        if (mu <= 0).any() or (np.diff(mu) > 0).any():
            raise ValueError("weights must be positive and nonincreasing")
        if not self.gamma > 2:
            raise ValueError("gamma must exceed 2")
        object.__setattr__(self, "speeds", sp)
        object.__setattr__(self, "weights", mu)

    @property
    def n_speeds(self) -> int:
        return len(self.speeds)

    def tail_bound(self) -> float:
        """Bound on ||F0||_inf sum_{n > N} mu_n."""
        return self.profile_sup * self.tail_weight_bound

    def sup_bound(self) -> float:
        """||F0||_inf sum_n mu_n over the truncation (plus declared tail)."""
        return self.profile_sup * (float(self.weights.sum()) + self.tail_weight_bound)

    def moment_sum(self) -> float:
        n = np.arange(1, self.n_speeds + 1)
        return float(np.sum((1.0 + n**self.gamma) * self.weights))

    def __call__(self, t: float, x):
        x = np.asarray(x, dtype=float)
        arg = x[..., None] - self.speeds * t
        return np.sum(self.weights * self.profile(arg), axis=-1)


def default_force(n_speeds: int = 64, gamma: float = 2.5) -> MultiSpeedForce:
    """Sawtooth profile, xi_n = n/(n+1), mu_n = n^-(gamma+1.1)."""
    n = np.arange(1, n_speeds + 1, dtype=float)
    p = gamma + 1.1
    N = float(n_speeds)
    return MultiSpeedForce(
        sawtooth,
        n / (n + 1.0),
        n**-p,
        gamma,
        1.0,
        tail_weight_bound=N ** (1.0 - p) / (p - 1.0),
        # sum_{n>N} (1 + n^gamma) n^-p <= 2 int_N^inf x^(gamma-p) dx
        tail_moment_bound=2.0 * N ** (gamma - p + 1.0) / (p - gamma - 1.0),
    )


def eval_force_1d(f: MultiSpeedForce, t: float, x):
    """(sum_{n<=N} mu_n F0(x - xi_n t), tail bound ||F0||_inf sum_{n>N} mu_n)."""
    return f(t, x), f.tail_bound()


@dataclass(frozen=True)
class Trajectory1D:
    t_grid: np.ndarray
    X: np.ndarray  # (n+1,)
    V: np.ndarray  # (n+1, d)

    @property
    def dt(self) -> np.ndarray:
        return np.diff(self.t_grid)


def _rhs_1d(alpha: AlphaSpec, f: MultiSpeedForce):
    def rhs(t, X, V):
        F = f(t, X)
        return alpha(V), F.reshape(V.shape)

    return rhs


def integrate_1d_batch(alpha: AlphaSpec, f: MultiSpeedForce, x0, v0, T: float, dt: float, record: bool = True):
    x0 = np.atleast_1d(np.asarray(x0, dtype=float))
    v0 = np.asarray(v0, dtype=float).reshape(len(x0), -1)
    return run(_rhs_1d(alpha, f), x0, v0, 0.0, T, dt, record=record)


def integrate_1d(alpha: AlphaSpec, f: MultiSpeedForce, p0, T: float, dt: float) -> Trajectory1D:
    x, v = p0
    t, X, V = integrate_1d_batch(alpha, f, [x], np.atleast_1d(v)[None], T, dt)
    return Trajectory1D(t, X[:, 0], V[:, 0])


@dataclass
class ResonanceDecomposition:
    intervals: list  # per speed: (m, 2) array of [t_i, s_i]
    clipped: list  # per speed: (m,) bool, interval touches t=0 or t=T
    l: np.ndarray
    k: np.ndarray
    eta: float
    a: np.ndarray
    t_grid: np.ndarray = field(repr=False, default=None)

    def running_l(self) -> np.ndarray:
        """l_n(t_k): occupation up to each grid time, shape (n+1, N)."""
        t = self.t_grid
        out = np.zeros((len(t), len(self.intervals)))
        for n, iv in enumerate(self.intervals):
            if len(iv):
                out[:, n] = np.sum(np.clip(t[:, None] - iv[:, 0], 0.0, iv[:, 1] - iv[:, 0]), axis=1)
        return out


def resonant_runs(phi, c, t, want_intervals: bool = False):
    """Scan columns of phi (n+1, S) for runs with phi <= c[s] whose min <= c/2.

    Returns (l, k) per column and, optionally, per-column interval arrays and
    clipped flags. Crossing times are linearly interpolated between nodes.
    """
    phi = np.asarray(phi, dtype=float)
    n1, S = phi.shape
    c = np.broadcast_to(np.asarray(c, dtype=float), (S,))
    P = np.ascontiguousarray(phi.T)  # (S, n+1)
    below = P <= c[:, None]
    edges = np.diff(np.pad(below.astype(np.int8), ((0, 0), (1, 1))), axis=1)
    sc, si = np.nonzero(edges == 1)  # first node of each run
    ec, ei = np.nonzero(edges == -1)  # one past the last node
    ei = ei - 1
    flat = np.append(P.ravel(), np.inf)
    base = sc * n1
    idx = np.empty(2 * len(sc), dtype=np.int64)
    idx[0::2] = base + si
    idx[1::2] = base + ei + 1
    mins = np.minimum.reduceat(flat, idx)[0::2] if len(sc) else np.zeros(0)
    cc = c[sc]
    keep = mins <= 0.5 * cc
    # entry crossing
    prev = P[sc, np.maximum(si - 1, 0)]
    cur = P[sc, si]
    ts = np.where(
        si > 0,
        t[np.maximum(si - 1, 0)] + (prev - cc) / np.where(prev > cur, prev - cur, 1.0) * (t[si] - t[np.maximum(si - 1, 0)]),
        t[0],
    )
    nxt = P[ec, np.minimum(ei + 1, n1 - 1)]
    last = P[ec, ei]
    te = np.where(
        ei < n1 - 1,
        t[ei] + (cc - last) / np.where(nxt > last, nxt - last, 1.0) * (t[np.minimum(ei + 1, n1 - 1)] - t[ei]),
        t[-1],
    )
    clipped = (si == 0) | (ei == n1 - 1)
    length = np.where(keep, te - ts, 0.0)
    l = np.bincount(sc, weights=length, minlength=S)
    k = np.bincount(sc, weights=keep.astype(float), minlength=S).astype(np.int64)
    if not want_intervals:
        return l, k
    ivs, clips = [], []
    for s in range(S):
        m = (sc == s) & keep
        ivs.append(np.stack([ts[m], te[m]], axis=1))
        clips.append(clipped[m])
    return l, k, ivs, clips


def decompose_resonances(traj: Trajectory1D, alpha: AlphaSpec, speeds, eta: float, a) -> ResonanceDecomposition:
    if not eta > 0:
        raise ValueError("eta must be positive")
    a = np.asarray(a, dtype=float)
    if (a <= 0).any():
        raise ValueError("a_n must be positive")
    speeds = np.asarray(speeds, dtype=float)
    av = alpha(traj.V)
    phi = np.abs(av[:, None] - speeds[None, :])
    l, k, ivs, clips = resonant_runs(phi, a * eta, traj.t_grid, want_intervals=True)
    return ResonanceDecomposition(ivs, clips, l, k, eta, a, traj.t_grid)


def occupation_times(V, t_grid, alpha: AlphaSpec, w: float, eta: float) -> np.ndarray:
    """Grid-measured |{t : |alpha(V_t) - w| <= eta}| per trajectory; V is (n+1, N, d)."""
    av = alpha(V)
    near = np.abs(av[:-1] - w) <= eta
    return np.sum(near * np.diff(t_grid)[:, None], axis=0)


def occupation_measure(V, t_grid, alpha: AlphaSpec, w: float, eta: float, K: float) -> float:
    """Fraction of trajectories whose occupation time near w is >= K eta."""
    if not (eta > 0 and K > 0):
        raise ValueError("eta and K must be positive")
    occ = occupation_times(V, t_grid, alpha, w, eta)
    return float(np.mean(occ >= K * eta))


@dataclass(frozen=True)
class AdaptiveDelta:
    base_delta: float
    rate_mode: str
    t_grid: np.ndarray
    values: np.ndarray

    @property
    def final(self) -> float:
        return float(self.values[-1])


def adaptive_delta(decomps, base_delta: float, F_inf_norm: float, C: float = 1.0, mode: str = "cumulative") -> AdaptiveDelta:
    """delta_bar(t) from the resonances of a trajectory and its shifted copy.

    cumulative: |delta| + C ||F|| sum_n (l_n(t) + l_n^delta(t)), running occupations;
    constant:   |delta| + C ||F|| t sum_n (l_n(T) + l_n^delta(T)).
    """
    d0, d1 = decomps
    t = d0.t_grid
    if d1.t_grid is not None and not np.array_equal(t, d1.t_grid):
        raise ValueError("decompositions must share the time grid")
    rate = C * F_inf_norm
    if mode == "cumulative":
        occ = d0.running_l().sum(axis=1) + d1.running_l().sum(axis=1)
        vals = base_delta + rate * occ
    elif mode == "constant":
        vals = base_delta + rate * t * (d0.l.sum() + d1.l.sum())
    else:
        raise ValueError(f"unknown delta_bar mode {mode!r}")
    return AdaptiveDelta(base_delta, mode, t, vals)


def pair_discrepancy_1d(base: Trajectory1D, shifted: Trajectory1D) -> float:
    dx2 = (base.X - shifted.X) ** 2
    dv2 = np.sum((base.V - shifted.V) ** 2, axis=1)
    return float(dx2.max() + np.sum(dv2[:-1] * base.dt))


def functional_R(pairs, delta_bars, T: float | None = None) -> float:
    """Mean of log(1 + (sup|dX|^2 + int|dV|^2) / delta_bar(T)^2).

    ``pairs`` is a list of (base, shifted) Trajectory1D or an array of the
    discrepancies themselves. No cap at 1 is applied.
    """
    if len(pairs) and isinstance(pairs[0], tuple):
        D = np.array([pair_discrepancy_1d(b, s) for b, s in pairs])
    else:
        D = np.asarray(pairs, dtype=float)
    db = np.array([d.final if isinstance(d, AdaptiveDelta) else d for d in delta_bars], dtype=float)
    if not (db > 0).all():
        raise ValueError("delta_bar must be positive")
    return float(np.mean(np.log1p(D / db**2)))


def eta_for(delta: float) -> float:
    return float(np.log(1.0 / delta) ** (-1.0 / 8.0))


def a_schedule(n_speeds: int, gamma: float) -> np.ndarray:
    return np.arange(1, n_speeds + 1, dtype=float) ** (-gamma / 2.0)


@dataclass
class Study1DConfig:
    deltas: tuple = tuple(10.0 ** -np.arange(2, 11))
    n_points: int = 1000
    T: float = 1.0
    dt: float = 2.5e-4
    seed: int = 0
    x_range: tuple = (0.0, 1.0)
    v_range: tuple = (0.3, 1.3)
    gamma: float = 2.5
    n_speeds: int = 64
    C: float = 1.0
    mode: str = "cumulative"
    chunk: int = 50


def _study_chunk(alpha, f, P, dirs, deltas, cfg, a):
    """Integrate one chunk of base points plus all shifts; per-delta stats."""
    m, n = len(deltas), len(P)
    x0 = np.concatenate([P[:, 0]] + [P[:, 0] + d * dirs[:, 0] for d in deltas])
    v0 = np.concatenate([P[:, 1:]] + [P[:, 1:] + d * dirs[:, 1:] for d in deltas])
    t, X, V = integrate_1d_batch(alpha, f, x0, v0, cfg.T, cfg.dt)
    X = X.reshape(len(t), m + 1, n)
    V = V.reshape(len(t), m + 1, n, -1)
    dt = np.diff(t)
    av = alpha(V)  # (n+1, m+1, n)
    D = np.empty((m, n))
    for j in range(m):
        dx2 = (X[:, j + 1] - X[:, 0]) ** 2
        dv2 = np.sum((V[:, j + 1] - V[:, 0]) ** 2, axis=-1)
        D[j] = dx2.max(axis=0) + np.sum(dv2[:-1] * dt[:, None], axis=0)
    occ_base = np.empty((m, n))
    occ_shift = np.empty((m, n))
    kmax = np.zeros((m,), dtype=np.int64)
    kratio = np.zeros((m,))
    for j, d in enumerate(deltas):
        eta = eta_for(d)
        c = a * eta
        # the base trajectory is rescanned per delta since eta changes
        for who, out in ((0, occ_base), (j + 1, occ_shift)):
            phi = np.abs(av[:, who, :, None] - f.speeds).reshape(len(t), -1)
            l, k = resonant_runs(phi, np.tile(c, n), t)
            l, k = l.reshape(n, -1), k.reshape(n, -1)
            out[j] = l.sum(axis=1)
            kmax[j] = max(kmax[j], int(k.max(initial=0)))
            kratio[j] = max(kratio[j], float(np.max(k * c / cfg.T, initial=0.0)))
    return D, occ_base, occ_shift, kmax, kratio


def scaling_study_1d(cfg: Study1DConfig | None = None, alpha: AlphaSpec | None = None, f: MultiSpeedForce | None = None) -> dict:
    """R_delta over a log-spaced delta grid with eta = (log 1/delta)^(-1/8), a_n = n^(-gamma/2)."""
    cfg = cfg or Study1DConfig()
    alpha = alpha or identity_alpha()
    f = f or default_force(cfg.n_speeds, cfg.gamma)
    deltas = np.asarray(cfg.deltas, dtype=float)
    if len(deltas) < 4:
        raise ValueError("need at least 4 delta values")
    lr = np.diff(np.log(deltas))
    if not np.allclose(lr, lr[0], rtol=1e-6, atol=0):
        raise ValueError("delta grid must be log-spaced")
    a = a_schedule(f.n_speeds, f.gamma)
    lo = np.array([cfg.x_range[0], cfg.v_range[0]])
    hi = np.array([cfg.x_range[1], cfg.v_range[1]])
    P = uniform_points(cfg.seed, cfg.n_points, lo, hi)
    dirs = unit_directions(cfg.seed, cfg.n_points, 2)
    parts = []
    for s in range(0, cfg.n_points, cfg.chunk):
        sl = slice(s, min(cfg.n_points, s + cfg.chunk))
        parts.append(_study_chunk(alpha, f, P[sl], dirs[sl], deltas, cfg, a))
    D = np.concatenate([p[0] for p in parts], axis=1)
    ob = np.concatenate([p[1] for p in parts], axis=1)
    os_ = np.concatenate([p[2] for p in parts], axis=1)
    kmax = np.max([p[3] for p in parts], axis=0)
    kratio = np.max([p[4] for p in parts], axis=0)
    Finf = f.sup_bound()
    occ = ob + os_
    rows = []
    for j, d in enumerate(deltas):
        eta = eta_for(d)
        if cfg.mode == "cumulative":
            dbar = d + cfg.C * Finf * occ[j]
        else:
            dbar = d + cfg.C * Finf * cfg.T * occ[j]
        R = float(np.mean(np.log1p(D[j] / dbar**2)))
        R_const = float(np.mean(np.log1p(D[j] / d**2)))
        rows.append(
            dict(
                delta=float(d),
                eta=eta,
                R=R,
                R_constant_delta=R_const,
                median_delta_bar_T=float(np.median(dbar)),
                sum_l_n=float(np.mean(occ[j])),
                max_k_n=int(kmax[j]),
                k_scaled_max=float(kratio[j]),
                under_resolved=bool(cfg.dt > a[-1] * eta / 10.0),
            )
        )
    return dict(rows=rows, D=D, occupation=occ, config=cfg)
