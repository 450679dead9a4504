"""Wave-propagated force fields and spherical-mean operators.

The propagated field of a source F0 is the Kirchhoff expression

    F(t, x) = int_{S^2} F0(x + t w) dw + t int_{S^2} w . grad F0(x + t w) dw,

i.e. d/dt of t times the spherical integral. Its Fourier multiplier is
4 pi cos(t|xi|), so ||F(t)||_2 <= ||F(0)||_2 = 4 pi ||F0||_2.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .spherequad import SphereRule, cap_nodes

# points per quadrature batch; bounds the (N, M, 3) temporaries
_BATCH_POINTS = 300_000


def _as_points(x):
    x = np.asarray(x, dtype=float)
    return x.reshape(-1, 3), x.shape[:-1]


def _chunks(n: int, m: int):
    step = max(1, _BATCH_POINTS // max(m, 1))
    for i in range(0, n, step):
        yield slice(i, min(n, i + step))


def _kirchhoff_quadrature(f, rule: SphereRule, t: float, pts: np.ndarray) -> np.ndarray:
    out = np.empty(len(pts))
    w, nodes = rule.weights, rule.nodes
    for sl in _chunks(len(pts), len(rule)):
        y = pts[sl, None, :] + t * nodes[None]
        val = f(y)
        if t != 0:
            val = val + t * np.sum(nodes[None] * f.gradient(y), axis=-1)
        out[sl] = np.sum(val * w, axis=-1)
    return out


def _sphere_sum(g, rule: SphereRule, t: float, pts: np.ndarray, weight=None) -> np.ndarray:
    out = np.empty(len(pts))
    for sl in _chunks(len(pts), len(rule)):
        y = pts[sl, None, :] + t * rule.nodes[None]
        val = g(y)
        if weight is not None:
            val = val * weight[sl]
        out[sl] = np.sum(val * rule.weights, axis=-1)
    return out


@dataclass(frozen=True)
class KirchhoffField:
    """Force (t, X, V) -> (N, 3) built from wave-propagated sources.

    ``mode="electric"`` gives nu(V) E(t, X); ``mode="lorentz"`` gives
    E(t, X) + V x B(t, X) with B propagated from ``magnetic``.
    ``method="closed_form"`` uses the sources' exact ``kirchhoff`` method
    (radial bumps, plane waves) instead of quadrature.
    """

    sources: Sequence
    rule: SphereRule
    nu: Callable | None = None
    mode: str = "electric"
    magnetic: Sequence | None = None
    method: str = "quadrature"

    def __post_init__(self):
        if len(self.sources) != 3:
            raise ValueError("need one source per component (3)")
        if self.mode not in ("electric", "lorentz"):
            raise ValueError(f"unknown mode {self.mode!r}")
        if self.mode == "lorentz" and (self.magnetic is None or len(self.magnetic) != 3):
            raise ValueError("lorentz mode needs three magnetic sources")
        if self.method not in ("quadrature", "closed_form"):
            raise ValueError(f"unknown method {self.method!r}")

    @property
    def velocity_dependent(self) -> bool:
        return self.mode == "lorentz" or self.nu is not None

    def _propagate(self, comps, t, x):
        pts, shape = _as_points(x)
        if self.method == "closed_form":
            cols = [f.kirchhoff(t, pts) for f in comps]
        elif np.ndim(t):
            # per-point times: one quadrature pass per distinct time
            t = np.asarray(t, dtype=float)
            cols = [np.zeros(len(pts)) for _ in comps]
            for tv in np.unique(t):
                rows = t == tv
                for c, f in zip(cols, comps):
                    c[rows] = _kirchhoff_quadrature(f, self.rule, float(tv), pts[rows])
        else:
            cols = [_kirchhoff_quadrature(f, self.rule, t, pts) for f in comps]
        return np.stack(cols, axis=-1).reshape(shape + (3,))

    def field(self, t: float, x) -> np.ndarray:
        return self._propagate(self.sources, t, x)

    def magnetic_field(self, t: float, x) -> np.ndarray:
        return self._propagate(self.magnetic, t, x)

    def __call__(self, t: float, X, V) -> np.ndarray:
        E = self.field(t, X)
        if self.mode == "lorentz":
            return E + np.cross(V, self.magnetic_field(t, X))
        if self.nu is None:
            return E
        return np.asarray(self.nu(V))[..., None] * E

    force = __call__


def eval_field(kf: KirchhoffField, t: float, x) -> np.ndarray:
    """Quadrature of the expanded Kirchhoff formula for each source component."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pts, shape = _as_points(x)
    cols = [_kirchhoff_quadrature(f, kf.rule, t, pts) for f in kf.sources]
    return np.stack(cols, axis=-1).reshape(shape + (3,))


def wave_op(g, rule: SphereRule, t: float, x) -> np.ndarray:
    """W g(t, x) = t sum_i w_i g(x + t w_i)."""
    if t < 0:
        raise ValueError("t must be >= 0")
    pts, shape = _as_points(x)
    return (t * _sphere_sum(g, rule, t, pts)).reshape(shape)


def modified_wave_op(g, rule: SphereRule, t: float, x, v) -> np.ndarray:
    """t sum_i w_i g(x + t w_i) / |vhat . w_i - 1| with vhat = v / sqrt(1 + |v|^2).

    ``v`` is one velocity (3,) or one per point (N, 3).
    """
    if t < 0:
        raise ValueError("t must be >= 0")
    pts, shape = _as_points(x)
    v = np.asarray(v, dtype=float)
    if not np.isfinite(v).all():
        raise ValueError("v must be finite")
    vhat = v / np.sqrt(1.0 + np.sum(v * v, axis=-1, keepdims=True))
    vhat = np.broadcast_to(vhat.reshape(-1, 3), (len(pts), 3))
    weight = 1.0 / np.abs(vhat @ rule.nodes.T - 1.0)
    return (t * _sphere_sum(g, rule, t, pts, weight)).reshape(shape)


@dataclass(frozen=True)
class DispersionProfile:
    s: np.ndarray
    norms: np.ndarray
    slope: float
    intercept: float
    under_resolved: bool
    n_samples: int


def spherical_integral_supported(g, rule: SphereRule, s: float, x: np.ndarray, radius: float):
    """int_{S^2} g(x + s w) dw for g supported in B(0, radius).

    Integrates only over the cap of directions that can reach the support,
    using ``rule``'s polar/azimuth counts on that cap.
    """
    d = np.linalg.norm(x, axis=-1)
    cos_min = (d**2 + s**2 - radius**2) / (2.0 * np.maximum(d, 1e-300) * s)
    out = np.zeros(len(x))
    reach = cos_min < 1.0
    if not reach.any():
        return out
    idx = np.flatnonzero(reach)
    axes = -x[idx] / np.maximum(d[idx], 1e-300)[:, None]
    # points at the origin see the whole sphere
    axes[d[idx] == 0] = (0.0, 0.0, 1.0)
    for sl in _chunks(len(idx), len(rule)):
        nodes, w = cap_nodes(rule, axes[sl], cos_min[idx[sl]])
        out[idx[sl]] = np.sum(g(x[idx[sl], None, :] + s * nodes) * w, axis=-1)
    return out


def dispersion_profile(
    g,
    rule: SphereRule,
    s_grid,
    n_samples: int,
    seed: int = 0,
    box: float | None = None,
) -> DispersionProfile:
    """L^2 norm of x -> int_{S^2} g(x + s w) dw for each s, plus its log-log slope.

    Samples are uniform in the shell ||x| - s| <= R that carries the whole
    function (R = g.support_radius). ``box``, if given, is the half-width of
    a cube that must contain the support.
    """
    s_grid = np.asarray(s_grid, dtype=float)
    if s_grid.ndim != 1 or len(s_grid) == 0 or (s_grid <= 0).any() or (np.diff(s_grid) <= 0).any():
        raise ValueError("s_grid must be positive and strictly increasing")
    R = float(g.support_radius)
    if not np.isfinite(R):
        raise ValueError("dispersion profile needs a compactly supported g")
    if box is not None and R > np.sqrt(3.0) * box:
        raise ValueError(f"support radius {R} exceeds the sampling box")
    rng = np.random.default_rng(seed)
    norms = np.empty(len(s_grid))
    for i, s in enumerate(s_grid):
        r0, r1 = max(s - R, 0.0), s + R
        u = rng.random(n_samples)
        r = np.cbrt(r0**3 + u * (r1**3 - r0**3))
        dirs = rng.standard_normal((n_samples, 3))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        x = r[:, None] * dirs
        vol = 4.0 * np.pi / 3.0 * (r1**3 - r0**3)
        vals = spherical_integral_supported(g, rule, s, x, R) if R > 0 else np.zeros(n_samples)
        norms[i] = np.sqrt(vol * np.mean(vals**2))
    if len(s_grid) >= 2 and (norms > 0).all():
        slope, intercept = np.polyfit(np.log(s_grid), np.log(norms), 1)
    else:
        slope, intercept = np.nan, np.nan
    return DispersionProfile(
        s_grid, norms, float(slope), float(intercept), n_samples < 100, int(n_samples)
    )
