"""Spherical, shell and pair-adapted maximal operators on grid fields.

All operators act on the trilinear interpolant of |g|. Each one is a max
over a finite family of linear averages ("stencils": offsets and weights);
that makes homogeneity, monotonicity and sublinearity hold exactly for a
fixed family. A stencil is applied either at scattered points (direct
interpolation) or at every grid node at once (FFT correlation with the
stencil splatted onto the grid by trilinear weights). The two agree up to
rounding when the field is extended by zero outside its box.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.fft

from .grid import GridField3
from .spherequad import SphereRule


class ZeroNormError(ValueError):
    pass


def radius_grid(r_min: float, r_max: float, ratio: float = 1.1) -> np.ndarray:
    n = int(np.floor(np.log(r_max / r_min) / np.log(ratio) + 1e-9)) + 1
    return r_min * ratio ** np.arange(n)


@dataclass(frozen=True)
class Stencil:
    offsets: np.ndarray  # (M, 3)
    weights: np.ndarray  # (M,)
    label: tuple = ()

    @property
    def reach(self) -> float:
        return float(np.max(np.linalg.norm(self.offsets, axis=1), initial=0.0))


def sphere_stencil(rule: SphereRule, r: float) -> Stencil:
    return Stencil(r * rule.nodes, rule.weights / (4.0 * np.pi), ("sphere", r))


def shell_stencil(rule: SphereRule, eps: float, eta: float, n_radial: int) -> Stencil:
    """(1/(eps^2 eta)) int_{eps-eta <= |y| <= eps} . dy in spherical coordinates."""
    u, wu = np.polynomial.legendre.leggauss(n_radial)
    rho = eps - eta + 0.5 * eta * (u + 1.0)
    wr = 0.5 * eta * wu * rho**2 / (eps**2 * eta)
    off = (rho[:, None, None] * rule.nodes[None]).reshape(-1, 3)
    w = (wr[:, None] * rule.weights[None]).reshape(-1)
    return Stencil(off, w, ("shell", eps, eta))


def pair_stencil(rule: SphereRule, radius: float, delta: float, n_radial: int) -> Stencil:
    """(delta + R)^-1 int_{B(0,R)} . |y|^-2 dy; the |y|^2 Jacobian cancels the weight."""
    u, wu = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * radius * (u + 1.0)
    wr = 0.5 * radius * wu / (delta + radius)
    off = (rho[:, None, None] * rule.nodes[None]).reshape(-1, 3)
    w = (wr[:, None] * rule.weights[None]).reshape(-1)
    return Stencil(off, w, ("pair", radius, delta))


def _padded_abs(g: GridField3) -> GridField3:
    # one layer of zeros so the interpolant extends by zero exactly as the
    # FFT path does
    a = np.pad(np.abs(g.samples), 1)
    return GridField3(a, g.origin - g.spacing, g.spacing)


def _inside_box(g: GridField3, x, reach):
    x = np.atleast_2d(x)
    reach = np.reshape(reach, (-1, 1))
    return np.all((x - reach >= g.origin) & (x + reach <= g.upper), axis=-1)


def apply_stencil_points(ga: GridField3, st: Stencil, X) -> np.ndarray:
    """sum_i w_i ga(x + y_i) for each row of X; ga is already nonnegative."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    out = np.empty(len(X))
    step = max(1, 200_000 // max(len(st.weights), 1))
    for a in range(0, len(X), step):
        pts = X[a:a + step, None, :] + st.offsets[None]
        out[a:a + step] = np.sum(ga.interpolate(pts) * st.weights, axis=-1)
    return out


def splat_kernel(st: Stencil, h: float):
    """Trilinear splat of a stencil onto integer offsets; returns (kernel, L)."""
    y = st.offsets / h
    L = int(np.ceil(np.max(np.abs(y), initial=0.0))) + 1
    ker = np.zeros((2 * L + 1,) * 3)
    i0 = np.floor(y).astype(np.int64)
    f = y - i0
    for a in (0, 1):
        wa = f[:, 0] if a else 1 - f[:, 0]
        for b in (0, 1):
            wb = f[:, 1] if b else 1 - f[:, 1]
            for c in (0, 1):
                wc = f[:, 2] if c else 1 - f[:, 2]
                np.add.at(
                    ker,
                    (i0[:, 0] + a + L, i0[:, 1] + b + L, i0[:, 2] + c + L),
                    st.weights * wa * wb * wc,
                )
    return ker, L


class _GridCorrelator:
    """Correlate |g| with many splatted kernels sharing one FFT of |g|."""

    def __init__(self, g: GridField3, L_max: int):
        self.a = np.abs(g.samples)
        self.n = self.a.shape
        self.shape = tuple(scipy.fft.next_fast_len(k + 2 * L_max + 1, real=True) for k in self.n)
        self.fa = scipy.fft.rfftn(self.a, s=self.shape)

    def __call__(self, ker, L):
        kc = np.zeros(self.shape)
        idx = np.arange(-L, L + 1)
        ix = np.ix_(idx % self.shape[0], idx % self.shape[1], idx % self.shape[2])
        kc[ix] = ker
        # out[n] = sum_m a[n + m] k[m]  (correlation)
        out = scipy.fft.irfftn(self.fa * np.conj(scipy.fft.rfftn(kc)), s=self.shape)
        return out[: self.n[0], : self.n[1], : self.n[2]]


class StencilMaximal:
    """max over a fixed family of stencils of the average of |g|."""

    name = "stencil-max"

    def __init__(self, stencils):
        self.stencils = list(stencils)

    def points(self, g: GridField3, X, domain: str = "zero"):
        """Values at points X (N, 3) and the index of the maximizing stencil.

        ``domain="strict"`` skips stencils reaching outside the grid box; a
        point with no admissible stencil gets nan.
        """
        ga = _padded_abs(g)
        X = np.atleast_2d(np.asarray(X, dtype=float))
        best = np.full(len(X), -np.inf)
        arg = np.full(len(X), -1)
        for j, st in enumerate(self.stencils):
            vals = apply_stencil_points(ga, st, X)
            if domain == "strict":
                vals = np.where(_inside_box(g, X, st.reach), vals, -np.inf)
            better = vals > best
            best = np.where(better, vals, best)
            arg = np.where(better, j, arg)
        return np.where(np.isfinite(best), best, np.nan), arg

    def __call__(self, g: GridField3, X, domain: str = "zero"):
        return self.points(g, X, domain)[0]

    def grid(self, g: GridField3) -> np.ndarray:
        """Values at every node of g's grid (zero extension outside the box)."""
        kers = [splat_kernel(st, g.spacing) for st in self.stencils]
        corr = _GridCorrelator(g, max(L for _, L in kers))
        out = np.full(g.dims, -np.inf)
        for ker, L in kers:
            np.maximum(out, corr(ker, L), out=out)
        # FFT rounding can leave tiny negatives where the exact value is 0
        return np.maximum(out, 0.0)


class SphericalMaximal(StencilMaximal):
    name = "spherical"

    def __init__(self, rule: SphereRule, radii):
        self.radii = np.asarray(radii, dtype=float)
        super().__init__([sphere_stencil(rule, r) for r in self.radii])


class ShellMaximal(StencilMaximal):
    name = "shell"

    def __init__(self, rule: SphereRule, eps_grid, eta_fracs=(1.0, 0.5, 0.25, 0.125), n_radial: int = 4):
        self.n_samples = n_radial * len(rule)
        sts = [
            shell_stencil(rule, e, f * e, n_radial)
            for e in np.asarray(eps_grid, dtype=float)
            for f in eta_fracs
        ]
        super().__init__(sts)


class PairOperator(StencilMaximal):
    name = "pair"

    def __init__(self, rule: SphereRule, radius: float, delta: float, n_radial: int = 16):
        super().__init__([pair_stencil(rule, radius, delta, n_radial)] if radius > 0 else [])
        self.radius = radius

    def points(self, g, X, domain="zero"):
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if not self.stencils:
            return np.zeros(len(X)), np.zeros(len(X), dtype=int)
        return super().points(g, X, domain)

    def grid(self, g):
        if not self.stencils:
            return np.zeros(g.dims)
        return super().grid(g)


@dataclass(frozen=True)
class MaxDetail:
    value: float
    argmax: float
    skipped: int
    flagged: bool


def spherical_max_detail(g: GridField3, x, r_grid, rule: SphereRule, refine: bool = True, ratio: float = 1.1) -> MaxDetail:
    """Max over radii of the spherical average of |g| at one point.

    Radii whose sphere leaves the grid box are skipped and counted. With
    ``refine`` three extra radii around the discrete argmax are tried.
    """
    x = np.asarray(x, dtype=float).reshape(3)
    r_grid = np.asarray(r_grid, dtype=float)
    if (r_grid <= 0).any():
        raise ValueError("radii must be positive")
    ok = _inside_box(g, np.broadcast_to(x, (len(r_grid), 3)), r_grid)
    radii = r_grid[ok]
    skipped = int((~ok).sum())
    if len(radii) == 0:
        return MaxDetail(float("nan"), float("nan"), skipped, True)
    ga = _padded_abs(g)
    vals = np.array([apply_stencil_points(ga, sphere_stencil(rule, r), x)[0] for r in radii])
    j = int(np.argmax(vals))
    best, arg = float(vals[j]), float(radii[j])
    if refine:
        extra = [radii[j] * ratio ** (-1.0 / 3.0), radii[j] * ratio ** (1.0 / 3.0)]
        if 0 < j < len(radii) - 1:
            # vertex of the parabola through the three log-radius samples
            y0, y1, y2 = vals[j - 1], vals[j], vals[j + 1]
            den = y0 - 2 * y1 + y2
            if den < 0:
                off = 0.5 * (y0 - y2) / den
                extra.append(radii[j] * ratio ** float(np.clip(off, -1.0, 1.0)))
        for r in extra:
            if _inside_box(g, x, r)[0]:
                v = float(apply_stencil_points(ga, sphere_stencil(rule, r), x)[0])
                if v > best:
                    best, arg = v, r
    return MaxDetail(best, arg, skipped, skipped > 0)


def spherical_max(g: GridField3, x, r_grid, rule: SphereRule, refine: bool = True) -> float:
    return spherical_max_detail(g, x, r_grid, rule, refine).value


def shell_max_detail(g: GridField3, x, eps_grid, eta_fracs, rule: SphereRule, n_radial: int = 4):
    op = ShellMaximal(rule, eps_grid, eta_fracs, n_radial)
    val, arg = op.points(g, np.asarray(x, dtype=float).reshape(1, 3), domain="strict")
    st = op.stencils[int(arg[0])] if arg[0] >= 0 else None
    return float(val[0]), (st.label if st else None), op.n_samples < 50


def shell_max(g: GridField3, x, eps_grid, eta_fracs, rule: SphereRule, n_radial: int = 4) -> float:
    return shell_max_detail(g, x, eps_grid, eta_fracs, rule, n_radial)[0]


def pair_max(g: GridField3, x, radius: float, delta: float, rule: SphereRule, n_radial: int = 16) -> float:
    """(delta + R)^-1 int_{B(x, R)} |g(z)| |z - x|^-2 dz."""
    if radius < 0 or not delta > 0:
        raise ValueError("need radius >= 0 and delta > 0")
    return float(PairOperator(rule, radius, delta, n_radial)(g, np.asarray(x, dtype=float).reshape(1, 3))[0])


def pair_kernel_bound(g: GridField3, x, K: float, delta: float, rule: SphereRule, n_radial: int = 32) -> float:
    """int_{B(0,K)} |g(z)| / ((delta + |z - x|) |z - x|^2) dz for |x| < K."""
    x = np.asarray(x, dtype=float).reshape(3)
    ga = _padded_abs(g)
    w_dir = rule.nodes @ x
    rho_max = -w_dir + np.sqrt(w_dir**2 - x @ x + K**2)
    u, wu = np.polynomial.legendre.leggauss(n_radial)
    rho = 0.5 * rho_max[:, None] * (u[None] + 1.0)
    pts = x + rho[..., None] * rule.nodes[:, None, :]
    vals = ga.interpolate(pts) / (delta + rho)
    radial = 0.5 * rho_max * np.sum(vals * wu, axis=1)
    return float(np.sum(rule.weights * radial))


def lp_operator_norm_scan(op: StencilMaximal, fields, p: float) -> list[float]:
    """||op g||_p / ||g||_p with both norms as Riemann sums on g's grid."""
    if p < 1:
        raise ValueError("p must be >= 1")
    out = []
    for g in fields:
        ng = g.lp_norm(p)
        if ng == 0:
            raise ZeroNormError("test field has zero L^p norm")
        out.append(g.with_samples(op.grid(g)).lp_norm(p) / ng)
    return out
