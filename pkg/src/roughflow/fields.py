"""Analytic source fields on R^3.

Every field here is callable on points of shape (..., 3) and exposes
``gradient``, ``support_radius`` and ``kind``. Radial bump sums also carry
exact spherical means and exact Kirchhoff fields: for a radial profile phi
centred at c and d = |x - c|,

    int_{S^2} phi(|x + t w - c|) dw = 2 pi / (d t) * (Psi(d + t) - Psi(|d - t|)),
    d/dt [t int_{S^2} phi dw]       = 2 pi / d * ((d + t) phi(d + t) + (d - t) phi(|d - t|)),

with Psi(r) = int_0^r phi(rho) rho drho.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

_SMALL_D = 1e-7


class RadialProfile:
    """A radial profile phi(r), r >= 0, vanishing for r > support."""

    support: float

    def phi(self, r):
        raise NotImplementedError

    def dphi(self, r):
        raise NotImplementedError

    def psi(self, r):
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianProfile(RadialProfile):
    sigma: float = 0.5
    cutoff_sigmas: float = 8.0

    @property
    def support(self) -> float:
        return self.sigma * self.cutoff_sigmas

    def phi(self, r):
        r = np.asarray(r, dtype=float)
        return np.where(r <= self.support, np.exp(-0.5 * (r / self.sigma) ** 2), 0.0)

    def dphi(self, r):
        r = np.asarray(r, dtype=float)
        return -r / self.sigma**2 * self.phi(r)

    def psi(self, r):
        rc = np.minimum(np.asarray(r, dtype=float), self.support)
        return self.sigma**2 * (1.0 - np.exp(-0.5 * (rc / self.sigma) ** 2))


@dataclass(frozen=True)
class InverseDistanceProfile(RadialProfile):
    """phi(r) = (min(M, 1/r) - 1/R)_+ : continuous, L^1 and L^2, unbounded as M grows."""

    cap: float = 100.0
    radius: float = 1.0

    def __post_init__(self):
        if not self.cap * self.radius > 1.0:
            raise ValueError("need cap > 1/radius for a nonzero profile")

    @property
    def support(self) -> float:
        return self.radius

    def phi(self, r):
        r = np.maximum(np.asarray(r, dtype=float), 1.0 / self.cap)
        return np.maximum(1.0 / r - 1.0 / self.radius, 0.0)

    def dphi(self, r):
        r = np.asarray(r, dtype=float)
        inside = (r > 1.0 / self.cap) & (r < self.radius)
        return np.where(inside, -1.0 / np.maximum(r, 1.0 / self.cap) ** 2, 0.0)

    def psi(self, r):
        r = np.minimum(np.asarray(r, dtype=float), self.radius)
        m, R = self.cap, self.radius
        inner = (m - 1.0 / R) * 0.5 * np.minimum(r, 1.0 / m) ** 2
        ro = np.maximum(r, 1.0 / m)
        outer = (ro - 1.0 / m) - (ro**2 - 1.0 / m**2) / (2.0 * R)
        return inner + outer


@dataclass(frozen=True)
class BallIndicatorProfile(RadialProfile):
    radius: float = 1.0

    @property
    def support(self) -> float:
        return self.radius

    def phi(self, r):
        return (np.asarray(r, dtype=float) <= self.radius).astype(float)

    def dphi(self, r):
        # distributional part on the sphere is not representable pointwise
        return np.zeros_like(np.asarray(r, dtype=float))

    def psi(self, r):
        return 0.5 * np.minimum(np.asarray(r, dtype=float), self.radius) ** 2


class RadialBumps:
    """Scalar field sum_j a_j phi(|x - c_j|)."""

    kind = "analytic"

    def __init__(self, profile: RadialProfile, centers, amplitudes):
        self.profile = profile
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.amplitudes = np.atleast_1d(np.asarray(amplitudes, dtype=float))
        if self.centers.shape != (len(self.amplitudes), 3):
            raise ValueError("centers must be (n, 3) with one amplitude per center")
        self.centers.setflags(write=False)
        self.amplitudes.setflags(write=False)

    @property
    def support_radius(self) -> float:
        if len(self.amplitudes) == 0:
            return 0.0
        return float(np.linalg.norm(self.centers, axis=1).max() + self.profile.support)

    def _dist(self, x):
        x = np.asarray(x, dtype=float)
        diff = x[..., None, :] - self.centers
        return diff, np.sqrt(np.sum(diff * diff, axis=-1))

    def __call__(self, x):
        _, d = self._dist(x)
        return np.sum(self.amplitudes * self.profile.phi(d), axis=-1)

    def gradient(self, x):
        diff, d = self._dist(x)
        scale = self.amplitudes * self.profile.dphi(d) / np.maximum(d, 1e-300)
        return np.sum(scale[..., None] * diff, axis=-2)

    def spherical_mean_integral(self, t, x):
        """Exact int_{S^2} f(x + t w) dw."""
        _, d = self._dist(x)
        return np.sum(self.amplitudes * radial_sphere_integral(self.profile, t, d), axis=-1)

    def wave(self, t, x):
        return t * self.spherical_mean_integral(t, x)

    def kirchhoff(self, t, x):
        """Exact d/dt [t int_{S^2} f(x + t w) dw]; t may be one time per point."""
        _, d = self._dist(x)
        t = np.asarray(t, dtype=float)
        if t.ndim:
            t = t[..., None]
        return np.sum(self.amplitudes * radial_kirchhoff(self.profile, t, d), axis=-1)


def radial_sphere_integral(profile: RadialProfile, t: float, d):
    d = np.asarray(d, dtype=float)
    if t == 0:
        return 4.0 * np.pi * profile.phi(d)
    small = d < _SMALL_D * (1.0 + t)
    ds = np.where(small, 1.0, d)
    general = 2.0 * np.pi / (ds * t) * (profile.psi(ds + t) - profile.psi(np.abs(ds - t)))
    return np.where(small, 4.0 * np.pi * profile.phi(t), general)


def radial_kirchhoff(profile: RadialProfile, t: float, d):
    d = np.asarray(d, dtype=float)
    small = d < _SMALL_D * (1.0 + t)
    ds = np.where(small, 1.0, d)
    general = (
        2.0 * np.pi / ds
        * ((ds + t) * profile.phi(ds + t) + (ds - t) * profile.phi(np.abs(ds - t)))
    )
    limit = 4.0 * np.pi * (profile.phi(t) + t * profile.dphi(t))
    return np.where(small, limit, general)


class PlaneWave:
    """cos(xi . x + phase); not compactly supported (test mode)."""

    kind = "analytic"
    support_radius = np.inf

    def __init__(self, xi, phase: float = 0.0):
        self.xi = np.asarray(xi, dtype=float)
        self.phase = float(phase)

    def __call__(self, x):
        return np.cos(np.asarray(x, dtype=float) @ self.xi + self.phase)

    def gradient(self, x):
        s = -np.sin(np.asarray(x, dtype=float) @ self.xi + self.phase)
        return s[..., None] * self.xi

    def wave(self, t, x):
        k = np.linalg.norm(self.xi)
        mult = 4.0 * np.pi * t if k == 0 else 4.0 * np.pi * np.sin(k * t) / k
        return mult * self(x)

    def kirchhoff(self, t, x):
        k = np.linalg.norm(self.xi)
        return 4.0 * np.pi * np.cos(k * t) * self(x)


class ConstantField:
    """f = c everywhere (test mode; waives compact support)."""

    kind = "analytic"
    support_radius = np.inf

    def __init__(self, value: float):
        self.value = float(value)

    def __call__(self, x):
        return np.full(np.asarray(x).shape[:-1], self.value)

    def gradient(self, x):
        return np.zeros(np.asarray(x).shape)

    def wave(self, t, x):
        return 4.0 * np.pi * t * self(x)

    def kirchhoff(self, t, x):
        return 4.0 * np.pi * self(x)


class ZeroField(ConstantField):
    support_radius = 0.0

    def __init__(self):
        super().__init__(0.0)


# Fixed bump layouts for the standard test sources. Component k of the vector
# source uses the rows of _CENTERS assigned to it.
_ROUGH_CENTERS = np.array(
    [
        [0.35, -0.20, 0.10],
        [-0.40, 0.30, -0.25],
        [0.10, 0.45, 0.40],
        [-0.15, -0.45, -0.30],
        [0.45, 0.15, -0.40],
        [-0.30, -0.10, 0.45],
        [0.20, -0.35, -0.05],
        [-0.45, 0.40, 0.20],
        [0.05, 0.05, -0.45],
        [0.30, 0.40, -0.15],
        [-0.25, -0.40, 0.25],
        [0.40, -0.05, 0.35],
    ]
)
_ROUGH_SIGNS = np.array([1.0, -1.0, 1.0, -1.0] * 3)


def rough_source(cap: float = 100.0, amplitude: float = 1.0 / (4.0 * np.pi)) -> list[RadialBumps]:
    """Vector source of truncated inverse-distance bumps, four per component.

    The default amplitude makes the propagated field at t = 0 equal to the
    bump sum itself.
    """
    prof = InverseDistanceProfile(cap=cap, radius=1.0)
    comps = []
    for k in range(3):
        rows = slice(4 * k, 4 * k + 4)
        comps.append(RadialBumps(prof, _ROUGH_CENTERS[rows], amplitude * _ROUGH_SIGNS[rows]))
    return comps


def gaussian_source(sigma: float = 0.5, amplitude: float = 0.5 / (4.0 * np.pi)) -> list[RadialBumps]:
    """Smooth vector source: two Gaussian bumps per component."""
    prof = GaussianProfile(sigma=sigma)
    comps = []
    for k in range(3):
        rows = [4 * k, 4 * k + 1]
        comps.append(RadialBumps(prof, _ROUGH_CENTERS[rows], amplitude * _ROUGH_SIGNS[rows]))
    return comps


def zero_source() -> list[ZeroField]:
    return [ZeroField() for _ in range(3)]
