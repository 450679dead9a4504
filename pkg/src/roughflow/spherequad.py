"""Product Gauss-Legendre x uniform-azimuth quadrature on the unit sphere."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

MIN_ORDER = 2
MAX_ORDER = 512


class UnsupportedOrderError(ValueError):
    pass


class QuadratureError(ValueError):
    pass


@dataclass(frozen=True)
class SphereRule:
    """Nodes and weights on S^2.

    ``order`` is the polynomial exactness degree: every polynomial in
    (x, y, z) of total degree <= order is integrated exactly (up to
    rounding).
    """

    nodes: np.ndarray
    weights: np.ndarray
    order: int
    n_polar: int = field(default=0)
    n_azimuth: int = field(default=0)

    def __post_init__(self):
        self.nodes.setflags(write=False)
        self.weights.setflags(write=False)

    def __len__(self):
        return len(self.weights)

    @property
    def total_weight(self) -> float:
        return float(self.weights.sum())


def _polar_counts(order: int) -> tuple[int, int]:
    # GL with n points is exact to degree 2n-1; uniform azimuth with m points
    # is exact for trigonometric degree m-1.
    return order // 2 + 1, order + 1


def build_rule(order: int) -> SphereRule:
    """Build the product rule of polynomial exactness ``order``."""
    if not isinstance(order, (int, np.integer)) or not MIN_ORDER <= order <= MAX_ORDER:
        raise UnsupportedOrderError(
            f"unsupported quadrature order {order!r}; supported orders are the "
            f"integers {MIN_ORDER}..{MAX_ORDER}"
        )
    order = int(order)
    n_polar, n_azi = _polar_counts(order)
    mu, w_mu = np.polynomial.legendre.leggauss(n_polar)
    phi = 2.0 * np.pi * np.arange(n_azi) / n_azi
    sin_t = np.sqrt(1.0 - mu**2)
    nodes = np.empty((n_polar, n_azi, 3))
    nodes[..., 0] = sin_t[:, None] * np.cos(phi)[None, :]
    nodes[..., 1] = sin_t[:, None] * np.sin(phi)[None, :]
    nodes[..., 2] = mu[:, None]
    weights = np.repeat(w_mu * (2.0 * np.pi / n_azi), n_azi)
    return SphereRule(nodes.reshape(-1, 3), weights, order, n_polar, n_azi)


def integrate_sphere(rule: SphereRule, f) -> np.ndarray:
    """Return sum_i w_i f(omega_i).

    ``f`` is called once on the (M, 3) node array and must return an array
    of shape (M,) or (M, k).
    """
    vals = np.asarray(f(rule.nodes), dtype=float)
    if vals.shape[0] != len(rule):
        raise QuadratureError(
            f"integrand returned leading dimension {vals.shape[0]}, expected {len(rule)}"
        )
    bad = ~np.isfinite(vals.reshape(len(rule), -1)).all(axis=1)
    if bad.any():
        i = int(np.argmax(bad))
        raise QuadratureError(
            f"integrand is not finite at node {i} (omega={rule.nodes[i].tolist()})"
        )
    return np.tensordot(rule.weights, vals, axes=(0, 0))


def _frames(axes: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Orthonormal (e1, e2) completing each unit vector in ``axes`` (N, 3)."""
    a = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
    helper = np.zeros_like(a)
    use_x = np.abs(a[:, 0]) < 0.9
    helper[use_x, 0] = 1.0
    helper[~use_x, 1] = 1.0
    e1 = np.cross(a, helper)
    e1 /= np.linalg.norm(e1, axis=-1, keepdims=True)
    e2 = np.cross(a, e1)
    return e1, e2


def cap_nodes(rule: SphereRule, axes: np.ndarray, cos_min: np.ndarray):
    """Per-row product rules on the caps {omega : omega.axis >= cos_min}.

    Uses the same polar/azimuth counts as ``rule``; the polar Gauss nodes are
    mapped onto [cos_min, 1]. Returns nodes (N, M, 3) and weights (N, M); the
    weights of row i sum to 2 pi (1 - cos_min[i]).
    """
    axes = np.atleast_2d(np.asarray(axes, dtype=float))
    cos_min = np.clip(np.atleast_1d(np.asarray(cos_min, dtype=float)), -1.0, 1.0)
    u, w_u = np.polynomial.legendre.leggauss(rule.n_polar)
    n_azi = rule.n_azimuth
    half = 0.5 * (1.0 - cos_min)
    mu = cos_min[:, None] + half[:, None] * (u[None, :] + 1.0)
    w_mu = half[:, None] * w_u[None, :]
    phi = 2.0 * np.pi * np.arange(n_azi) / n_azi
    sin_t = np.sqrt(np.clip(1.0 - mu**2, 0.0, None))
    a = axes / np.linalg.norm(axes, axis=-1, keepdims=True)
    e1, e2 = _frames(a)
    cphi, sphi = np.cos(phi), np.sin(phi)
    # (N, n_polar, n_azi, 3)
    nodes = (
        mu[:, :, None, None] * a[:, None, None, :]
        + (sin_t[:, :, None] * cphi[None, None, :])[..., None] * e1[:, None, None, :]
        + (sin_t[:, :, None] * sphi[None, None, :])[..., None] * e2[:, None, None, :]
    )
    weights = np.repeat(w_mu * (2.0 * np.pi / n_azi), n_azi, axis=1)
    n = axes.shape[0]
    return nodes.reshape(n, -1, 3), weights


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed rotation matrix."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q
