"""Uniform 3-D grid fields with trilinear interpolation.

Binary layout (little-endian): 3 x int64 dims, 3 x float64 origin,
float64 spacing, then prod(dims) float64 samples in row-major (C) order,
axis 0 = x.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

_HEADER = struct.Struct("<3q3dd")


class GridFormatError(ValueError):
    pass


@dataclass(frozen=True)
class GridField3:
    samples: np.ndarray
    origin: np.ndarray
    spacing: float

    kind = "grid-interpolated"

    def __post_init__(self):
        samples = np.ascontiguousarray(self.samples, dtype=float)
        if samples.ndim != 3:
            raise ValueError("samples must be a 3-D array")
        if not self.spacing > 0:
            raise ValueError(f"spacing must be positive, got {self.spacing}")
        if not np.isfinite(samples).all():
            raise ValueError("grid samples must be finite")
        object.__setattr__(self, "samples", samples)
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=float).reshape(3))
        object.__setattr__(self, "spacing", float(self.spacing))
        samples.setflags(write=False)

    @property
    def dims(self) -> tuple[int, int, int]:
        return self.samples.shape

    @property
    def upper(self) -> np.ndarray:
        return self.origin + self.spacing * (np.array(self.dims) - 1)

    @property
    def cell_volume(self) -> float:
        return self.spacing**3

    def node_coords(self) -> np.ndarray:
        axes = [self.origin[k] + self.spacing * np.arange(self.dims[k]) for k in range(3)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    @property
    def support_radius(self) -> float:
        nz = np.argwhere(self.samples != 0)
        if len(nz) == 0:
            return 0.0
        pts = self.origin + self.spacing * nz
        return float(np.linalg.norm(pts, axis=1).max() + np.sqrt(3) * self.spacing)

    @classmethod
    def from_function(cls, f, lower, upper, n) -> "GridField3":
        """Sample ``f`` on an n^3 grid spanning the cube [lower, upper]^3."""
        axis = np.linspace(lower, upper, n)
        pts = np.stack(np.meshgrid(axis, axis, axis, indexing="ij"), axis=-1)
        return cls(f(pts), (lower,) * 3, axis[1] - axis[0])

    def with_samples(self, samples) -> "GridField3":
        return GridField3(samples, self.origin, self.spacing)

    def _locate(self, x):
        x = np.asarray(x, dtype=float)
        u = (x - self.origin) / self.spacing
        dims = np.array(self.dims)
        inside = np.all((u >= 0) & (u <= dims - 1), axis=-1)
        i0 = np.clip(np.floor(u).astype(np.int64), 0, dims - 2)
        f = u - i0
        return i0, f, inside

    def _corners(self, values, i0):
        i, j, k = i0[..., 0], i0[..., 1], i0[..., 2]
        return [
            [[values[i + a, j + b, k + c] for c in (0, 1)] for b in (0, 1)]
            for a in (0, 1)
        ]

    def interpolate(self, x, values=None) -> np.ndarray:
        """Trilinear interpolant at points x (..., 3); zero outside the grid box."""
        vals = self.samples if values is None else values
        i0, f, inside = self._locate(x)
        c = self._corners(vals, i0)
        fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]
        c00 = c[0][0][0] * (1 - fx) + c[1][0][0] * fx
        c01 = c[0][0][1] * (1 - fx) + c[1][0][1] * fx
        c10 = c[0][1][0] * (1 - fx) + c[1][1][0] * fx
        c11 = c[0][1][1] * (1 - fx) + c[1][1][1] * fx
        c0 = c00 * (1 - fy) + c10 * fy
        c1 = c01 * (1 - fy) + c11 * fy
        return np.where(inside, c0 * (1 - fz) + c1 * fz, 0.0)

    __call__ = interpolate

    def abs_interpolate(self, x) -> np.ndarray:
        """Interpolant of |samples|: monotone and sublinear in the samples."""
        return self.interpolate(x, np.abs(self.samples))

    def gradient(self, x) -> np.ndarray:
        """Exact gradient of the trilinear interpolant.

        Points on an interior cell face take the cell on the upper side (one-sided).
        """
        i0, f, inside = self._locate(x)
        c = self._corners(self.samples, i0)
        fx, fy, fz = f[..., 0], f[..., 1], f[..., 2]

        def lerp(a, b, s):
            return a * (1 - s) + b * s

        dx = lerp(
            lerp(c[1][0][0] - c[0][0][0], c[1][1][0] - c[0][1][0], fy),
            lerp(c[1][0][1] - c[0][0][1], c[1][1][1] - c[0][1][1], fy),
            fz,
        )
        dy = lerp(
            lerp(c[0][1][0] - c[0][0][0], c[1][1][0] - c[1][0][0], fx),
            lerp(c[0][1][1] - c[0][0][1], c[1][1][1] - c[1][0][1], fx),
            fz,
        )
        dz = lerp(
            lerp(c[0][0][1] - c[0][0][0], c[1][0][1] - c[1][0][0], fx),
            lerp(c[0][1][1] - c[0][1][0], c[1][1][1] - c[1][1][0], fx),
            fy,
        )
        g = np.stack([dx, dy, dz], axis=-1) / self.spacing
        return np.where(inside[..., None], g, 0.0)

    def lp_norm(self, p: float) -> float:
        """Riemann-sum L^p norm over the grid nodes."""
        if np.isinf(p):
            return float(np.abs(self.samples).max())
        return float((np.sum(np.abs(self.samples) ** p) * self.cell_volume) ** (1.0 / p))

    def save(self, path) -> None:
        header = _HEADER.pack(*self.dims, *self.origin, self.spacing)
        with open(path, "wb") as fh:
            fh.write(header)
            fh.write(self.samples.astype("<f8", copy=False).tobytes(order="C"))

    @classmethod
    def load(cls, path) -> "GridField3":
        path = Path(path)
        if not path.exists():
            raise FileNotFoundError(f"grid file not found: {path}")
        data = path.read_bytes()
        if len(data) < _HEADER.size:
            raise GridFormatError(f"{path}: truncated header ({len(data)} bytes)")
        nx, ny, nz, ox, oy, oz, h = _HEADER.unpack_from(data)
        if min(nx, ny, nz) < 2:
            raise GridFormatError(f"{path}: dims must be >= 2, got {(nx, ny, nz)}")
        expected = _HEADER.size + 8 * nx * ny * nz
        if len(data) != expected:
            raise GridFormatError(f"{path}: expected {expected} bytes, found {len(data)}")
        samples = np.frombuffer(data, dtype="<f8", offset=_HEADER.size).reshape(nx, ny, nz)
        return cls(samples.astype(float), (ox, oy, oz), h)


def lp_norm_on_grid(f, lower: float, upper: float, spacing: float, p: float) -> float:
    """Riemann-sum L^p norm of a callable field over the cube [lower, upper]^3.

    Vector-valued fields use the Euclidean norm pointwise.
    """
    n = int(round((upper - lower) / spacing)) + 1
    axis = lower + spacing * np.arange(n)
    acc = 0.0
    for xi in axis:
        pts = np.stack(np.meshgrid([xi], axis, axis, indexing="ij"), axis=-1).reshape(-1, 3)
        vals = np.asarray(f(pts))
        mag = np.abs(vals) if vals.ndim == 1 else np.linalg.norm(vals, axis=-1)
        if np.isinf(p):
            acc = max(acc, float(mag.max()))
        else:
            acc += float(np.sum(mag**p))
    if np.isinf(p):
        return acc
    return float((acc * spacing**3) ** (1.0 / p))
