"""Least-squares scaling fits in log space."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


class FitError(ValueError):
    pass


@dataclass
class ScalingFit:
    model: str
    abscissa: np.ndarray
    ordinate: np.ndarray
    slope: float
    intercept: float
    residual: float
    ratios: np.ndarray = field(default_factory=lambda: np.zeros(0))
    ratio_differences: np.ndarray = field(default_factory=lambda: np.zeros(0))
    sublinear: bool | None = None

    def as_dict(self) -> dict:
        d = dict(
            model=self.model,
            slope=self.slope,
            intercept=self.intercept,
            residual=self.residual,
            n_points=int(len(self.abscissa)),
        )
        if self.model == "psi":
            d["ratios"] = [float(r) for r in self.ratios]
            d["sublinear"] = self.sublinear
        return d


def _lstsq(x, y):
    A = np.stack([x, np.ones_like(x)], axis=1)
    coef, *_ = np.linalg.lstsq(A, y, rcond=None)
    res = y - A @ coef
    return float(coef[0]), float(coef[1]), float(np.sqrt(np.mean(res**2)))


def fit_scaling(points, model: str = "power", tolerance: float = 0.10) -> ScalingFit:
    """Fit y ~ a x + b (``linear``), log y ~ a log x + b (``power``) or the psi trend.

    ``psi`` mode takes (x, y) = (-log delta, Q/T): it reports the power fit,
    the ratios y/x with their finite differences, and flags ``sublinear``
    when y/x is nonincreasing up to ``tolerance`` and ends below its start.
    """
    pts = np.asarray(points, dtype=float)
    if pts.ndim != 2 or pts.shape[1] != 2 or len(pts) < 3:
        raise FitError("need at least 3 (x, y) points")
    x, y = pts[:, 0], pts[:, 1]
    if not np.isfinite(pts).all():
        raise FitError("points must be finite")
    if (np.diff(x) <= 0).any():
        raise FitError("x must be strictly increasing")
    if x[-1] - x[0] <= 1e-12 * max(1.0, abs(x[0])):
        raise FitError("degenerate x range")
    if model == "linear":
        return ScalingFit(model, x, y, *_lstsq(x, y))
    if model in ("power", "psi"):
        if (x <= 0).any() or (y <= 0).any():
            raise FitError(f"{model} fit needs positive x and y")
        fit = ScalingFit(model, x, y, *_lstsq(np.log(x), np.log(y)))
        if model == "psi":
            r = y / x
            fit.ratios = r
            fit.ratio_differences = np.diff(r)
            fit.sublinear = bool(np.all(r[1:] <= r[:-1] * (1.0 + tolerance)) and r[-1] < r[0])
        return fit
    raise FitError(f"unknown fit model {model!r}")
