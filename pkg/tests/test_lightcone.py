import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughflow.fields import gaussian_source
from roughflow.flow3d import PhasePoint, Trajectory, integrate_trajectory, pair_trajectories
from roughflow.lightcone import (
    ConeDomainError,
    DegenerateApexError,
    cone_domain_check,
    grad_check,
    invert_cone,
    invert_cone_batch,
    jacobian_volume_check,
    position,
    stability_gap,
)
from roughflow.spherequad import build_rule
from roughflow.wavefield import KirchhoffField

X0 = np.array([0.1, -0.2, 0.3])


def line(u, T=2.0, n=200, x0=X0):
    t = np.linspace(0, T, n + 1)
    X = x0 + np.outer(t, u)
    return Trajectory(t, X, np.zeros_like(X))


def static(T=2.0, n=50):
    return line(np.zeros(3), T, n)


def ball_points(traj, n, seed, frac=0.98):
    rng = np.random.default_rng(seed)
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return traj.X[-1] + traj.T * frac * np.cbrt(rng.random(n))[:, None] * d


def line_root(u, z, x0=X0):
    a = x0 - z
    au, uu = a @ u, u @ u
    return (au + np.sqrt(au * au + (1 - uu) * (a @ a))) / (1 - uu)


def test_static_closed_form():
    tr = static()
    z = np.array([0.5, 0.4, -0.2])
    ch = invert_cone(tr, z)
    assert ch.s == pytest.approx(np.linalg.norm(X0 - z), abs=1e-12)
    assert np.allclose(ch.omega, (X0 - z) / np.linalg.norm(X0 - z), atol=1e-12)
    assert np.allclose(ch.grad_s, -ch.omega, atol=1e-15)
    assert ch.jac == pytest.approx(ch.s**2)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_straight_line_quadratic_oracle(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(3)
    u *= 0.5 / np.linalg.norm(u)
    tr = line(u)
    z = ball_points(tr, 1, seed)[0]
    ch = invert_cone(tr, z, tol=1e-12)
    assert ch.s == pytest.approx(line_root(u, z), abs=1e-11)
    assert ch.jac > 0


def test_round_trip_and_batch():
    tr = integrate_trajectory(
        KirchhoffField(gaussian_source(), build_rule(8), method="closed_form"),
        PhasePoint([0.0, 0.1, 0.0], [0.8, -0.3, 0.2]), 1.5, 0.01,
    )
    Z = ball_points(tr, 1000, 3)
    ch = invert_cone_batch(tr, Z, 1e-12)
    assert ch.ok.all()
    back = position(tr, ch.s, ch.cell) - ch.s[:, None] * ch.omega
    assert np.max(np.linalg.norm(back - Z, axis=1)) < 10 * 1e-12
    one = invert_cone(tr, Z[5])
    assert np.allclose(one.point(tr), Z[5], atol=1e-10)
    assert one.s == ch.s[5]


def test_domain_errors():
    tr = line(np.array([0.5, 0, 0]))
    with pytest.raises(ConeDomainError):
        invert_cone(tr, tr.X[-1] + np.array([tr.T + 0.1, 0, 0]))
    with pytest.raises(DegenerateApexError):
        invert_cone(tr, X0 + 1e-14)
    ch = invert_cone_batch(tr, np.array([[100.0, 0, 0], X0 + 0.01]))
    assert ch.ok.tolist() == [False, True]


def test_cone_domain_check_examples():
    rule = build_rule(12)
    v, c = cone_domain_check(static(), 50, 500, rule)
    assert v == 0.0 and c == 1.0
    tr = line(np.array([0.0, 0.9, 0.0]), T=1.0, n=100)
    v, c = cone_domain_check(tr, 100, 2000, rule)
    assert v <= 0.01 and c >= 1 - 1e-3
    assert cone_domain_check(tr, 0, 10, rule) == (0.0, 1.0)
    with pytest.raises(IndexError):
        cone_domain_check(tr, 101, 10, rule)


def test_grad_check_static_exact():
    tr = static()
    z = np.array([0.4, 0.3, 0.2])
    ch = invert_cone(tr, z)
    assert np.abs(ch.grad_s + (X0 - z) / np.linalg.norm(X0 - z)).max() < 1e-12
    es, ew = grad_check(ch, tr, z, h=1e-5)
    assert es < 1e-4 and ew < 1e-4


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000))
def test_grad_check_line(seed):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(3)
    u *= 0.5 / np.linalg.norm(u)
    tr = line(u)
    z = ball_points(tr, 1, seed, frac=0.9)[0]
    ch = invert_cone(tr, z)
    if ch.s < 0.05:
        return
    es, ew = grad_check(ch, tr, z, h=1e-5)
    assert es < 1e-4 and ew < 1e-4
    # unit-norm constraint: omega^T d omega / dz = 0
    assert np.abs(ch.omega @ ch.grad_omega).max() < 1e-8


def test_stability_gap_examples():
    tr = static()
    pair = type("P", (), {"base": tr, "shifted": tr})()
    z = np.array([0.3, 0.1, 0.0])
    gs, gw, rs, rw = stability_gap(pair, z, 1.0)
    assert gs == 0 and gw == 0 and rs == 0 and rw == 0
    d1 = np.array([1e-3, -2e-3, 0.5e-3])
    zero = lambda t, X, V: np.zeros_like(X)
    pr = pair_trajectories(zero, PhasePoint(X0, np.zeros(3)), (d1, np.zeros(3)), 2.0, 0.05)
    gs, gw, rs, rw = stability_gap(pr, z, 0.0)
    expect = abs(np.linalg.norm(X0 - z) - np.linalg.norm(X0 + d1 - z))
    assert gs == pytest.approx(expect, abs=1e-11)
    assert gs <= np.linalg.norm(d1) and rs <= 1.0 + 1e-9 and np.isfinite(rw)


def test_volume_identity_line():
    tr = line(np.array([0.3, 0.4, 0.0]), T=1.0, n=100)
    est, exact, err = jacobian_volume_check(tr, 100, 20000, seed=1)
    assert exact == pytest.approx(4 * np.pi)
    assert err < 0.02
