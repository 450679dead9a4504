import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from roughflow.fields import gaussian_source
from roughflow.flow3d import (
    Ensemble,
    FunctionalReport,
    PhasePoint,
    flow_map,
    functional_I_delta,
    functional_Q,
    integrate_batch,
    integrate_trajectory,
    jacobian_estimate,
    pair_trajectories,
    pushforward_density,
    semigroup_residual,
    semigroup_residuals,
    sweep_pairs,
    truncate_omega_K,
    vhat,
)
from roughflow.integrate import FlowError, step_sizes
from roughflow.spherequad import build_rule
from roughflow.wavefield import KirchhoffField


def zero_force(t, X, V):
    return np.zeros_like(np.asarray(X, dtype=float))


def const_force(c):
    c = np.asarray(c, dtype=float)
    return lambda t, X, V: np.broadcast_to(c, np.shape(X)).copy()


SMOOTH = KirchhoffField(gaussian_source(), build_rule(8), method="closed_form")
P0 = PhasePoint(np.array([0.2, -0.1, 0.3]), np.array([0.5, 0.2, -0.4]))

finite = st.floats(-2.0, 2.0)
vec3 = st.tuples(finite, finite, finite).map(np.array)


def test_step_sizes():
    assert np.allclose(step_sizes(1.0, 0.25), [0.25] * 4)
    h = step_sizes(1.0, 0.3)
    assert len(h) == 4 and h[-1] == pytest.approx(0.1) and h.sum() == pytest.approx(1.0)
    assert step_sizes(-0.5, 0.25).tolist() == [-0.25, -0.25]


@settings(max_examples=30, deadline=None)
@given(x=vec3, v=vec3)
def test_free_transport_exact(x, v):
    tr = integrate_trajectory(zero_force, PhasePoint(x, v), 1.0, 0.1)
    assert np.allclose(tr.X, x + tr.t_grid[:, None] * (v / np.sqrt(1 + v @ v)), atol=1e-13)
    assert np.all(tr.V == v)
    assert np.all(tr.speed_ratios() < 1)


def test_constant_force_velocity_linear():
    tr = integrate_trajectory(const_force([0, 0, 0.7]), P0, 2.0, 0.1)
    assert np.allclose(tr.V, P0.v + np.outer(tr.t_grid, [0, 0, 0.7]), atol=1e-13)
    assert np.all(tr.speed_ratios() < 1)
    assert np.array_equal(tr.X[0], P0.x) and np.array_equal(tr.V[0], P0.v)


def test_richardson_fourth_order():
    ref = integrate_trajectory(SMOOTH, P0, 1.0, 0.025 / 16)
    errs = []
    for dt in (0.1, 0.05, 0.025):
        tr = integrate_trajectory(SMOOTH, P0, 1.0, dt)
        errs.append(np.linalg.norm(np.r_[tr.X[-1] - ref.X[-1], tr.V[-1] - ref.V[-1]]))
    for a, b in zip(errs, errs[1:]):
        assert 12 < a / b < 20


def test_nonfinite_force_reports_location():
    bad = lambda t, X, V: np.where(np.asarray(X)[:, :1] > 0.25, np.nan, 0.0) * np.ones((1, 3))
    with pytest.raises(FlowError, match="t="):
        integrate_trajectory(bad, PhasePoint([0.2, 0, 0], [1.0, 0, 0]), 1.0, 0.1)


def test_phase_point_validation():
    with pytest.raises(ValueError):
        PhasePoint([np.nan, 0, 0], [0, 0, 0])


def test_jacobian_free_and_smooth():
    assert jacobian_estimate(flow_map(zero_force, 1.0, 0.1), P0, 1e-4) == pytest.approx(1.0, abs=1e-8)
    assert jacobian_estimate(flow_map(SMOOTH, 1.0, 0.05), P0, 1e-4) == pytest.approx(1.0, abs=1e-5)


def test_jacobian_detects_dissipation():
    damp = lambda t, X, V: -np.asarray(V)
    t = 0.8
    det = jacobian_estimate(flow_map(damp, t, 0.01), P0, 1e-4)
    assert det == pytest.approx(np.exp(-3 * t), rel=1e-6)


def test_semigroup():
    assert semigroup_residual(zero_force, P0, 0.3, 0.5, 0.1) < 1e-14
    assert semigroup_residual(SMOOTH, P0, 0.3, 0.0, 0.1) == 0.0
    r1 = semigroup_residual(SMOOTH, P0, 0.37, 0.5, 0.08)
    r2 = semigroup_residual(SMOOTH, P0, 0.37, 0.5, 0.04)
    assert r1 / r2 > 8
    with pytest.raises(ValueError):
        semigroup_residual(SMOOTH, P0, -1.0, 0.5, 0.1)


def test_batched_semigroup_matches_single():
    P = Ensemble.cube(1.0, 4, 2).points
    ts = np.array([[0.33, 0.41], [0.5, 0.0], [0.07, 0.9], [0.0, 0.2]])
    batch = semigroup_residuals(SMOOTH, P, ts[:, 0], ts[:, 1], 0.08)
    single = [semigroup_residual(SMOOTH, PhasePoint.from_array(p), t, s, 0.08) for p, (t, s) in zip(P, ts)]
    assert np.allclose(batch, single, rtol=1e-12, atol=1e-18)
    assert batch[1] == 0.0
    # quadrature fields take one pass per distinct time
    quad = KirchhoffField(gaussian_source(), build_rule(8))
    rq = semigroup_residuals(quad, P[:2], ts[:2, 0], ts[:2, 1], 0.08)
    assert rq[1] == 0.0 and rq[0] < 1e-6


def test_forward_backward():
    z = P0.as_array()
    fwd = flow_map(SMOOTH, 1.0, 0.05)(z)
    back = flow_map(SMOOTH, -1.0, 0.05, t0=1.0)(fwd)
    ref = integrate_trajectory(SMOOTH, P0, 1.0, 0.05 / 16)
    err = np.linalg.norm(fwd - np.r_[ref.X[-1], ref.V[-1]])
    assert np.linalg.norm(back - z) <= 10 * err


def test_pair_x_shift_free_transport():
    h = 1e-3
    pr = pair_trajectories(zero_force, P0, ([h, 0, 0], [0, 0, 0]), 1.0, 0.1)
    assert np.allclose(pr.base.X - pr.shifted.X, [-h, 0, 0], atol=1e-15)
    assert np.allclose(pr.A, 2 * h * h, rtol=1e-9)
    with pytest.raises(ValueError):
        pair_trajectories(zero_force, P0, ([0, 0, 0], [0, 0, 0]), 1.0, 0.1)


@settings(max_examples=25, deadline=None)
@given(v=vec3, d=vec3)
def test_pair_v_shift_lipschitz(v, d):
    d = 1e-2 * d
    if not np.linalg.norm(d) > 0:
        return
    pr = pair_trajectories(zero_force, PhasePoint(np.zeros(3), v), ([0, 0, 0], d), 1.0, 0.1)
    assert pr.A[0] == pytest.approx(np.linalg.norm(d) ** 2)
    dx = np.linalg.norm(pr.base.X - pr.shifted.X, axis=1)
    assert np.all(dx <= pr.base.t_grid * np.linalg.norm(d) * (1 + 1e-9) + 1e-15)


@settings(max_examples=15, deadline=None)
@given(x=vec3, v=vec3, d=vec3)
def test_pair_invariants_smooth_field(x, v, d):
    d = 1e-3 * d
    if not np.linalg.norm(d) > 0:
        return
    pr = pair_trajectories(SMOOTH, PhasePoint(x, v), (d, d[::-1]), 1.0, 0.1)
    # A[0] = |delta|^2 + |delta_1|^2 from the defining formula
    assert pr.A[0] == pytest.approx(pr.delta_norm**2 + d @ d)
    assert np.all(np.diff(pr.A) >= 0)
    assert pr.kinetic_ratio() <= 1.0
    lhs, rhs = pr.telescoping()
    assert lhs <= rhs + 1e-15
    assert np.all(pr.base.speed_ratios() < 1) and np.all(pr.shifted.speed_ratios() < 1)


def test_ensemble_reproducible_and_inside():
    a = Ensemble.cube(1.0, 500, seed=7)
    b = Ensemble.cube(1.0, 500, seed=7)
    assert np.array_equal(a.points, b.points)
    assert np.all(a.points >= -1) and np.all(a.points <= 1)
    assert a.weight == pytest.approx(64 / 500)
    assert np.allclose(np.linalg.norm(a.directions(), axis=1), 1)
    assert not np.array_equal(a.points, Ensemble.cube(1.0, 500, seed=8).points)
    with pytest.raises(ValueError):
        Ensemble(np.ones(6), np.zeros(6), 10, 0)


def test_truncation_examples():
    ens = Ensemble.cube(1.0, 50, 0)
    idx, frac = truncate_omega_K(ens, zero_force, 1.0, 0.1, 1e-3)
    assert len(idx) == 50 and frac == 0
    idx, frac = truncate_omega_K(ens, SMOOTH, 1.0, 0.1, np.inf)
    assert frac == 0
    idx, frac = truncate_omega_K(ens, const_force([1.0, 0, 0]), 1.0, 0.1, 0.5)
    assert frac == 1.0 and len(idx) == 0
    with pytest.raises(ValueError):
        truncate_omega_K(ens, zero_force, 1.0, 0.1, 0.0)


def test_functional_Q_examples():
    ens = Ensemble.cube(1.0, 20, 1)
    tiny = 1e-12
    pairs = [pair_trajectories(zero_force, ens.phase_point(i), ([0, 0, 0], [tiny, 0, 0]), 1.0, 0.1) for i in range(20)]
    rep = functional_Q(pairs, ens.weight, 1e-3, T=1.0)
    assert rep.Q == pytest.approx(0.0, abs=1e-9)
    # v-shift of size delta under free transport: integrand <= log(1 + T^2 + T)
    delta = 1e-4
    dirs = ens.directions()
    pairs = [
        pair_trajectories(zero_force, ens.phase_point(i), ([0, 0, 0], delta * dirs[i, 3:] / np.linalg.norm(dirs[i, 3:])), 1.0, 0.1)
        for i in range(20)
    ]
    rep = functional_Q(pairs, 1.0, delta, T=1.0)
    assert rep.Q <= 20 * np.log(1 + 2.0)
    assert rep.psi_estimate == rep.Q
    # saturation: discrepancy >= 1 gives log(1 + 1/delta^2) per pair
    big = [pair_trajectories(zero_force, P0, ([2.0, 0, 0], [0, 0, 0]), 1.0, 0.1)]
    rep = functional_Q(big, 1.0, 1e-3)
    assert rep.Q == pytest.approx(np.log(1 + 1e6))
    assert rep.Q_K == pytest.approx(np.log(1 + 4e6))
    rep = functional_Q(big + big, 1.0, 1e-3, omega_K=[0])
    assert rep.omega_K_fraction == 0.5


def test_functional_report_validation():
    with pytest.raises(ValueError):
        FunctionalReport(1e-2, 1.0, -1.0, 0.0, 0.0)
    with pytest.raises(ValueError):
        FunctionalReport(1e-2, 1.0, 1.0, 0.0, 1.5)


def test_I_delta_zero_cases():
    pairs = [pair_trajectories(SMOOTH, P0, ([1e-3, 0, 0], [0, 0, 0]), 0.5, 0.1)]
    assert functional_I_delta(pairs, lambda t, x: np.zeros((len(x), 3))) == 0.0
    const = lambda t, x: np.ones((len(x), 3))
    assert functional_I_delta(pairs, const) == 0.0
    assert functional_I_delta(pairs, SMOOTH.field) > 0


def test_pushforward_examples():
    g = lambda x: np.exp(-np.sum(x * x, axis=1))
    h = lambda v: 1.0 / (1.0 + np.sum(v * v, axis=1))
    f0 = lambda x, v: g(x) * h(v)
    probe = np.random.default_rng(0).uniform(-1, 1, (40, 6))
    assert np.array_equal(pushforward_density(SMOOTH, f0, 0.0, 0.1, probe), f0(probe[:, :3], probe[:, 3:]))
    t = 0.7
    got = pushforward_density(zero_force, f0, t, 0.1, probe)
    x, v = probe[:, :3], probe[:, 3:]
    assert np.allclose(got, g(x - t * vhat(v)) * h(v), atol=1e-13)


def test_pushforward_preserves_l2():
    # f0 supported well inside the probe box; Riemann sums on a 6-D grid
    f0 = lambda x, v: np.exp(-4 * np.sum(x * x, axis=1) - 4 * np.sum(v * v, axis=1))
    n, hw = 10, 1.6
    ax = np.linspace(-hw, hw, n)
    grid = np.stack(np.meshgrid(*[ax] * 6, indexing="ij"), -1).reshape(-1, 6)
    cell = (ax[1] - ax[0]) ** 6
    n0 = np.sqrt(np.sum(f0(grid[:, :3], grid[:, 3:]) ** 2) * cell)
    ft = pushforward_density(SMOOTH, f0, 0.5, 0.1, grid)
    assert np.sqrt(np.sum(ft**2) * cell) == pytest.approx(n0, rel=0.02)


def test_sweep_matches_pairs_and_workers():
    ens = Ensemble.cube(1.0, 12, 3)
    dirs = ens.directions()
    deltas = np.array([1e-2, 1e-4])
    res = sweep_pairs(SMOOTH, ens.points, dirs, deltas, 0.5, 0.1, chunk=5)
    for j, d in enumerate(deltas):
        for i in (0, 7, 11):
            sh = d * dirs[i]
            pr = pair_trajectories(SMOOTH, ens.phase_point(i), (sh[:3], sh[3:]), 0.5, 0.1)
            assert res.D[j, i] == pytest.approx(pr.discrepancy(), rel=1e-9)
            ref_I = functional_I_delta([pr], SMOOTH.field)
            assert res.I_terms[j, i] == pytest.approx(ref_I, rel=1e-9)
    par = sweep_pairs(SMOOTH, ens.points, dirs, deltas, 0.5, 0.1, chunk=5, workers=3)
    assert np.array_equal(par.D, res.D) and np.array_equal(par.I_terms, res.I_terms)


def test_integrate_batch_shapes():
    X0 = np.zeros((4, 3))
    V0 = np.ones((4, 3))
    t, X, V = integrate_batch(zero_force, X0, V0, 1.0, 0.25)
    assert t.shape == (5,) and X.shape == (5, 4, 3) and V.shape == (5, 4, 3)
    t, X, V = integrate_batch(zero_force, X0, V0, 1.0, 0.25, record=False)
    assert X.shape == (4, 3)
