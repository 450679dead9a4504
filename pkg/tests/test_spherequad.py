import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.special import gamma as G

from roughflow.spherequad import (
    QuadratureError,
    UnsupportedOrderError,
    build_rule,
    cap_nodes,
    integrate_sphere,
    random_rotation,
)


def moment(a, b, c):
    """Exact int_{S^2} x^a y^b z^c."""
    if a % 2 or b % 2 or c % 2:
        return 0.0
    return 2 * G((a + 1) / 2) * G((b + 1) / 2) * G((c + 1) / 2) / G((a + b + c + 3) / 2)


@pytest.mark.parametrize("order", [2, 5, 6, 14, 31, 60])
def test_rule_invariants(order):
    r = build_rule(order)
    assert np.abs(np.linalg.norm(r.nodes, axis=1) - 1).max() < 1e-12
    assert abs(r.weights.sum() - 4 * np.pi) < 1e-10
    assert (r.weights > 0).all()


@pytest.mark.parametrize("order", [4, 9, 14])
def test_polynomial_exactness(order):
    r = build_rule(order)
    for a in range(order + 1):
        for b in range(order + 1 - a):
            for c in range(order + 1 - a - b):
                got = integrate_sphere(r, lambda w: w[:, 0] ** a * w[:, 1] ** b * w[:, 2] ** c)
                ref = moment(a, b, c)
                assert abs(got - ref) <= 1e-9 * max(1.0, abs(ref))


def test_exactness_fails_beyond_order():
    r = build_rule(6)
    got = integrate_sphere(r, lambda w: w[:, 2] ** 8)
    assert abs(got - moment(0, 0, 8)) > 1e-6


def test_examples():
    r6 = build_rule(6)
    assert integrate_sphere(r6, lambda w: np.ones(len(w))) == pytest.approx(4 * np.pi, abs=1e-12)
    assert abs(integrate_sphere(r6, lambda w: w[:, 0])) < 1e-14
    r14 = build_rule(14)
    assert integrate_sphere(r14, lambda w: w[:, 0] ** 2 * w[:, 1] ** 2) == pytest.approx(4 * np.pi / 15, rel=1e-12)
    c = np.array([1.5, -2.0, 0.25])
    assert np.allclose(integrate_sphere(r6, lambda w: np.tile(c, (len(w), 1))), 4 * np.pi * c, atol=1e-12)


def test_plane_wave_multiplier_zero_at_pi():
    # int e^{i t xi.w} dw = 4 pi sin(t|xi|)/(t|xi|), zero at t|xi| = pi
    r = build_rule(40)
    xi = np.pi * np.array([0.6, 0.0, 0.8])
    re = integrate_sphere(r, lambda w: np.cos(w @ xi))
    im = integrate_sphere(r, lambda w: np.sin(w @ xi))
    assert abs(re) < 1e-12 and abs(im) < 1e-12


def test_hemisphere():
    # closed form: int_{upper} cos(theta) = pi; the kink limits accuracy
    vals = [integrate_sphere(build_rule(o), lambda w: np.maximum(0.0, w[:, 2])) for o in (20, 80, 320)]
    errs = [abs(v - np.pi) for v in vals]
    assert errs[-1] < 1e-3
    assert errs[0] > errs[1] > errs[2]


def test_errors():
    with pytest.raises(UnsupportedOrderError, match="2..512"):
        build_rule(1)
    with pytest.raises(UnsupportedOrderError):
        build_rule(1000)
    with pytest.raises(UnsupportedOrderError):
        build_rule(3.5)
    r = build_rule(4)

    def bad(w):
        out = np.ones(len(w))
        out[3] = np.nan
        return out

    with pytest.raises(QuadratureError, match="node 3"):
        integrate_sphere(r, bad)


def test_deterministic():
    a, b = build_rule(12), build_rule(12)
    assert np.array_equal(a.nodes, b.nodes) and np.array_equal(a.weights, b.weights)


def test_refinement_consistency():
    f = lambda w: np.exp(w[:, 0] + 0.5 * w[:, 1] * w[:, 2])
    ref = integrate_sphere(build_rule(128), f)
    errs = [abs(integrate_sphere(build_rule(p), f) - ref) for p in (2, 4, 8, 16)]
    assert all(e1 > e2 for e1, e2 in zip(errs, errs[1:]))


@settings(max_examples=30, deadline=None)
@given(seed=st.integers(0, 10_000), a=st.integers(0, 4), b=st.integers(0, 4), c=st.integers(0, 2))
def test_rotation_invariance(seed, a, b, c):
    r = build_rule(10)
    R = random_rotation(np.random.default_rng(seed))
    f = lambda w: w[:, 0] ** a * w[:, 1] ** b * w[:, 2] ** c
    assert abs(integrate_sphere(r, lambda w: f(w @ R.T)) - integrate_sphere(r, f)) < 1e-8


def test_random_rotation_is_rotation():
    R = random_rotation(np.random.default_rng(3))
    assert np.allclose(R @ R.T, np.eye(3), atol=1e-12)
    assert np.linalg.det(R) == pytest.approx(1.0)


def test_cap_nodes():
    r = build_rule(10)
    axes = np.array([[0.0, 0, 1], [1, 1, 0], [0.3, -0.2, 0.9]])
    cm = np.array([0.5, -0.2, 0.9])
    nodes, w = cap_nodes(r, axes, cm)
    assert np.allclose(w.sum(axis=1), 2 * np.pi * (1 - cm))
    a = axes / np.linalg.norm(axes, axis=1, keepdims=True)
    assert (np.einsum("nmk,nk->nm", nodes, a) >= cm[:, None] - 1e-12).all()
    assert np.allclose(np.linalg.norm(nodes, axis=-1), 1)
