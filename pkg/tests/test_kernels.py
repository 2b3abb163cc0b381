import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from shapeband.grid import Bandwidth, Window, make_grid
from shapeband.kernels import (KernelError, KernelId, ShapeClass, check_bias_condition,
                               custom_kernel, get_kernel, kernel_pair, window_weights)

ISO_U2 = get_kernel(KernelId.ISO_UPPER, 2)
ISO_L2 = get_kernel(KernelId.ISO_LOWER, 2)
CVX_U2 = get_kernel(KernelId.CVX_UPPER, 2)
CVX_L2 = get_kernel(KernelId.CVX_LOWER, 2)


def simplex_quad(fn, d):
    """Independent oracle: scipy nested quadrature over the unit simplex."""
    opts = dict(epsabs=1e-12, epsrel=1e-12)
    if d == 1:
        return integrate.quad(lambda x: fn(np.array([x])), 0, 1, **opts)[0]
    if d == 2:
        return integrate.dblquad(lambda y, x: fn(np.array([x, y])), 0, 1, 0,
                                 lambda x: 1 - x, **opts)[0]
    return integrate.tplquad(lambda z, y, x: fn(np.array([x, y, z])), 0, 1, 0, lambda x: 1 - x,
                             0, lambda x, y: 1 - x - y, epsabs=1e-11, epsrel=1e-11)[0]


def radial_quad(profile, d):
    area = 2 * math.pi ** (d / 2) / math.gamma(d / 2)
    return area * integrate.quad(lambda r: profile(r) * r ** (d - 1), 0, 1, epsabs=1e-13)[0]


# -- evaluation ------------------------------------------------------------

def test_iso_upper_values():
    assert ISO_U2.eval([0, 0]) == 1.0
    assert ISO_U2.eval([0.5, 0.5]) == 0.0
    assert ISO_U2.eval([-0.1, 0.2]) == 0.0


def test_cvx_lower_roots():
    assert CVX_L2.eval([1.0, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert CVX_L2.eval([0.6, 0.0]) == pytest.approx(0.0, abs=1e-15)
    assert CVX_L2.eval([0.36, 0.48]) == pytest.approx(0.0, abs=1e-15)
    for d in (1, 3, 4):
        k = get_kernel(KernelId.CVX_LOWER, d)
        r = (d + 1) / (d + 3)
        assert k.eval([r] + [0.0] * (d - 1)) == pytest.approx(0.0, abs=1e-14)


def test_cvx_upper_boundary():
    assert CVX_U2.eval([0.6, 0.8]) == pytest.approx(0.0, abs=1e-15)
    assert CVX_U2.eval([0.0, 0.0]) == 1.0


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(-1.5, 1.5), min_size=2, max_size=2), st.floats(0, 2 * math.pi))
def test_symmetries(x, angle):
    x = np.array(x)
    assert ISO_U2.eval(x) == ISO_L2.eval(-x)
    rot = np.array([[math.cos(angle), -math.sin(angle)], [math.sin(angle), math.cos(angle)]])
    for k in (CVX_U2, CVX_L2):
        assert k.eval(rot @ x) == pytest.approx(k.eval(x), abs=1e-12)


# -- functionals -------------------------------------------------------------

def test_printed_functionals_d2():
    assert ISO_U2.l2_norm_sq() == pytest.approx(1 / 12, abs=1e-15)
    assert ISO_U2.mean() == pytest.approx(1 / 6, abs=1e-15)
    assert CVX_U2.l2_norm_sq() == pytest.approx(math.pi / 3, abs=1e-12)
    assert CVX_U2.mean() == pytest.approx(math.pi / 2, abs=1e-12)
    assert CVX_L2.l2_norm_sq() == pytest.approx(math.pi / 27, abs=1e-12)
    assert CVX_L2.mean() == pytest.approx(math.pi / 18, abs=1e-12)


@pytest.mark.parametrize("d", [1, 2, 3])
def test_iso_functionals_match_quadrature(d):
    k = get_kernel(KernelId.ISO_UPPER, d)
    psi = lambda x: 1 - x.sum()
    assert simplex_quad(lambda x: psi(x) ** 2, d) == pytest.approx(k.l2_norm_sq(), abs=1e-8)
    assert simplex_quad(psi, d) == pytest.approx(k.mean(), abs=1e-8)
    assert get_kernel(KernelId.ISO_LOWER, d).functionals == k.functionals


@pytest.mark.parametrize("d", [1, 2, 3, 4])
def test_cvx_functionals_match_quadrature(d):
    a, b = (2 * d + 4) / (d + 1), (d + 3) / (d + 1)
    lo, up = get_kernel(KernelId.CVX_LOWER, d), get_kernel(KernelId.CVX_UPPER, d)
    assert radial_quad(lambda r: (1 - a * r + b * r * r) ** 2, d) == pytest.approx(
        lo.l2_norm_sq(), abs=1e-8)
    assert radial_quad(lambda r: 1 - a * r + b * r * r, d) == pytest.approx(lo.mean(), abs=1e-8)
    assert radial_quad(lambda r: (1 - r * r) ** 2, d) == pytest.approx(up.l2_norm_sq(), abs=1e-8)
    assert radial_quad(lambda r: 1 - r * r, d) == pytest.approx(up.mean(), abs=1e-8)


def test_cvx_d2_cartesian_oracle():
    """Polar-free check of the d=2 convex functionals."""
    opts = dict(epsabs=1e-10, epsrel=1e-10)
    val = integrate.dblquad(lambda y, x: CVX_L2.eval([x, y]) ** 2, -1, 1,
                            lambda x: -math.sqrt(1 - x * x), lambda x: math.sqrt(1 - x * x),
                            **opts)[0]
    assert val == pytest.approx(math.pi / 27, abs=1e-8)


def test_first_moments():
    # <x_i, psi_1u> = 1/(d(d+1)(d+2)) = 1/24 in d=2
    assert simplex_quad(lambda x: x[0] * (1 - x.sum()), 2) == pytest.approx(1 / 24, abs=1e-10)
    for k in (CVX_U2, CVX_L2):
        v, _ = k.integrate(lambda X: X[..., 0])
        assert abs(v[0]) < 1e-8


def test_custom_kernel_and_validity():
    box = custom_kernel(lambda x: np.ones(x.shape[:-1]), 2, "box")
    assert box.mean() == pytest.approx(4.0, abs=1e-8)
    assert box.l2_norm_sq() == pytest.approx(4.0, abs=1e-8)
    assert not box.bias_verified and CVX_L2.bias_verified
    with pytest.raises(KernelError):
        custom_kernel(lambda x: -np.ones(x.shape[:-1]), 1)


# -- window weights ----------------------------------------------------------

def test_window_weights_iso_upper():
    g = make_grid(4, 2)
    ww = window_weights(ISO_U2, Window((2, 2), Bandwidth((1, 1), 4)), g)
    w = dict(zip(ww.members, ww.weights))
    assert w[(2, 2)] == 1.0
    assert w[(3, 3)] == 0.0
    assert ww.sum_w2 > 0 and ww.usable


def test_window_weights_cvx_lower_three_by_three():
    g = make_grid(6, 2)
    ww = window_weights(CVX_L2, Window((3, 3), Bandwidth((1, 1), 6)), g)
    a, b = 8 / 3, 5 / 3
    hand = 0.0
    for j1 in (-1, 0, 1):
        for j2 in (-1, 0, 1):
            r = math.hypot(j1, j2)
            hand += (1 - a * r + b * r * r) if r <= 1 else 0.0
    assert ww.sum_w == pytest.approx(hand, abs=1e-14)
    assert ww.sum_w > 0 and ww.usable


def test_min_count_flags_small_windows():
    g = make_grid(6, 2)
    # 3x3 = 9 = 3**2 points is the smallest usable window in d=2
    assert window_weights(CVX_U2, Window((3, 3), Bandwidth((1, 1), 6)), g).usable


# -- bias condition -------------------------------------------------------------

def _probes(rng, P, d=2):
    h = rng.uniform(0.02, 0.5, size=(P, d))
    t = h + rng.uniform(0, 1, size=(P, d)) * (1 - 2 * h)
    return t, h


def test_iso_upper_bias_of_sum():
    t, h = _probes(np.random.default_rng(1), 25)
    rep = check_bias_condition(kernel_pair("isotonic", 2), lambda X: X.sum(-1), t, h)
    np.testing.assert_allclose(rep.upper_margin, h.sum(1) / 4, atol=1e-10)
    np.testing.assert_allclose(rep.lower_margin, h.sum(1) / 4, atol=1e-10)
    assert rep.passed()


def test_affine_margins_vanish_for_convex_pair():
    t, h = _probes(np.random.default_rng(2), 25)
    fn = lambda X: 0.3 - 2.0 * X[..., 0] + 5.0 * X[..., 1]
    rep = check_bias_condition(kernel_pair("convex", 2), fn, t, h)
    np.testing.assert_allclose(rep.lower_margin, 0, atol=1e-8)
    np.testing.assert_allclose(rep.upper_margin, 0, atol=1e-8)


def test_centered_paraboloid_strict_margins():
    pair = kernel_pair("convex", 2)
    t = np.array([[0.5, 0.5], [0.3, 0.6]])
    h = np.array([[0.2, 0.3], [0.1, 0.1]])
    for ti, hi in zip(t, h):
        rep = check_bias_condition(pair, lambda X: np.sum((X - ti) ** 2, -1), ti, hi)
        assert rep.upper_margin[0] > 0 and rep.lower_margin[0] > 0


def test_violation_reported_for_wrong_class():
    pair = kernel_pair("isotonic", 2)
    fn = lambda X: -X.sum(-1)   # decreasing
    rep = check_bias_condition(pair, fn, [0.5, 0.5], [0.2, 0.2])
    assert not rep.passed()
    v = rep.violations()[0]
    assert v["t"] == (0.5, 0.5) and v["h"] == (0.2, 0.2)


def test_probe_outside_region_rejected():
    with pytest.raises(ValueError):
        check_bias_condition(kernel_pair("isotonic", 2), lambda X: X[..., 0], [0.1, 0.5],
                             [0.2, 0.2])


def test_lower_kernel_quadratic_claim():
    """<g, psi_lower> <= g(0) <1, psi_lower> for convex quadratics with g(0) >= 0."""
    rng = np.random.default_rng(11)
    for d in (1, 2, 3):
        k = get_kernel(KernelId.CVX_LOWER, d)
        P = 100
        A = rng.normal(size=(P, d, d))
        H = np.einsum("pij,pkj->pik", A, A)
        b = rng.normal(size=(P, d)) * 3
        c = rng.uniform(0, 2, size=P)
        g = lambda X: (0.5 * np.einsum("pqi,pij,pqj->pq", X, H, X)
                       + np.einsum("pqi,pi->pq", X, b) + c[:, None])
        val, err = k.integrate(g, P)
        assert np.all(val <= c * k.mean() + 1e-8)


def test_pair_metadata():
    p = kernel_pair(ShapeClass.CONVEX, 2)
    assert p.id == "convex-d2"
    assert p.lower.id is KernelId.CVX_LOWER and p.upper.id is KernelId.CVX_UPPER
