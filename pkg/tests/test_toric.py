import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.integrate import quad

from gcquant.polytope import box_polytope, gc_polytope, interval
from gcquant.toric import (
    ConvexDeformation,
    QuadraticNu,
    SectionDensity,
    SymplecticPotential,
    alpha_m,
    bohr_sommerfeld_test,
    complex_to_moment,
    complex_to_moment_log,
    g_can_grad,
    g_can_hess,
    g_can_value,
    holonomy,
    log_l1_norm,
    moment_to_complex,
    moment_to_log_complex,
    polytope_grid,
    section_log_density,
    transport_phase,
)

RNG = np.random.default_rng(20260815)


def interior_points(P, count, rng=RNG, shrink=0.05):
    """Rejection-sample strictly interior points off the walls."""
    box = np.array(P.bounding_box())
    lo, hi = box[:, 0], box[:, 1]
    pts = []
    while len(pts) < count:
        cand = rng.uniform(lo, hi, size=(4 * count, P.dim))
        keep = P.support_values(cand).min(axis=-1) > shrink
        pts.extend(cand[keep])
    return np.array(pts[:count])


def potential(P, s=0.0, scale=1.0):
    nu = QuadraticNu(scale * np.eye(P.dim))
    return SymplecticPotential(P, 0.0, ConvexDeformation(nu)).at_s(s)


# -- canonical potential ---------------------------------------------------------


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        g[i] = (f(x + e) - f(x - e)) / (2 * h)
    return g


@pytest.mark.parametrize("P", [interval(0, 3), gc_polytope(3, (2, 1))],
                         ids=["interval", "gc3"])
def test_g_can_grad_matches_finite_differences(P):
    for x in interior_points(P, 10):
        g = g_can_grad(P, x)
        g_fd = fd_grad(lambda p: g_can_value(P, p), x)
        assert np.max(np.abs(g - g_fd)) < 1e-5 * max(1.0, np.abs(g).max())


def test_g_can_hess_matches_grad_differences():
    P = gc_polytope(3, (2, 1))
    for x in interior_points(P, 5):
        H = g_can_hess(P, x)
        assert np.allclose(H, H.T)
        for i in range(3):
            e = np.zeros(3)
            e[i] = 1e-6
            col = (g_can_grad(P, x + e) - g_can_grad(P, x - e)) / 2e-6
            assert np.max(np.abs(H[:, i] - col)) < 1e-4 * max(1.0, np.abs(H).max())
        # strict convexity in the interior
        assert np.linalg.eigvalsh(H).min() > 0


def test_g_can_grad_raises_on_wall():
    P = interval(0, 3)
    with pytest.raises(ValueError):
        g_can_grad(P, np.array([0.0]))
    with pytest.raises(ValueError):
        g_can_hess(P, np.array([3.0]))


def test_potential_at_s_adds_quadratic():
    P = interval(0, 3)
    x = np.array([1.7])
    p0, p10 = potential(P, 0.0), potential(P, 10.0)
    nu_val = 0.5 * x @ x
    assert np.isclose(p10.value(x) - p0.value(x), 10.0 * nu_val, atol=1e-12)
    assert np.isclose(p10.grad(x)[0] - p0.grad(x)[0], 10.0 * x[0], atol=1e-12)
    assert np.isclose(p10.hess(x)[0, 0] - p0.hess(x)[0, 0], 10.0, atol=1e-12)


def test_deformation_extreme_curvatures():
    d = ConvexDeformation(QuadraticNu(np.diag([1.0, 2.0])))
    assert d.c1() == 0.5
    assert d.c2() == 1.0


def test_deformation_restriction_chain_rule():
    A = np.array([[1.0, 0.0, 1.0], [0.0, 2.0, -1.0]])
    d = ConvexDeformation(QuadraticNu(np.diag([1.0, 3.0])), iota_star=A)
    x = np.array([0.3, -0.2, 0.5])
    assert np.isclose(d.value(x), d.nu.value(A @ x))
    g_fd = fd_grad(d.value, x)
    assert np.max(np.abs(d.grad(x) - g_fd)) < 1e-6
    assert np.allclose(d.hess(x), A.T @ d.nu.Q @ A)


# -- Legendre round trip ---------------------------------------------------------


@pytest.mark.parametrize("s", [0.0, 1.0, 10.0])
def test_legendre_round_trip_interval(s):
    P = interval(0, 3)
    pot = potential(P, s)
    x = interior_points(P, 200)
    theta = RNG.uniform(0, 1, size=x.shape)
    w = moment_to_complex(pot, x, theta)
    xb, tb = complex_to_moment(pot, w)
    assert np.max(np.abs(xb - x)) < 1e-10
    assert np.max(np.abs(np.mod(tb - theta + 0.5, 1.0) - 0.5)) < 1e-12


@pytest.mark.parametrize("s", [1.0, 100.0])
def test_legendre_round_trip_log_route(s):
    # exp(2 pi y) overflows for strong deformations; the log-coordinate pair
    # must invert where the literal complex chart cannot represent the point
    P = interval(0, 3)
    pot = potential(P, s)
    x = interior_points(P, 200)
    theta = RNG.uniform(0, 1, size=x.shape)
    y, th = moment_to_log_complex(pot, x, theta)
    xb, _ = complex_to_moment_log(pot, y, th)
    assert np.max(np.abs(xb - x)) < 1e-10


def test_legendre_round_trip_3d():
    P = gc_polytope(3, (2, 1))
    pot = potential(P, 10.0)
    x = interior_points(P, 100)
    theta = RNG.uniform(0, 1, size=x.shape)
    xb, tb = complex_to_moment(pot, moment_to_complex(pot, x, theta))
    assert np.max(np.abs(xb - x)) < 1e-10


@given(st.floats(min_value=0.05, max_value=2.95))
@settings(max_examples=30, deadline=None)
def test_legendre_round_trip_property(x0):
    P = interval(0, 3)
    pot = potential(P, 10.0)
    w = moment_to_complex(pot, np.array([x0]), np.array([0.25]))
    xb, _ = complex_to_moment(pot, w)
    assert abs(xb[0] - x0) < 1e-10


def test_moment_to_complex_rejects_wall():
    pot = potential(interval(0, 3))
    with pytest.raises(ValueError):
        moment_to_complex(pot, np.array([0.0]), np.array([0.0]))


# -- section densities -----------------------------------------------------------


def test_density_deformation_factor_is_gaussian():
    # nu = x^2/2 with identity restriction: the s-dependent factor of the
    # log-density at m is exactly -2 pi s (|x-m|^2/2 - |m|^2/2 + const-free)
    P = interval(0, 3)
    m = np.array([1.0])
    x = interior_points(P, 50)
    base = section_log_density(potential(P, 0.0), m, x)
    for s in (5.0, 40.0):
        ld = section_log_density(potential(P, s), m, x)
        diff = ld - base
        expected = -2 * np.pi * s * (0.5 * x[:, 0] ** 2 - x[:, 0] * m[0])
        expected -= expected[0] - diff[0]  # common additive constant
        assert np.max(np.abs(diff - expected)) < 1e-9 * s


def test_alpha_m_formula_and_positivity():
    P = interval(0, 3)
    pot = potential(P, 7.0)
    m = np.array([1.0])
    x = interior_points(P, 40)
    a = alpha_m(pot, m, x)
    manual = (x[:, 0] - m[0]) * x[:, 0] - 0.5 * x[:, 0] ** 2
    assert np.max(np.abs(a - manual)) < 1e-12
    # convexity gap: alpha_m(x) >= alpha_m(m) with equality only at m
    am = alpha_m(pot, m, m)
    assert np.all(a >= am - 1e-12)


def test_density_wall_and_outside_behavior():
    P = interval(0, 3)
    pot = potential(P, 0.0)
    m = np.array([1.0])
    assert section_log_density(pot, m, np.array([[0.0]]))[0] == -np.inf
    with pytest.raises(ValueError):
        section_log_density(pot, m, np.array([[-0.5]]))


def test_section_density_object_matches_function():
    P = interval(0, 3)
    pot = potential(P, 3.0)
    dens = SectionDensity(pot, np.array([1.0]))
    x = interior_points(P, 20)
    assert np.allclose(dens.log_magnitude(x), section_log_density(pot, np.array([1.0]), x))
    assert np.allclose(dens(x), dens.log_magnitude(x))


def test_log_l1_norm_against_adaptive_quadrature():
    P = interval(0, 3)
    m = np.array([1.0])
    for s in (0.0, 20.0):
        pot = potential(P, s)
        val, err = log_l1_norm(pot, m, rel_tol=1e-8)
        ref, _ = quad(lambda t: np.exp(section_log_density(pot, m, np.array([[t]]))[0]),
                      0.0, 3.0, epsabs=0, epsrel=1e-10, limit=200)
        assert abs(val - np.log(ref)) < 1e-6
        assert err < 1e-7


# -- quadrature grid -------------------------------------------------------------


def test_polytope_grid_interior_and_volume():
    P = interval(0, 3)
    pts, logvol = polytope_grid(P, 128)
    assert P.contains(pts, strict=True).all()
    assert np.isclose(np.exp(logvol) * len(pts), 3.0)
    B = box_polytope([(0, 2), (0, 1)])
    pts2, lv2 = polytope_grid(B, 64)
    assert np.isclose(np.exp(lv2) * len(pts2), 2.0)


def test_polytope_grid_masks_wall_cells():
    # non-box polytope: grid keeps only strictly interior midpoints
    P = gc_polytope(3, (1, 1))
    pts, _ = polytope_grid(P, 16)
    assert P.support_values(pts).min() > 0


# -- connection transport --------------------------------------------------------


def test_holonomy_matches_character():
    for x in np.linspace(0.05, 2.95, 13):
        h = holonomy(np.array([x]), 0)
        assert abs(h - np.exp(2j * np.pi * x)) < 1e-12
    assert abs(holonomy(np.array([0.5]), 0) + 1.0) < 1e-12
    assert abs(holonomy(np.array([2.0]), 0) - 1.0) < 1e-12


def test_holonomy_multiplicative_in_winding():
    x = np.array([0.37, 1.42])
    h1 = holonomy(x, 1)
    h3 = holonomy(x, 1, k=3)
    assert abs(h3 - h1 ** 3) < 1e-12


def test_bohr_sommerfeld_integrality():
    assert bohr_sommerfeld_test(np.array([1.0, 2.0]))
    assert bohr_sommerfeld_test(np.array([1.0 + 1e-12]))
    assert not bohr_sommerfeld_test(np.array([1.0, 0.5]))


def test_transport_phase_rectangle_loop():
    # oint x dtheta over the boundary of [xa,xb] x [0,dth] equals (xb-xa)*dth
    xa, xb, dth = 0.4, 1.9, 0.3
    xs = np.array([[xa], [xb], [xb], [xa], [xa]])
    th = np.array([[0.0], [0.0], [dth], [dth], [0.0]])
    ph = transport_phase(xs, th)
    assert abs(ph - np.exp(2j * np.pi * (xb - xa) * dth)) < 1e-12
    assert abs(abs(ph) - 1.0) < 1e-14


def test_transport_phase_shape_guard():
    with pytest.raises(ValueError):
        transport_phase(np.zeros((3, 1)), np.zeros((4, 1)))
