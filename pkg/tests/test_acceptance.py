"""Acceptance suite: one test per shipped guarantee, tolerances stated inline.

Each test prints a single [c##] PASS line with the measured margin so a plain
`pytest -v tests/test_acceptance.py` reads as a checklist.  Criteria 5-9 are
exact-invariant checks; 7, 10 and 11 are quantitative trends with analytic or
cross-route oracles.
"""

import numpy as np
import pytest

from gcquant.flag import (
    deformed_pluecker,
    gc_map,
    moment_matrix,
    pluecker,
    pluecker_levels,
    random_flags,
)
from gcquant.flow import DegenerationFamily, loop_phase, torus_loop, transport_phase_factors
from gcquant.lab import (
    ExperimentConfig,
    GCTorusModel,
    analytic_decay_rate,
    combined_experiment,
    decay_slope,
    delta_pairing,
    gc_vs_torus_moment_check,
    outside_mass,
    section_equality_on_v0,
)
from gcquant.polytope import gc_polytope, gc_weight, interval, lattice_points, weyl_dim
from gcquant.toric import (
    ConvexDeformation,
    QuadraticNu,
    SectionDensity,
    SymplecticPotential,
    bohr_sommerfeld_test,
    complex_to_moment,
    complex_to_moment_log,
    holonomy,
    moment_to_complex,
    moment_to_log_complex,
)


def report(tag, detail):
    print(f"[{tag}] PASS {detail}")


def test_c01_lattice_counts_equal_weyl_dimensions():
    """Exact integer equality |Delta_GC ∩ Z^d| = weyl_dim for four cases."""
    cases = [(2, (1,), 2), (3, (1, 1), 8), (3, (2, 1), 15), (4, (1, 1, 1), 64)]
    for n, a, expected in cases:
        count = len(lattice_points(gc_polytope(n, a)))
        dim = weyl_dim(gc_weight(a))
        assert count == dim == expected, (n, a, count, dim)
    report("c01", "counts 2/8/15/64 exact")


def test_c02_moment_spectrum_and_interlacing_1000_flags():
    """1000 random flags: block spectrum (2,1,0) within 1e-10; patterns
    interlace within 1e-10 and lie in the polytope."""
    a = (1.0, 1.0)
    P = gc_polytope(3, a)
    worst_spec = 0.0
    for V in random_flags(3, 1000, seed=202):
        ev = np.sort(np.linalg.eigvalsh(moment_matrix(V, a)))
        worst_spec = max(worst_spec, np.max(np.abs(ev - [0.0, 1.0, 2.0])))
        pat = gc_map(V, a)
        assert pat.interlacing_ok(tol=1e-10)
        assert P.contains(pat.flatten(drop_top=True), tol=1e-10)
    assert worst_spec < 1e-10
    report("c02", f"spectrum dev {worst_spec:.2e} < 1e-10 over 1000 flags")


def test_c03_deformed_relation_residual_and_t1_exactness():
    """Residual of q1 q23 - q2 q13 + t q3 q12 below 1e-12 * scale over 1000
    random (V, t); deformed minors at t = 1 equal plain minors bitwise."""
    rng = np.random.default_rng(303)
    V = rng.standard_normal((1000, 3, 3)) + 1j * rng.standard_normal((1000, 3, 3))
    t = rng.uniform(0.01, 2.0, size=1000)
    lv1, lv2 = pluecker_levels(V, t)
    resid = lv1[:, 0] * lv2[:, 2] - lv1[:, 1] * lv2[:, 1] + t * lv1[:, 2] * lv2[:, 0]
    scale = np.abs(lv1).max(axis=-1) * np.abs(lv2).max(axis=-1)
    rel = np.max(np.abs(resid) / scale)
    assert rel < 1e-12
    l1, l2 = pluecker_levels(V, np.ones(1000))
    p1, p2 = pluecker_levels(V)
    assert np.array_equal(l1, p1) and np.array_equal(l2, p2)
    for Vi in V[:25]:
        plain = pluecker(Vi)
        q = deformed_pluecker(Vi, 1.0)
        for lvl in plain:
            for I in plain[lvl]:
                assert q[lvl][I] == plain[lvl][I]
    report("c03", f"relation residual {rel:.2e} < 1e-12, t=1 bitwise equal")


def test_c04_legendre_round_trip_1000_points():
    """max |x - xhat| < 1e-10 over 1000 interior points, canonical potential
    and s-deformed variants, s in {1, 10, 100}."""
    rng = np.random.default_rng(404)
    P = GCTorusModel((2.0, 2.0)).image_delta()
    pts = []
    while len(pts) < 1000:
        cand = rng.uniform(0.0, 2.0, size=(4000, 3))
        keep = P.support_values(cand).min(axis=-1) > 0.02
        pts.extend(cand[keep])
    x = np.array(pts[:1000])
    theta = rng.uniform(0, 1, size=x.shape)
    deform = ConvexDeformation(QuadraticNu(np.eye(3)))
    worst = 0.0
    for s in (0.0, 1.0, 10.0, 100.0):
        pot = SymplecticPotential(P, 0.0, deform).at_s(s)
        y, th = moment_to_log_complex(pot, x, theta)
        xb, _ = complex_to_moment_log(pot, y, th)
        worst = max(worst, float(np.max(np.abs(xb - x))))
    assert worst < 1e-10
    # literal complex-chart route where exp(2 pi y) is representable
    pot = SymplecticPotential(P, 0.0, deform).at_s(1.0)
    xb, _ = complex_to_moment(pot, moment_to_complex(pot, x[:100], theta[:100]))
    assert np.max(np.abs(xb - x[:100])) < 1e-10
    report("c04", f"round-trip dev {worst:.2e} < 1e-10 over 1000 points, s up to 100")


def test_c05_flow_time_direction_and_symplectic_pairing():
    """tau = 0.5 at h = 1e-3: |dt - tau| < 1e-10; field normalization
    |Z(Re f) + 1|, |Z(Im f)| < 1e-8; pairing drift < 1e-6, halving ratio in
    [3, 6]."""
    fam = DegenerationFamily((1.0, 1.0))
    st = fam.embed_flag(random_flags(3, 4, seed=100), 1.0)
    res = fam.flow(st, 0.5, h=1e-3)
    assert res.t_deviation < 1e-10
    assert res.direction_err < 1e-8
    Z, _ = fam.z_field(res.state)
    assert np.max(np.abs(np.real(Z[..., 6]) + 1.0)) < 1e-8
    assert np.max(np.abs(np.imag(Z[..., 6]))) < 1e-8

    p = fam.embed_flag(random_flags(3, 1, seed=101), 1.0)[0]
    frame = fam.tangent_frame(p, fiber=True)
    o0 = fam.omega_matrix(frame)

    def drift(h):
        _, moved = fam.transport_frame(p, frame, 0.5, h=h)
        return float(np.abs(fam.omega_matrix(moved) - o0).max())

    d1, d2 = drift(1e-3), drift(5e-4)
    assert d1 < 1e-6
    assert 3.0 < d1 / d2 < 6.0
    report("c05", f"dt dev {res.t_deviation:.2e}, pairing drift {d1:.2e}, "
                  f"halving ratio {d1 / d2:.3f}")


def test_c06_prequantum_transport_and_loop_holonomy():
    """Transport norm drift < 1e-8 per unit flow time; holonomy of 5 fiber
    loops agrees before vs after the flow within 1e-5."""
    a = (1.0, 1.0)
    fam = DegenerationFamily(a)
    tau = 0.3
    base = fam.embed_flag(random_flags(3, 1, seed=102), 1.0)[0]
    res = fam.flow(base, tau, h=1e-3, keep_states=True)
    u_path = np.stack([s.u for s in res.states])
    w_path = np.stack([s.w for s in res.states])
    ph = transport_phase_factors(u_path, w_path, a)
    hdrift = abs(abs(np.prod(ph)) - 1.0) / tau
    assert hdrift < 1e-8
    worst = 0.0
    for k in [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, -1, 0), (1, 1, 1)]:
        hb = loop_phase(*(lambda q: (q.u, q.w))(torus_loop(base, k, samples=8192)), a)
        ha = loop_phase(*(lambda q: (q.u, q.w))(torus_loop(res.state, k, samples=8192)), a)
        worst = max(worst, abs(hb - ha))
    assert worst < 1e-5
    report("c06", f"norm drift {hdrift:.2e}/unit time, loop dev {worst:.2e} < 1e-5")


def test_c07_toric_delta_concentration_on_p1():
    """Interval [0, 3], nu = x^2/2, m = 1, eps = 0.3: outside-mass log-slope
    within 15% of -2 pi C1 eps^2 across s in {20, 40, 80, 160}; <x, tau> -> 1
    within 1e-3 at s = 200; <1, tau> = 1 within 1e-6 at every s."""
    P = interval(0, 3)
    deform = ConvexDeformation(QuadraticNu(np.eye(1)))
    base = SymplecticPotential(P, 0.0, deform)
    m = np.array([1.0])
    eps = 0.3
    svals = [20.0, 40.0, 80.0, 160.0]
    masses = []
    for s in svals:
        dens = SectionDensity(base.at_s(s), m)
        masses.append(outside_mass(P, dens, m, eps, per_axis=4096))
        one = delta_pairing(P, dens, lambda x: np.ones(x.shape[:-1]), per_axis=4096)
        assert abs(one - 1.0) < 1e-6
    slope = decay_slope(svals, masses)
    target = -analytic_decay_rate(deform, eps, 0.0)
    rel = abs(slope - target) / abs(target)
    assert rel < 0.15
    dens200 = SectionDensity(base.at_s(200.0), m)
    px = delta_pairing(P, dens200, lambda x: x[..., 0], per_axis=4096)
    assert abs(px - 1.0) < 1e-3
    report("c07", f"slope {slope:.5f} vs {target:.5f} ({100 * rel:.1f}% < 15%), "
                  f"<x,tau>(200) dev {abs(px - 1.0):.2e}")


def test_c08_section_restriction_depends_only_on_image():
    """Two integer lifts of one interior lattice point: max discrepancy of the
    restricted monomial sections on 500 samples < 1e-10; a lift pair with
    different images exceeds 1e-2."""
    model = GCTorusModel((2.0, 2.0))
    lifts = model.lifts(np.array([1.0, 1.0, 1.0]))
    assert len(lifts) >= 2
    dev = section_equality_on_v0(lifts[0], lifts[1], samples=500, seed=808)
    assert dev < 1e-10
    other = model.lifts(np.array([1.0, 1.0, 2.0]))[0]
    ctrl = section_equality_on_v0(lifts[0], other, samples=500, seed=808)
    assert ctrl > 1e-2
    report("c08", f"shared-image dev {dev:.2e} < 1e-10, control {ctrl:.2e} > 1e-2")


def test_c09_holonomy_character_and_integrality():
    """|holonomy - exp(2 pi i x)| < 1e-12 on an x-grid; trivial exactly at
    the integers."""
    worst = 0.0
    for x in np.linspace(0.0, 3.0, 61):
        h = holonomy(np.array([x]), 0)
        worst = max(worst, abs(h - np.exp(2j * np.pi * x)))
        is_trivial = abs(h - 1.0) < 1e-12
        assert is_trivial == (abs(x - round(x)) < 1e-12)
        assert bohr_sommerfeld_test(np.array([x])) == (abs(x - round(x)) < 1e-9)
    assert worst < 1e-12
    report("c09", f"character dev {worst:.2e} < 1e-12 on 61-point grid")


def test_c10_combined_experiment_concentration_trend():
    """Default configuration, s-grid {0, 5, 10, 20, 40}: outside mass strictly
    decreasing with final value < 0.1; constant-function pairing 1 +- 1e-3 at
    every s."""
    cfg = ExperimentConfig()
    cfg.validate()
    rep = combined_experiment(cfg)
    masses = [c.outside_mass for c in rep.cells]
    assert [c.s for c in rep.cells] == [0.0, 5.0, 10.0, 20.0, 40.0]
    assert all(b < a for a, b in zip(masses, masses[1:])), masses
    assert masses[-1] < 0.1
    for c in rep.cells:
        assert abs(c.pairings["one"] - 1.0) <= 1e-3
    assert rep.monotone and not rep.incomplete
    report("c10", f"mass {masses[0]:.3f} -> {masses[-1]:.2e} strictly decreasing, "
                  f"pairing dev {max(abs(c.pairings['one'] - 1.0) for c in rep.cells):.1e}")


def test_c11_gc_torus_consistency_trend():
    """Flow-vs-identification discrepancy shrinks with t: value at t = 0.02
    below the value at t = 0.1 on a 20-sample ensemble."""
    d_coarse = gc_vs_torus_moment_check(0.1, samples=20, seed=0)
    d_fine = gc_vs_torus_moment_check(0.02, samples=20, seed=0)
    assert d_fine < d_coarse
    report("c11", f"discrepancy {d_coarse:.2e} @ t=0.1 -> {d_fine:.2e} @ t=0.02")
