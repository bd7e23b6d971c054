import numpy as np
import pytest

from gcquant.flag import pluecker_levels, random_flag, random_flags
from gcquant.flow import (
    DegenerationFamily,
    FlowSingularityError,
    State,
    loop_phase,
    torus_loop,
    transport_phase_factors,
)

A = (1.0, 1.0)
FAM = DegenerationFamily(A)


def embedded_batch(count=8, t=1.0, seed=0):
    return FAM.embed_flag(random_flags(3, count, seed=seed), t)


def test_state_vector_round_trip():
    st = embedded_batch(3)
    back = State.from_vector(st.vector())
    assert np.array_equal(back.u, st.u)
    assert np.array_equal(back.w, st.w)
    assert np.array_equal(back.t, st.t)
    with pytest.raises(ValueError):
        State(np.zeros((2, 3)), np.zeros((3, 3)), np.zeros(2))


def test_embed_flag_lies_on_family():
    st = embedded_batch(16)
    assert np.max(np.abs(FAM.residual(st))) < 1e-13
    # chart normalization
    assert np.allclose(np.sum(np.abs(st.u) ** 2, axis=-1), 1.0, atol=1e-13)
    assert np.allclose(np.sum(np.abs(st.w) ** 2, axis=-1), 1.0, atol=1e-13)


def test_embed_flag_matches_deformed_minors():
    V = random_flag(3, seed=6)
    t = 0.7
    st = FAM.embed_flag(V, t)
    lv1, lv2 = pluecker_levels(V, t)
    # proportional up to the chart scaling: cross terms vanish
    for got, ref in ((st.u, lv1), (st.w, lv2)):
        outer = got[..., :, None] * ref[..., None, :]
        assert np.max(np.abs(outer - outer.swapaxes(-1, -2))) < 1e-12 * np.abs(ref).max()


def test_moment_in_ambient_simplex_product():
    st = embedded_batch(32, seed=3)
    x = FAM.moment(st)
    assert x.shape == (32, 4)
    assert x.min() > -1e-12
    assert np.max(x[:, 0] + x[:, 1]) <= A[0] + 1e-12
    assert np.max(x[:, 2] + x[:, 3]) <= A[1] + 1e-12


def test_z_field_time_component_is_minus_one():
    st = embedded_batch(8, seed=1)
    Z, gn = FAM.z_field(st)
    assert np.max(np.abs(Z[..., 6] + 1.0)) < 1e-13
    assert np.min(gn) > 0


def test_retract_restores_fiber_and_fixes_t():
    rng = np.random.default_rng(12)
    st = embedded_batch(8, seed=2)
    noisy = State(
        st.u + 1e-4 * (rng.standard_normal(st.u.shape) + 1j * rng.standard_normal(st.u.shape)),
        st.w + 1e-4 * (rng.standard_normal(st.w.shape) + 1j * rng.standard_normal(st.w.shape)),
        st.t,
    )
    assert np.max(np.abs(FAM.residual(noisy))) > 1e-6
    fixed = FAM.retract(noisy)
    assert np.max(np.abs(FAM.residual(fixed))) < 1e-12
    assert np.array_equal(fixed.t, st.t)
    assert np.max(np.abs(fixed.vector() - noisy.vector())) < 1e-3


def test_flow_step_bookkeeping():
    st = embedded_batch(2)
    res = FAM.flow(st, 0.105, h=1e-2, record=True)
    assert res.steps == 11
    assert np.isclose(res.h * res.steps, 0.105)
    assert res.t_path.shape[0] == res.steps + 1
    zero = FAM.flow(st, 0.0)
    assert zero.steps == 0 and zero.t_deviation == 0.0


def test_flow_time_exactness_and_residual():
    st = embedded_batch(8, seed=4)
    res = FAM.flow(st, 0.1, h=1e-3)
    assert res.t_deviation < 1e-12
    assert res.max_residual < 1e-10
    assert res.direction_err < 1e-10
    assert np.allclose(res.state.t, 0.9, atol=1e-12)


def test_flow_reverses_exactly():
    st = embedded_batch(4, seed=5)
    fwd = FAM.flow(st, 0.1, h=2e-3)
    back = FAM.flow(fwd.state, -0.1, h=2e-3)
    assert np.max(np.abs(back.state.vector() - st.vector())) < 1e-10


def test_flow_conserves_torus_hamiltonians():
    st = embedded_batch(8, seed=7)
    x0 = FAM.moment(st)
    res = FAM.flow(st, 0.15, h=1e-3)
    x1 = FAM.moment(res.state)
    # the two circle actions surviving on the limit fiber
    c0 = x0[:, 0] + x0[:, 1] + x0[:, 3], x0[:, 1] + x0[:, 2] + x0[:, 3]
    c1 = x1[:, 0] + x1[:, 1] + x1[:, 3], x1[:, 1] + x1[:, 2] + x1[:, 3]
    assert np.max(np.abs(c1[0] - c0[0])) < 1e-10
    assert np.max(np.abs(c1[1] - c0[1])) < 1e-10


def test_frame_transport_preserves_omega_second_order():
    # the flow preserves the symplectic pairing but not the metric, so only
    # the omega drift is an invariant; it must vanish at second order in h
    st = embedded_batch(1, seed=9)[0]
    frame = FAM.tangent_frame(st, fiber=True)
    o0 = FAM.omega_matrix(frame)

    def drift(h):
        end, moved = FAM.transport_frame(st, frame, 0.1, h=h)
        g1 = FAM.gram(moved)
        assert np.linalg.eigvalsh(g1).min() > 0.1  # frame stays well conditioned
        return np.abs(FAM.omega_matrix(moved) - o0).max()

    d4, d2 = drift(4e-3), drift(2e-3)
    assert d4 < 1e-6
    assert 3.0 < d4 / d2 < 6.0


def test_torus_loop_phase_matches_weight_formula():
    fam = DegenerationFamily((1.0, 2.0))
    st = fam.embed_flag(random_flag(3, seed=5), 1.0)
    xu = np.abs(st.u) ** 2 / np.sum(np.abs(st.u) ** 2)
    xw = np.abs(st.w) ** 2 / np.sum(np.abs(st.w) ** 2)
    for k in [(1, 0, 0), (0, 1, -1), (1, 1, 1)]:
        path = torus_loop(st, k, samples=8192)
        ph = loop_phase(path.u, path.w, (1.0, 2.0))
        kw = np.array([k[0] + k[1], k[0] + k[2], k[1] + k[2]])
        expected = np.exp(2j * np.pi * (1.0 * np.dot(k, xu) + 2.0 * np.dot(kw, xw)))
        assert abs(ph - expected) < 1e-5
        assert abs(abs(ph) - 1.0) < 1e-12


def test_torus_loop_stays_on_fiber():
    st = embedded_batch(1, seed=11)[0]
    path = torus_loop(st, (1, -1, 0), samples=256)
    assert np.max(np.abs(FAM.residual(path))) < 1e-12
    assert np.allclose(path.t, st.t)
    # starts at the base point; the closing point is left implicit
    assert np.max(np.abs(path.u[0] - st.u)) < 1e-12
    assert path.u.shape[0] == 256


def test_loop_holonomy_flow_invariant():
    st = embedded_batch(1, seed=13)[0]
    k = (1, 0, -1)
    before = loop_phase(*(lambda p: (p.u, p.w))(torus_loop(st, k, samples=8192)), A)
    moved = FAM.flow(st, 0.1, h=1e-3).state
    after = loop_phase(*(lambda p: (p.u, p.w))(torus_loop(moved, k, samples=8192)), A)
    assert abs(before - after) < 1e-5


def test_transport_phase_factors_unit_modulus():
    st = embedded_batch(1, seed=15)[0]
    res = FAM.flow(st, 0.05, h=1e-3, keep_states=True)
    u_path = np.stack([s.u for s in res.states])
    w_path = np.stack([s.w for s in res.states])
    ph = transport_phase_factors(u_path, w_path, A)
    assert ph.shape == (res.steps,)
    assert np.max(np.abs(np.abs(ph) - 1.0)) < 1e-12
    assert abs(abs(np.prod(ph)) - 1.0) < 1e-12
