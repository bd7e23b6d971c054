"""Gradient-Hamiltonian flow on the pencil of bilinear hypersurfaces that
interpolates between the full flag threefold and its toric limit.

The family lives in P^2 x P^2 x C_t:

    X = { u_1 w_23 - u_2 w_13 + t u_3 w_12 = 0 },

with u homogeneous on the first factor and w = (w_12, w_13, w_23) Pluecker
coordinates on the second.  The fiber at t = 1 is the flag variety Fl(3) in
its Pluecker embedding; at t = 0 the equation degenerates to the binomial
u_1 w_23 = u_2 w_13 cutting out the toric limit.

Points are carried on the unit-sphere charts of the two projective factors
(|u| = |w| = 1) so the ambient Kaehler metric

    g = (a_1/pi) Re<.,.>  +  (a_2/pi) Re<.,.>  +  t_scale * Re(dt conj dt)

restricts to explicit formulas; tangent spaces of the total space are cut by
three complex conditions (two sphere/phase gauges, one defining equation).
All core routines are batched over leading axes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .flag import pluecker_levels

__all__ = [
    "FlowSingularityError",
    "State",
    "FlowResult",
    "DegenerationFamily",
    "transport_phase_factors",
    "loop_phase",
    "torus_loop",
]


class FlowSingularityError(RuntimeError):
    """The flow field or a tangent frame is not defined at the given point."""


@dataclass(frozen=True)
class State:
    """A batch of points of the total space: unit vectors u, w and scalar t.

    u has shape (..., 3) (homogeneous coordinates on the first P^2), w has
    shape (..., 3) holding (w_12, w_13, w_23), and t matches the batch shape.
    """

    u: np.ndarray
    w: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        u = np.asarray(self.u, dtype=complex)
        w = np.asarray(self.w, dtype=complex)
        t = np.asarray(self.t, dtype=complex)
        if u.shape[-1] != 3 or w.shape[-1] != 3:
            raise ValueError("u and w must have trailing dimension 3")
        if u.shape[:-1] != w.shape[:-1] or t.shape != u.shape[:-1]:
            raise ValueError("batch shapes of u, w, t must agree")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "w", w)
        object.__setattr__(self, "t", t)

    @property
    def batch_shape(self) -> tuple:
        return self.u.shape[:-1]

    def vector(self) -> np.ndarray:
        """Flat complex coordinates (..., 7) = (u, w, t)."""
        return np.concatenate(
            [self.u, self.w, self.t[..., None]], axis=-1
        )

    @staticmethod
    def from_vector(z: np.ndarray) -> "State":
        z = np.asarray(z, dtype=complex)
        return State(z[..., 0:3], z[..., 3:6], z[..., 6])

    def __getitem__(self, idx) -> "State":
        return State(self.u[idx], self.w[idx], self.t[idx])


@dataclass
class FlowResult:
    """Outcome of an integrated flow segment."""

    state: State
    steps: int
    h: float
    t_deviation: float          # |t_final - t_expected|, max over the batch
    max_residual: float         # defining-equation residual after retraction
    min_grad_norm: float        # smallest metric gradient norm encountered
    direction_err: float        # max |Z(Re f) + sign| over evaluations
    t_path: Optional[np.ndarray] = None
    states: Optional[list] = field(default=None, repr=False)


def _dots(x, y):
    """Hermitian inner products <x, y> = sum conj(x) y along the last axis."""
    return np.sum(np.conj(x) * y, axis=-1)


class DegenerationFamily:
    """The pencil for weights a = (a_1, a_2) with its ambient Kaehler data.

    a sets both the line-bundle twist O(a_1) x O(a_2) used by parallel
    transport and the Fubini-Study scalings of the metric.
    """

    def __init__(self, a: Sequence[float] = (1.0, 1.0), t_scale: float = 1.0):
        a = tuple(float(x) for x in a)
        if len(a) != 2 or min(a) <= 0:
            raise ValueError("a must be two positive weights")
        if t_scale <= 0:
            raise ValueError("t_scale must be positive")
        self.a = a
        self.t_scale = float(t_scale)
        # block scales turning the ambient metric into the standard one
        su = math.sqrt(a[0] / math.pi)
        sw = math.sqrt(a[1] / math.pi)
        st = math.sqrt(t_scale)
        self._scale = np.array([su] * 3 + [sw] * 3 + [st], dtype=float)

    # ---------------------------------------------------------------- basics

    def residual(self, state: State) -> np.ndarray:
        """Defining equation F = u_1 w_23 - u_2 w_13 + t u_3 w_12."""
        u, w, t = state.u, state.w, state.t
        return u[..., 0] * w[..., 2] - u[..., 1] * w[..., 1] + t * u[..., 2] * w[..., 0]

    def normalize(self, u, w, t) -> State:
        u = np.asarray(u, dtype=complex)
        w = np.asarray(w, dtype=complex)
        nu = np.linalg.norm(u, axis=-1, keepdims=True)
        nw = np.linalg.norm(w, axis=-1, keepdims=True)
        if np.any(nu == 0) or np.any(nw == 0):
            raise ValueError("zero homogeneous coordinate vector")
        return State(u / nu, w / nw, np.asarray(t, dtype=complex))

    def point(self, u, w, t, retract: bool = True, tol: float = 1e-12) -> State:
        """Normalize and (optionally) project onto the hypersurface."""
        s = self.normalize(u, w, t)
        return self.retract(s, tol=tol) if retract else s

    def embed_flag(self, V: np.ndarray, t) -> State:
        """Deformed Pluecker image of a flag (batched): a point of the fiber
        over t, on unit-sphere charts."""
        lv1, lv2 = pluecker_levels(V, t)
        tt = np.broadcast_to(np.asarray(t, dtype=complex), lv1.shape[:-1]).copy()
        return self.normalize(lv1, lv2, tt)

    def moment(self, state: State) -> np.ndarray:
        """Ambient torus moment coordinates (..., 4) in the chart anchored at
        (u_1, w_12): (a_1|u_2|^2, a_1|u_3|^2, a_2|w_13|^2, a_2|w_23|^2)."""
        a1, a2 = self.a
        u2 = np.abs(state.u) ** 2
        w2 = np.abs(state.w) ** 2
        u2 = u2 / np.sum(u2, axis=-1, keepdims=True)
        w2 = w2 / np.sum(w2, axis=-1, keepdims=True)
        return np.stack(
            [a1 * u2[..., 1], a1 * u2[..., 2], a2 * w2[..., 1], a2 * w2[..., 2]],
            axis=-1,
        )

    # ------------------------------------------------------- linear algebra

    def _rows(self, state: State, fiber: bool = False) -> np.ndarray:
        """Complex conditions cutting the tangent space, as rows acting on
        metric-orthonormal (scaled) coordinates.  Shape (..., 3 or 4, 7).

        Row 1, 2: sphere/phase gauge <u, du> = 0, <w, dw> = 0.
        Row 3: linearized defining equation.
        Row 4 (fiber only): dt = 0.
        """
        u, w, t = state.u, state.w, state.t
        m = 4 if fiber else 3
        C = np.zeros(state.batch_shape + (m, 7), dtype=complex)
        s = self._scale
        C[..., 0, 0:3] = np.conj(u) / s[0]
        C[..., 1, 3:6] = np.conj(w) / s[3]
        C[..., 2, 0] = w[..., 2] / s[0]
        C[..., 2, 1] = -w[..., 1] / s[0]
        C[..., 2, 2] = t * w[..., 0] / s[0]
        C[..., 2, 3] = t * u[..., 2] / s[3]
        C[..., 2, 4] = -u[..., 1] / s[3]
        C[..., 2, 5] = u[..., 0] / s[3]
        C[..., 2, 6] = u[..., 2] * w[..., 0] / s[6]
        if fiber:
            C[..., 3, 6] = 1.0
        return C

    def _project_scaled(self, C: np.ndarray, zhat: np.ndarray) -> np.ndarray:
        """Orthogonal projection of scaled vectors onto the null space of C."""
        G = C @ np.conj(np.swapaxes(C, -1, -2))
        rhs = np.einsum("...kj,...j->...k", C, zhat)
        sol = np.linalg.solve(G, rhs[..., None])[..., 0]
        return zhat - np.einsum("...kj,...k->...j", np.conj(C), sol)

    def project(self, state: State, vec: np.ndarray, fiber: bool = False) -> np.ndarray:
        """Metric-orthogonal projection of ambient vectors (..., 7) onto the
        tangent space at `state` (fiber tangent space if fiber=True)."""
        C = self._rows(state, fiber=fiber)
        zhat = np.asarray(vec, dtype=complex) * self._scale
        return self._project_scaled(C, zhat) / self._scale

    def metric(self, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
        """Ambient Riemannian pairing of coordinate vectors (..., 7)."""
        return np.real(_dots(v1 * self._scale, v2 * self._scale))

    def omega(self, v1: np.ndarray, v2: np.ndarray) -> np.ndarray:
        """Ambient symplectic pairing of coordinate vectors (..., 7)."""
        return np.imag(_dots(v1 * self._scale, v2 * self._scale))

    # ------------------------------------------------------------ flow field

    def z_field(self, state: State, guard: float = 1e-8):
        """Gradient-Hamiltonian field Z = -grad(Re t)/|grad(Re t)|^2 as flat
        coordinates (..., 7).  Returns (Z, grad_norm)."""
        C = self._rows(state)
        st = self._scale[6]
        e_t = np.zeros(state.batch_shape + (7,), dtype=complex)
        e_t[..., 6] = 1.0
        v = self._project_scaled(C, e_t)
        nrm2 = np.real(_dots(v, v))
        grad_norm = np.sqrt(nrm2) / st
        if np.any(grad_norm <= guard):
            bad = float(np.min(grad_norm))
            raise FlowSingularityError(
                f"flow field undefined: gradient norm {bad:.3e} <= {guard:.1e}"
            )
        zhat = -(st * v) / nrm2[..., None]
        return zhat / self._scale, grad_norm

    def z_of_ref(self, state: State) -> np.ndarray:
        """Directional derivative Z(Re t); equals -1 wherever Z is defined."""
        Z, _ = self.z_field(state)
        return np.real(Z[..., 6])

    # ------------------------------------------------------------ retraction

    def retract(self, state: State, tol: float = 1e-12, max_iter: int = 20) -> State:
        """Pull (u, w) back onto the hypersurface at fixed t: Gauss-Newton on
        the defining equation plus per-factor renormalization."""
        u = state.u.copy()
        w = state.w.copy()
        t = state.t
        scale = np.maximum(1.0, np.abs(t))
        for _ in range(max_iter):
            u /= np.linalg.norm(u, axis=-1, keepdims=True)
            w /= np.linalg.norm(w, axis=-1, keepdims=True)
            F = u[..., 0] * w[..., 2] - u[..., 1] * w[..., 1] + t * u[..., 2] * w[..., 0]
            if np.all(np.abs(F) <= tol * scale):
                return State(u, w, t)
            J = np.stack(
                [
                    w[..., 2], -w[..., 1], t * w[..., 0],
                    t * u[..., 2], -u[..., 1], u[..., 0],
                ],
                axis=-1,
            )
            step = -np.conj(J) * (F / np.real(_dots(J, J)))[..., None]
            u = u + step[..., 0:3]
            w = w + step[..., 3:6]
        F = u[..., 0] * w[..., 2] - u[..., 1] * w[..., 1] + t * u[..., 2] * w[..., 0]
        worst = float(np.max(np.abs(F) / scale))
        raise FlowSingularityError(f"retraction stalled at residual {worst:.3e}")

    # ----------------------------------------------------------- integration

    def _rk4_step(self, state: State, h: float, sign: float) -> State:
        def f(s: State) -> np.ndarray:
            Z, _ = self.z_field(s)
            return sign * Z

        y = state.vector()
        k1 = f(state)
        k2 = f(State.from_vector(y + 0.5 * h * k1))
        k3 = f(State.from_vector(y + 0.5 * h * k2))
        k4 = f(State.from_vector(y + h * k3))
        return State.from_vector(y + (h / 6.0) * (k1 + 2 * k2 + 2 * k3 + k4))

    def flow(
        self,
        state: State,
        tau: float,
        h: float = 1e-3,
        record: bool = False,
        keep_states: bool = False,
        retract_tol: float = 1e-12,
        guard: float = 1e-8,
    ) -> FlowResult:
        """Integrate the flow for time tau (tau < 0 runs the field backwards,
        increasing Re t).  Uniform RK4 steps with retraction after each."""
        if tau == 0:
            return FlowResult(state, 0, 0.0, 0.0,
                              float(np.max(np.abs(self.residual(state)))),
                              float("inf"), 0.0)
        sign = 1.0 if tau > 0 else -1.0
        steps = max(1, math.ceil(abs(tau) / h))
        h_eff = abs(tau) / steps
        t0 = state.t
        cur = state
        max_res = float(np.max(np.abs(self.residual(cur))))
        min_grad = float("inf")
        dir_err = 0.0
        t_path = [cur.t.copy()] if record else None
        states = [cur] if keep_states else None
        for _ in range(steps):
            Z, gn = self.z_field(cur, guard=guard)
            min_grad = min(min_grad, float(np.min(gn)))
            dir_err = max(dir_err, float(np.max(np.abs(np.real(Z[..., 6]) + 1.0))))
            cur = self._rk4_step(cur, h_eff, sign)
            cur = self.retract(cur, tol=retract_tol)
            max_res = max(max_res, float(np.max(np.abs(self.residual(cur)))))
            if record:
                t_path.append(cur.t.copy())
            if keep_states:
                states.append(cur)
        t_expected = t0 - sign * abs(tau)
        t_dev = float(np.max(np.abs(cur.t - t_expected)))
        return FlowResult(
            cur, steps, h_eff, t_dev, max_res, min_grad, dir_err,
            t_path=np.stack(t_path) if record else None,
            states=states,
        )

    # --------------------------------------------------------------- frames

    def tangent_frame(self, state: State, fiber: bool = False) -> np.ndarray:
        """Metric-orthonormal real frame of the tangent space at a single
        point, shape (2k, 7) complex with k = 4 (total space) or 3 (fiber):
        entries come in pairs (n, i n)."""
        if state.batch_shape != ():
            raise ValueError("tangent_frame expects a single point")
        C = self._rows(state, fiber=fiber)
        m = C.shape[-2]
        sv = np.linalg.svd(C, compute_uv=False)
        if sv[-1] < 1e-10:
            raise FlowSingularityError(
                f"tangent conditions drop rank (smallest singular value {sv[-1]:.3e})"
            )
        _, _, Vh = np.linalg.svd(C, full_matrices=True)
        null = np.conj(Vh[m:])            # (7-m, 7) orthonormal, scaled coords
        k = null.shape[0]
        frame = np.empty((2 * k, 7), dtype=complex)
        frame[0::2] = null
        frame[1::2] = 1j * null
        return frame / self._scale

    def gram(self, vectors: np.ndarray) -> np.ndarray:
        """Metric Gram matrix of a stack of coordinate vectors (k, 7)."""
        zh = vectors * self._scale
        return np.real(zh @ np.conj(zh.T))

    def omega_matrix(self, vectors: np.ndarray) -> np.ndarray:
        """Symplectic pairing matrix of a stack of coordinate vectors."""
        zh = vectors * self._scale
        return np.imag(zh @ np.conj(zh.T))

    def _dz_apply(self, state: State, vectors: np.ndarray, eps: float) -> np.ndarray:
        """Directional derivatives DZ(x)[v] by central differences, batched
        over the stack of vectors (k, 7)."""
        y = state.vector()
        k = vectors.shape[0]
        plus = State.from_vector(y[None, :] + eps * vectors)
        minus = State.from_vector(y[None, :] - eps * vectors)
        Zp, _ = self.z_field(plus)
        Zm, _ = self.z_field(minus)
        return (Zp - Zm) / (2.0 * eps)

    def transport_frame(
        self,
        state: State,
        vectors: np.ndarray,
        tau: float,
        h: float = 1e-3,
        fiber: bool = True,
        fd_eps: float = 1e-6,
        retract_tol: float = 1e-12,
    ):
        """Carry tangent vectors along the flow by the linearized flow map.

        Each step advances the base point by RK4 + retraction and the frame by
        an explicit midpoint rule for the variational equation v' = DZ(x) v,
        with DZ applied through central finite differences; the result is then
        projected back onto the (fiber) tangent space at the new point.  The
        scheme is second order in h.  Returns (final_state, final_vectors).
        """
        if state.batch_shape != ():
            raise ValueError("transport_frame expects a single point")
        sign = 1.0 if tau >= 0 else -1.0
        steps = max(1, math.ceil(abs(tau) / h))
        h_eff = abs(tau) / steps
        cur = state
        V = np.array(vectors, dtype=complex)
        for _ in range(steps):
            Z, _ = self.z_field(cur)
            mid = State.from_vector(cur.vector() + 0.5 * h_eff * sign * Z)
            dz0 = sign * self._dz_apply(cur, V, fd_eps)
            vhalf = V + 0.5 * h_eff * dz0
            dzm = sign * self._dz_apply(mid, vhalf, fd_eps)
            V = V + h_eff * dzm
            cur = self.retract(self._rk4_step(cur, h_eff, sign), tol=retract_tol)
            V = self.project(cur, V, fiber=fiber)
        return cur, V


# -------------------------------------------------------------- line bundle


def transport_phase_factors(u_path: np.ndarray, w_path: np.ndarray,
                            a: Sequence[float]) -> np.ndarray:
    """Per-segment parallel-transport phases of the O(a_1, a_2) connection
    along a discretized path of unit-sphere representatives (K+1, 3) each."""
    du = np.angle(np.sum(np.conj(u_path[:-1]) * u_path[1:], axis=-1))
    dw = np.angle(np.sum(np.conj(w_path[:-1]) * w_path[1:], axis=-1))
    return np.exp(1j * (a[0] * du + a[1] * dw))


def loop_phase(u_path: np.ndarray, w_path: np.ndarray, a: Sequence[float]) -> complex:
    """Holonomy of the bundle connection around a discretized loop.  The path
    must be closed up to projective rescaling; the last-to-first segment is
    included automatically."""
    u = np.concatenate([u_path, u_path[:1]], axis=0)
    w = np.concatenate([w_path, w_path[:1]], axis=0)
    return complex(np.prod(transport_phase_factors(u, w, a)))


def torus_loop(state: State, weights: Sequence[int], samples: int = 1024) -> State:
    """Orbit loop of the diagonal torus s . (u, w) with u_i -> s_i u_i and
    w_ij -> s_i s_j w_ij, run along s_i = exp(2 pi i theta weights_i).  The
    action preserves every fiber, so the loop stays on the hypersurface.
    Returns a batched State of `samples` points (the closing point omitted).
    """
    k = np.asarray(weights, dtype=float)
    if k.shape != (3,):
        raise ValueError("weights must be three integers")
    if state.batch_shape != ():
        raise ValueError("torus_loop expects a single point")
    theta = np.arange(samples) / samples
    pu = np.exp(2j * np.pi * np.outer(theta, k))
    kw = np.array([k[0] + k[1], k[0] + k[2], k[1] + k[2]])
    pw = np.exp(2j * np.pi * np.outer(theta, kw))
    t = np.broadcast_to(state.t, (samples,)).copy()
    return State(pu * state.u, pw * state.w, t)
