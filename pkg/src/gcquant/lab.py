"""Concentration experiments.

Toric side: L^1-normalized section densities on a moment polytope, their mass
and sup outside an exclusion ball, and pairings against test functions.  The
density concentrates on the lattice point m as the deformation strength s
grows; the routines here measure rates against the analytic Hessian bounds.

Flag side (n = 3): the linear identification between Gelfand-Cetlin patterns
and the moment image of the toric limit, the slice map singling out the
x-locus of the degenerate fiber over a pattern, and the combined experiment
that runs the deformation and the family flow together.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.special import logsumexp

from .polytope import (
    DelzantPolytope,
    Facet,
    GCPattern,
    ambient_polytope,
    gc_polytope,
)
from .toric import (
    TWO_PI,
    ConvergenceError,
    ConvexDeformation,
    QuadraticNu,
    QuadratureError,
    SectionDensity,
    SymplecticPotential,
    g_can_grad,
    g_can_hess,
    polytope_grid,
)
from .flag import gc_map, random_flags
from .flow import DegenerationFamily, FlowSingularityError, State, transport_phase_factors

__all__ = [
    "smith_normal_form",
    "adapted_basis",
    "outside_mass",
    "concentration_sup",
    "delta_pairing",
    "analytic_decay_rate",
    "decay_slope",
    "ExpSchedule",
    "AdaptiveSchedule",
    "schedule_ts",
    "GCTorusModel",
    "section_equality_on_v0",
    "ExperimentConfig",
    "CellResult",
    "ConcentrationReport",
    "combined_experiment",
    "gc_vs_torus_moment_check",
]


# -- integer normal forms -------------------------------------------------------


def smith_normal_form(M) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """U M V = S diagonal with U, V unimodular; exact integer arithmetic.

    Returns (U, S, V) as int arrays.  Diagonal entries are nonnegative and
    each divides the next.
    """
    S = np.array([[int(v) for v in row] for row in M], dtype=object)
    r, c = S.shape
    U = np.eye(r, dtype=object)
    V = np.eye(c, dtype=object)

    def swap_rows(i, j):
        S[[i, j], :] = S[[j, i], :]
        U[[i, j], :] = U[[j, i], :]

    def swap_cols(i, j):
        S[:, [i, j]] = S[:, [j, i]]
        V[:, [i, j]] = V[:, [j, i]]

    def add_row(src, dst, q):  # row_dst += q * row_src
        S[dst, :] += q * S[src, :]
        U[dst, :] += q * U[src, :]

    def add_col(src, dst, q):
        S[:, dst] += q * S[:, src]
        V[:, dst] += q * V[:, src]

    def eliminate(t):
        """Clear row/column t below-right of the pivot; pivot assumed set."""
        dirty = True
        while dirty:
            dirty = False
            for i in range(t + 1, r):
                if S[i, t] != 0:
                    q = S[i, t] // S[t, t]
                    add_row(t, i, -q)
                    if S[i, t] != 0:
                        swap_rows(t, i)
                        dirty = True
            for j in range(t + 1, c):
                if S[t, j] != 0:
                    q = S[t, j] // S[t, t]
                    add_col(t, j, -q)
                    if S[t, j] != 0:
                        swap_cols(t, j)
                        dirty = True

    t = 0
    while t < min(r, c):
        sub = [(abs(S[i, j]), i, j) for i in range(t, r) for j in range(t, c) if S[i, j] != 0]
        if not sub:
            break
        _, pi, pj = min(sub)
        if pi != t:
            swap_rows(t, pi)
        if pj != t:
            swap_cols(t, pj)
        eliminate(t)
        if S[t, t] < 0:
            S[t, :] *= -1
            U[t, :] *= -1
        # restart if the divisibility chain broke behind us
        back = t
        while back > 0 and S[back, back] % S[back - 1, back - 1] != 0:
            back -= 1
        if back < t:
            add_col(t, back, 1)
            t = back
            continue
        t += 1
    return (np.array(U.tolist(), dtype=np.int64),
            np.array(S.tolist(), dtype=np.int64),
            np.array(V.tolist(), dtype=np.int64))


def adapted_basis(A) -> np.ndarray:
    """Unimodular P with A P = [I | 0]: the first rank(A) columns map to the
    standard basis downstairs, the remaining columns span ker A over Z."""
    A = np.asarray(A, dtype=np.int64)
    r, c = A.shape
    U, S, V = smith_normal_form(A)
    d = np.diagonal(S)
    if not np.all(d[:r] == 1):
        raise ValueError("matrix is not surjective onto the integer lattice")
    W = np.eye(c, dtype=np.int64)
    W[:r, :r] = U
    P = V @ W
    assert np.array_equal(A @ P, np.concatenate([np.eye(r, dtype=np.int64),
                                                 np.zeros((r, c - r), dtype=np.int64)], axis=1))
    return P


def _int_inverse(P: np.ndarray) -> np.ndarray:
    """Exact inverse of a unimodular integer matrix."""
    Pinv = np.rint(np.linalg.inv(P.astype(float))).astype(np.int64)
    if not np.array_equal(P @ Pinv, np.eye(P.shape[0], dtype=np.int64)):
        raise ValueError("matrix is not unimodular")
    return Pinv


# -- toric quadrature experiments ----------------------------------------------


def _grid_log_weights(P: DelzantPolytope, density: SectionDensity, per_axis: int):
    pts, log_vol = polytope_grid(P, per_axis)
    logdens = density.log_magnitude(pts)
    return pts, logdens, logdens + log_vol


def _image_distance(pts: np.ndarray, center, image: Optional[np.ndarray]) -> np.ndarray:
    center = np.asarray(center, dtype=float)
    if image is not None:
        A = np.asarray(image, dtype=float)
        return np.linalg.norm(pts @ A.T - center, axis=-1)
    return np.linalg.norm(pts - center, axis=-1)


def outside_mass(P: DelzantPolytope, density: SectionDensity, center, eps: float,
                 per_axis: int = 64, image: Optional[np.ndarray] = None) -> float:
    """L^1 mass of the normalized density outside the eps-ball around `center`
    (distance measured after applying `image` when given)."""
    pts, _, lw = _grid_log_weights(P, density, per_axis)
    mask = _image_distance(pts, center, image) > eps
    if not mask.any():
        raise QuadratureError("exclusion ball covers the whole quadrature grid")
    if mask.all():
        raise QuadratureError("exclusion ball contains no quadrature point")
    return float(np.exp(logsumexp(lw[mask]) - logsumexp(lw)))


def concentration_sup(P: DelzantPolytope, density: SectionDensity, center, eps: float,
                      per_axis: int = 64, image: Optional[np.ndarray] = None) -> float:
    """Sup of the L^1-normalized density over grid points outside the ball."""
    pts, logdens, lw = _grid_log_weights(P, density, per_axis)
    mask = _image_distance(pts, center, image) > eps
    if not mask.any():
        raise QuadratureError("exclusion ball covers the whole quadrature grid")
    return float(np.exp(np.max(logdens[mask]) - logsumexp(lw)))


def delta_pairing(P: DelzantPolytope, density: SectionDensity,
                  phi: Callable[[np.ndarray], np.ndarray], per_axis: int = 64) -> float:
    """<phi, normalized density> by midpoint quadrature; phi == 1 gives 1."""
    pts, _, lw = _grid_log_weights(P, density, per_axis)
    w = np.exp(lw - np.max(lw))
    vals = np.broadcast_to(np.asarray(phi(pts), dtype=float), w.shape)
    return float(np.sum(vals * w) / np.sum(w))


def analytic_decay_rate(deformation: ConvexDeformation, eps: float, r: float) -> float:
    """Exponential rate 2 pi (C1 eps^2 - C2 r^2) of the sup bound outside the
    eps-ball, with C1, C2 half the extreme Hessian eigenvalues of nu."""
    return TWO_PI * (deformation.c1() * eps**2 - deformation.c2() * r**2)


def decay_slope(s_values: Sequence[float], values: Sequence[float]) -> float:
    """Least-squares slope of log(values) against s."""
    s = np.asarray(s_values, dtype=float)
    v = np.asarray(values, dtype=float)
    if s.size < 2:
        raise ValueError("need at least two samples to fit a slope")
    if np.any(v <= 0):
        raise ValueError("values must be positive for a log fit")
    return float(np.polyfit(s, np.log(v), 1)[0])


# -- deformation schedules ------------------------------------------------------


@dataclass(frozen=True)
class ExpSchedule:
    """t(s) = exp(-s/rate): continuous, decreasing, t(0) = 1."""

    rate: float = 5.0

    def __post_init__(self):
        if self.rate <= 0:
            raise ValueError("rate must be positive")

    def t(self, s: float) -> float:
        if s < 0:
            raise ValueError("s must be nonnegative")
        return math.exp(-s / self.rate)


@dataclass
class AdaptiveSchedule:
    """Per integer window [n, n+1), shrink t geometrically until a measured
    flow-vs-toric discrepancy falls below 1/(n+2); failure to reach the target
    at t_min is recorded, not raised.

    `measure(t)` returns the discrepancy used for the test; the default probes
    a small flag ensemble.
    """

    measure: Optional[Callable[[float], float]] = None
    shrink: float = 0.5
    t_min: float = 1e-4
    _cache: dict = field(default_factory=dict, repr=False)
    unmet: set = field(default_factory=set)

    def target(self, window: int) -> float:
        return 1.0 / (window + 2)

    def t(self, s: float) -> float:
        if s < 0:
            raise ValueError("s must be nonnegative")
        if s == 0:
            return 1.0
        window = int(math.floor(s))
        if window in self._cache:
            return self._cache[window]
        measure = self.measure
        if measure is None:
            measure = lambda t: gc_vs_torus_moment_check(t, samples=3, h=5e-3)
        # start below the previous window's value to keep monotonicity;
        # t_min is a hard floor even across windows
        t_prev = self.t(s - 1.0) if window >= 1 else 1.0
        t_cur = max(t_prev * self.shrink, self.t_min)
        gap = measure(t_cur)
        while gap > self.target(window) and t_cur > self.t_min:
            t_cur = max(t_cur * self.shrink, self.t_min)
            gap = measure(t_cur)
        if gap > self.target(window):
            self.unmet.add(window)
        self._cache[window] = t_cur
        return t_cur


def schedule_ts(policy, s: float) -> float:
    """Evaluate a schedule policy at s >= 0."""
    return policy.t(s)


# -- the n = 3 identification ---------------------------------------------------


def _restriction_matrix() -> np.ndarray:
    """Character restriction on the ambient chart anchored at (u_1, w_12).

    Columns are the residual-torus characters of the affine coordinates
    (u_2/u_1, u_3/u_1, w_13/w_12, w_23/w_12) expressed in the rank-3 quotient
    by the binomial direction.
    """
    return np.array([[1, 0, 0, 1],
                     [0, 1, 0, 0],
                     [0, 0, 1, 1]], dtype=np.int64)


class GCTorusModel:
    """Linear identification between Gelfand-Cetlin data and the toric limit
    for n = 3 with weights a = (a_1, a_2).

    xi-coordinates are the moment coordinates of the degenerate fiber's torus;
    `A` maps ambient moment coordinates onto them, `k` spans ker A and is the
    exponent vector of the binomial u_1 w_23 = u_2 w_13 in the affine chart
    (w_4 = w_1 w_3, i.e. k = (1, 0, 1, -1)).
    """

    def __init__(self, a: Sequence[float] = (1.0, 1.0)):
        a = tuple(float(x) for x in a)
        if len(a) != 2 or min(a) <= 0:
            raise ValueError("a must be two positive weights")
        self.a = a
        self.A = _restriction_matrix()
        self.k = np.array([1, 0, 1, -1], dtype=np.int64)
        if np.any(self.A @ self.k != 0):  # pragma: no cover - fixed data
            raise AssertionError("binomial direction must span ker A")
        self.basis = adapted_basis(self.A)          # columns p'_1..p'_4
        ker = self.basis[:, 3]
        if not (np.array_equal(ker, self.k) or np.array_equal(ker, -self.k)):
            raise AssertionError("adapted basis kernel column disagrees with the binomial")
        if np.array_equal(ker, -self.k):
            self.basis = self.basis.copy()
            self.basis[:, 3] = self.k
        self._basis_inv_t = _int_inverse(self.basis).T
        # right inverse used as a base solution of A x = xi
        self.B = np.array([[1, 0, 0],
                           [0, 1, 0],
                           [0, 0, 1],
                           [0, 0, 0]], dtype=np.int64)

    # polytopes

    def gc_delta(self) -> DelzantPolytope:
        return gc_polytope(3, self.a)

    def ambient_delta(self) -> DelzantPolytope:
        return ambient_polytope(3, self.a)

    def image_delta(self) -> DelzantPolytope:
        """A(ambient polytope) = {xi >= 0, xi_2 <= a_1, xi_3 <= a_2,
        xi_1 + xi_2 - xi_3 <= a_1}."""
        a1, a2 = self.a
        return DelzantPolytope(3, (
            Facet((1, 0, 0), 0.0, "xi1>=0"),
            Facet((0, 1, 0), 0.0, "xi2>=0"),
            Facet((0, 0, 1), 0.0, "xi3>=0"),
            Facet((0, -1, 0), a1, "xi2<=a1"),
            Facet((0, 0, -1), a2, "xi3<=a2"),
            Facet((-1, -1, 1), a1, "xi1+xi2-xi3<=a1"),
        ), ("xi1", "xi2", "xi3"))

    # pattern <-> xi

    def i_affine(self) -> tuple[np.ndarray, np.ndarray]:
        """xi = M lam + c on flattened patterns (lam1_1, lam2_1, lam2_2)."""
        a1, a2 = self.a
        M = np.array([[-1.0, 1.0, 0.0],
                      [0.0, -1.0, 0.0],
                      [0.0, 0.0, -1.0]])
        c = np.array([0.0, a1 + a2, a2])
        return M, c

    def xi_of_pattern(self, pattern) -> np.ndarray:
        if isinstance(pattern, GCPattern):
            lam = np.asarray(pattern.flatten(drop_top=True), dtype=float)
        elif isinstance(pattern, np.ndarray) and pattern.shape[-1] == 3:
            lam = np.asarray(pattern, dtype=float)
        else:
            flat = []
            for row in pattern:
                flat.extend(np.atleast_1d(np.asarray(row, dtype=float)))
            lam = np.asarray(flat, dtype=float)
            if lam.shape != (3,):
                raise ValueError("pattern must flatten to (lam1_1, lam2_1, lam2_2)")
        M, c = self.i_affine()
        return lam @ M.T + c

    def pattern_of_xi(self, xi) -> np.ndarray:
        xi = np.asarray(xi, dtype=float)
        M, c = self.i_affine()
        return (xi - c) @ np.linalg.inv(M).T

    def xi_of_state(self, fam: DegenerationFamily, state: State) -> np.ndarray:
        return fam.moment(state) @ self.A.T.astype(float)

    def conserved_coordinates(self, xi) -> np.ndarray:
        """Combinations of xi constant along the family flow: (xi1 + xi2,
        xi2 + xi3) are moments of the residual torus acting on every fiber."""
        xi = np.asarray(xi, dtype=float)
        return np.stack([xi[..., 0] + xi[..., 1], xi[..., 1] + xi[..., 2]], axis=-1)

    def lifts(self, xi) -> list[np.ndarray]:
        """Ambient lattice points m with A m = xi, lexicographically sorted."""
        xi = np.asarray(xi)
        v = np.rint(xi).astype(np.int64)
        if not np.allclose(xi, v, atol=1e-9):
            raise ValueError("xi must be an integer lattice point")
        P = self.ambient_delta()
        out = []
        base = self.B @ v
        # all lattice solutions are base + c * k; intersect the exact c-range
        # allowed by the bounding box on each moving coordinate
        box = P.bounding_box()
        c_lo, c_hi = -math.inf, math.inf
        for i in range(4):
            if self.k[i] == 0:
                continue
            r1 = (box[i][0] - float(base[i])) / self.k[i]
            r2 = (box[i][1] - float(base[i])) / self.k[i]
            c_lo = max(c_lo, min(r1, r2))
            c_hi = min(c_hi, max(r1, r2))
        for c in range(int(math.ceil(c_lo - 1e-9)), int(math.floor(c_hi + 1e-9)) + 1):
            cand = base + c * self.k
            if P.contains(cand.astype(float), tol=1e-9):
                out.append(cand.copy())
        if not out:
            raise ValueError("no ambient lattice lift inside the polytope")
        return sorted(out, key=tuple)

    # the slice of the degenerate fiber

    def slice_point(self, xi, tol: float = 1e-12, max_iter: int = 60) -> np.ndarray:
        """x in Int ambient polytope with A x = xi and d/ds g_can(x + s k) = 0:
        the unique moment point of the degenerate fiber over xi (batched)."""
        xi = np.asarray(xi, dtype=float)
        P = self.ambient_delta()
        kf = self.k.astype(float)
        x0 = xi @ self.B.T.astype(float)
        N = P.normal_matrix
        offs = P.offsets
        vals0 = x0 @ N.T + offs
        slopes = N @ kf
        s_lo = np.full(xi.shape[:-1], -np.inf)
        s_hi = np.full(xi.shape[:-1], np.inf)
        for f in range(len(slopes)):
            if slopes[f] > 0:
                s_lo = np.maximum(s_lo, -vals0[..., f] / slopes[f])
            elif slopes[f] < 0:
                s_hi = np.minimum(s_hi, -vals0[..., f] / slopes[f])
            else:
                if np.any(vals0[..., f] <= 0):
                    raise ValueError("xi is not in the interior of the image polytope")
        if np.any(~(s_lo < s_hi)):
            raise ValueError("xi is not in the interior of the image polytope")
        gap = s_hi - s_lo
        lo = s_lo + 1e-12 * gap
        hi = s_hi - 1e-12 * gap
        s = 0.5 * (s_lo + s_hi)

        def phi_and_slope(s):
            x = x0 + s[..., None] * kf
            return (g_can_grad(P, x) @ kf, np.einsum("i,...ij,j->...", kf, g_can_hess(P, x), kf))

        for _ in range(max_iter):
            phi, dphi = phi_and_slope(s)
            # maintain the bracket: phi is strictly increasing in s
            lo = np.where(phi < 0, np.maximum(lo, s), lo)
            hi = np.where(phi > 0, np.minimum(hi, s), hi)
            if np.all(np.abs(phi) <= tol):
                return x0 + s[..., None] * kf
            step = -phi / dphi
            s_new = s + step
            bad = (s_new <= lo) | (s_new >= hi)
            s = np.where(bad, 0.5 * (lo + hi), s_new)
        raise ConvergenceError("slice solve did not reach tolerance "
                               f"(worst residual {float(np.max(np.abs(phi))):.3e})")

    def v0_state(self, xi, theta_prime=(0.0, 0.0, 0.0),
                 fam: Optional[DegenerationFamily] = None) -> State:
        """Point of the degenerate fiber over xi with angle coordinates
        theta_prime in the adapted torus basis (batched over xi rows)."""
        if fam is None:
            fam = DegenerationFamily(self.a)
        a1, a2 = self.a
        x = self.slice_point(xi)
        tp = np.broadcast_to(np.asarray(theta_prime, dtype=float), x.shape[:-1] + (3,))
        tp4 = np.concatenate([tp, np.zeros(x.shape[:-1] + (1,))], axis=-1)
        theta = tp4 @ self._basis_inv_t.astype(float).T
        xu = np.stack([a1 - x[..., 0] - x[..., 1], x[..., 0], x[..., 1]], axis=-1) / a1
        xw = np.stack([a2 - x[..., 2] - x[..., 3], x[..., 2], x[..., 3]], axis=-1) / a2
        pu = np.concatenate([np.zeros(x.shape[:-1] + (1,)), theta[..., 0:2]], axis=-1)
        pw = np.concatenate([np.zeros(x.shape[:-1] + (1,)), theta[..., 2:4]], axis=-1)
        u = np.sqrt(xu) * np.exp(2j * np.pi * pu)
        w = np.sqrt(xw) * np.exp(2j * np.pi * pw)
        state = State(u, w, np.zeros(x.shape[:-1], dtype=complex))
        res = np.max(np.abs(fam.residual(state)))
        if res > 1e-10:
            raise FlowSingularityError(f"constructed point misses the fiber ({res:.3e})")
        return state


# -- section restriction on the degenerate fiber --------------------------------


def section_equality_on_v0(m, mprime, samples: int = 500, seed: int = 0,
                           log_radius: float = 0.5) -> float:
    """max |w^m - w^m'| / max(1, |w^m|) over torus samples of the binomial
    subvariety w_4 = w_1 w_3; exact 0 when A m = A m' (the monomials agree on
    the subvariety), bounded away from 0 otherwise."""
    m = np.asarray(m, dtype=np.int64)
    mp = np.asarray(mprime, dtype=np.int64)
    if m.shape != (4,) or mp.shape != (4,):
        raise ValueError("lifts must be integer 4-vectors")
    rng = np.random.default_rng(seed)
    logr = rng.uniform(-log_radius, log_radius, size=(samples, 3))
    ang = rng.uniform(0.0, 1.0, size=(samples, 3))
    w123 = np.exp(logr + 2j * np.pi * ang)
    w = np.concatenate([w123, (w123[:, 0] * w123[:, 2])[:, None]], axis=1)
    if np.max(np.abs(w[:, 3] - w[:, 0] * w[:, 2])) != 0.0:
        raise FlowSingularityError("sample point off the binomial subvariety")

    def monomial(e):
        return np.prod(w ** e[None, :], axis=1)

    sm = monomial(m)
    smp = monomial(mp)
    return float(np.max(np.abs(sm - smp) / np.maximum(1.0, np.abs(sm))))


# -- the combined experiment ----------------------------------------------------


def _default_test_functions(xi_star: np.ndarray) -> dict:
    return {
        "one": lambda xi: np.ones(xi.shape[:-1]),
        "xi1": lambda xi: xi[..., 0],
        "dist2": lambda xi: np.sum((xi - xi_star) ** 2, axis=-1),
    }


@dataclass
class ExperimentConfig:
    """Configuration of toric/combined concentration runs (n = 3)."""

    a: tuple = (2.0, 2.0)
    pattern: tuple = ((2.0,), (3.0, 1.0))   # rows below the pinned top row
    nu: Optional[QuadraticNu] = None        # on xi-space; default identity quadratic
    s_grid: tuple = (0.0, 5.0, 10.0, 20.0, 40.0)
    eps: float = 0.3
    schedule: object = field(default_factory=ExpSchedule)
    per_axis: int = 32
    flow_per_axis: int = 10
    h: float = 1e-3
    spot_points: int = 6
    seed: int = 0
    jobs: int = 1

    def __post_init__(self):
        if self.nu is None:
            self.nu = QuadraticNu(np.eye(3))
        self.validate()

    def validate(self):
        s = np.asarray(self.s_grid, dtype=float)
        if s.size == 0 or np.any(np.diff(s) <= 0):
            raise ValueError("s-grid must be strictly increasing")
        if s[0] < 0:
            raise ValueError("s-grid must be nonnegative")
        if self.eps <= 0:
            raise ValueError("eps must be positive")
        if abs(schedule_ts(self.schedule, 0.0) - 1.0) > 1e-12:
            raise ValueError("schedule must satisfy t(0) = 1")
        ts = [schedule_ts(self.schedule, float(v)) for v in s]
        if np.any(np.diff(ts) > 1e-12):
            raise ValueError("schedule must be non-increasing on the s-grid")
        if self.per_axis < 4 or self.flow_per_axis < 2:
            raise ValueError("quadrature resolution too small")


@dataclass
class CellResult:
    """One (m, s) cell of a concentration report."""

    s: float
    t: float
    outside_mass: float                 # toric-route value (reported)
    sup_outside: float
    pairings: dict
    outside_mass_flow: Optional[float]  # flow-route cross check
    flow_points: int
    flow_failures: int
    spot_logdens_dev: Optional[float]   # max |log dens(flow end) - log dens(slice)|
    spot_phase_norm_dev: Optional[float]

    def as_row(self) -> dict:
        row = {
            "s": self.s,
            "t": self.t,
            "outside_mass": self.outside_mass,
            "sup_outside": self.sup_outside,
            "outside_mass_flow": self.outside_mass_flow,
            "flow_points": self.flow_points,
            "flow_failures": self.flow_failures,
            "spot_logdens_dev": self.spot_logdens_dev,
            "spot_phase_norm_dev": self.spot_phase_norm_dev,
        }
        for k in sorted(self.pairings):
            row[f"pairing_{k}"] = self.pairings[k]
        return row


@dataclass
class ConcentrationReport:
    xi_star: tuple
    lift: tuple
    cells: list
    slope: Optional[float]
    monotone: bool
    incomplete: bool
    config: ExperimentConfig


def _logsumexp_mass(lw: np.ndarray, mask: np.ndarray) -> float:
    if not mask.any():
        return 0.0
    return float(np.exp(logsumexp(lw[mask]) - logsumexp(lw)))


def _combined_cell(model: GCTorusModel, cfg: ExperimentConfig, s: float,
                   shared) -> CellResult:
    (xi_star, dens_at, xi_pts, lw_logvol, x_slice,
     xi_flow, x_flow_slice, v0, fam, phis) = shared
    t = schedule_ts(cfg.schedule, s)
    dens = dens_at(s)
    # toric route: deformed density at the slice points, labeled by xi
    logdens = dens.log_magnitude(x_slice)
    lw = logdens + lw_logvol
    dist = np.linalg.norm(xi_pts - xi_star, axis=-1)
    mask_out = dist > cfg.eps
    if not mask_out.any() or mask_out.all():
        raise QuadratureError("exclusion ball misses the quadrature grid")
    mass_out = _logsumexp_mass(lw, mask_out)
    sup_out = float(np.exp(np.max(logdens[mask_out]) - logsumexp(lw)))
    wgt = np.exp(lw - np.max(lw))
    pairings = {name: float(np.sum(phi(xi_pts) * wgt) / np.sum(wgt))
                for name, phi in phis.items()}

    # flow route: carry the coarse grid from the degenerate fiber to V_t and
    # evaluate the same density at the transported moment points
    mass_out_flow = None
    failures = 0
    spot_dev = None
    phase_dev = None
    n_flow = xi_flow.shape[0]
    if t > 0:
        end_x = np.full((n_flow, 4), np.nan)
        ok = np.ones(n_flow, dtype=bool)
        try:
            res = fam.flow(v0, -t, h=cfg.h)
            end_x[:] = fam.moment(res.state)
        except FlowSingularityError:
            for i in range(n_flow):
                try:
                    r = fam.flow(v0[i], -t, h=cfg.h)
                    end_x[i] = fam.moment(r.state)
                except FlowSingularityError:
                    ok[i] = False
        # a transported point drifting out of the polytope also counts failed
        sv = dens.potential.polytope.support_values(np.where(np.isnan(end_x), 0.0, end_x))
        ok &= np.min(sv, axis=-1) >= -1e-12
        failures = int((~ok).sum())
        logdens_flow = np.full(n_flow, -np.inf)
        if ok.any():
            logdens_flow[ok] = dens.log_magnitude(end_x[ok])
            lwf = logdens_flow + lw_logvol
            distf = np.linalg.norm(xi_flow - xi_star, axis=-1)
            mass_out_flow = _logsumexp_mass(lwf[ok], (distf > cfg.eps)[ok])
        # spot checks on a few points: flow-route vs slice-route density and
        # unitarity of the transported bundle phase
        n_spot = min(cfg.spot_points, int(ok.sum()))
        if n_spot > 0:
            idx = np.nonzero(ok)[0][:n_spot]
            logdens_slice = dens.log_magnitude(x_flow_slice[idx])
            spot_dev = float(np.max(np.abs(logdens_flow[idx] - logdens_slice)))
            phase_dev = 0.0
            for i in idx:
                r = fam.flow(v0[int(i)], -t, h=cfg.h, keep_states=True)
                u_path = np.stack([st.u for st in r.states])
                w_path = np.stack([st.w for st in r.states])
                ph = np.prod(transport_phase_factors(u_path, w_path, fam.a))
                phase_dev = max(phase_dev, abs(abs(ph) - 1.0))
    # at t = 0 the fiber already is the degenerate one and the two evaluation
    # routes coincide by construction; no flow is run

    return CellResult(
        s=float(s), t=float(t),
        outside_mass=mass_out, sup_outside=sup_out, pairings=pairings,
        outside_mass_flow=mass_out_flow,
        flow_points=int(n_flow) if t > 0 else 0,
        flow_failures=failures,
        spot_logdens_dev=spot_dev,
        spot_phase_norm_dev=phase_dev,
    )


def combined_experiment(cfg: ExperimentConfig) -> ConcentrationReport:
    """Deformation + degeneration concentration run for n = 3.

    Reported masses and pairings evaluate the deformed density at the slice
    points of the degenerate fiber (the flow lift preserves pointwise norms,
    so the modulus profile over xi-labels is the same); the flow route is run
    on a coarser grid as a cross check and spot-checked pointwise.
    """
    model = GCTorusModel(cfg.a)
    xi_star = model.xi_of_pattern(cfg.pattern)
    img = model.image_delta()
    if not img.contains(xi_star, strict=True):
        raise ValueError("pattern must be an interior point (boundary patterns "
                         "are out of scope)")
    lift = model.lifts(xi_star)[0]
    deformer = ConvexDeformation(cfg.nu, iota_star=model.A.astype(float))
    pot0 = SymplecticPotential(model.ambient_delta(), 0.0, deformer)
    dens_at = lambda s: SectionDensity(pot0.at_s(float(s)), tuple(lift.astype(float)))

    def interior_grid(per_axis):
        # grid centers landing on a wall to roundoff carry no density but
        # break the slice map; drop them
        pts, log_vol = polytope_grid(img, per_axis)
        keep = img.support_values(pts).min(axis=-1) > 1e-9
        return pts[keep], log_vol

    xi_pts, log_vol = interior_grid(cfg.per_axis)
    x_slice = model.slice_point(xi_pts)
    xi_flow, _ = interior_grid(cfg.flow_per_axis)
    x_flow_slice = model.slice_point(xi_flow)
    fam = DegenerationFamily(cfg.a)
    v0 = model.v0_state(xi_flow, fam=fam)
    phis = _default_test_functions(xi_star)

    shared = (xi_star, dens_at, xi_pts, log_vol, x_slice,
              xi_flow, x_flow_slice, v0, fam, phis)
    svals = [float(s) for s in cfg.s_grid]
    if cfg.jobs > 1:
        with ThreadPoolExecutor(max_workers=cfg.jobs) as ex:
            cells = list(ex.map(lambda s: _combined_cell(model, cfg, s, shared), svals))
    else:
        cells = [_combined_cell(model, cfg, s, shared) for s in svals]
    cells.sort(key=lambda c: c.s)

    masses = [c.outside_mass for c in cells]
    pos = [(c.s, m) for c, m in zip(cells, masses) if c.s > 0 and m > 0]
    slope = decay_slope(*zip(*pos)) if len(pos) >= 2 else None
    monotone = all(b < a for a, b in zip(masses, masses[1:]))
    incomplete = any(c.flow_failures > 0 for c in cells)
    return ConcentrationReport(
        xi_star=tuple(float(v) for v in xi_star),
        lift=tuple(int(v) for v in lift),
        cells=cells, slope=slope, monotone=monotone, incomplete=incomplete,
        config=cfg,
    )


# -- flag-vs-toric moment consistency --------------------------------------------


def gc_vs_torus_moment_check(t_small: float, samples: int = 20,
                             a: Sequence[float] = (1.0, 1.0), seed: int = 0,
                             h: float = 1e-3) -> float:
    """Flow random flags from t = 1 to t_small and compare Gelfand-Cetlin
    eigenvalue data of the start against the ambient torus moments of the end
    through the fixed linear identification; returns the max sup-norm gap.

    The gap shrinks as t_small -> 0 (trend, no absolute bound); at t = 1 the
    two sides live on different spaces and no comparison is attempted.
    """
    if not (0 < t_small <= 0.2):
        raise ValueError("t_small must lie in (0, 0.2]")
    model = GCTorusModel(a)
    fam = DegenerationFamily(a)
    flags = random_flags(3, samples, seed=seed)
    start = fam.embed_flag(flags, 1.0)
    res = fam.flow(start, 1.0 - t_small, h=h)
    xi_end = model.xi_of_state(fam, res.state)
    xi_start = np.stack([model.xi_of_pattern(gc_map(V, a)) for V in flags])
    return float(np.max(np.abs(xi_end - xi_start)))
