"""Canonical symplectic potentials on Delzant polytopes, moment/complex
coordinate changes, section densities, quadrature, and fiber holonomy.

All densities are handled as logarithms; deformation strengths s of order 1e3
would overflow doubles otherwise.  The angle torus always carries total mass 1.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np
from scipy.special import logsumexp, xlogy

from .polytope import DelzantPolytope

FOUR_PI = 4.0 * np.pi
TWO_PI = 2.0 * np.pi

__all__ = [
    "ConvergenceError",
    "QuadratureError",
    "QuadraticNu",
    "ConvexDeformation",
    "SymplecticPotential",
    "SectionDensity",
    "g_can_value",
    "g_can_grad",
    "g_can_hess",
    "alpha_m",
    "section_log_density",
    "moment_to_complex",
    "moment_to_log_complex",
    "complex_to_moment",
    "complex_to_moment_log",
    "polytope_grid",
    "log_l1_norm",
    "transport_phase",
    "holonomy",
    "bohr_sommerfeld_test",
]


class ConvergenceError(RuntimeError):
    pass


class QuadratureError(RuntimeError):
    pass


# -- canonical potential ------------------------------------------------------


def g_can_value(P: DelzantPolytope, x) -> np.ndarray:
    """(1/4pi) sum_j l_j log l_j with 0 log 0 = 0; continuous up to the boundary."""
    l = P.support_values(x)
    if np.any(l < -1e-12):
        raise ValueError("point outside the polytope")
    return xlogy(np.maximum(l, 0.0), np.maximum(l, 0.0)).sum(axis=-1) / FOUR_PI


def g_can_grad(P: DelzantPolytope, x) -> np.ndarray:
    l = P.support_values(x)
    if np.any(l <= 0.0):
        raise ValueError("gradient needs a strictly interior point")
    return (np.log(l) + 1.0) @ P.normal_matrix / FOUR_PI


def g_can_hess(P: DelzantPolytope, x) -> np.ndarray:
    l = P.support_values(x)
    if np.any(l <= 0.0):
        raise ValueError("Hessian needs a strictly interior point")
    R = P.normal_matrix
    return np.einsum("...f,fi,fj->...ij", 1.0 / l, R, R) / FOUR_PI


# -- deformations -------------------------------------------------------------


@dataclass(frozen=True)
class QuadraticNu:
    """nu(p) = p^T Q p / 2 on the restricted coordinates."""

    Q: np.ndarray

    def __post_init__(self):
        Q = np.asarray(self.Q, dtype=float)
        object.__setattr__(self, "Q", 0.5 * (Q + Q.T))

    def value(self, p):
        p = np.asarray(p, dtype=float)
        return 0.5 * np.einsum("...i,ij,...j->...", p, self.Q, p)

    def grad(self, p):
        return np.asarray(p, dtype=float) @ self.Q

    def hess(self, p):
        p = np.asarray(p, dtype=float)
        return np.broadcast_to(self.Q, p.shape[:-1] + self.Q.shape).copy()

    def eig_range(self) -> tuple[float, float]:
        w = np.linalg.eigvalsh(self.Q)
        return float(w[0]), float(w[-1])


@dataclass(frozen=True)
class ConvexDeformation:
    """x -> nu(iota_star x); iota_star = None means the identity restriction.

    c1/c2 are *half* the extreme Hessian eigenvalues of nu: the Taylor bound
    along segments, alpha(p) - alpha(m) >= c1 |p - m|^2, carries the 1/2 from
    int_0^1 t dt.
    """

    nu: QuadraticNu
    iota_star: Optional[np.ndarray] = None

    def restrict(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.iota_star is None:
            return x
        return x @ np.asarray(self.iota_star, dtype=float).T

    def value(self, x):
        return self.nu.value(self.restrict(x))

    def grad(self, x):
        g = self.nu.grad(self.restrict(x))
        if self.iota_star is None:
            return g
        return g @ np.asarray(self.iota_star, dtype=float)

    def hess(self, x):
        A = None if self.iota_star is None else np.asarray(self.iota_star, dtype=float)
        H = self.nu.hess(self.restrict(x))
        if A is None:
            return H
        return np.einsum("ri,...rs,sj->...ij", A, H, A)

    def c1(self) -> float:
        return 0.5 * self.nu.eig_range()[0]

    def c2(self) -> float:
        return 0.5 * self.nu.eig_range()[1]


@dataclass(frozen=True)
class SymplecticPotential:
    """g = g_can + correction + s * nu(iota_star .) on Int Delta."""

    polytope: DelzantPolytope
    s: float = 0.0
    deformer: Optional[ConvexDeformation] = None
    correction: Optional[object] = None

    def value(self, x):
        v = g_can_value(self.polytope, x)
        if self.correction is not None:
            v = v + self.correction.value(x)
        if self.deformer is not None and self.s != 0.0:
            v = v + self.s * self.deformer.value(x)
        return v

    def grad(self, x):
        g = g_can_grad(self.polytope, x)
        if self.correction is not None:
            g = g + self.correction.grad(x)
        if self.deformer is not None and self.s != 0.0:
            g = g + self.s * self.deformer.grad(x)
        return g

    def hess(self, x):
        H = g_can_hess(self.polytope, x)
        if self.correction is not None:
            H = H + self.correction.hess(x)
        if self.deformer is not None and self.s != 0.0:
            H = H + self.s * self.deformer.hess(x)
        return H

    def at_s(self, s: float) -> "SymplecticPotential":
        return SymplecticPotential(self.polytope, s, self.deformer, self.correction)


# -- section densities ---------------------------------------------------------


def alpha_m(pot: SymplecticPotential, m, x) -> np.ndarray:
    """alpha_m(x) = <x - m, grad(nu o iota)(x)> - (nu o iota)(x); zero deformer -> 0."""
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    if pot.deformer is None:
        return np.zeros(x.shape[:-1])
    g = pot.deformer.grad(x)
    return np.einsum("...i,...i->...", x - m, g) - pot.deformer.value(x)


def section_log_density(pot: SymplecticPotential, m, x) -> np.ndarray:
    """log |pullback of sigma^m| at moment point x (theta-independent).

    The canonical part uses the boundary-continuous closed form
    sum_j [ l_j(m)/2 * log l_j(x) + (l_j(m) - l_j(x))/2 ],
    which agrees with 2 pi (g - <x - m, grad g>) in the interior; the
    correction and deformation parts are added analytically.  Returns -inf on
    boundary walls not containing m.
    """
    P = pot.polytope
    x = np.asarray(x, dtype=float)
    m = np.asarray(m, dtype=float)
    lx = P.support_values(x)
    if np.any(lx < -1e-12):
        raise ValueError("point outside the polytope")
    lx = np.maximum(lx, 0.0)
    lm = P.support_values(m)
    with np.errstate(divide="ignore", invalid="ignore"):
        loglx = np.where(lx > 0.0, np.log(np.where(lx > 0.0, lx, 1.0)), -np.inf)
        terms = 0.5 * lm * loglx
        terms = np.where(lm == 0.0, 0.0, terms)  # 0 * log 0 = 0 on shared walls
    out = terms.sum(axis=-1) + 0.5 * (lm - lx).sum(axis=-1)
    if pot.correction is not None:
        c = pot.correction.value(x)
        gc = pot.correction.grad(x)
        out = out + TWO_PI * (c - np.einsum("...i,...i->...", x - m, gc))
    if pot.deformer is not None and pot.s != 0.0:
        out = out - TWO_PI * pot.s * alpha_m(pot, m, x)
    return out


@dataclass(frozen=True)
class SectionDensity:
    """Log-magnitude profile of the lattice section m under a potential."""

    potential: SymplecticPotential
    m: tuple

    def log_magnitude(self, x) -> np.ndarray:
        return section_log_density(self.potential, self.m, x)

    def __call__(self, x) -> np.ndarray:
        return self.log_magnitude(x)


# -- moment <-> complex --------------------------------------------------------


def moment_to_log_complex(pot: SymplecticPotential, x, theta):
    """Return (y, theta) with y = grad g(x); the holomorphic coordinate is
    w = exp(2 pi (y + i theta))."""
    x = np.asarray(x, dtype=float)
    theta = np.asarray(theta, dtype=float)
    if not np.all(pot.polytope.contains(x, strict=True)):
        raise ValueError("moment point must be strictly interior")
    return pot.grad(x), theta


def moment_to_complex(pot: SymplecticPotential, x, theta) -> np.ndarray:
    y, theta = moment_to_log_complex(pot, x, theta)
    return np.exp(TWO_PI * (y + 1j * theta))


def complex_to_moment_log(pot: SymplecticPotential, y, theta,
                          tol: float = 1e-13, max_iter: int = 100):
    """Invert grad g(x) = y by damped Newton from the vertex barycenter."""
    y = np.atleast_2d(np.asarray(y, dtype=float))
    P = pot.polytope
    x = np.tile(P.barycenter(), (y.shape[0], 1))
    scale = np.maximum(1.0, np.abs(y).max(axis=-1))
    for _ in range(max_iter):
        r = pot.grad(x) - y
        rnorm = np.abs(r).max(axis=-1)
        if np.all(rnorm <= tol * scale):
            break
        step = -np.linalg.solve(pot.hess(x), r[..., None])[..., 0]
        alpha = np.ones(y.shape[0])
        active = rnorm > tol * scale
        for _ in range(60):
            xn = x + alpha[:, None] * step
            inside = P.contains(xn, strict=True)
            rn = np.full_like(rnorm, np.inf)
            if np.any(inside):
                rn_in = np.abs(pot.grad(xn[inside]) - y[inside]).max(axis=-1)
                rn[inside] = rn_in
            bad = active & (~inside | (rn > (1.0 - 1e-4 * alpha) * rnorm))
            if not np.any(bad):
                break
            alpha[bad] *= 0.5
        x = np.where(active[:, None], x + alpha[:, None] * step, x)
    else:
        raise ConvergenceError("moment-map inversion did not converge")
    theta = np.mod(np.asarray(theta, dtype=float), 1.0)
    return x, theta


def complex_to_moment(pot: SymplecticPotential, w):
    w = np.asarray(w, dtype=complex)
    if np.any(w == 0):
        raise ValueError("zero coordinate corresponds to a boundary point")
    y = np.log(np.abs(w)) / TWO_PI
    theta = np.mod(np.angle(w) / TWO_PI, 1.0)
    x, theta = complex_to_moment_log(pot, y, theta)
    if w.ndim == 1:
        return x[0], theta
    return x, theta


# -- quadrature -----------------------------------------------------------------


def polytope_grid(P: DelzantPolytope, per_axis: int):
    """Midpoint tensor grid on the bounding box, masked to the polytope.

    Returns (points, log_cell_volume) with points strictly off the walls up to
    measure zero.
    """
    box = P.bounding_box()
    axes = []
    vol = 0.0
    for lo, hi in box:
        h = (hi - lo) / per_axis
        axes.append(lo + h * (np.arange(per_axis) + 0.5))
        vol += np.log(h)
    mesh = np.meshgrid(*axes, indexing="ij")
    pts = np.stack([m.ravel() for m in mesh], axis=-1)
    mask = P.contains(pts, strict=True)
    return pts[mask], vol


def log_l1_norm(pot: SymplecticPotential, m, rel_tol: float = 1e-6,
                base: int = 64, max_points: int = 2_000_000):
    """log integral of the density over Delta (angle mass 1), with dyadic
    midpoint refinement; the last two levels give the error estimate."""
    prev = None
    per_axis = base
    dim = pot.polytope.dim
    while per_axis ** dim <= max_points:
        pts, logvol = polytope_grid(pot.polytope, per_axis)
        vals = section_log_density(pot, m, pts)
        cur = float(logsumexp(vals) + logvol)
        if prev is not None:
            err = abs(cur - prev)
            if err <= rel_tol:
                return cur, err
        prev = cur
        per_axis *= 2
    raise QuadratureError("relative tolerance not reached at maximum refinement")


# -- connection transport along fiber paths -------------------------------------


def transport_phase(xs, thetas) -> complex:
    """Parallel transport factor exp(2 pi i oint sum_i x_i dtheta_i) along the
    piecewise-linear path given by matching rows of xs, thetas."""
    xs = np.asarray(xs, dtype=float)
    thetas = np.asarray(thetas, dtype=float)
    if xs.shape != thetas.shape or xs.ndim != 2:
        raise ValueError("need matching (k, dim) arrays")
    mid = 0.5 * (xs[1:] + xs[:-1])
    dth = thetas[1:] - thetas[:-1]
    return complex(np.exp(2j * np.pi * np.sum(mid * dth)))


def holonomy(x, direction: int, k: int = 1, samples: int = 64) -> complex:
    """Holonomy of the prequantum connection around the theta_{direction}
    circle at moment point x, traversed k times."""
    x = np.asarray(x, dtype=float)
    t = np.linspace(0.0, float(k), samples + 1)
    thetas = np.zeros((samples + 1, x.size))
    thetas[:, direction] = t
    xs = np.tile(x, (samples + 1, 1))
    return transport_phase(xs, thetas)


def bohr_sommerfeld_test(x, tol: float = 1e-9) -> bool:
    x = np.asarray(x, dtype=float)
    return bool(np.all(np.abs(x - np.round(x)) < tol))
