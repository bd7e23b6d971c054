"""Facet presentations of lattice polytopes, Gelfand-Cetlin patterns and counts.

A polytope is stored as {p : <p, r_j> + c_j >= 0} with primitive integer
normals r_j.  Everything at this scale is exact: support values at integer
points, lattice enumeration, and the Weyl dimension count are all integer
arithmetic.
"""

from __future__ import annotations

import itertools
import json
from dataclasses import dataclass, field
from fractions import Fraction
from math import gcd, inf

import numpy as np

__all__ = [
    "Facet",
    "DelzantPolytope",
    "GCPattern",
    "UnboundedPolytopeError",
    "interval",
    "simplex_polytope",
    "box_polytope",
    "product_polytope",
    "gc_weight",
    "gc_variable_names",
    "gc_polytope",
    "ambient_polytope",
    "weyl_dim",
    "lattice_points",
    "polytope_to_json",
    "polytope_from_json",
]


class UnboundedPolytopeError(ValueError):
    pass


@dataclass(frozen=True)
class Facet:
    """One affine wall  x -> <x, normal> + offset >= 0."""

    normal: tuple[int, ...]
    offset: int
    label: str = ""

    def __post_init__(self):
        if not any(self.normal):
            raise ValueError("facet normal must be nonzero")
        g = 0
        for a in self.normal:
            g = gcd(g, a)
        if g != 1:
            raise ValueError(f"facet normal {self.normal} is not primitive")


@dataclass(frozen=True)
class DelzantPolytope:
    """Facet-presented polytope in R^dim.  Delzant-ness is checked, not assumed."""

    dim: int
    facets: tuple[Facet, ...]
    labels: tuple[str, ...] = field(default=())

    def __post_init__(self):
        for f in self.facets:
            if len(f.normal) != self.dim:
                raise ValueError("facet dimension mismatch")
        if self.labels and len(self.labels) != self.dim:
            raise ValueError("need one label per coordinate")
        if not self.labels:
            object.__setattr__(self, "labels", tuple(f"x{i+1}" for i in range(self.dim)))

    # -- basic geometry ----------------------------------------------------

    @property
    def normal_matrix(self) -> np.ndarray:
        return np.array([f.normal for f in self.facets], dtype=float)

    @property
    def offsets(self) -> np.ndarray:
        return np.array([f.offset for f in self.facets], dtype=float)

    def support_values(self, p) -> np.ndarray:
        """All l_j(p) = <p, r_j> + c_j, batched over leading axes of p."""
        p = np.asarray(p, dtype=float)
        return p @ self.normal_matrix.T + self.offsets

    def support_value(self, p, j: int) -> float:
        f = self.facets[j]
        return float(np.dot(p, f.normal) + f.offset)

    def support_values_exact(self, p: tuple[int, ...]) -> list[int]:
        return [sum(a * b for a, b in zip(f.normal, p)) + f.offset for f in self.facets]

    def contains(self, p, tol: float = 0.0, strict: bool = False) -> np.ndarray | bool:
        vals = self.support_values(p)
        ok = (vals > tol).all(axis=-1) if strict else (vals >= -tol).all(axis=-1)
        return bool(ok) if ok.ndim == 0 else ok

    def facet_by_label(self, label: str) -> Facet:
        for f in self.facets:
            if f.label == label:
                return f
        raise KeyError(label)

    # -- exact bounds and enumeration --------------------------------------

    def _interval_bounds(self) -> list[tuple[Fraction, Fraction]]:
        """Fixpoint interval propagation through the facet system, exact."""
        lo = [-inf] * self.dim
        hi = [inf] * self.dim
        for _ in range(64 * self.dim + 64):
            changed = False
            for f in self.facets:
                for i, ri in enumerate(f.normal):
                    if ri == 0:
                        continue
                    # bound on x_i given box bounds on the other coordinates
                    rest = Fraction(f.offset)
                    ok = True
                    for j, rj in enumerate(f.normal):
                        if j == i or rj == 0:
                            continue
                        b = hi[j] if rj > 0 else lo[j]
                        if b in (inf, -inf):
                            ok = False
                            break
                        rest += rj * Fraction(b)
                    if not ok:
                        continue
                    if ri > 0:
                        cand = -rest / ri
                        if lo[i] == -inf or cand > lo[i]:
                            lo[i] = cand
                            changed = True
                    else:
                        cand = -rest / ri
                        if hi[i] == inf or cand < hi[i]:
                            hi[i] = cand
                            changed = True
            if not changed:
                break
        if any(b == -inf for b in lo) or any(b == inf for b in hi):
            raise UnboundedPolytopeError("interval propagation did not bound the polytope")
        if any(l > h for l, h in zip(lo, hi)):
            raise ValueError("empty polytope")
        return list(zip(lo, hi))

    def bounding_box(self) -> list[tuple[float, float]]:
        return [(float(a), float(b)) for a, b in self._interval_bounds()]

    def lattice_points(self) -> list[tuple[int, ...]]:
        """All integer points, lex-sorted.  Recursive bound propagation, exact."""
        bounds = self._interval_bounds()
        facets = self.facets
        dim = self.dim
        out: list[tuple[int, ...]] = []
        point = [0] * dim

        def ceil_frac(x: Fraction) -> int:
            return -((-x.numerator) // x.denominator)

        def floor_frac(x: Fraction) -> int:
            return x.numerator // x.denominator

        def recurse(k: int):
            if k == dim:
                out.append(tuple(point))
                return
            lo_k = bounds[k][0]
            hi_k = bounds[k][1]
            # tighten with every facet: fixed prefix exact, suffix via box bounds
            for f in facets:
                rk = f.normal[k]
                if rk == 0:
                    continue
                rest = Fraction(f.offset)
                for j, rj in enumerate(f.normal):
                    if j == k or rj == 0:
                        continue
                    if j < k:
                        rest += rj * point[j]
                    else:
                        rest += rj * (bounds[j][1] if rj > 0 else bounds[j][0])
                if rk > 0:
                    cand = -rest / rk
                    if cand > lo_k:
                        lo_k = cand
                else:
                    cand = -rest / rk
                    if cand < hi_k:
                        hi_k = cand
            for v in range(ceil_frac(Fraction(lo_k)), floor_frac(Fraction(hi_k)) + 1):
                point[k] = v
                # prune with facets fully determined by the prefix
                feasible = True
                for f in facets:
                    if any(f.normal[j] for j in range(k + 1, dim)):
                        continue
                    s = f.offset + sum(f.normal[j] * point[j] for j in range(k + 1))
                    if s < 0:
                        feasible = False
                        break
                if feasible:
                    recurse(k + 1)

        recurse(0)
        return out

    # -- vertices and the Delzant test --------------------------------------

    def vertices(self, tol: float = 1e-9) -> np.ndarray:
        """Brute-force vertex enumeration.  Only sensible for dim <= 6."""
        if self.dim > 6:
            raise ValueError("vertex enumeration limited to dimension <= 6")
        R = self.normal_matrix
        c = self.offsets
        verts: list[np.ndarray] = []
        for idx in itertools.combinations(range(len(self.facets)), self.dim):
            A = R[list(idx)]
            b = -c[list(idx)]
            if abs(np.linalg.det(A)) < 1e-12:
                continue
            v = np.linalg.solve(A, b)
            if not self.contains(v, tol=tol):
                continue
            if not any(np.max(np.abs(v - w)) < 1e-8 for w in verts):
                verts.append(v)
        if not verts:
            raise ValueError("no vertices found (empty or unbounded input)")
        order = np.lexsort(np.array(verts).T[::-1])
        return np.array(verts)[order]

    def barycenter(self) -> np.ndarray:
        return self.vertices().mean(axis=0)

    def is_delzant(self, tol: float = 1e-9) -> tuple[bool, str]:
        """Check the unimodular-vertex condition exhaustively.

        Returns (ok, reason).  Fails with a reason on non-simple vertices or
        non-unimodular normal sets; callers that only need containment or
        counting are expected to skip this check.
        """
        verts = self.vertices(tol=tol)
        R = self.normal_matrix
        c = self.offsets
        for v in verts:
            active = [j for j in range(len(self.facets)) if abs(R[j] @ v + c[j]) < 1e-7]
            if len(active) != self.dim:
                return False, f"vertex {np.round(v, 6).tolist()} meets {len(active)} facets"
            M = np.array([self.facets[j].normal for j in active], dtype=float)
            det = round(float(np.linalg.det(M)))
            if abs(det) != 1:
                return False, f"vertex {np.round(v, 6).tolist()} has normal det {det}"
        return True, "all vertices simple and unimodular"


def lattice_points(polytope: DelzantPolytope) -> list[tuple[int, ...]]:
    return polytope.lattice_points()


# -- constructors -----------------------------------------------------------


def interval(lo: int, hi: int, label: str = "x1") -> DelzantPolytope:
    if hi <= lo:
        raise ValueError("need lo < hi")
    return DelzantPolytope(
        1,
        (
            Facet((1,), -lo, f"{label}>={lo}"),
            Facet((-1,), hi, f"{label}<={hi}"),
        ),
        (label,),
    )


def simplex_polytope(dim: int, scale: int, prefix: str = "x") -> DelzantPolytope:
    """scale * standard simplex: x_i >= 0, scale - sum x_i >= 0."""
    if dim < 1 or scale < 1:
        raise ValueError("need dim >= 1 and scale >= 1")
    facets = [
        Facet(tuple(1 if j == i else 0 for j in range(dim)), 0, f"{prefix}{i+1}>=0")
        for i in range(dim)
    ]
    facets.append(Facet((-1,) * dim, scale, f"sum<={scale}"))
    labels = tuple(f"{prefix}{i+1}" for i in range(dim))
    return DelzantPolytope(dim, tuple(facets), labels)


def box_polytope(sides: list[tuple[int, int]]) -> DelzantPolytope:
    parts = [interval(lo, hi, f"x{i+1}") for i, (lo, hi) in enumerate(sides)]
    return product_polytope(parts)


def product_polytope(factors: list[DelzantPolytope]) -> DelzantPolytope:
    """Block-diagonal product; labels get a per-factor prefix when they clash."""
    dim = sum(P.dim for P in factors)
    facets: list[Facet] = []
    labels: list[str] = []
    seen = set()
    offset = 0
    for k, P in enumerate(factors):
        for f in P.facets:
            normal = (0,) * offset + f.normal + (0,) * (dim - offset - P.dim)
            label = f.label if f.label not in seen else f"f{k+1}:{f.label}"
            seen.add(label)
            facets.append(Facet(normal, f.offset, label))
        for lab in P.labels:
            labels.append(lab if lab not in labels else f"f{k+1}_{lab}")
        offset += P.dim
    return DelzantPolytope(dim, tuple(facets), tuple(labels))


# -- Gelfand-Cetlin ----------------------------------------------------------


def gc_weight(a) -> tuple[int, ...]:
    """lambda_i = sum_{k >= i} a_k, with lambda_n = 0 appended."""
    a = tuple(int(x) for x in a)
    if any(x <= 0 for x in a):
        raise ValueError("weights a must be positive integers")
    lam = tuple(sum(a[i:]) for i in range(len(a))) + (0,)
    return lam


def _var_index(l: int, j: int) -> int:
    # row-major over rows l = 1..n-1, entries j = 1..l
    return l * (l - 1) // 2 + (j - 1)


def gc_variable_names(n: int) -> tuple[str, ...]:
    return tuple(f"lam{l}_{j}" for l in range(1, n) for j in range(1, l + 1))


def gc_polytope(n: int, a) -> DelzantPolytope:
    """Interlacing polytope of patterns below the fixed top row lambda(a).

    Coordinates are (lam_l^j) for 1 <= j <= l <= n-1, row-major with l
    increasing; row n is pinned to lambda_i = sum_{k>=i} a_k, lambda_n = 0.
    Facets: lam_{l+1}^j >= lam_l^j and lam_l^j >= lam_{l+1}^{j+1}.
    """
    if len(tuple(a)) != n - 1:
        raise ValueError("need n-1 weights")
    lam = gc_weight(a)
    d = n * (n - 1) // 2
    facets: list[Facet] = []
    for l in range(1, n):
        for j in range(1, l + 1):
            # upper neighbour: lam_{l+1}^j - lam_l^j >= 0
            normal = [0] * d
            normal[_var_index(l, j)] = -1
            if l + 1 <= n - 1:
                normal[_var_index(l + 1, j)] = 1
                off = 0
            else:
                off = lam[j - 1]
            facets.append(Facet(tuple(normal), off, f"lam{l+1}_{j}>=lam{l}_{j}"))
            # lower neighbour: lam_l^j - lam_{l+1}^{j+1} >= 0
            normal = [0] * d
            normal[_var_index(l, j)] = 1
            if l + 1 <= n - 1:
                normal[_var_index(l + 1, j + 1)] = -1
                off = 0
            else:
                off = -lam[j]
            facets.append(Facet(tuple(normal), off, f"lam{l}_{j}>=lam{l+1}_{j+1}"))
    return DelzantPolytope(d, tuple(facets), gc_variable_names(n))


def ambient_polytope(n: int, a) -> DelzantPolytope:
    """Moment polytope of prod_l P(wedge^l C^n) with weights a: product of
    scaled simplices a_l * Delta^(C(n,l)-1)."""
    from math import comb

    a = tuple(int(x) for x in a)
    if len(a) != n - 1:
        raise ValueError("need n-1 weights")
    factors = [simplex_polytope(comb(n, l) - 1, a[l - 1], prefix=f"x{l}_") for l in range(1, n)]
    return product_polytope(factors)


@dataclass(frozen=True)
class GCPattern:
    """Triangular array of rows 1..n (row l has l entries, weakly interlacing)."""

    rows: tuple[tuple[float, ...], ...]

    def __post_init__(self):
        for l, row in enumerate(self.rows, start=1):
            if len(row) != l:
                raise ValueError("row l must have l entries")

    @property
    def n(self) -> int:
        return len(self.rows)

    def interlacing_ok(self, tol: float = 0.0) -> bool:
        for l in range(len(self.rows) - 1):
            hi, lo = self.rows[l + 1], self.rows[l]
            for j in range(l + 1):
                if lo[j] > hi[j] + tol or hi[j + 1] > lo[j] + tol:
                    return False
        return True

    def flatten(self, drop_top: bool = True) -> np.ndarray:
        """Row-major vector over rows 1..n-1 (polytope variable order)."""
        rows = self.rows[:-1] if drop_top else self.rows
        return np.array([x for row in rows for x in row], dtype=float)

    @staticmethod
    def from_flat(vec, top_row) -> "GCPattern":
        vec = list(vec)
        rows: list[tuple[float, ...]] = []
        k = 0
        l = 1
        while k < len(vec):
            rows.append(tuple(vec[k : k + l]))
            k += l
            l += 1
        rows.append(tuple(top_row))
        if len(rows[-1]) != len(rows):
            raise ValueError("flat vector length does not match top row")
        return GCPattern(tuple(rows))


# -- counting ----------------------------------------------------------------


def weyl_dim(lam) -> int:
    """prod_{i<j} (lam_i - lam_j + j - i)/(j - i), exact integer."""
    lam = tuple(int(x) for x in lam)
    if any(lam[i] < lam[i + 1] for i in range(len(lam) - 1)):
        raise ValueError("lambda must be weakly decreasing")
    num = 1
    den = 1
    n = len(lam)
    for i in range(n):
        for j in range(i + 1, n):
            num *= lam[i] - lam[j] + j - i
            den *= j - i
    q, r = divmod(num, den)
    assert r == 0, "Weyl product must be integral"
    return q


# -- serialization -----------------------------------------------------------


def polytope_to_json(P: DelzantPolytope) -> str:
    data = {
        "dim": P.dim,
        "labels": list(P.labels),
        "facets": [
            {"normal": list(f.normal), "offset": f.offset, "label": f.label}
            for f in P.facets
        ],
    }
    return json.dumps(data, indent=2, sort_keys=True)


def polytope_from_json(text: str) -> DelzantPolytope:
    data = json.loads(text)
    facets = tuple(
        Facet(tuple(f["normal"]), int(f["offset"]), f.get("label", ""))
        for f in data["facets"]
    )
    return DelzantPolytope(int(data["dim"]), facets, tuple(data["labels"]))
