"""Exact planar polyhedral convex geometry.

A :class:`PLConvexFunction` is a finite maximum of affine supports on a
convex polygon. Its Monge-Ampere measure is atomic and is read off the
lower hull of the dual points (p, -c): every dual face of positive area
sits over the point x where its supports tie, and x is the slope of the
face plane.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import DomainError, EvaluationError, GeometryError, PreconditionError
from .hull import (
    RTOL,
    all_exact,
    clip_halfplane,
    collinear_xy,
    convex_hull_2d,
    cross,
    is_exact_scalar,
    lower_hull,
    lower_hull_1d,
    shoelace,
    to_exact,
)

Point = tuple


def _num(v, exact: bool):
    return to_exact(v) if exact else float(v)


def _point(p, exact: bool) -> Point:
    return (_num(p[0], exact), _num(p[1], exact))


# ----------------------------------------------------------------------------
# polygons


@dataclass(frozen=True)
class ConvexPolygon:
    """Bounded convex polygon, stored counterclockwise without collinear vertices."""

    vertices: tuple

    def __post_init__(self):
        raw = [tuple(v) for v in self.vertices]
        if any(len(v) != 2 for v in raw):
            raise GeometryError("polygon vertices must be 2D points")
        exact = all(all_exact(v) for v in raw)
        pts = [_point(v, exact) for v in raw]
        if not exact and not all(math.isfinite(c) for v in pts for c in v):
            raise GeometryError("polygon vertices must be finite")
        hull = convex_hull_2d(pts, exact=exact)
        if len(hull) < 3:
            raise GeometryError("polygon has zero area")
        # the input must already be convex: every vertex is either a hull vertex or collinear
        if not exact:
            scale = max(abs(c) for v in pts for c in v) + 1.0
            eps = 1e-9 * scale * scale
        else:
            eps = 0
        n = len(pts)
        area = shoelace(pts)
        sign = 1 if area > 0 else -1
        for k in range(n):
            if sign * cross(pts[k - 1], pts[k], pts[(k + 1) % n]) < -eps:
                raise GeometryError("polygon is not convex")
        # start from the lexicographically smallest vertex for a canonical form
        k0 = hull.index(min(hull))
        object.__setattr__(self, "vertices", tuple(hull[k0:] + hull[:k0]))

    @classmethod
    def regular(cls, m: int = 256, center=(0.0, 0.0), radius: float = 1.0, phase: float = 0.0) -> "ConvexPolygon":
        """Regular m-gon inscribed in the circle of the given center and radius."""
        if m < 3:
            raise GeometryError("need at least 3 vertices")
        t = phase + 2 * np.pi * np.arange(m) / m
        return cls(tuple((center[0] + radius * math.cos(a), center[1] + radius * math.sin(a)) for a in t))

    @classmethod
    def box(cls, x0, y0, x1, y1) -> "ConvexPolygon":
        return cls(((x0, y0), (x1, y0), (x1, y1), (x0, y1)))

    @property
    def exact(self) -> bool:
        return is_exact_scalar(self.vertices[0][0])

    @property
    def n(self) -> int:
        return len(self.vertices)

    @cached_property
    def area(self):
        return shoelace(self.vertices)

    @cached_property
    def diameter(self) -> float:
        v = np.array([[float(a), float(b)] for a, b in self.vertices])
        d = v[:, None, :] - v[None, :, :]
        return float(np.sqrt((d**2).sum(-1)).max())

    def as_array(self) -> np.ndarray:
        return np.array([[float(a), float(b)] for a, b in self.vertices])

    def edges(self):
        v = self.vertices
        return [(v[k], v[(k + 1) % len(v)]) for k in range(len(v))]

    def _scale(self) -> float:
        return max(abs(float(c)) for v in self.vertices for c in v) + 1.0

    def contains(self, x, strict: bool = False) -> bool:
        """Membership in the closed polygon (or the open one when ``strict``)."""
        exact = self.exact and all_exact(x)
        eps = 0 if exact else 1e-12 * self._scale() ** 2
        for a, b in self.edges():
            c = cross(a, b, x)
            if strict and c <= eps:
                return False
            if not strict and c < -eps:
                return False
        return True

    def contains_array(self, X: np.ndarray, strict: bool = False, tol: float = 1e-12) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        v = self.as_array()
        w = np.roll(v, -1, axis=0)
        eps = tol * self._scale() ** 2
        inside = np.ones(X.shape[:-1], dtype=bool)
        for a, b in zip(v, w):
            c = (b[0] - a[0]) * (X[..., 1] - a[1]) - (b[1] - a[1]) * (X[..., 0] - a[0])
            inside &= (c > eps) if strict else (c >= -eps)
        return inside

    def boundary_distance(self, x) -> float:
        """Euclidean distance from an interior point to the boundary."""
        x = np.asarray([float(x[0]), float(x[1])])
        best = math.inf
        for a, b in self.edges():
            a = np.array([float(a[0]), float(a[1])])
            b = np.array([float(b[0]), float(b[1])])
            d = b - a
            t = np.clip(np.dot(x - a, d) / np.dot(d, d), 0.0, 1.0)
            best = min(best, float(np.linalg.norm(x - a - t * d)))
        return best

    def translate(self, t) -> "ConvexPolygon":
        return ConvexPolygon(tuple((a + t[0], b + t[1]) for a, b in self.vertices))

    def to_json(self) -> list:
        return [[float(a), float(b)] for a, b in self.vertices]


# ----------------------------------------------------------------------------
# affine supports and PL convex functions


@dataclass(frozen=True)
class AffineSupport:
    """The affine function x -> p.x + c."""

    p: tuple
    c: object

    def __post_init__(self):
        if len(self.p) != 2:
            raise PreconditionError("gradient must be 2D")
        vals = [self.p[0], self.p[1], self.c]
        exact = all_exact(vals)
        if not exact and not all(math.isfinite(float(v)) for v in vals):
            raise PreconditionError("support entries must be finite")
        object.__setattr__(self, "p", _point(self.p, exact))
        object.__setattr__(self, "c", _num(self.c, exact))

    @property
    def exact(self) -> bool:
        return is_exact_scalar(self.c)

    def __call__(self, x):
        return self.p[0] * x[0] + self.p[1] * x[1] + self.c


@dataclass(frozen=True)
class Cell:
    """Region of the domain where one support attains the maximum."""

    support: int
    polygon: tuple

    @property
    def area(self):
        return shoelace(self.polygon)


@dataclass(frozen=True)
class SubdifferentialCell:
    """conv of active gradients at ``x``; one point, a segment or a polygon."""

    x: Point
    polygon: tuple

    @property
    def area(self):
        return abs(shoelace(self.polygon)) if len(self.polygon) >= 3 else 0

    @property
    def dim(self) -> int:
        return min(len(self.polygon) - 1, 2)

    def contains(self, q, tol: float = 1e-12) -> bool:
        P = self.polygon
        if len(P) == 1:
            return all(abs(float(q[k] - P[0][k])) <= tol for k in range(2))
        if len(P) == 2:
            a, b = P
            if abs(float(cross(a, b, q))) > tol * (1 + float(abs(b[0] - a[0]) + abs(b[1] - a[1]))):
                return False
            t = float((q[0] - a[0]) * (b[0] - a[0]) + (q[1] - a[1]) * (b[1] - a[1]))
            return -tol <= t <= float((b[0] - a[0]) ** 2 + (b[1] - a[1]) ** 2) + tol
        return all(float(cross(P[k], P[(k + 1) % len(P)], q)) >= -tol for k in range(len(P)))


@dataclass(frozen=True)
class Atom:
    point: Point
    mass: object


@dataclass(frozen=True)
class AtomicMeasure:
    """Finite sum of point masses."""

    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(tuple(a[0]), a[1]) for a in self.atoms)
        for a in atoms:
            if a.mass < 0:
                raise PreconditionError("atom masses must be nonnegative")
        if len({a.point for a in atoms}) != len(atoms):
            raise PreconditionError("atom points must be pairwise distinct")
        object.__setattr__(self, "atoms", tuple(sorted(atoms, key=lambda a: a.point)))

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def total(self):
        return sum((a.mass for a in self.atoms), 0)

    @property
    def points(self) -> np.ndarray:
        return np.array([[float(a.point[0]), float(a.point[1])] for a in self.atoms]).reshape(-1, 2)

    @property
    def masses(self) -> np.ndarray:
        return np.array([float(a.mass) for a in self.atoms])

    def to_json(self) -> dict:
        return {"atoms": [{"x": [float(a.point[0]), float(a.point[1])], "mass": float(a.mass)} for a in self.atoms]}

    @classmethod
    def from_json(cls, data: dict) -> "AtomicMeasure":
        return cls(tuple(Atom((float(a["x"][0]), float(a["x"][1])), float(a["mass"])) for a in data["atoms"]))


@dataclass(frozen=True)
class _DualFace:
    x: Point  # where the supports tie
    value: object  # u(x)
    members: tuple  # support indices on the face
    gradients: tuple  # hull of their gradients, ccw
    ring: tuple  # support indices at those hull corners


class PLConvexFunction:
    """max_k (p_k . x + c_k) restricted to a convex polygon.

    Supports are canonicalized on construction: duplicates are merged and
    supports without a positive-area cell in the domain are dropped, then
    the rest is sorted by (p, c).
    """

    def __init__(self, domain: ConvexPolygon, supports: Iterable, *, _trusted: bool = False):
        sup = [s if isinstance(s, AffineSupport) else AffineSupport(tuple(s[0]), s[1]) for s in supports]
        if not sup:
            raise PreconditionError("need at least one support")
        exact = domain.exact and all(s.exact for s in sup)
        if not exact:
            sup = [AffineSupport(s.p, float(s.c)) for s in sup]
            if domain.exact:
                domain = ConvexPolygon(tuple((float(a), float(b)) for a, b in domain.vertices))
        self.domain = domain
        self.exact = exact
        struct = None
        if not _trusted:
            sup, struct = _canonical_supports(domain, sup, exact)
        self.supports = tuple(sorted(sup, key=lambda s: (s.p, s.c)))
        if struct is not None and struct.order == self.supports:
            self.__dict__["_structure"] = struct

    @classmethod
    def from_arrays(cls, domain: ConvexPolygon, P: np.ndarray, c: np.ndarray, trusted: bool = False):
        sup = [AffineSupport((float(p[0]), float(p[1])), float(ci)) for p, ci in zip(P, c)]
        return cls(domain, sup, _trusted=trusted)

    def __repr__(self) -> str:
        return f"PLConvexFunction(n_supports={len(self.supports)}, exact={self.exact})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, PLConvexFunction)
            and self.domain == other.domain
            and self.supports == other.supports
        )

    def __hash__(self):
        return hash((self.domain, self.supports))

    @cached_property
    def gradients(self) -> np.ndarray:
        return np.array([[float(s.p[0]), float(s.p[1])] for s in self.supports])

    @cached_property
    def offsets(self) -> np.ndarray:
        return np.array([float(s.c) for s in self.supports])

    def __call__(self, X) -> np.ndarray:
        """Vectorized float evaluation (no domain check)."""
        X = np.asarray(X, dtype=float)
        flat = X.reshape(-1, 2)
        out = np.full(len(flat), -np.inf)
        G, c = self.gradients, self.offsets
        step = max(1, 2_000_000 // max(1, len(G)))
        for s in range(0, len(flat), step):
            blk = flat[s : s + step]
            out[s : s + step] = (blk @ G.T + c).max(axis=1)
        return out.reshape(X.shape[:-1])

    # lazily computed structure -------------------------------------------------

    @cached_property
    def _structure(self) -> "_DualStructure":
        return _dual_structure(self.supports, self.exact)

    @property
    def _dual(self) -> list[_DualFace]:
        return self._structure.faces

    @property
    def neighbours(self) -> dict[int, set[int]]:
        return self._structure.neighbours

    @cached_property
    def cells(self) -> tuple[Cell, ...]:
        out = []
        for k in range(len(self.supports)):
            poly = _cell_polygon(self.domain, self.supports, k, self.neighbours.get(k, ()), self.exact)
            out.append(Cell(k, tuple(poly)))
        return tuple(out)

    def vertices(self) -> list[Point]:
        """Cell-complex vertices: cell corners, including domain corners."""
        seen = {}
        for cell in self.cells:
            for v in cell.polygon:
                key = v if self.exact else (round(float(v[0]), 12), round(float(v[1]), 12))
                seen.setdefault(key, v)
        return list(seen.values())

    def edges(self) -> list[tuple[int, int, Point, Point]]:
        """Interior edges (i, j, start, end) between cells of supports i < j."""
        out = []
        for i, js in self.neighbours.items():
            for j in js:
                if j <= i:
                    continue
                seg = _shared_edge(self.cells[i].polygon, self.supports[i], self.supports[j], self.exact)
                if seg is not None:
                    out.append((i, j, seg[0], seg[1]))
        return out

    def to_json(self) -> dict:
        return {
            "domain": self.domain.to_json(),
            "supports": [{"p": [float(s.p[0]), float(s.p[1])], "c": float(s.c)} for s in self.supports],
        }

    @classmethod
    def from_json(cls, data: dict) -> "PLConvexFunction":
        dom = ConvexPolygon(tuple((float(a), float(b)) for a, b in data["domain"]))
        sup = [AffineSupport((float(s["p"][0]), float(s["p"][1])), float(s["c"])) for s in data["supports"]]
        return cls(dom, sup)

    def dumps(self) -> str:
        return json.dumps(self.to_json())


@dataclass
class _DualStructure:
    order: tuple
    faces: list
    neighbours: dict


def _canonical_supports(domain: ConvexPolygon, sup: list[AffineSupport], exact: bool):
    # identical gradients: only the largest offset can ever be active
    best: dict = {}
    for s in sup:
        key = s.p if exact else (round(s.p[0], 12) + 0.0, round(s.p[1], 12) + 0.0)
        if key not in best or s.c > best[key].c:
            best[key] = s
    sup = sorted(best.values(), key=lambda s: (s.p, s.c))
    struct = _dual_structure(tuple(sup), exact)
    if len(sup) == 1:
        return sup, struct
    # a corner of a dual face whose tie point is interior has a positive-area cell
    sure = set()
    for f in struct.faces:
        if domain.contains(f.x, strict=True):
            sure.update(f.ring)
    amin = 0 if exact else 1e-12 * float(domain.area)
    keep = []
    for k in range(len(sup)):
        if k not in struct.neighbours:
            continue
        if k not in sure:
            poly = _cell_polygon(domain, sup, k, struct.neighbours[k], exact)
            if len(poly) < 3 or shoelace(poly) <= amin:
                continue
        keep.append(sup[k])
    if not keep:
        raise GeometryError("no support has a positive-area cell")
    if len(keep) == len(sup):
        return keep, struct
    return keep, None


def _dual_points(sup, exact):
    return [(s.p[0], s.p[1], -s.c) for s in sup]


def _dual_structure(sup: tuple, exact: bool) -> _DualStructure:
    """Dual lower-hull faces and the adjacency of supports in the plane."""
    n = len(sup)
    if n == 1:
        return _DualStructure(sup, [], {0: set()})
    pts = _dual_points(sup, exact)
    xy = [p[:2] for p in pts]
    nb: dict[int, set[int]] = {}
    if collinear_xy(xy, exact):
        o = xy[0]
        far = max(range(n), key=lambda k: abs(float(xy[k][0] - o[0])) + abs(float(xy[k][1] - o[1])))
        d = (xy[far][0] - o[0], xy[far][1] - o[1])
        t = [(q[0] - o[0]) * d[0] + (q[1] - o[1]) * d[1] for q in xy]
        order = lower_hull_1d(t, [p[2] for p in pts], exact)
        for k in order:
            nb[k] = set()
        for a, b in zip(order, order[1:]):
            nb[a].add(b)
            nb[b].add(a)
        return _DualStructure(sup, [], nb)
    index = {}
    for m, q in enumerate(xy):
        index.setdefault(q, m)
    faces = []
    for f in lower_hull(pts, exact=exact):
        a1, a2, b = f.plane
        ring = convex_hull_2d([xy[m] for m in f.vertices], exact=exact)
        ids = [_lookup(index, q, xy, f.vertices, exact) for q in ring]
        for k in ids:
            nb.setdefault(k, set())
        for a, c in zip(ids, ids[1:] + ids[:1]):
            if a != c:
                nb[a].add(c)
                nb[c].add(a)
        faces.append(_DualFace((a1, a2), -b, f.vertices, tuple(ring), tuple(ids)))
    return _DualStructure(sup, faces, nb)


def _lookup(index, q, xy, candidates, exact):
    if q in index:
        return index[q]
    for m in candidates:
        if abs(float(xy[m][0] - q[0])) + abs(float(xy[m][1] - q[1])) < 1e-12:
            return m
    raise GeometryError("dual hull vertex lookup failed")


def _cell_polygon(domain, sup, k, nbrs, exact) -> list:
    poly = list(domain.vertices)
    si = sup[k]
    eps = 0 if exact else 1e-13 * (domain._scale() ** 2)
    for j in sorted(nbrs):
        sj = sup[j]
        a = (si.p[0] - sj.p[0], si.p[1] - sj.p[1])
        poly = clip_halfplane(poly, a, si.c - sj.c, exact, eps)
        if len(poly) < 3:
            return []
    return poly


def _shared_edge(poly, si, sj, exact):
    """Portion of the boundary of ``poly`` where supports si and sj agree."""
    eps = 0 if exact else 1e-9 * (1 + max(abs(float(v)) for q in poly for v in q))
    on = [q for q in poly if abs(si(q) - sj(q)) <= eps]
    if len(on) < 2:
        return None
    on = sorted(set(on))
    a, b = on[0], on[-1]
    if a == b:
        return None
    return a, b


# ----------------------------------------------------------------------------
# operations


def _check_in_domain(u: PLConvexFunction, x):
    if not u.domain.contains(x):
        raise DomainError(f"point {tuple(map(float, x))} lies outside the domain")


def evaluate(u: PLConvexFunction, x):
    """u(x) = max_k p_k.x + c_k for x in the closed domain."""
    x = _point(x, u.exact and all_exact(x))
    _check_in_domain(u, x)
    return max(s(x) for s in u.supports)


def active_supports(u: PLConvexFunction, x) -> list[int]:
    exact = u.exact and all_exact(x)
    vals = [s(x) for s in u.supports]
    top = max(vals)
    if exact:
        return [k for k, v in enumerate(vals) if v == top]
    scale = 1.0 + abs(float(top)) + max(
        abs(float(s.p[0] * x[0])) + abs(float(s.p[1] * x[1])) + abs(float(s.c)) for s in u.supports
    )
    return [k for k, v in enumerate(vals) if float(top - v) <= RTOL * scale]


def subdifferential(u: PLConvexFunction, x) -> SubdifferentialCell:
    """Hull of the gradients of the supports attaining the maximum at x."""
    exact = u.exact and all_exact(x)
    x = _point(x, exact)
    _check_in_domain(u, x)
    act = active_supports(u, x)
    grads = [u.supports[k].p for k in act]
    return SubdifferentialCell(x, tuple(convex_hull_2d(grads, exact=exact)))


def ma_atoms(u: PLConvexFunction) -> AtomicMeasure:
    """Monge-Ampere measure of u: one atom per interior vertex, mass = subdifferential area."""
    atoms = []
    for face in u._dual:
        if len(face.gradients) < 3:
            continue
        if not u.domain.contains(face.x, strict=True):
            continue
        mass = shoelace(face.gradients)
        if mass > 0:
            atoms.append(Atom(face.x, mass))
    return AtomicMeasure(tuple(atoms))


def ma_integral(u: PLConvexFunction, phi: Callable) -> object:
    """Integral of phi against the Monge-Ampere measure of u."""
    total = 0
    for a in ma_atoms(u).atoms:
        w = phi(a.point)
        try:
            ok = math.isfinite(float(w))
        except (TypeError, ValueError):
            ok = False
        if not ok:
            raise EvaluationError(f"phi is not finite at atom {a.point}")
        total = total + w * a.mass
    return total


def first_moment(u: PLConvexFunction) -> Point:
    """sum of mass * point over the atoms of mu_u."""
    sx, sy = 0, 0
    for a in ma_atoms(u).atoms:
        sx = sx + a.mass * a.point[0]
        sy = sy + a.mass * a.point[1]
    return (sx, sy)


def gradient_hull_area(u: PLConvexFunction):
    """Area of conv of all support gradients (the mass of mu_u on the closed domain)."""
    hull = convex_hull_2d([s.p for s in u.supports], exact=u.exact)
    return shoelace(hull) if len(hull) >= 3 else 0


def translate(u: PLConvexFunction, t) -> PLConvexFunction:
    """The function x -> u(x - t) on the translated domain."""
    sup = [AffineSupport(s.p, s.c - s.p[0] * t[0] - s.p[1] * t[1]) for s in u.supports]
    return PLConvexFunction(u.domain.translate(t), sup)


def affine(domain: ConvexPolygon, p=(0, 0), c=0) -> PLConvexFunction:
    return PLConvexFunction(domain, [AffineSupport(tuple(p), c)])


def pyramid(domain: ConvexPolygon | None = None, apex=(0, 0), depth=1) -> PLConvexFunction:
    """max(|x1 - a1|, |x2 - a2|) - depth on a square centred at the apex."""
    a1, a2 = apex
    if domain is None:
        domain = ConvexPolygon.box(a1 - 1, a2 - 1, a1 + 1, a2 + 1)
    sup = []
    for p in ((1, 0), (-1, 0), (0, 1), (0, -1)):
        sup.append(AffineSupport(p, -depth - p[0] * a1 - p[1] * a2))
    return PLConvexFunction(domain, sup)


def load_plconvex(path) -> PLConvexFunction:
    with open(path) as fh:
        return PLConvexFunction.from_json(json.load(fh))
