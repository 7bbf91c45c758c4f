"""Convex-function operators: lifting, Legendre probes, upper smoothing, Alexandrov gaps."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import DomainError, ParameterError, PreconditionError
from .geom import (
    AffineSupport,
    ConvexPolygon,
    PLConvexFunction,
    active_supports,
    ma_atoms,
)
from .grid import GridField
from .hull import all_exact, convex_hull_2d, lower_hull, to_exact


@dataclass(frozen=True)
class LiftSpec:
    """Data u|_K on K = boundary vertices plus finitely many interior points."""

    boundary: tuple  # ((x, y), value) pairs, in polygon order
    interior: tuple = ()

    def __post_init__(self):
        b = tuple((tuple(x), v) for x, v in self.boundary)
        i = tuple((tuple(x), v) for x, v in self.interior)
        for _, v in b + i:
            if not all_exact([v]) and not math.isfinite(float(v)):
                raise PreconditionError("lift data must be finite")
        object.__setattr__(self, "boundary", b)
        object.__setattr__(self, "interior", i)
        dom = self.domain
        for x, _ in i:
            if not dom.contains(x, strict=True):
                raise DomainError(f"interior point {x} is not strictly inside the domain")

    @property
    def domain(self) -> ConvexPolygon:
        return ConvexPolygon(tuple(x for x, _ in self.boundary))

    @property
    def exact(self) -> bool:
        return all(all_exact([*x, v]) for x, v in self.boundary + self.interior)

    @classmethod
    def on_polygon(cls, domain: ConvexPolygon, values=0, interior: Sequence = ()) -> "LiftSpec":
        vals = values if isinstance(values, (list, tuple)) else [values] * domain.n
        return cls(tuple(zip(domain.vertices, vals)), tuple((tuple(x), v) for x, v in interior))

    def to_json(self) -> dict:
        return {
            "boundary": [{"x": [float(x[0]), float(x[1])], "v": float(v)} for x, v in self.boundary],
            "interior": [{"x": [float(x[0]), float(x[1])], "v": float(v)} for x, v in self.interior],
        }

    @classmethod
    def from_json(cls, data: dict) -> "LiftSpec":
        conv = lambda rows: tuple(((float(r["x"][0]), float(r["x"][1])), float(r["v"])) for r in rows)
        return cls(conv(data["boundary"]), conv(data.get("interior", [])))


def lift(spec: LiftSpec) -> PLConvexFunction:
    """L_K u: the lower convex hull of the data points, as a PL convex function."""
    exact = spec.exact
    pts = [(x[0], x[1], v) for x, v in spec.boundary + spec.interior]
    if exact:
        pts = [tuple(to_exact(c) for c in p) for p in pts]
    facets = lower_hull(pts, exact=exact)
    sup = [AffineSupport((f.plane[0], f.plane[1]), f.plane[2]) for f in facets]
    domain = spec.domain
    if not exact and domain.exact:
        domain = ConvexPolygon(tuple((float(a), float(b)) for a, b in domain.vertices))
    # every lower facet projects onto a positive-area piece of the domain
    return PLConvexFunction(domain, sup, _trusted=True)


def _same_point(a, b, exact: bool, tol: float) -> bool:
    if exact:
        return a[0] == b[0] and a[1] == b[1]
    return abs(float(a[0]) - float(b[0])) <= tol and abs(float(a[1]) - float(b[1])) <= tol


@dataclass(frozen=True)
class SupportCheck:
    ok: bool
    stray_mass: float


def lifting_support_check(u: PLConvexFunction, spec: LiftSpec, tol: float = 1e-9) -> SupportCheck:
    """Does mu_u charge only the interior data points of the spec?"""
    exact = u.exact and spec.exact
    scale = 1.0 + max(abs(float(c)) for v in u.domain.vertices for c in v)
    stray = 0
    for a in ma_atoms(u).atoms:
        if not any(_same_point(a.point, x, exact, tol * scale) for x, _ in spec.interior):
            stray += a.mass
    return SupportCheck(stray == 0, float(stray))


def legendre(u: PLConvexFunction, p) -> float:
    """u*(p) = max over the cell-complex vertices of p.x - u(x)."""
    best = None
    for x in u.vertices():
        val = p[0] * x[0] + p[1] * x[1] - max(s(x) for s in u.supports)
        if best is None or val > best:
            best = val
    return best


# ----------------------------------------------------------------------------
# Alexandrov gap


def _edge_breakpoints(u: PLConvexFunction, a, b) -> list:
    """Points on segment [a, b] where the active support of u changes."""
    sup = u.supports
    d = (b[0] - a[0], b[1] - a[1])
    lines = [(s.p[0] * d[0] + s.p[1] * d[1], s(a)) for s in sup]  # slope, value at t=0
    exact = u.exact and all_exact([*a, *b])
    out = []
    t = 0
    cur = max(range(len(lines)), key=lambda k: (lines[k][1], lines[k][0]))
    while True:
        m0, b0 = lines[cur]
        nxt, tn = None, None
        for k, (m, c) in enumerate(lines):
            if m <= m0:
                continue
            tk = (b0 - c) / (m - m0)
            if tk <= t:
                continue
            if tn is None or tk < tn or (tk == tn and m > lines[nxt][0]):
                nxt, tn = k, tk
        if nxt is None or tn >= 1:
            break
        if exact or tn - t > 1e-14:
            out.append((a[0] + tn * d[0], a[1] + tn * d[1]))
        t, cur = tn, nxt
    return out


def boundary_lift(u: PLConvexFunction, U: ConvexPolygon) -> PLConvexFunction:
    """L_{dU} u: the convex envelope of u restricted to the boundary of U."""
    pts = []
    exact = u.exact and U.exact
    for a, b in U.edges():
        pts.append(a)
        pts.extend(_edge_breakpoints(u, a, b))
    data = [(x, max(s(x) for s in u.supports)) for x in pts]
    facets = lower_hull([(x[0], x[1], v) for x, v in data], exact=exact)
    sup = [AffineSupport((f.plane[0], f.plane[1]), f.plane[2]) for f in facets]
    dom = U if exact or not U.exact else ConvexPolygon(tuple((float(a), float(b)) for a, b in U.vertices))
    return PLConvexFunction(dom, sup, _trusted=True)


@dataclass(frozen=True)
class AlexandrovCheck:
    gap: float
    bound: float
    mass: float

    @property
    def holds(self) -> bool:
        return self.gap <= self.bound * (1 + 1e-12) + 1e-12


def alexandrov_gap_check(u: PLConvexFunction, U: ConvexPolygon, x) -> AlexandrovCheck:
    """gap = L_{dU}u(x) - u(x) against diam(U) * sqrt(mu_u(U) / pi)."""
    if not U.contains(x):
        raise DomainError("x must lie in U")
    for v in U.vertices:
        if not u.domain.contains(v):
            raise DomainError("U must lie inside the domain of u")
    L = boundary_lift(u, U)
    gap = max(s(x) for s in L.supports) - max(s(x) for s in u.supports)
    mass = sum((a.mass for a in ma_atoms(u).atoms if U.contains(a.point, strict=True)), 0)
    bound = U.diameter * math.sqrt(float(mass) / math.pi)
    return AlexandrovCheck(gap if u.exact else float(gap), bound, float(mass))


# ----------------------------------------------------------------------------
# grid convex functions and the upper smoothing P_eps


class GridConvexFunction(GridField):
    """Scalar grid samples of a convex function (PL on the lattice triangulation)."""

    def __post_init__(self):
        super().__post_init__()
        if self.components != 1:
            raise PreconditionError("a grid convex function is scalar")

    @classmethod
    def from_field(cls, f: GridField) -> "GridConvexFunction":
        return cls(f.origin, f.spacing, f.values, f.mask)

    @classmethod
    def sample(cls, fn, origin, spacing, shape, mask=None) -> "GridConvexFunction":
        n1, n2 = shape
        X, Y = np.meshgrid(origin[0] + spacing * np.arange(n1), origin[1] + spacing * np.arange(n2), indexing="ij")
        vals = np.asarray(fn(np.stack([X, Y], axis=-1)), dtype=float)
        if mask is None:
            mask = np.ones(shape, dtype=bool)
        return cls(origin, spacing, np.where(mask, vals, 0.0), mask)


def second_differences(values: np.ndarray, mask: np.ndarray) -> np.ndarray:
    """Second differences along e1, e2, e1+e2 and e1-e2 (NaN where undefined)."""
    out = np.full((4,) + values.shape, np.nan)
    for k, (di, dj) in enumerate(((1, 0), (0, 1), (1, 1), (1, -1))):
        n1, n2 = values.shape
        sl_c = (slice(1, n1 - 1), slice(1, n2 - 1))
        sl_p = (slice(1 + di, n1 - 1 + di), slice(1 + dj, n2 - 1 + dj))
        sl_m = (slice(1 - di, n1 - 1 - di), slice(1 - dj, n2 - 1 - dj))
        ok = mask[sl_c] & mask[sl_p] & mask[sl_m]
        d2 = values[sl_p] - 2 * values[sl_c] + values[sl_m]
        out[k][sl_c] = np.where(ok, d2, np.nan)
    return out


def is_discrete_convex(f: GridField, tol: float | None = None) -> bool:
    d2 = second_differences(f.values, f.mask)
    if tol is None:
        tol = 1e-9 * (1.0 + float(np.abs(f.values[f.mask]).max(initial=0.0)))
    return bool(np.nanmin(d2, initial=0.0) >= -tol)


def lipschitz_extension(f: GridField, L: float | None = None, chunk: int = 4096) -> np.ndarray:
    """Values on the whole box: u on the mask, min_y u(y) + L|x - y| outside it."""
    vals = f.values.copy()
    if f.mask.all():
        return vals
    pts = f.points()
    inner = f.mask
    # boundary nodes of the mask suffice for a convex mask
    pad = np.pad(inner, 1, constant_values=False)
    edge = inner & ~(pad[:-2, 1:-1] & pad[2:, 1:-1] & pad[1:-1, :-2] & pad[1:-1, 2:])
    ys, uy = pts[edge], vals[edge]
    if L is None:
        L = max_gradient_norm(f)
    outs = np.argwhere(~inner)
    for s in range(0, len(outs), chunk):
        idx = outs[s : s + chunk]
        xs = pts[idx[:, 0], idx[:, 1]]
        dist = np.sqrt(((xs[:, None, :] - ys[None, :, :]) ** 2).sum(-1))
        vals[idx[:, 0], idx[:, 1]] = (uy[None, :] + L * dist).min(axis=1)
    return vals


def max_gradient_norm(f: GridField) -> float:
    v, m, d = f.values, f.mask, f.spacing
    gx = np.where(m[1:, :] & m[:-1, :], np.abs(v[1:, :] - v[:-1, :]) / d, 0.0)
    gy = np.where(m[:, 1:] & m[:, :-1], np.abs(v[:, 1:] - v[:, :-1]) / d, 0.0)
    return float(math.hypot(gx.max(initial=0.0), gy.max(initial=0.0)))


def lower_envelope_nodes(X: np.ndarray, Y: np.ndarray, g: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Discrete convex envelope of nodal data, evaluated at the nodes.

    Returns (envelope, is_vertex). The envelope is the lower convex hull of
    the 3D points (x, g); nodes that are hull vertices keep their value and
    the others take the value of the hull face above which they lie.
    """
    n1, n2 = g.shape
    pts = np.column_stack([X.ravel(), Y.ravel(), g.ravel()])
    I, J = np.meshgrid(np.arange(n1), np.arange(n2), indexing="ij")
    try:
        hull = ConvexHull(pts - pts.mean(axis=0))
    except QhullError:
        # every node on one plane
        return g.copy(), np.ones_like(g, dtype=bool)
    tri = hull.simplices[hull.equations[:, 2] < -1e-12]
    is_vertex = np.zeros(g.size, dtype=bool)
    is_vertex[np.unique(tri)] = True
    env = np.full(g.size, -np.inf)
    env[is_vertex] = g.ravel()[is_vertex]
    ii, jj = I.ravel()[tri], J.ravel()[tri]
    gv = g.ravel()[tri]
    # plane through the three vertices, in index coordinates
    det = (ii[:, 1] - ii[:, 0]) * (jj[:, 2] - jj[:, 0]) - (ii[:, 2] - ii[:, 0]) * (jj[:, 1] - jj[:, 0])
    ok = det != 0
    ii, jj, gv, det = ii[ok], jj[ok], gv[ok], det[ok]
    a = ((gv[:, 1] - gv[:, 0]) * (jj[:, 2] - jj[:, 0]) - (gv[:, 2] - gv[:, 0]) * (jj[:, 1] - jj[:, 0])) / det
    b = ((ii[:, 1] - ii[:, 0]) * (gv[:, 2] - gv[:, 0]) - (ii[:, 2] - ii[:, 0]) * (gv[:, 1] - gv[:, 0])) / det
    c = gv[:, 0] - a * ii[:, 0] - b * jj[:, 0]
    i0, i1 = ii.min(1), ii.max(1)
    j0, j1 = jj.min(1), jj.max(1)
    w, h = i1 - i0 + 1, j1 - j0 + 1
    # only triangles that can contain a non-vertex node matter
    big = w * h > 3
    order = np.flatnonzero(big)
    keys = np.stack([w[order], h[order]], axis=1)
    flat = env
    for key in np.unique(keys, axis=0):
        sel = order[(keys[:, 0] == key[0]) & (keys[:, 1] == key[1])]
        di, dj = np.meshgrid(np.arange(key[0]), np.arange(key[1]), indexing="ij")
        ci = i0[sel, None] + di.ravel()[None, :]
        cj = j0[sel, None] + dj.ravel()[None, :]
        inside = np.ones(ci.shape, dtype=bool)
        sgn = np.sign(det[sel])[:, None]
        for e in range(3):
            pa, pb = e, (e + 1) % 3
            cr = (ii[sel, pb, None] - ii[sel, pa, None]) * (cj - jj[sel, pa, None]) - (jj[sel, pb, None] - jj[sel, pa, None]) * (ci - ii[sel, pa, None])
            inside &= sgn * cr >= 0
        val = a[sel, None] * ci + b[sel, None] * cj + c[sel, None]
        lin = (ci * n2 + cj)[inside]
        np.maximum.at(flat, lin, val[inside])
    env = flat.reshape(g.shape)
    missing = ~np.isfinite(env)
    if missing.any():
        env[missing] = g[missing]
    return env, is_vertex.reshape(g.shape)


def smooth_sup(u: GridField, eps: float, check_convex: bool = True) -> GridConvexFunction:
    """P_eps u = Q - conv(Q - u) with Q = |x - x_c|^2 / (2 eps).

    The result is the least function above u whose every point is touched
    from above by a paraboloid of curvature 1/eps lying above u.
    """
    if not eps > 0:
        raise ParameterError("eps must be positive")
    if u.components != 1:
        raise PreconditionError("smooth_sup needs a scalar grid function")
    if check_convex and not is_discrete_convex(u):
        raise PreconditionError("input is not discretely convex")
    vals = lipschitz_extension(u)
    X, Y = u.coords()
    xc, yc = X.mean(), Y.mean()
    Q = ((X - xc) ** 2 + (Y - yc) ** 2) / (2 * eps)
    env, is_vertex = lower_envelope_nodes(X, Y, Q - vals)
    out = Q - env
    out = np.where(is_vertex, vals, np.maximum(out, vals))
    return GridConvexFunction(u.origin, u.spacing, np.where(u.mask, out, 0.0), u.mask)
