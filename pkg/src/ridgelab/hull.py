"""Low-level planar and 3D-lower-hull kernels.

Every routine works on two number models. Exact inputs (int or Fraction)
are processed with rational arithmetic and no tolerance. Float inputs use
a relative tolerance of ``RTOL`` scaled by the magnitude of the data.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from itertools import combinations
from numbers import Integral
from typing import Sequence

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .errors import GeometryError

RTOL = 1e-12

# below this point count the O(n^4) enumeration is cheaper than qhull
BRUTE_FORCE_MAX = 9
# exact fallback when qhull cannot be trusted; hopeless beyond this size
BRUTE_FORCE_CAP = 80


def is_exact_scalar(v) -> bool:
    return isinstance(v, (Fraction, Integral)) and not isinstance(v, bool)


def all_exact(values) -> bool:
    return all(is_exact_scalar(v) for v in values)


def to_exact(v) -> Fraction:
    return v if isinstance(v, Fraction) else Fraction(int(v))


def cross(o, a, b):
    """Twice the signed area of triangle (o, a, b)."""
    if type(o[0]) is Fraction and type(o[1]) is Fraction and type(a[0]) is Fraction and type(a[1]) is Fraction and type(b[0]) is Fraction and type(b[1]) is Fraction:
        return _cross_fraction(o, a, b)
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _cross_fraction(o, a, b) -> Fraction:
    # integer numerators over one common denominator, a single normalization at the end
    D = o[0].denominator * o[1].denominator * a[0].denominator * a[1].denominator * b[0].denominator * b[1].denominator
    ox, oy, ax, ay, bx, by = (c.numerator * (D // c.denominator) for c in (o[0], o[1], a[0], a[1], b[0], b[1]))
    return Fraction((ax - ox) * (by - oy) - (ay - oy) * (bx - ox), D * D)


def shoelace(poly: Sequence) -> float | Fraction:
    """Signed area of a polygon given as a vertex sequence."""
    n = len(poly)
    if n < 3:
        return 0
    s = 0
    for k in range(n):
        x0, y0 = poly[k]
        x1, y1 = poly[(k + 1) % n]
        s += x0 * y1 - x1 * y0
    return s / 2


def convex_hull_2d(points: Sequence, exact: bool | None = None, tol: float | None = None) -> list:
    """Counterclockwise hull vertices (monotone chain), collinear points dropped.

    Returns one point for a degenerate point set and two points for a
    segment, so the result is always the vertex list of conv(points).
    """
    pts = sorted(set(tuple(p) for p in points))
    if exact is None:
        exact = all(all_exact(p) for p in pts)
    if len(pts) <= 1:
        return pts
    if not exact:
        span = max(max(abs(c) for c in p) for p in pts) + 1.0
        eps = (RTOL if tol is None else tol) * span * span
    else:
        eps = 0

    def chain(seq):
        out = []
        for p in seq:
            while len(out) >= 2 and cross(out[-2], out[-1], p) <= eps:
                out.pop()
            out.append(p)
        return out

    lower = chain(pts)
    upper = chain(reversed(pts))
    hull = lower[:-1] + upper[:-1]
    if len(hull) == 2 and hull[0] == hull[1]:
        return hull[:1]
    return hull


def clip_halfplane(poly: list, a, b, exact: bool, eps: float = 0.0) -> list:
    """Clip a convex polygon to {x : a.x + b >= 0} (Sutherland-Hodgman step)."""
    if not poly:
        return poly
    vals = [a[0] * p[0] + a[1] * p[1] + b for p in poly]
    if all(v >= -eps for v in vals):
        return poly
    if all(v <= eps for v in vals):
        return []
    out = []
    n = len(poly)
    for k in range(n):
        p, q = poly[k], poly[(k + 1) % n]
        vp, vq = vals[k], vals[(k + 1) % n]
        if vp >= 0:
            out.append(p)
        if (vp > 0 and vq < 0) or (vp < 0 and vq > 0):
            t = vp / (vp - vq)
            out.append((p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])))
    return out


@dataclass(frozen=True)
class Facet:
    """A lower-hull face z = a1*x + a2*y + b with every point index on it."""

    plane: tuple
    vertices: tuple[int, ...]


def _plane(p, q, r):
    (x1, y1, z1), (x2, y2, z2), (x3, y3, z3) = p, q, r
    det = (x2 - x1) * (y3 - y1) - (x3 - x1) * (y2 - y1)
    if det == 0:
        return None
    a1 = ((z2 - z1) * (y3 - y1) - (z3 - z1) * (y2 - y1)) / det
    a2 = ((x2 - x1) * (z3 - z1) - (x3 - x1) * (z2 - z1)) / det
    return (a1, a2, z1 - a1 * x1 - a2 * y1)


def _scale(pts) -> float:
    return 1.0 + max(abs(float(c)) for p in pts for c in p)


def _on_and_below(pts, plane, exact, tol):
    a1, a2, b = plane
    on = []
    for m, (x, y, z) in enumerate(pts):
        d = z - (a1 * x + a2 * y + b)
        if exact:
            if d < 0:
                return None
            if d == 0:
                on.append(m)
        else:
            s = tol * (1.0 + abs(z) + abs(a1 * x) + abs(a2 * y) + abs(b))
            if d < -s:
                return None
            if d <= s:
                on.append(m)
    return tuple(on)


def _brute_force(pts, exact, tol) -> list[Facet]:
    found: dict[tuple, tuple] = {}
    for i, j, k in combinations(range(len(pts)), 3):
        plane = _plane(pts[i], pts[j], pts[k])
        if plane is None:
            continue
        on = _on_and_below(pts, plane, exact, tol)
        if on is not None and on not in found:
            found[on] = plane
    return _drop_nested([Facet(pl, on) for on, pl in found.items()])


def _drop_nested(facets: list[Facet]) -> list[Facet]:
    # float ties can produce both a facet and a sub-polygon of it
    big = [set(f.vertices) for f in facets if len(f.vertices) > 3]
    if not big:
        return facets
    keep = []
    for f in facets:
        s = set(f.vertices)
        if any(s < b for b in big):
            continue
        keep.append(f)
    return keep


def collinear_xy(xy: Sequence, exact: bool, tol: float = RTOL) -> bool:
    if len(xy) < 3:
        return True
    o = xy[0]
    far = max(range(len(xy)), key=lambda k: abs(float(xy[k][0] - o[0])) + abs(float(xy[k][1] - o[1])))
    a = xy[far]
    if a == o:
        return True
    eps = 0 if exact else tol * _scale(xy) ** 2
    return all(abs(cross(o, a, p)) <= eps for p in xy)


def lower_hull(points: Sequence, exact: bool | None = None, tol: float = RTOL) -> list[Facet]:
    """Non-vertical lower faces of conv{(x, y, z)}.

    ``points`` is a sequence of (x, y, z) triples. Coplanar faces are merged
    and each facet lists every input index lying on its plane. An empty
    list means the xy-projection is collinear. Faces are ordered by their
    smallest vertex index so the output is canonical.
    """
    pts = [tuple(p) for p in points]
    if exact is None:
        exact = all(all_exact(p) for p in pts)
    if exact:
        pts = [tuple(to_exact(c) for c in p) for p in pts]
    else:
        pts = [tuple(float(c) for c in p) for p in pts]
    if collinear_xy([p[:2] for p in pts], exact, tol):
        return []
    single = _single_plane(pts, exact, tol)
    if single is not None:
        return [single]
    if len(pts) <= BRUTE_FORCE_MAX:
        facets = _brute_force(pts, exact, tol)
    else:
        facets = _qhull_lower(pts, exact, tol)
        if facets is None and not exact:
            # near-coplanar float data: retry with a looser merge tolerance
            facets = _qhull_lower(pts, exact, tol * 1e3)
        if facets is None:
            if len(pts) > BRUTE_FORCE_CAP:
                raise GeometryError(f"lower hull of {len(pts)} points failed")
            facets = _brute_force(pts, exact, tol)
    return sorted(facets, key=lambda f: f.vertices)


def _qhull_lower(pts, exact, tol):
    arr = np.array([[float(c) for c in p] for p in pts])
    try:
        hull = ConvexHull(arr - arr.mean(axis=0))
    except QhullError:
        return None
    simplices = np.sort(hull.simplices[hull.equations[:, 2] < -1e-10], axis=1)
    if len(simplices) == 0:
        return None
    if exact:
        facets = {}
        for i, j, k in simplices.tolist():
            plane = _plane(pts[i], pts[j], pts[k])
            if plane is None:
                continue
            on = _on_and_below(pts, plane, exact, tol)
            if on is None:
                return None
            facets.setdefault(on, plane)
        found = [Facet(pl, on) for on, pl in facets.items()]
    else:
        found = _float_facets(arr, simplices, tol)
        if found is None:
            return None
    found = _drop_nested(found)
    if not _covers(pts, found, exact):
        return None
    return found


def _float_facets(arr, simplices, tol):
    p, q, r = arr[simplices[:, 0]], arr[simplices[:, 1]], arr[simplices[:, 2]]
    det = (q[:, 0] - p[:, 0]) * (r[:, 1] - p[:, 1]) - (r[:, 0] - p[:, 0]) * (q[:, 1] - p[:, 1])
    ok = det != 0
    p, q, r, det = p[ok], q[ok], r[ok], det[ok]
    a1 = ((q[:, 2] - p[:, 2]) * (r[:, 1] - p[:, 1]) - (r[:, 2] - p[:, 2]) * (q[:, 1] - p[:, 1])) / det
    a2 = ((q[:, 0] - p[:, 0]) * (r[:, 2] - p[:, 2]) - (r[:, 0] - p[:, 0]) * (q[:, 2] - p[:, 2])) / det
    b = p[:, 2] - a1 * p[:, 0] - a2 * p[:, 1]
    x, y, z = arr[:, 0], arr[:, 1], arr[:, 2]
    ax, ay = a1[:, None] * x[None, :], a2[:, None] * y[None, :]
    d = z[None, :] - (ax + ay + b[:, None])
    s = tol * (1.0 + np.abs(z)[None, :] + np.abs(ax) + np.abs(ay) + np.abs(b)[:, None])
    if np.any(d < -s):
        return None
    facets = {}
    for row in range(len(b)):
        on = tuple(np.flatnonzero(d[row] <= s[row]).tolist())
        if on not in facets:
            facets[on] = (float(a1[row]), float(a2[row]), float(b[row]))
    return [Facet(pl, on) for on, pl in facets.items()]


def _single_plane(pts, exact, tol):
    """The facet through all points when they are coplanar, else None."""
    xy = [p[:2] for p in pts]
    o = 0
    j = max(range(len(pts)), key=lambda k: abs(float(xy[k][0] - xy[o][0])) + abs(float(xy[k][1] - xy[o][1])))
    k = max(range(len(pts)), key=lambda m: abs(float(cross(xy[o], xy[j], xy[m]))))
    plane = _plane(pts[o], pts[j], pts[k])
    if plane is None:
        return None
    on = _on_and_below(pts, plane, exact, tol)
    if on is not None and len(on) == len(pts):
        return Facet(plane, on)
    return None


def _covers(pts, facets, exact) -> bool:
    """Projected facet areas must add up to the area of conv(xy)."""
    hull = convex_hull_2d([p[:2] for p in pts], exact=exact)
    total = shoelace(hull)
    acc = 0
    for f in facets:
        acc += shoelace(convex_hull_2d([pts[m][:2] for m in f.vertices], exact=exact))
    if exact:
        return acc == total
    return abs(acc - total) <= 1e-9 * max(1.0, abs(total))


def lower_hull_1d(t: Sequence, z: Sequence, exact: bool, tol: float = RTOL) -> list[int]:
    """Indices of lower-hull vertices of the planar points (t, z), left to right."""
    order = sorted(range(len(t)), key=lambda k: (t[k], z[k]))
    # equal t: keep the lowest z only
    dedup = []
    for k in order:
        if dedup and t[dedup[-1]] == t[k]:
            continue
        dedup.append(k)
    out: list[int] = []
    span = 0 if exact else tol * (1.0 + max(abs(float(v)) for v in list(t) + list(z))) ** 2
    for k in dedup:
        while len(out) >= 2:
            a, b = out[-2], out[-1]
            c = (t[b] - t[a]) * (z[k] - z[a]) - (z[b] - z[a]) * (t[k] - t[a])
            if c <= span:
                out.pop()
            else:
                break
        out.append(k)
    return out
