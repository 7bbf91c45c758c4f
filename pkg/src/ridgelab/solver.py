"""Semi-discrete Monge-Ampere Dirichlet solver and ridge extraction.

The solution with atomic right-hand side is the lower convex hull of the
boundary vertices at height 0 and the atoms at unknown heights h_i, so the
problem reduces to N nonlinear equations m_i(h) = sigma_i for the hull
areas of the gradient polygons.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import ConvexHull, QhullError

from .convex import LiftSpec, lift
from .errors import ConvergenceError, DomainError, GeometryError, ParameterError
from .geom import Atom, ConvexPolygon, PLConvexFunction, affine
from .hull import shoelace


@dataclass(frozen=True)
class DisclinationMeasure:
    """mu = sum sigma_i delta_{a_i} with positive weights at distinct points."""

    atoms: tuple = ()

    def __post_init__(self):
        atoms = tuple(a if isinstance(a, Atom) else Atom(tuple(a[0]), a[1]) for a in self.atoms)
        seen = set()
        for a in atoms:
            if not float(a.mass) > 0 or not math.isfinite(float(a.mass)):
                raise ParameterError(f"disclination weight must be positive, got {a.mass}")
            key = (float(a.point[0]), float(a.point[1]))
            if key in seen:
                raise ParameterError(f"repeated disclination point {key}")
            seen.add(key)
        object.__setattr__(self, "atoms", atoms)

    def __len__(self) -> int:
        return len(self.atoms)

    @property
    def points(self) -> np.ndarray:
        return np.array([[float(c) for c in a.point] for a in self.atoms]).reshape(-1, 2)

    @property
    def sigmas(self) -> np.ndarray:
        return np.array([float(a.mass) for a in self.atoms])

    @classmethod
    def from_arrays(cls, points, sigmas) -> "DisclinationMeasure":
        return cls(tuple(Atom((float(p[0]), float(p[1])), float(s)) for p, s in zip(points, sigmas)))

    def with_sigmas(self, sigmas) -> "DisclinationMeasure":
        return DisclinationMeasure(tuple(Atom(a.point, float(s)) for a, s in zip(self.atoms, sigmas)))

    def to_json(self) -> dict:
        return {"atoms": [{"a": [float(a.point[0]), float(a.point[1])], "sigma": float(a.mass)} for a in self.atoms]}

    @classmethod
    def from_json(cls, data: dict) -> "DisclinationMeasure":
        return cls(tuple(Atom((float(r["a"][0]), float(r["a"][1])), float(r["sigma"])) for r in data["atoms"]))


@dataclass(frozen=True)
class SolveReport:
    heights: tuple
    masses: tuple
    residual: float
    iterations: int
    converged: bool
    history: tuple = ()
    seconds: float = 0.0

    def to_json(self) -> dict:
        return {
            "heights": [float(h) for h in self.heights],
            "masses": [float(m) for m in self.masses],
            "residual": float(self.residual),
            "iterations": self.iterations,
            "converged": self.converged,
            "history": [float(r) for r in self.history],
        }


# ----------------------------------------------------------------------------
# mass map


@dataclass
class _MassMap:
    """Hull areas of the gradient polygons at the atoms as a function of heights."""

    boundary: np.ndarray  # (m, 2)
    points: np.ndarray  # (N, 2)

    def __post_init__(self):
        self.xy = np.vstack([self.boundary, self.points])
        self.shift = self.xy.mean(axis=0)
        self.nb = len(self.boundary)

    def evaluate(self, h: np.ndarray, jacobian: bool = False):
        """(masses, jacobian or None, admissible)."""
        N = len(self.points)
        z = np.concatenate([np.zeros(self.nb), h])
        pts = np.column_stack([self.xy - self.shift, z])
        try:
            hull = ConvexHull(pts)
        except QhullError:
            return np.zeros(N), None, False
        low = hull.equations[:, 2] < -1e-12
        tri = hull.simplices[low]
        P = pts[tri]  # (T, 3, 3)
        d1 = P[:, 1, :2] - P[:, 0, :2]
        d2 = P[:, 2, :2] - P[:, 0, :2]
        det = d1[:, 0] * d2[:, 1] - d1[:, 1] * d2[:, 0]
        keep = np.abs(det) > 1e-14 * (1 + np.abs(self.xy).max()) ** 2
        tri, P, d1, d2, det = tri[keep], P[keep], d1[keep], d2[keep], det[keep]
        # barycentric gradients: grad phi_k for the three vertices
        gphi = np.empty((len(tri), 3, 2))
        gphi[:, 1, 0] = d2[:, 1] / det
        gphi[:, 1, 1] = -d2[:, 0] / det
        gphi[:, 2, 0] = -d1[:, 1] / det
        gphi[:, 2, 1] = d1[:, 0] / det
        gphi[:, 0] = -gphi[:, 1] - gphi[:, 2]
        grads = np.einsum("tkd,tk->td", gphi, P[:, :, 2])
        cent = P[:, :, :2].mean(axis=1)
        masses = np.zeros(N)
        J = np.zeros((N, N)) if jacobian else None
        admissible = True
        for i in range(N):
            vid = self.nb + i
            rows, cols = np.nonzero(tri == vid)
            if len(rows) < 3:
                admissible = False
                continue
            c = cent[rows] - (self.points[i] - self.shift)
            order = np.argsort(np.arctan2(c[:, 1], c[:, 0]))
            rows = rows[order]
            g = grads[rows]
            masses[i] = 0.5 * float(np.sum(g[:, 0] * np.roll(g[:, 1], -1) - np.roll(g[:, 0], -1) * g[:, 1]))
            if jacobian:
                w = np.roll(g, -1, axis=0) - np.roll(g, 1, axis=0)
                for r, wk in zip(rows, w):
                    for slot in range(3):
                        j = tri[r, slot] - self.nb
                        if j >= 0:
                            gp = gphi[r, slot]
                            J[i, j] += 0.5 * (gp[0] * wk[1] - gp[1] * wk[0])
        if np.any(masses <= 0):
            admissible = False
        return masses, J, admissible


def initial_heights(domain: ConvexPolygon, mu: DisclinationMeasure) -> np.ndarray:
    """Isolated-cone heights -sqrt(sigma/pi) * dist(a, boundary)."""
    return np.array([-math.sqrt(s / math.pi) * domain.boundary_distance(a.point) for s, a in zip(mu.sigmas, mu.atoms)])


def _bisect_coordinate(mm: _MassMap, h: np.ndarray, i: int, target: float, tol: float) -> None:
    """Set h[i] so that m_i = target with the other heights frozen (m_i decreases in h_i)."""
    hi = 0.0
    lo = min(h[i], -1e-3)
    for _ in range(60):
        hh = h.copy()
        hh[i] = lo
        if mm.evaluate(hh)[0][i] >= target:
            break
        lo *= 2.0
    for _ in range(100):
        mid = 0.5 * (lo + hi)
        hh = h.copy()
        hh[i] = mid
        if mm.evaluate(hh)[0][i] >= target:
            lo = mid
        else:
            hi = mid
        if hi - lo <= tol * max(1.0, abs(lo)):
            break
    h[i] = lo


def solve_mad(
    domain: ConvexPolygon,
    mu: DisclinationMeasure,
    tol: float = 1e-10,
    max_iter: int = 200,
    h0=None,
) -> tuple[PLConvexFunction, SolveReport]:
    """Convex v with mu_v = mu in the open domain and v = 0 on the boundary.

    Damped Newton on the heights, with a Gauss-Seidel bisection sweep in
    the style of Oliker and Prussner whenever a Newton step cannot be
    kept admissible.
    """
    if not tol > 0:
        raise ParameterError("tol must be positive")
    t0 = time.perf_counter()
    if len(mu) == 0:
        return affine(domain), SolveReport((), (), 0.0, 0, True, (), 0.0)
    for a in mu.atoms:
        if not domain.contains(a.point, strict=True):
            raise DomainError(f"disclination {a.point} is not strictly inside the domain")
    mm = _MassMap(domain.as_array(), mu.points)
    sigma = mu.sigmas
    h = initial_heights(domain, mu) if h0 is None else np.array(h0, dtype=float)
    history = []
    masses, J, ok = mm.evaluate(h, jacobian=True)
    best = (np.inf, h.copy())
    it = 0
    while True:
        res = float(np.abs(masses - sigma).max()) if ok else np.inf
        history.append(res)
        if res < best[0]:
            best = (res, h.copy())
        if res <= tol or it >= max_iter:
            break
        it += 1
        step = None
        if ok:
            try:
                step = np.linalg.solve(J, sigma - masses)
            except np.linalg.LinAlgError:
                step = None
        moved = False
        if step is not None and np.all(np.isfinite(step)):
            t = 1.0
            while t > 1e-4:
                hn = h + t * step
                if np.all(hn < 0):
                    mn, Jn, okn = mm.evaluate(hn, jacobian=True)
                    if okn and np.abs(mn - sigma).max() < (1 - 1e-4 * t) * res:
                        h, masses, J, ok = hn, mn, Jn, okn
                        moved = True
                        break
                t *= 0.5
        if not moved:
            for i in range(len(h)):
                _bisect_coordinate(mm, h, i, sigma[i], 1e-3 * max(tol, res if np.isfinite(res) else 1.0))
            masses, J, ok = mm.evaluate(h, jacobian=True)
    res, hbest = best
    v = _lift_heights(domain, mu, hbest)
    report = SolveReport(
        tuple(float(x) for x in hbest),
        tuple(float(x) for x in mm.evaluate(hbest)[0]),
        res,
        it,
        res <= tol,
        tuple(history),
        time.perf_counter() - t0,
    )
    if res > tol:
        raise ConvergenceError(f"mass residual {res:.3e} above tol {tol:.1e} after {it} iterations", best=(v, report), history=history)
    return v, report


def _lift_heights(domain: ConvexPolygon, mu: DisclinationMeasure, h) -> PLConvexFunction:
    dom = domain if not domain.exact else ConvexPolygon(tuple((float(x), float(y)) for x, y in domain.vertices))
    spec = LiftSpec.on_polygon(dom, 0.0, [((float(a.point[0]), float(a.point[1])), float(z)) for a, z in zip(mu.atoms, h)])
    return lift(spec)


# ----------------------------------------------------------------------------
# ridges


@dataclass(frozen=True)
class Ridge:
    i: int
    j: int
    b_plus: tuple
    b_minus: tuple
    p_plus: tuple
    p_minus: tuple


@dataclass(frozen=True)
class RidgeSet:
    ridges: tuple = ()
    points: tuple = ()

    def __len__(self) -> int:
        return len(self.ridges)

    def pairs(self) -> list[tuple[int, int]]:
        return [(r.i, r.j) for r in self.ridges]

    def to_json(self) -> dict:
        f = lambda p: [float(p[0]), float(p[1])]
        return {
            "ridges": [
                {"i": r.i, "j": r.j, "b_plus": f(r.b_plus), "b_minus": f(r.b_minus), "p_plus": f(r.p_plus), "p_minus": f(r.p_minus)}
                for r in self.ridges
            ],
            "points": [f(p) for p in self.points],
        }

    @classmethod
    def from_json(cls, data: dict) -> "RidgeSet":
        t = lambda p: (float(p[0]), float(p[1]))
        rs = tuple(Ridge(int(r["i"]), int(r["j"]), t(r["b_plus"]), t(r["b_minus"]), t(r["p_plus"]), t(r["p_minus"])) for r in data["ridges"])
        return cls(rs, tuple(t(p) for p in data.get("points", [])))


def _match_atom(x, pts: np.ndarray, tol: float):
    if len(pts) == 0:
        return None
    d = np.hypot(pts[:, 0] - float(x[0]), pts[:, 1] - float(x[1]))
    k = int(np.argmin(d))
    return k if d[k] <= tol else None


def _crossing_ok(ai, aj, bp, bm, margin=1e-3) -> bool:
    """Does segment [b+, b-] cross the open segment (a_i, a_j)?"""
    e = aj - ai
    n = np.array([-e[1], e[0]])
    sp, sm = float((bp - ai) @ n), float((bm - ai) @ n)
    if not (sp > 0 > sm):
        return False
    x = bp + (sp / (sp - sm)) * (bm - bp)
    s = float((x - ai) @ e) / float(e @ e)
    return margin < s < 1 - margin


def extract_ridges(v0: PLConvexFunction, mu: DisclinationMeasure, tol: float = 1e-9) -> RidgeSet:
    """Edges of the cell complex joining two atoms, with rhombus witnesses."""
    pts = mu.points
    if len(pts) < 2:
        return RidgeSet((), tuple(map(tuple, pts)))
    scale = tol * (1.0 + float(np.abs(v0.domain.as_array()).max()))
    cells = {c.support: c for c in v0.cells}
    out = []
    for si, sj, start, end in v0.edges():
        i, j = _match_atom(start, pts, scale), _match_atom(end, pts, scale)
        if i is None or j is None or i == j:
            continue
        if i > j:
            i, j = j, i
        ai, aj = pts[i], pts[j]
        e = aj - ai
        n = np.array([-e[1], e[0]])
        mid = 0.5 * (ai + aj)
        side = {}
        for s in (si, sj):
            poly = np.array([[float(c) for c in q] for q in cells[s].polygon])
            dist = (poly - ai) @ n
            far = np.abs(dist) >= np.abs(dist).max() * (1 - 1e-9)
            # among the farthest vertices prefer the one nearest the perpendicular bisector
            along = np.abs((poly - mid) @ e)
            k = int(np.argmin(np.where(far, along, np.inf)))
            sgn = 1 if dist[k] > 0 else -1
            side[sgn] = (s, poly[k])
        if set(side) != {1, -1}:
            raise GeometryError(f"cells flanking ridge ({i}, {j}) lie on one side")
        (sp, bp), (sm, bm) = side[1], side[-1]
        t = 1.0
        while not _crossing_ok(ai, aj, mid + t * (bp - mid), mid + t * (bm - mid)):
            t *= 0.5
            if t < 1e-6:
                raise GeometryError(f"degenerate rhombus on ridge ({i}, {j})")
        bp, bm = mid + t * (bp - mid), mid + t * (bm - mid)
        pp = tuple(float(c) for c in v0.supports[sp].p)
        pm = tuple(float(c) for c in v0.supports[sm].p)
        out.append(Ridge(i, j, (float(bp[0]), float(bp[1])), (float(bm[0]), float(bm[1])), pp, pm))
    out.sort(key=lambda r: (r.i, r.j))
    return RidgeSet(tuple(out), tuple((float(p[0]), float(p[1])) for p in pts))


# ----------------------------------------------------------------------------
# stability


@dataclass(frozen=True)
class StabilityProbe:
    gap: float
    budget: float

    @property
    def ratio(self) -> float:
        return self.gap / self.budget if self.budget > 0 else 0.0


def stability_probe(domain: ConvexPolygon, mu: DisclinationMeasure, nu: DisclinationMeasure, tol: float = 1e-10) -> StabilityProbe:
    """Sup distance of the two solutions against sum |sqrt(sigma) - sqrt(tau)|."""
    if not np.allclose(mu.points, nu.points, rtol=0, atol=0):
        raise ParameterError("measures must share their atom locations")
    u, _ = solve_mad(domain, mu, tol)
    v, _ = solve_mad(domain, nu, tol)
    probe = np.array([[float(c) for c in x] for x in u.vertices() + v.vertices()])
    gap = float(np.abs(u(probe) - v(probe)).max()) if len(probe) else 0.0
    budget = float(np.abs(np.sqrt(mu.sigmas) - np.sqrt(nu.sigmas)).sum())
    return StabilityProbe(gap, budget)
