"""Explicit deformation families and exact fixtures.

* ``convex_family``: ridges of v0 smoothed in strips of width ~ h^(2/3),
  atoms repaired by the upper smoothing P.
* ``nonconvex_family``: ridges replaced by a non-convex profile whose width
  varies like h^(1/3) l^(2/3) along the ridge.
* ``no_bc_family``: superposed double cones without boundary conditions.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, lru_cache

import numpy as np
from numpy.polynomial import polynomial as npoly
from scipy.integrate import quad
from scipy.optimize import brentq

from .convex import LiftSpec, is_discrete_convex, lift, lower_envelope_nodes
from .energy import EnergyBreakdown, eval_energy, hessian_eigs, membrane_tensor, optimal_inplane
from .errors import ConstructionError, GeometryError, ParameterError
from .geom import AffineSupport, ConvexPolygon, PLConvexFunction
from .grid import GridField
from .solver import DisclinationMeasure, Ridge, RidgeSet, extract_ridges, solve_mad

# smoothstep S(x) = 6x^5 - 15x^4 + 10x^3 and friends, as coefficient arrays (low to high)
_S = np.array([0, 0, 0, 10, -15, 6], dtype=float)
_S1 = npoly.polyint(_S)  # antiderivative, S1(0) = 0
_dS = npoly.polyder(_S)
_I_SS = float(npoly.polyval(1.0, npoly.polyint(npoly.polymul(_S, _S))))
_B = np.array([0, 0, 0, 1, -3, 3, -1], dtype=float)  # x^3 (1 - x)^3
_B1 = npoly.polyint(_B)
_dB = npoly.polyder(_B)


# ----------------------------------------------------------------------------
# domains


@dataclass(frozen=True)
class Disk:
    """A round domain; the solver sees its inscribed regular m-gon."""

    center: tuple = (0.0, 0.0)
    radius: float = 1.0
    m: int = 1024

    def __post_init__(self):
        if not self.radius > 0:
            raise ParameterError("radius must be positive")
        object.__setattr__(self, "center", (float(self.center[0]), float(self.center[1])))

    @cached_property
    def polygon(self) -> ConvexPolygon:
        return ConvexPolygon.regular(self.m, self.center, self.radius)

    def as_array(self) -> np.ndarray:
        c, r = self.center, self.radius
        return np.array([[c[0] - r, c[1] - r], [c[0] + r, c[1] - r], [c[0] + r, c[1] + r], [c[0] - r, c[1] + r]])

    @property
    def diameter(self) -> float:
        return 2 * self.radius

    def contains(self, x, strict: bool = False) -> bool:
        d = math.hypot(x[0] - self.center[0], x[1] - self.center[1])
        return d < self.radius if strict else d <= self.radius

    def contains_array(self, X: np.ndarray, strict: bool = False, tol: float = 1e-12) -> np.ndarray:
        d = np.hypot(X[..., 0] - self.center[0], X[..., 1] - self.center[1])
        return d < self.radius - tol if strict else d <= self.radius * (1 + tol)

    def boundary_distance(self, x) -> float:
        return self.radius - math.hypot(x[0] - self.center[0], x[1] - self.center[1])

    def to_json(self) -> dict:
        return {"disk": {"center": list(self.center), "radius": self.radius, "m": self.m}}


def domain_from_json(data) -> ConvexPolygon | Disk:
    if isinstance(data, dict) and "disk" in data:
        d = data["disk"]
        return Disk(tuple(d.get("center", (0.0, 0.0))), float(d.get("radius", 1.0)), int(d.get("m", 1024)))
    if isinstance(data, dict):
        data = data["vertices"] if "vertices" in data else data["domain"]
    return ConvexPolygon(tuple((float(x), float(y)) for x, y in data))


def _polygon_of(domain) -> ConvexPolygon:
    return domain.polygon if isinstance(domain, Disk) else domain


# ----------------------------------------------------------------------------
# reference solution v0


class Reference:
    """The solution v0 of the Dirichlet problem, evaluable at many points.

    On polygons this is the PL solver output. On a disk the heights come
    from the inscribed-polygon solve and v0 is then evaluated exactly as the
    largest convex function below the data: the max over supporting planes
    through three atoms, planes through two atoms tangent to the circle, and
    cones from one atom to the circle where their tangent planes are valid.
    """

    def __init__(self, domain, mu: DisclinationMeasure, tol: float = 1e-10):
        self.domain = domain
        self.mu = mu
        self.pl, self.report = solve_mad(_polygon_of(domain), mu, tol)
        self.points = mu.points
        self.heights = np.array(self.report.heights)
        ridges = extract_ridges(self.pl, mu)
        if isinstance(domain, Disk):
            self._P, self._c = _disk_planes(np.array(domain.center), domain.radius, self.points, self.heights)
            ridges = RidgeSet(tuple(self._exact_ridge(r) for r in ridges.ridges), ridges.points)
        self.ridges = ridges

    def _exact_ridge(self, r: Ridge) -> Ridge:
        # gradients of the exact planes through both atoms closest to the polygon ones
        a_i, a_j = self.points[r.i], self.points[r.j]
        hi, hj = self.heights[r.i], self.heights[r.j]
        vi = self._P @ a_i + self._c
        vj = self._P @ a_j + self._c
        both = np.flatnonzero((np.abs(vi - hi) < 1e-9) & (np.abs(vj - hj) < 1e-9))
        out = []
        for p in (r.p_plus, r.p_minus):
            if len(both) == 0:
                out.append(p)
                continue
            k = both[np.argmin(np.hypot(*(self._P[both] - np.asarray(p)).T))]
            out.append((float(self._P[k, 0]), float(self._P[k, 1])))
        return Ridge(r.i, r.j, r.b_plus, r.b_minus, out[0], out[1])

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if not isinstance(self.domain, Disk):
            return self.pl(X)
        shape = X.shape[:-1]
        X = X.reshape(-1, 2)
        out = np.empty(len(X))
        step = 1 << 16
        for s in range(0, len(X), step):
            out[s : s + step] = self._disk_eval(X[s : s + step])
        return out.reshape(shape)

    def _disk_eval(self, X: np.ndarray) -> np.ndarray:
        c = np.array(self.domain.center)
        r = self.domain.radius
        if len(self._c):
            val = (X @ self._P.T + self._c).max(axis=1)
        else:
            val = np.full(len(X), -np.inf)
        A = self.points - c
        H = self.heights
        for i in range(len(H)):
            d = X - self.points[i]
            dd = np.einsum("ij,ij->i", d, d)
            ad = d @ A[i]
            apex = dd < 1e-300
            dd_safe = np.where(apex, 1.0, dd)
            s = (-ad + np.sqrt(np.maximum(ad * ad - dd_safe * (A[i] @ A[i] - r * r), 0.0))) / dd_safe
            cone = np.where(apex, H[i], H[i] * (1 - 1 / np.where(apex, 1.0, s)))
            b = self.points[i] + s[:, None] * d
            n = (b - c) / r
            lam = H[i] / (n @ A[i] - r)
            ok = np.ones(len(X), dtype=bool)
            for j in range(len(H)):
                if j != i:
                    ok &= lam * (n @ A[j] - r) <= H[j] + 1e-12 * (1 + abs(H[j]))
            ok |= apex
            val = np.where(ok, np.maximum(val, cone), val)
        return val


def _disk_planes(c: np.ndarray, r: float, pts: np.ndarray, H: np.ndarray):
    """Valid supporting planes through two atoms (tangent to the circle) or three atoms."""
    N = len(H)
    A = pts - c
    tol = 1e-12
    planes = []

    def valid(p, c0):
        if p @ c + r * math.hypot(*p) + c0 > tol:
            return False
        return bool(np.all(pts @ p + c0 <= H + tol * (1 + np.abs(H))))

    for i in range(N):
        for j in range(i + 1, N):
            dA = A[i] - A[j]
            n = np.array([-dA[1], dA[0]]) / np.hypot(*dA)
            p0 = (H[i] - H[j]) * dA / (dA @ dA)
            al = p0 @ A[i] - H[i]
            be = n @ A[i]
            qa = be * be - r * r
            qb = 2 * (al * be - r * r * (p0 @ n))
            qc = al * al - r * r * (p0 @ p0)
            disc = qb * qb - 4 * qa * qc
            if disc < 0:
                continue
            for sg in (1, -1):
                t = (-qb + sg * math.sqrt(disc)) / (2 * qa)
                p = p0 + t * n
                if al + be * t < -1e-12:
                    continue
                c0 = -(p @ c) - r * math.hypot(*p)
                if valid(p, c0):
                    planes.append((p[0], p[1], c0))
    for i in range(N):
        for j in range(i + 1, N):
            for k in range(j + 1, N):
                M = np.array([[*pts[i], 1.0], [*pts[j], 1.0], [*pts[k], 1.0]])
                if abs(np.linalg.det(M)) < 1e-14:
                    continue
                p1, p2, c0 = np.linalg.solve(M, H[[i, j, k]])
                if valid(np.array([p1, p2]), c0):
                    planes.append((p1, p2, c0))
    if not planes:
        return np.zeros((0, 2)), np.zeros(0)
    P = np.array(planes)
    return P[:, :2].copy(), P[:, 2].copy()


# ----------------------------------------------------------------------------
# ridge profiles


@dataclass(frozen=True)
class RidgeProfile:
    """Two-slope profile W and its C^2 convex smoothing w on [-M, M].

    w' = alpha + (beta - alpha) S((t + M) / (2M)) with the quintic smoothstep
    S, and M fixed by the matching condition
    int_{-M}^{M} W'^2 - w'^2 dt = W'(M) - W'(-M).
    """

    alpha: float
    beta: float
    M: float

    @property
    def jump(self) -> float:
        return self.beta - self.alpha

    def W(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(t < 0, self.alpha * t, self.beta * t)

    def dW(self, t):
        return np.where(np.asarray(t) < 0, self.alpha, self.beta)

    def _x(self, t):
        return np.clip((np.asarray(t, dtype=float) + self.M) / (2 * self.M), 0.0, 1.0)

    def w(self, t):
        t = np.asarray(t, dtype=float)
        x = self._x(t)
        inner = -self.alpha * self.M + 2 * self.M * (self.alpha * x + self.jump * npoly.polyval(x, _S1))
        return np.where(np.abs(t) < self.M, inner, self.W(t))

    def dw(self, t):
        return self.alpha + self.jump * npoly.polyval(self._x(t), _S)

    def d2w(self, t):
        t = np.asarray(t, dtype=float)
        return np.where(np.abs(t) < self.M, self.jump * npoly.polyval(self._x(t), _dS) / (2 * self.M), 0.0)

    @property
    def max_curvature(self) -> float:
        return self.jump * 15 / 16 / self.M

    def matching_residual(self) -> float:
        lhs, _ = quad(lambda t: float(self.dW(t)) ** 2 - float(self.dw(t)) ** 2, -self.M, self.M, points=[0.0], epsabs=1e-14, epsrel=1e-13, limit=200)
        return lhs - self.jump


def matching_M(jump: float) -> float:
    """Closed form of the half-width: M = 1 / (jump (1 - 2 int_0^1 S^2))."""
    return 1.0 / (jump * (1 - 2 * _I_SS))


def make_profile(p_minus, p_plus, direction) -> RidgeProfile:
    """Profile across a ridge with direction e; p_plus lies on the side of e rotated by +90 degrees."""
    e = np.asarray(direction, dtype=float)
    e = e / np.linalg.norm(e)
    n = np.array([-e[1], e[0]])
    pm, pp = np.asarray(p_minus, dtype=float), np.asarray(p_plus, dtype=float)
    if np.allclose(pm, pp, rtol=0, atol=1e-14):
        raise ParameterError("p+ = p-: there is no ridge")
    alpha, beta = float(pm @ n), float(pp @ n)
    jump = beta - alpha
    if not jump > 0:
        raise ParameterError("the slopes across a convex ridge must increase")

    def mismatch(M):
        # int (W'^2 - w'^2) on [-M, M]; the smoothed slope is integrated in the unit variable
        slope = jump * _S
        slope[0] += alpha
        x2 = npoly.polyint(npoly.polymul(slope, slope))
        return M * (alpha * alpha + beta * beta) - 2 * M * float(npoly.polyval(1.0, x2)) - jump

    try:
        M = brentq(mismatch, 1e-12 / jump, 1e12 / jump, xtol=1e-300, rtol=4 * np.finfo(float).eps, maxiter=500)
    except ValueError as exc:
        raise ConstructionError(f"matching condition has no root: {exc}") from exc
    return RidgeProfile(alpha, beta, M)


@dataclass(frozen=True)
class OvershootProfile:
    """Even C^2 profile G with G = |t| for |t| >= 1 and int_{-1}^{1} G'^2 = 2.

    G'(t) = sign(t) (S(|t|) + c b(|t|)) with b(x) = x^3 (1 - x)^3. Keeping the
    integral of G'^2 equal to that of |t|'^2 makes the Gauss curvature of a
    ridge smoothed with this profile integrate to zero across the ridge;
    the price is G' > 1 somewhere, so G is not convex.
    """

    c: float

    @classmethod
    def solve(cls) -> "OvershootProfile":
        sb = float(npoly.polyval(1.0, npoly.polyint(npoly.polymul(_S, _B))))
        bb = float(npoly.polyval(1.0, npoly.polyint(npoly.polymul(_B, _B))))
        # I_SS + 2 c sb + c^2 bb = 1
        c = (-sb + math.sqrt(sb * sb + bb * (1 - _I_SS))) / bb
        return cls(c)

    @property
    def G0(self) -> float:
        return 1.0 - 0.5 - self.c * float(npoly.polyval(1.0, _B1))

    def G(self, t):
        x = np.abs(np.asarray(t, dtype=float))
        inner = self.G0 + npoly.polyval(np.minimum(x, 1), _S1) + self.c * npoly.polyval(np.minimum(x, 1), _B1)
        return np.where(x < 1, inner, x)

    def dG(self, t):
        t = np.asarray(t, dtype=float)
        x = np.minimum(np.abs(t), 1)
        return np.sign(t) * (npoly.polyval(x, _S) + self.c * npoly.polyval(x, _B))

    def d2G(self, t):
        x = np.abs(np.asarray(t, dtype=float))
        return np.where(x < 1, npoly.polyval(np.minimum(x, 1), _dS) + self.c * npoly.polyval(np.minimum(x, 1), _dB), 0.0)

    def energy_balance(self) -> float:
        """int_{-1}^{1} G'^2 - 1 dt (zero by construction)."""
        # G' is a polynomial on [0, 1] and odd, so integrate exactly on one side
        q = npoly.polysub(npoly.polymul(*(npoly.polyadd(_S, self.c * _B),) * 2), [1.0])
        return float(2 * npoly.polyval(1.0, npoly.polyint(q)))


# ----------------------------------------------------------------------------
# exact fixtures


def cone_u(X, eps: float) -> np.ndarray:
    """The one-homogeneous double-cone function u_eps with mu = (4 eps / 3) delta_0."""
    X = np.asarray(X, dtype=float)
    x1, x2 = X[..., 0], X[..., 1]
    ax = np.abs(x1)
    inside = np.abs(x2) < eps * ax
    safe = np.where(inside, ax, 1.0)
    return np.where(inside, eps * ax / 2 + x2 * x2 / (2 * eps * safe), np.abs(x2))


def cone_pl(eps, k: int, domain: ConvexPolygon | None = None) -> PLConvexFunction:
    """PL approximation of u_eps: the max of k sampled gradients of u_eps.

    The gradient image of u_eps is bounded by the arcs
    ((eps/2)(1 - t^2) s, t), s = +-1, t in [-1, 1]; k/2 + 1 equally spaced t
    per arc (endpoints shared) give k supports through the origin.
    """
    if k < 4 or k % 2:
        raise ParameterError("k must be an even integer >= 4")
    if domain is None:
        domain = ConvexPolygon.box(-1, -1, 1, 1) if isinstance(eps, (int, Fraction)) else ConvexPolygon.box(-1.0, -1.0, 1.0, 1.0)
    n = k // 2
    exact = isinstance(eps, (int, Fraction))
    ts = [Fraction(2 * q, n) - 1 for q in range(n + 1)] if exact else [2 * q / n - 1 for q in range(n + 1)]
    half = eps / 2
    sup = []
    for t in ts:
        sup.append(AffineSupport((half * (1 - t * t), t), 0))
    for t in ts[1:-1]:
        sup.append(AffineSupport((-half * (1 - t * t), t), 0))
    return PLConvexFunction(domain, sup)


def cone_pl_mass(eps: float, k: int) -> float:
    """Inscribed-polygon area for k samples: 4 eps / 3 - 16 eps / (3 k^2)."""
    return 4 * eps / 3 - 16 * eps / (3 * k * k)


def fixture_vRH(R, H) -> PLConvexFunction:
    """sup{w convex on [-1,1]^2 : w = 0 on the boundary, w(0) = -1, w(R e1) = R - H - 1}.

    The apex value -1 makes the lift over the boundary and the origin the
    pyramid max(|x1|, |x2|) - 1, whose value at R e1 is R - 1; the second
    datum sits H below it.
    """
    if not (0 < R < H < 1):
        raise ParameterError("need 0 < R < H < 1")
    exact = isinstance(R, (int, Fraction)) and isinstance(H, (int, Fraction))
    one = 1 if exact else 1.0
    box = ConvexPolygon.box(-one, -one, one, one)
    zero = 0 if exact else 0.0
    spec = LiftSpec.on_polygon(box, zero, [((zero, zero), -one), ((R, zero), R - H - one)])
    return lift(spec)


# ----------------------------------------------------------------------------
# grids and local smoothing


@dataclass(frozen=True)
class FamilyGrid:
    origin: tuple
    spacing: float
    shape: tuple
    mask: np.ndarray
    points: np.ndarray


def family_grid(domain, h: float, nodes_per_layer: int = 8, max_nodes: int = 1025, spacing: float | None = None) -> FamilyGrid:
    """Grid with `nodes_per_layer` nodes across a layer of width h^(2/3)."""
    if not h > 0:
        raise ParameterError("h must be positive")
    delta = h ** (2 / 3) / nodes_per_layer if spacing is None else spacing
    V = domain.as_array()
    (x0, y0), (x1, y1) = V.min(axis=0), V.max(axis=0)
    # nodes cover the bounding box; the slack absorbs roundoff in the ratio
    n1 = int(math.ceil((x1 - x0) / delta - 1e-9)) + 1
    n2 = int(math.ceil((y1 - y0) / delta - 1e-9)) + 1
    if max(n1, n2) > max_nodes:
        raise ConstructionError(f"grid of {n1}x{n2} nodes exceeds the cap of {max_nodes} per side")
    origin = (0.5 * (x0 + x1) - 0.5 * (n1 - 1) * delta, 0.5 * (y0 + y1) - 0.5 * (n2 - 1) * delta)
    X, Y = np.meshgrid(origin[0] + delta * np.arange(n1), origin[1] + delta * np.arange(n2), indexing="ij")
    P = np.stack([X, Y], axis=-1)
    mask = domain.contains_array(P)
    return FamilyGrid(origin, delta, (n1, n2), mask, P)


def _local_box(g: FamilyGrid, center, half: float):
    d = g.spacing
    i0 = max(int(math.floor((center[0] - half - g.origin[0]) / d)), 0)
    i1 = min(int(math.ceil((center[0] + half - g.origin[0]) / d)) + 1, g.shape[0])
    j0 = max(int(math.floor((center[1] - half - g.origin[1]) / d)), 0)
    j1 = min(int(math.ceil((center[1] + half - g.origin[1]) / d)) + 1, g.shape[1])
    return slice(i0, i1), slice(j0, j1)


def _local_sup(g: FamilyGrid, values: np.ndarray, center, half: float, eps: float, keep: float):
    """P_eps on a box around `center`, pasted back within distance `keep`.

    Returns the new values and the largest distance from `center` at which
    the smoothing changed anything.
    """
    si, sj = _local_box(g, center, half)
    sub = values[si, sj]
    if not g.mask[si, sj].all():
        raise ConstructionError("smoothing window leaves the domain")
    P = g.points[si, sj]
    env, is_vertex = lower_envelope_nodes(P[..., 0], P[..., 1], ((P[..., 0] - center[0]) ** 2 + (P[..., 1] - center[1]) ** 2) / (2 * eps) - sub)
    Q = ((P[..., 0] - center[0]) ** 2 + (P[..., 1] - center[1]) ** 2) / (2 * eps)
    sm = np.where(is_vertex, sub, np.maximum(Q - env, sub))
    r = np.hypot(P[..., 0] - center[0], P[..., 1] - center[1])
    scale = 1e-10 * (1 + np.abs(sub).max())
    changed = (sm - sub) > scale
    reach = float(r[changed].max()) if changed.any() else 0.0
    out = values.copy()
    inner = r <= keep
    out[si, sj] = np.where(inner, sm, sub)
    return out, reach


def _box_lipschitz(g: FamilyGrid, values: np.ndarray, center, half: float) -> float:
    si, sj = _local_box(g, center, half)
    sub, m = values[si, sj], g.mask[si, sj]
    gx = np.where(m[1:] & m[:-1], np.abs(np.diff(sub, axis=0)), 0.0)
    gy = np.where(m[:, 1:] & m[:, :-1], np.abs(np.diff(sub, axis=1)), 0.0)
    return math.hypot(gx.max(initial=0.0), gy.max(initial=0.0)) / g.spacing


def _repair_atom(g: FamilyGrid, values: np.ndarray, center, eps: float, start: float):
    """Apply P_eps near one atom, growing the window until the change is interior.

    A paraboloid of opening eps touching a function with Lipschitz constant L
    at x only sees the function within 2 L eps of x, which fixes the margin
    between the pasted region and the window edge.
    """
    d = g.spacing
    half = start
    for _ in range(12):
        lip = _box_lipschitz(g, values, center, half + 2 * d)
        margin = 2 * lip * eps + 2 * d
        box = half + margin + 2 * d
        new, reach = _local_sup(g, values, center, box, eps, keep=half + d)
        if reach <= half:
            return new, reach
        half = max(1.5 * half, reach + 2 * d)
    raise ConstructionError("upper smoothing does not localize near an atom")


# ----------------------------------------------------------------------------
# families


@dataclass
class FamilyOutput:
    family: str
    h: float
    u: GridField
    v: GridField
    v0: GridField
    residual: float
    atoms: np.ndarray
    v_pl: PLConvexFunction | None = None
    metadata: dict = field(default_factory=dict)

    def energy(self, excision: bool = True) -> EnergyBreakdown:
        return eval_energy(self.u, self.v, self.v0, self.h, atoms=self.atoms, excision=excision)


def _reference(domain, mu, reference):
    if reference is None:
        return Reference(domain, mu)
    return reference


def _window_distance(domain, mu) -> float:
    """Half the smallest atom-to-boundary distance (the inner window offset)."""
    return 0.5 * min(domain.boundary_distance(tuple(a)) for a in mu.points)


def _ridge_frame(ref: Reference, r: Ridge):
    ai, aj = ref.points[r.i], ref.points[r.j]
    l = float(np.linalg.norm(aj - ai))
    e = (aj - ai) / l
    n = np.array([-e[1], e[0]])
    return ai, aj, l, e, n


def _boundary_distance_array(domain, P: np.ndarray) -> np.ndarray:
    if isinstance(domain, Disk):
        return domain.radius - np.hypot(P[..., 0] - domain.center[0], P[..., 1] - domain.center[1])
    out = np.full(P.shape[:-1], np.inf)
    V = domain.as_array()
    for k in range(len(V)):
        a, b = V[k], V[(k + 1) % len(V)]
        t = b - a
        nrm = np.array([-t[1], t[0]]) / np.linalg.norm(t)
        out = np.minimum(out, (P - a) @ nrm)
    return out


def convex_family(
    domain,
    mu: DisclinationMeasure,
    h: float,
    nodes_per_layer: int = 8,
    max_nodes: int = 1025,
    reference: Reference | None = None,
    spacing: float | None = None,
    solve: bool = True,
) -> FamilyOutput:
    """Convex witness with energy ~ h^(4/3): v0 with smoothed ridges and repaired atoms."""
    ref = _reference(domain, mu, reference)
    g = family_grid(domain, h, nodes_per_layer, max_nodes, spacing)
    eps = h ** (2 / 3)
    V0 = np.where(g.mask, ref(np.where(g.mask[..., None], g.points, 0.0)), 0.0)
    vt = V0.copy()
    P = g.points
    profiles = []
    for r in ref.ridges.ridges:
        ai, aj, l, e, n = _ridge_frame(ref, r)
        prof = make_profile(r.p_minus, r.p_plus, e)
        profiles.append(prof)
        s = (P - ai) @ e
        tau = (P - ai) @ n
        line = ref.heights[r.i] + s * (ref.heights[r.j] - ref.heights[r.i]) / l
        w_eps = line + eps * prof.w(tau / eps)
        vt = np.where(g.mask, np.maximum(vt, w_eps), vt)
    curv = max((p.max_curvature for p in profiles), default=1.0)
    c = 0.5 / curv
    v = vt.copy()
    reach = {}
    for i, a in enumerate(ref.points):
        v, reach[i] = _repair_atom(g, v, a, c * eps, 2 * g.spacing)
    changed = np.abs(v - V0) > 1e-12 * (1 + np.abs(V0).max())
    bd = _boundary_distance_array(domain, P)
    window = _window_distance(domain, mu)
    if np.any(changed & (bd < window)):
        raise ConstructionError("the construction reaches outside the inner window (h above h0)")
    v = np.where(bd < window, V0, v)
    vg = GridField(g.origin, g.spacing, np.where(g.mask, v, 0.0), g.mask)
    if not is_discrete_convex(vg, tol=1e-9 * (1 + float(np.abs(v).max()))):
        raise ConstructionError("smoothed function is not discretely convex")
    v0g = GridField(g.origin, g.spacing, V0, g.mask)
    meta = {
        "eps": eps,
        "c": c,
        "M": [p.M for p in profiles],
        "jumps": [p.jump for p in profiles],
        "smoothing_reach": [reach[i] for i in sorted(reach)],
        "spacing": g.spacing,
        "shape": list(g.shape),
    }
    u, res = _inplane(vg, v0g, solve)
    return FamilyOutput("convex", h, u, vg, v0g, res, ref.points, ref.pl, meta)


def _inplane(v: GridField, v0: GridField, solve: bool):
    if not solve:
        return GridField(v.origin, v.spacing, np.zeros(v.shape + (2,)), v.mask), float("nan")
    return optimal_inplane(membrane_tensor(v, v0))


def _smooth_min(a, b, p: float = 4.0):
    lo, hi = np.minimum(a, b), np.maximum(a, b)
    ratio = np.divide(lo, hi, out=np.zeros_like(lo), where=hi > 0)
    return lo * (1 + ratio ** p) ** (-1 / p)


def _bump(r: np.ndarray) -> np.ndarray:
    """C^2 cutoff: 1 for r <= 1/2, 0 for r >= 1, quintic smoothstep in between."""
    x = np.clip(2 * (1 - r), 0, 1)
    return npoly.polyval(x, _S)


def ridge_base_coefficients(A1: float, A2: float, A3: float) -> tuple:
    """A4..A8 of the piecewise-affine in-plane field with grad u + grad u^T = -grad v0 (x) grad v0."""
    return (-A1 * A1 / 2, -A1 * A2, -A2 * A2 / 2, -A1 * A3, -A3 * A3 / 2)


def ridge_base_fields(A1: float, A2: float, A3: float):
    """(u0, w0) in the ridge frame as callables on points (..., 2)."""
    A4, A5, A6, A7, A8 = ridge_base_coefficients(A1, A2, A3)

    def w0(X):
        X = np.asarray(X, dtype=float)
        return A1 * X[..., 0] + np.where(X[..., 1] >= 0, A2, A3) * X[..., 1]

    def u0(X):
        X = np.asarray(X, dtype=float)
        up = X[..., 1] >= 0
        u1 = A4 * X[..., 0] + np.where(up, A5, A7) * X[..., 1]
        u2 = np.where(up, A6, A8) * X[..., 1]
        return np.stack([u1, u2], axis=-1)

    return u0, w0


def base_fields_defect(A1: float, A2: float, A3: float) -> float:
    """max |grad u0 + grad u0^T + grad w0 (x) grad w0| over the two half-planes."""
    A4, A5, A6, A7, A8 = ridge_base_coefficients(A1, A2, A3)
    worst = 0.0
    for B, a5, a6 in ((A2, A5, A6), (A3, A7, A8)):
        Du = np.array([[A4, a5], [0.0, a6]])
        g = np.array([A1, B])
        worst = max(worst, float(np.abs(Du + Du.T + np.outer(g, g)).max()))
    return worst


def nonconvex_family(
    domain,
    mu: DisclinationMeasure,
    h: float,
    nodes_per_layer: int = 8,
    max_nodes: int = 1025,
    reference: Reference | None = None,
    spacing: float | None = None,
    width: float = 1.0,
    solve: bool = True,
) -> FamilyOutput:
    """Non-convex witness with energy ~ h^(5/3).

    Each ridge of v0 is replaced, inside its rhombus, by the overshoot profile
    at width w(s) ~ width * h^(1/3) l^(2/3) (4 s (l - s) / l^2)^(2/3), capped
    to fit the rhombus, then mollified in B(a_i, h).
    """
    ref = _reference(domain, mu, reference)
    g = family_grid(domain, h, nodes_per_layer, max_nodes, spacing)
    V0 = np.where(g.mask, ref(np.where(g.mask[..., None], g.points, 0.0)), 0.0)
    P = g.points
    G = OvershootProfile.solve()
    v = V0.copy()
    support = np.zeros(g.shape, dtype=bool)
    widths = []
    for r in ref.ridges.ridges:
        ai, aj, l, e, n = _ridge_frame(ref, r)
        prof = make_profile(r.p_minus, r.p_plus, e)
        kappa = 0.5 * _rhombus_slope(ai, aj, np.asarray(r.b_plus), np.asarray(r.b_minus))
        s = (P - ai) @ e
        tau = (P - ai) @ n
        sc = np.clip(s, 0, l)
        sig = sc / l
        w_main = width * h ** (1 / 3) * l ** (2 / 3) * (4 * sig * (1 - sig)) ** (2 / 3)
        w_cap = kappa * sc * (l - sc) / l
        w = _smooth_min(w_main, w_cap)
        inside = (s > 0) & (s < l) & (np.abs(tau) < w) & g.mask
        t = np.where(inside, tau / np.where(inside, w, 1.0), 0.0)
        corr = 0.5 * prof.jump * w * (G.G(t) - np.abs(t))
        v = np.where(inside, v + corr, v)
        support |= inside
        widths.append(float(width * h ** (1 / 3) * l ** (2 / 3)))
    # mollify in B(a_i, h): phi (v * eta) + (1 - phi) v
    d = g.spacing
    moll = []
    for a in ref.points:
        rad = int(math.floor(h / d))
        if rad < 1:
            moll.append(False)
            continue
        si, sj = _local_box(g, a, 2 * h + 2 * d)
        sub = v[si, sj]
        k = np.arange(-rad, rad + 1) * d
        KX, KY = np.meshgrid(k, k, indexing="ij")
        eta = np.clip(1 - (KX ** 2 + KY ** 2) / (h * h), 0, None) ** 3
        eta /= eta.sum()
        from scipy.ndimage import convolve

        sm = convolve(sub, eta, mode="nearest")
        R = np.hypot(P[si, sj][..., 0] - a[0], P[si, sj][..., 1] - a[1]) / h
        phi = _bump(R)
        v[si, sj] = phi * sm + (1 - phi) * sub
        moll.append(True)
    vg = GridField(g.origin, g.spacing, np.where(g.mask, v, 0.0), g.mask)
    lo, hi = hessian_eigs(vg)
    interior = g.mask & (_boundary_distance_array(domain, P) > 3 * d)
    indefinite = interior & (lo < -1e-9) & (hi > 1e-9)
    if not indefinite.any():
        raise ConstructionError("expected an indefinite discrete Hessian somewhere")
    v0g = GridField(g.origin, g.spacing, V0, g.mask)
    meta = {
        "width_scale": widths,
        "overshoot_c": G.c,
        "mollified": moll,
        "indefinite_nodes": int(indefinite.sum()),
        "spacing": g.spacing,
        "shape": list(g.shape),
    }
    u, res = _inplane(vg, v0g, solve)
    return FamilyOutput("nonconvex", h, u, vg, v0g, res, ref.points, ref.pl, meta)


def _rhombus_slope(ai, aj, bp, bm) -> float:
    """Smallest tangent of the four angles the rhombus makes with its diagonal at a_i and a_j."""
    e = (aj - ai) / np.linalg.norm(aj - ai)
    n = np.array([-e[1], e[0]])
    out = np.inf
    for b in (bp, bm):
        for a, sgn in ((ai, 1), (aj, -1)):
            d = b - a
            along = sgn * (d @ e)
            if along <= 0:
                raise GeometryError("rhombus corner does not project inside the ridge")
            out = min(out, abs(d @ n) / along)
    return out


def cone_directions(domain, mu: DisclinationMeasure, count: int = 64):
    """(e, eps) with the largest eps making the double cones pairwise disjoint inside the domain."""
    e, eps = _cone_directions(domain, mu, count)
    return np.array(e), eps


@lru_cache(maxsize=32)
def _cone_directions(domain, mu: DisclinationMeasure, count: int):
    if isinstance(domain, Disk):
        # circumscribed polygon, so disjointness inside it covers the disk
        poly = ConvexPolygon.regular(64, domain.center, domain.radius / math.cos(math.pi / 64))
    else:
        poly = domain
    V = poly.as_array()
    pts = mu.points
    best = (None, 0.0)
    for k in range(count):
        th = math.pi * k / count
        e = np.array([math.cos(th), math.sin(th)])
        lo, hi = 0.0, 1.0
        if _cones_disjoint(V, pts, e, hi):
            eps = hi
        else:
            for _ in range(30):
                mid = 0.5 * (lo + hi)
                if _cones_disjoint(V, pts, e, mid):
                    lo = mid
                else:
                    hi = mid
            eps = lo
        if eps > best[1]:
            best = (e, eps)
    if best[0] is None or best[1] <= 0:
        raise GeometryError("no direction keeps the double cones apart")
    return (float(best[0][0]), float(best[0][1])), best[1]


def _nappe(V: np.ndarray, a: np.ndarray, e: np.ndarray, eps: float, sign: int) -> list:
    """Domain polygon clipped to one nappe {sign (x - a).e >= |(x - a).n| / eps}."""
    from .hull import clip_halfplane

    n = np.array([-e[1], e[0]])
    poly = [tuple(p) for p in V]
    for s2 in (1, -1):
        # sign e.(x - a) eps - s2 n.(x - a) >= 0
        g = sign * eps * e - s2 * n
        poly = clip_halfplane(poly, (g[0], g[1]), float(-(g @ a)), exact=False)
        if not poly:
            return []
    return poly


def _polys_intersect(A: list, B: list) -> bool:
    from .hull import clip_halfplane, shoelace

    if len(A) < 3 or len(B) < 3:
        return False
    if shoelace(A) < 0:
        A = A[::-1]
    poly = list(B)
    for k in range(len(A)):
        p, q = A[k], A[(k + 1) % len(A)]
        # left of edge p->q
        a = (-(q[1] - p[1]), q[0] - p[0])
        poly = clip_halfplane(poly, a, -(a[0] * p[0] + a[1] * p[1]), exact=False)
        if len(poly) < 3:
            return False
    return abs(shoelace(poly)) > 1e-14


def _cones_disjoint(V, pts, e, eps) -> bool:
    naps = [[_nappe(V, a, e, eps, s) for s in (1, -1)] for a in pts]
    for i in range(len(pts)):
        for j in range(i + 1, len(pts)):
            for A in naps[i]:
                for B in naps[j]:
                    if _polys_intersect(A, B):
                        return False
    return True


def superposed_cones(X, mu: DisclinationMeasure, e, eps: float) -> np.ndarray:
    """v1 = sum_i sqrt(3 sigma_i / (4 eps)) u_eps(R_e^T (x - a_i))."""
    X = np.asarray(X, dtype=float)
    e = np.asarray(e, dtype=float)
    n = np.array([-e[1], e[0]])
    out = np.zeros(X.shape[:-1])
    for a, s in zip(mu.points, mu.sigmas):
        d = X - a
        loc = np.stack([d @ e, d @ n], axis=-1)
        out = out + math.sqrt(3 * s / (4 * eps)) * cone_u(loc, eps)
    return out


def no_bc_family(
    domain,
    mu: DisclinationMeasure,
    h: float,
    nodes_per_layer: int = 8,
    max_nodes: int = 1025,
    reference: Reference | None = None,
    spacing: float | None = None,
    directions: int = 64,
    opening: float = 0.8,
    solve: bool = True,
) -> FamilyOutput:
    """Witness without boundary conditions, energy ~ h^2 log(1/h): superposed double cones with convex caps."""
    ref = _reference(domain, mu, reference)
    g = family_grid(domain, h, nodes_per_layer, max_nodes, spacing)
    e, eps_max = cone_directions(domain, mu, directions)
    eps = opening * eps_max
    V0 = np.where(g.mask, ref(np.where(g.mask[..., None], g.points, 0.0)), 0.0)
    V1 = np.where(g.mask, superposed_cones(g.points, mu, e, eps), 0.0)
    v = V1.copy()
    d = g.spacing
    caps = []
    for a, s in zip(mu.points, mu.sigmas):
        amp = math.sqrt(3 * s / (4 * eps))
        lip = amp * math.hypot(eps / 2, 1.0)
        # curvature of the cone at distance r is about amp / (eps r); keep changes inside B(a, h)
        pe = h / (amp / eps + 4 * lip)
        half = 2 * h + 6 * d
        v, reach = _local_sup(g, v, a, half, pe, keep=h + 2 * d)
        caps.append({"eps": pe, "reach": reach})
    vg = GridField(g.origin, g.spacing, np.where(g.mask, v, 0.0), g.mask)
    v0g = GridField(g.origin, g.spacing, V0, g.mask)
    meta = {
        "direction": [float(e[0]), float(e[1])],
        "eps_cone": eps,
        "caps": caps,
        "spacing": g.spacing,
        "shape": list(g.shape),
    }
    u, res = _inplane(vg, v0g, solve)
    return FamilyOutput("nobc", h, u, vg, v0g, res, ref.points, None, meta)


FAMILIES = {"convex": convex_family, "nonconvex": nonconvex_family, "nobc": no_bc_family}
