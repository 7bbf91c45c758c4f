"""Grid evaluation of the plate energy and the optimal in-plane displacement.

Every square lattice cell is cut along its (i+1, j)-(i, j+1) diagonal into
a lower and an upper triangle. First derivatives are taken per triangle
(P1 interpolation), so strains and the membrane mismatch are piecewise
constant with continuous tangential components along edges. Bending uses
nodal second-difference stencils.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.sparse as sp
from scipy.interpolate import RegularGridInterpolator
from scipy.sparse.linalg import cg

from .errors import GeometryError, NumericError, ParameterError, PreconditionError, ShapeError
from .geom import ConvexPolygon, PLConvexFunction, ma_atoms
from .grid import GridField, box_grid

# ----------------------------------------------------------------------------
# sampling


def grid_for(domain: ConvexPolygon, n: int, pad: int = 0) -> tuple[tuple, float, tuple]:
    """Origin, spacing and shape of a grid with n nodes across the domain's bounding box."""
    V = domain.as_array()
    (x0, y0), (x1, y1) = V.min(axis=0), V.max(axis=0)
    origin, delta, shape = box_grid(x0, y0, x1, y1, n)
    if pad:
        origin = (origin[0] - pad * delta, origin[1] - pad * delta)
        shape = (shape[0] + 2 * pad, shape[1] + 2 * pad)
    return origin, delta, shape


def sample(f, origin, spacing: float, shape, mask=None, domain: ConvexPolygon | None = None) -> GridField:
    """Nodal values of a PL convex function or a vectorized callable.

    ``f`` takes an array of points of shape (..., 2). The mask defaults to
    the closed domain of a PL input, or to ``domain`` when given.
    """
    if not spacing > 0:
        raise ParameterError("grid spacing must be positive")
    n1, n2 = shape
    X, Y = np.meshgrid(origin[0] + spacing * np.arange(n1), origin[1] + spacing * np.arange(n2), indexing="ij")
    pts = np.stack([X, Y], axis=-1)
    if domain is None and isinstance(f, PLConvexFunction):
        domain = f.domain
    if mask is None:
        mask = np.ones(shape, dtype=bool) if domain is None else domain.contains_array(pts, tol=1e-9)
    mask = np.asarray(mask, dtype=bool)
    vals = np.asarray(f(pts[mask]), dtype=float)
    out = np.zeros((n1, n2) + vals.shape[1:])
    out[mask] = vals
    return GridField(origin, spacing, out, mask)


# ----------------------------------------------------------------------------
# lattice triangles


def triangle_masks(mask: np.ndarray) -> np.ndarray:
    """Active lower/upper triangles, shape (2, n1-1, n2-1)."""
    m = mask
    lower = m[:-1, :-1] & m[1:, :-1] & m[:-1, 1:]
    upper = m[1:, 1:] & m[:-1, 1:] & m[1:, :-1]
    return np.stack([lower, upper])


def triangle_gradients(f: np.ndarray, delta: float) -> np.ndarray:
    """P1 gradients, shape (2, n1-1, n2-1, 2[, k]) for nodal f of shape (n1, n2[, k])."""
    lower = np.stack([f[1:, :-1] - f[:-1, :-1], f[:-1, 1:] - f[:-1, :-1]], axis=2)
    upper = np.stack([f[1:, 1:] - f[:-1, 1:], f[1:, 1:] - f[1:, :-1]], axis=2)
    return np.stack([lower, upper]) / delta


def triangle_centroids(g: GridField) -> np.ndarray:
    n1, n2 = g.shape
    d = g.spacing
    x = g.origin[0] + d * np.arange(n1 - 1)
    y = g.origin[1] + d * np.arange(n2 - 1)
    X, Y = np.meshgrid(x, y, indexing="ij")
    low = np.stack([X + d / 3, Y + d / 3], axis=-1)
    up = np.stack([X + 2 * d / 3, Y + 2 * d / 3], axis=-1)
    return np.stack([low, up])


@dataclass(frozen=True, eq=False)
class CellTensor:
    """Symmetric 2x2 tensors (t11, t12, t22), constant on each lattice triangle."""

    origin: tuple
    spacing: float
    mask: np.ndarray  # nodal mask
    values: np.ndarray  # (2, n1-1, n2-1, 3)

    def __post_init__(self):
        n1, n2 = self.mask.shape
        if self.values.shape != (2, n1 - 1, n2 - 1, 3):
            raise ShapeError(f"tensor values {self.values.shape} do not fit a {n1}x{n2} grid")

    @property
    def active(self) -> np.ndarray:
        return triangle_masks(self.mask)

    @property
    def shape(self):
        return self.mask.shape

    def norm(self) -> float:
        return math.sqrt(_tensor_sq(self.values, self.active, self.spacing))

    def __add__(self, other: "CellTensor") -> "CellTensor":
        return CellTensor(self.origin, self.spacing, self.mask, self.values + other.values)

    def scale(self, s: float) -> "CellTensor":
        return CellTensor(self.origin, self.spacing, self.mask, s * self.values)

    @classmethod
    def from_nodal(cls, m: GridField) -> "CellTensor":
        """Average a 3-component nodal field (m11, m12, m22) over each triangle."""
        if m.components != 3:
            raise ShapeError("a nodal tensor field needs 3 components (m11, m12, m22)")
        f = m.values
        lower = (f[:-1, :-1] + f[1:, :-1] + f[:-1, 1:]) / 3
        upper = (f[1:, 1:] + f[:-1, 1:] + f[1:, :-1]) / 3
        vals = np.stack([lower, upper])
        return cls(m.origin, m.spacing, m.mask, np.where(triangle_masks(m.mask)[..., None], vals, 0.0))

    def to_nodal(self) -> GridField:
        """Area-weighted average onto nodes (for export)."""
        n1, n2 = self.shape
        acc = np.zeros((n1, n2, 3))
        cnt = np.zeros((n1, n2))
        act = self.active
        for t, nodes in enumerate(_TRI_NODES):
            v = np.where(act[t][..., None], self.values[t], 0.0)
            for di, dj in nodes:
                acc[di : di + n1 - 1, dj : dj + n2 - 1] += v
                cnt[di : di + n1 - 1, dj : dj + n2 - 1] += act[t]
        acc /= np.maximum(cnt, 1)[..., None]
        return GridField(self.origin, self.spacing, acc, self.mask & (cnt > 0))


_TRI_NODES = (((0, 0), (1, 0), (0, 1)), ((1, 1), (0, 1), (1, 0)))


def _tensor_sq(vals: np.ndarray, active: np.ndarray, delta: float, weight: np.ndarray | None = None) -> float:
    sq = vals[..., 0] ** 2 + 2 * vals[..., 1] ** 2 + vals[..., 2] ** 2
    w = active if weight is None else active & weight
    return float(np.sum(np.where(w, sq, 0.0))) * delta * delta / 2


def strain(u: GridField) -> CellTensor:
    """e(u) = (grad u + grad u^T)/2 on each triangle."""
    if u.components != 2:
        raise ShapeError("displacement fields have 2 components")
    G = triangle_gradients(u.values, u.spacing)  # (2, a, b, d, k): d/dx_d of u_k
    e11 = G[..., 0, 0]
    e22 = G[..., 1, 1]
    e12 = 0.5 * (G[..., 1, 0] + G[..., 0, 1])
    vals = np.stack([e11, e12, e22], axis=-1)
    return CellTensor(u.origin, u.spacing, u.mask, np.where(triangle_masks(u.mask)[..., None], vals, 0.0))


def membrane_tensor(v: GridField, v0: GridField | None = None) -> CellTensor:
    """m = Dv (x) Dv - Dv0 (x) Dv0 with P1 gradients."""
    if v.components != 1:
        raise ShapeError("v must be scalar")
    if v0 is not None and not v.same_grid(v0):
        raise ShapeError("v and v0 live on different grids")
    g = triangle_gradients(v.values, v.spacing)
    vals = np.stack([g[..., 0] ** 2, g[..., 0] * g[..., 1], g[..., 1] ** 2], axis=-1)
    if v0 is not None:
        g0 = triangle_gradients(v0.values, v0.spacing)
        vals = vals - np.stack([g0[..., 0] ** 2, g0[..., 0] * g0[..., 1], g0[..., 1] ** 2], axis=-1)
    return CellTensor(v.origin, v.spacing, v.mask, np.where(triangle_masks(v.mask)[..., None], vals, 0.0))


# ----------------------------------------------------------------------------
# second differences


def _d1(f: np.ndarray, mask: np.ndarray, axis: int, delta: float) -> np.ndarray:
    """First derivative along an axis: centered, else one-sided second order, else two-point."""
    F = np.moveaxis(np.where(mask, f, 0.0), axis, 0)
    M = np.moveaxis(mask, axis, 0)
    n = F.shape[0]
    out = np.zeros_like(F)
    have = np.zeros(M.shape, dtype=bool)

    def sh(A, k):
        # A shifted so that result[i] = A[i + k], False/0 out of range
        B = np.zeros_like(A)
        if k > 0:
            B[: n - k] = A[k:]
        elif k < 0:
            B[-k:] = A[: n + k]
        else:
            B[:] = A
        return B

    m1, p1, p2, m2 = sh(M, -1), sh(M, 1), sh(M, 2), sh(M, -2)
    c = M & m1 & p1
    out = np.where(c, (sh(F, 1) - sh(F, -1)) / (2 * delta), out)
    have |= c
    fw = M & ~have & p1 & p2
    out = np.where(fw, (-3 * F + 4 * sh(F, 1) - sh(F, 2)) / (2 * delta), out)
    have |= fw
    bw = M & ~have & m1 & m2
    out = np.where(bw, (3 * F - 4 * sh(F, -1) + sh(F, -2)) / (2 * delta), out)
    have |= bw
    f2 = M & ~have & p1
    out = np.where(f2, (sh(F, 1) - F) / delta, out)
    have |= f2
    b2 = M & ~have & m1
    out = np.where(b2, (F - sh(F, -1)) / delta, out)
    return np.moveaxis(out, 0, axis)


def _d2(f: np.ndarray, mask: np.ndarray, axis: int, delta: float) -> np.ndarray:
    """Second derivative along an axis: centered, else one-sided second order, else first order."""
    F = np.moveaxis(np.where(mask, f, 0.0), axis, 0)
    M = np.moveaxis(mask, axis, 0)
    n = F.shape[0]

    def sh(A, k):
        B = np.zeros_like(A)
        if k > 0:
            B[: n - k] = A[k:]
        elif k < 0:
            B[-k:] = A[: n + k]
        else:
            B[:] = A
        return B

    out = np.zeros_like(F)
    have = np.zeros(M.shape, dtype=bool)
    d2 = delta * delta
    c = M & sh(M, -1) & sh(M, 1)
    out = np.where(c, (sh(F, 1) - 2 * F + sh(F, -1)) / d2, out)
    have |= c
    fw = M & ~have & sh(M, 1) & sh(M, 2) & sh(M, 3)
    out = np.where(fw, (2 * F - 5 * sh(F, 1) + 4 * sh(F, 2) - sh(F, 3)) / d2, out)
    have |= fw
    bw = M & ~have & sh(M, -1) & sh(M, -2) & sh(M, -3)
    out = np.where(bw, (2 * F - 5 * sh(F, -1) + 4 * sh(F, -2) - sh(F, -3)) / d2, out)
    have |= bw
    f1 = M & ~have & sh(M, 1) & sh(M, 2)
    out = np.where(f1, (F - 2 * sh(F, 1) + sh(F, 2)) / d2, out)
    have |= f1
    b1 = M & ~have & sh(M, -1) & sh(M, -2)
    out = np.where(b1, (F - 2 * sh(F, -1) + sh(F, -2)) / d2, out)
    return np.moveaxis(out, 0, axis)


def hessian(v: GridField) -> np.ndarray:
    """Nodal (v_xx, v_xy, v_yy), shape (n1, n2, 3); zero off the mask."""
    f, m, d = v.values, v.mask, v.spacing
    vxx = _d2(f, m, 0, d)
    vyy = _d2(f, m, 1, d)
    vxy = _d1(_d1(f, m, 1, d), m, 0, d)
    H = np.stack([vxx, vxy, vyy], axis=-1)
    return np.where(m[..., None], H, 0.0)


def node_weights(mask: np.ndarray, delta: float) -> np.ndarray:
    """Quadrature weights: delta^2 times the covered fraction of the four adjacent cells."""
    cell = mask[:-1, :-1] & mask[1:, :-1] & mask[:-1, 1:] & mask[1:, 1:]
    w = np.zeros(mask.shape)
    w[:-1, :-1] += cell
    w[1:, :-1] += cell
    w[:-1, 1:] += cell
    w[1:, 1:] += cell
    return w * (delta * delta / 4)


def hessian_eigs(v: GridField) -> tuple[np.ndarray, np.ndarray]:
    """Smallest and largest eigenvalue of the nodal discrete Hessian."""
    H = hessian(v)
    a, b, c = H[..., 0], H[..., 1], H[..., 2]
    mid = 0.5 * (a + c)
    rad = np.sqrt(0.25 * (a - c) ** 2 + b * b)
    return mid - rad, mid + rad


# ----------------------------------------------------------------------------
# energy


@dataclass(frozen=True)
class EnergyBreakdown:
    membrane: float
    bending: float
    total: float
    h: float
    excision_radius: float = 0.0
    unexcised: "EnergyBreakdown | None" = None

    def to_json(self) -> dict:
        out = {
            "membrane": self.membrane,
            "bending": self.bending,
            "total": self.total,
            "h": self.h,
            "excision_radius": self.excision_radius,
        }
        if self.unexcised is not None:
            out["unexcised"] = self.unexcised.to_json()
        return out


def _excision_masks(g: GridField, atoms, radius: float):
    pts = np.asarray(atoms, dtype=float).reshape(-1, 2)
    P = g.points()
    C = triangle_centroids(g)
    node_keep = np.ones(g.shape, dtype=bool)
    tri_keep = np.ones(C.shape[:-1], dtype=bool)
    for a in pts:
        node_keep &= np.hypot(P[..., 0] - a[0], P[..., 1] - a[1]) >= radius
        tri_keep &= np.hypot(C[..., 0] - a[0], C[..., 1] - a[1]) >= radius
    return node_keep, tri_keep


def eval_energy(
    u: GridField,
    v: GridField,
    v0: GridField,
    h: float,
    atoms=None,
    excision: bool = True,
    radius: float | None = None,
) -> EnergyBreakdown:
    """membrane = int |e(u) + Dv(x)Dv - Dv0(x)Dv0|^2, bending = h^2 int |D^2 v|^2.

    With ``atoms`` given and ``excision`` on, discs of radius max(2 delta, h)
    around them are left out; the full integrals are kept in ``unexcised``.
    """
    if not h > 0:
        raise ParameterError("h must be positive")
    if u.components != 2 or v.components != 1 or v0.components != 1:
        raise ShapeError("expected a vector u and scalar v, v0")
    if not (u.same_grid(v) and v.same_grid(v0)):
        raise ShapeError("u, v and v0 must share one grid")
    d = v.spacing
    mt = membrane_tensor(v, v0) + strain(u)
    act = mt.active
    H = hessian(v)
    hsq = H[..., 0] ** 2 + 2 * H[..., 1] ** 2 + H[..., 2] ** 2
    w = node_weights(v.mask, d)

    def breakdown(node_keep, tri_keep, r):
        mem = _tensor_sq(mt.values, act, d, tri_keep)
        ben = h * h * float(np.sum(np.where(node_keep, w * hsq, 0.0)))
        return mem, ben

    mem, ben = breakdown(True, True, 0.0)
    full = EnergyBreakdown(mem, ben, mem + ben, h)
    if atoms is None or not excision or len(np.atleast_1d(atoms)) == 0:
        return full
    r = max(2 * d, h) if radius is None else radius
    nk, tk = _excision_masks(v, atoms, r)
    mem, ben = breakdown(nk, tk, r)
    return EnergyBreakdown(mem, ben, mem + ben, h, r, full)


# ----------------------------------------------------------------------------
# optimal in-plane displacement


@dataclass
class _StrainOperator:
    """Sparse map from nodal displacements to sqrt(area)-weighted triangle strains."""

    A: sp.csr_matrix
    nodes: np.ndarray  # flat indices of unknown nodes
    rows: np.ndarray  # (2, a, b) row offset of each triangle, -1 if inactive


def _strain_operator(mask: np.ndarray, delta: float) -> _StrainOperator:
    n1, n2 = mask.shape
    act = triangle_masks(mask)
    used = np.zeros(mask.shape, dtype=bool)
    for t, nodes in enumerate(_TRI_NODES):
        for di, dj in nodes:
            used[di : di + n1 - 1, dj : dj + n2 - 1] |= act[t]
    index = -np.ones(mask.shape, dtype=np.int64)
    nodes = np.flatnonzero(used)
    index.ravel()[nodes] = np.arange(len(nodes))
    rows = -np.ones(act.shape, dtype=np.int64)
    count = int(act.sum())
    rows[act] = np.arange(count)
    I, J = np.meshgrid(np.arange(n1 - 1), np.arange(n2 - 1), indexing="ij")
    s = math.sqrt(delta * delta / 2) / delta
    r2 = math.sqrt(2.0)
    ri, ci, vi = [], [], []
    # per triangle: d/dx = (f[b] - f[a]) / delta, d/dy = (f[c] - f[a']) / delta
    specs = (
        (((1, 0), (0, 0)), ((0, 1), (0, 0))),  # lower
        (((1, 1), (0, 1)), ((1, 1), (1, 0))),  # upper
    )
    for t, ((xp, xm), (yp, ym)) in enumerate(specs):
        a = act[t]
        rr = rows[t][a] * 3
        ii, jj = I[a], J[a]
        nx_p = index[ii + xp[0], jj + xp[1]]
        nx_m = index[ii + xm[0], jj + xm[1]]
        ny_p = index[ii + yp[0], jj + yp[1]]
        ny_m = index[ii + ym[0], jj + ym[1]]
        # e11 = d u1/dx
        ri += [rr, rr]
        ci += [2 * nx_p, 2 * nx_m]
        vi += [np.full(len(rr), s), np.full(len(rr), -s)]
        # sqrt(2) e12 = (d u1/dy + d u2/dx) / sqrt(2)
        ri += [rr + 1] * 4
        ci += [2 * ny_p, 2 * ny_m, 2 * nx_p + 1, 2 * nx_m + 1]
        vi += [np.full(len(rr), s / r2), np.full(len(rr), -s / r2), np.full(len(rr), s / r2), np.full(len(rr), -s / r2)]
        # e22 = d u2/dy
        ri += [rr + 2, rr + 2]
        ci += [2 * ny_p + 1, 2 * ny_m + 1]
        vi += [np.full(len(rr), s), np.full(len(rr), -s)]
    A = sp.csr_matrix(
        (np.concatenate(vi), (np.concatenate(ri), np.concatenate(ci))),
        shape=(3 * count, 2 * len(nodes)),
    )
    return _StrainOperator(A, nodes, rows)


def _tensor_rhs(m: CellTensor, op: _StrainOperator) -> np.ndarray:
    s = math.sqrt(m.spacing * m.spacing / 2)
    act = m.active
    b = np.zeros(op.A.shape[0])
    for t in range(2):
        rr = op.rows[t][act[t]] * 3
        vals = m.values[t][act[t]]
        b[rr] = s * vals[:, 0]
        b[rr + 1] = s * math.sqrt(2.0) * vals[:, 1]
        b[rr + 2] = s * vals[:, 2]
    return b


def _rigid_modes(xy: np.ndarray) -> np.ndarray:
    n = len(xy)
    B = np.zeros((2 * n, 3))
    B[0::2, 0] = 1
    B[1::2, 1] = 1
    c = xy - xy.mean(axis=0)
    B[0::2, 2] = -c[:, 1]
    B[1::2, 2] = c[:, 0]
    return B


def optimal_inplane(
    m: CellTensor | GridField,
    tol: float = 1e-10,
    maxiter: int | None = None,
    preconditioner: str = "amg",
) -> tuple[GridField, float]:
    """argmin_u ||e(u) + m||_{L2} and the attained norm.

    The normal equations are solved by preconditioned conjugate gradients;
    mean translation and mean rotation of the result are projected out.
    """
    if isinstance(m, GridField):
        m = CellTensor.from_nodal(m)
    op = _strain_operator(m.mask, m.spacing)
    n1, n2 = m.shape
    b = _tensor_rhs(m, op)
    nunk = op.A.shape[1]
    if nunk == 0:
        return GridField(m.origin, m.spacing, np.zeros((n1, n2, 2)), m.mask), math.sqrt(float(b @ b))
    A = op.A
    K = (A.T @ A).tocsr()
    rhs = -(A.T @ b)
    d = m.spacing
    P = np.column_stack(np.unravel_index(op.nodes, (n1, n2))).astype(float) * d + np.asarray(m.origin)
    B = _rigid_modes(P)
    Q, _ = np.linalg.qr(B)
    rhs -= Q @ (Q.T @ rhs)
    if maxiter is None:
        maxiter = 50 * nunk
    bn = float(np.linalg.norm(rhs))
    if bn == 0:
        x = np.zeros(nunk)
    else:
        M = _preconditioner(K, B, preconditioner)
        x, info = cg(K, rhs, rtol=tol, maxiter=maxiter, M=M)
        if info != 0:
            rel = float(np.linalg.norm(rhs - K @ x)) / bn
            raise NumericError(f"in-plane solve stopped at relative residual {rel:.2e}", history=[rel])
    x -= Q @ (Q.T @ x)
    r = A @ x + b
    # components of m on inactive triangles do not enter
    residual = math.sqrt(float(r @ r))
    U = np.zeros((n1 * n2, 2))
    U[op.nodes] = x.reshape(-1, 2)
    mask = np.zeros(n1 * n2, dtype=bool)
    mask[op.nodes] = True
    return GridField(m.origin, d, U.reshape(n1, n2, 2), mask.reshape(n1, n2) & m.mask), residual


def _preconditioner(K, B, kind: str):
    if kind == "jacobi":
        dg = K.diagonal().copy()
        dg[dg == 0] = 1.0
        return sp.diags(1.0 / dg)
    if kind == "amg":
        import pyamg

        # pyamg seeds its spectral radius estimates from the global RNG
        state = np.random.get_state()
        np.random.seed(0)
        try:
            ml = pyamg.smoothed_aggregation_solver(K, B=B, symmetry="hermitian", max_coarse=500)
        finally:
            np.random.set_state(state)
        return ml.aspreconditioner(cycle="V")
    if kind == "none":
        return None
    raise ParameterError(f"unknown preconditioner {kind!r}")


# ----------------------------------------------------------------------------
# dual pairing


def _boundary_nodes(mask: np.ndarray) -> np.ndarray:
    """Nodes of the mask that touch an inactive triangle."""
    n1, n2 = mask.shape
    act = np.pad(triangle_masks(mask), ((0, 0), (1, 1), (1, 1)), constant_values=False)
    bad = np.zeros(mask.shape, dtype=bool)
    for t, nodes in enumerate(_TRI_NODES):
        for di, dj in nodes:
            # triangle (i - di, j - dj) of type t contains node (i, j)
            bad |= ~act[t][1 - di : 1 - di + n1, 1 - dj : 1 - dj + n2]
    return bad & mask


# P1 neighbours in the lattice triangulation with (i+1, j)-(i, j+1) diagonals
_NEIGHBOURS = ((1, 0), (-1, 0), (0, 1), (0, -1), (1, -1), (-1, 1))


def support_nodes(mask: np.ndarray) -> np.ndarray:
    """Nodes where a test function may be nonzero so that it vanishes with its gradient at the mask boundary.

    These avoid the boundary nodes and their P1 neighbours, so every triangle
    touching the boundary carries zero gradient.
    """
    n1, n2 = mask.shape
    near = _boundary_nodes(mask) | ~mask
    pad = np.pad(near, 1, constant_values=True)
    blocked = near.copy()
    for di, dj in _NEIGHBOURS:
        blocked |= pad[1 + di : 1 + di + n1, 1 + dj : 1 + dj + n2]
    return mask & ~blocked


def airy_stress(psi: GridField) -> CellTensor:
    """Triangle tensors S with sum_T |T| m_T : S_T = int m : cof D^2 psi.

    For P1 psi the Hessian is carried by the edges, with weight the jump of
    the normal derivative, and cof(n (x) n) = t (x) t. Each interior edge is
    shared equally by its two triangles.
    """
    f, M, d = psi.values, psi.mask, psi.spacing
    n1, n2 = psi.shape
    G = triangle_gradients(np.where(M, f, 0.0), d)  # (2, a, b, 2)
    act = triangle_masks(M)
    G = np.where(act[..., None], G, 0.0)
    Gl, Gu = G[0], G[1]
    area = d * d / 2
    S = np.zeros((2, n1 - 1, n2 - 1, 3))
    # diagonal edge inside cell (i, j): normal (1, 1)/sqrt2 from lower to upper, t = (-1, 1)/sqrt2
    jd = ((Gu - Gl) @ np.array([1.0, 1.0])) / math.sqrt(2)
    tt_d = np.array([0.5, -0.5, 0.5])
    L = math.sqrt(2) * d
    for t in range(2):
        S[t] += 0.5 * (L * jd / area)[..., None] * tt_d
    # horizontal edges (t = e1) between upper of cell (i, j-1) and lower of cell (i, j)
    tt_x = np.array([1.0, 0.0, 0.0])
    Gl_pad = np.concatenate([Gl, np.zeros((n1 - 1, 1, 2))], axis=1)  # lower of cell (i, j), j = 0..n2-1
    Gu_pad = np.concatenate([np.zeros((n1 - 1, 1, 2)), Gu], axis=1)  # upper of cell (i, j-1)
    jx = Gl_pad[..., 1] - Gu_pad[..., 1]  # normal +e2 from upper(i, j-1) into lower(i, j)
    S[0] += 0.5 * (d * jx[:, :-1] / area)[..., None] * tt_x
    S[1] += 0.5 * (d * jx[:, 1:] / area)[..., None] * tt_x
    # vertical edges (t = e2) between upper of cell (i-1, j) and lower of cell (i, j)
    tt_y = np.array([0.0, 0.0, 1.0])
    Gl_pad = np.concatenate([Gl, np.zeros((1, n2 - 1, 2))], axis=0)
    Gu_pad = np.concatenate([np.zeros((1, n2 - 1, 2)), Gu], axis=0)
    jy = Gl_pad[..., 0] - Gu_pad[..., 0]
    S[0] += 0.5 * (d * jy[:-1] / area)[..., None] * tt_y
    S[1] += 0.5 * (d * jy[1:] / area)[..., None] * tt_y
    return CellTensor(psi.origin, psi.spacing, psi.mask, np.where(act[..., None], S, 0.0))


def _pairing(m: CellTensor, S: CellTensor) -> float:
    a, b = m.values, S.values
    dot = a[..., 0] * b[..., 0] + 2 * a[..., 1] * b[..., 1] + a[..., 2] * b[..., 2]
    return float(np.sum(np.where(m.active, dot, 0.0))) * m.spacing * m.spacing / 2


def dual_pairing_check(m: CellTensor | GridField, psi: GridField) -> float:
    """|int m : cof D^2 psi| / ||D^2 psi||, a lower bound for the residual of optimal_inplane.

    psi must vanish, with its gradient, at the mask boundary: it may be
    nonzero only on ``support_nodes(mask)``.
    """
    if isinstance(m, GridField):
        m = CellTensor.from_nodal(m)
    if psi.components != 1 or psi.shape != m.shape or not np.array_equal(psi.mask, m.mask):
        raise ShapeError("psi must be a scalar field on the grid of m")
    vals = np.where(psi.mask, psi.values, 0.0)
    if np.any(vals[~support_nodes(psi.mask)] != 0):
        raise PreconditionError("psi must vanish with its gradient at the mask boundary")
    S = airy_stress(psi)
    nrm = S.norm()
    if nrm == 0:
        return 0.0
    return abs(_pairing(m, S)) / nrm


# ----------------------------------------------------------------------------
# diagnostics


def F_conical(v: PLConvexFunction, E: ConvexPolygon, apex) -> float:
    """sum over atoms in E of mass * |x - apex|."""
    if not E.contains(apex):
        raise PreconditionError("apex must lie in E")
    tot = 0.0
    for a in ma_atoms(v).atoms:
        if E.contains(a.point):
            tot += float(a.mass) * math.hypot(float(a.point[0]) - float(apex[0]), float(a.point[1]) - float(apex[1]))
    return tot


def grid_ma_measure(v: GridField) -> np.ndarray:
    """Nodal discrete Monge-Ampere masses: signed area of the P1 gradient polygon around each node.

    Nodes touching an inactive triangle get zero.
    """
    G = triangle_gradients(np.where(v.mask, v.values, 0.0), v.spacing)
    Gl, Gu = G[0], G[1]
    n1, n2 = v.shape
    out = np.zeros((n1, n2))
    # triangles around interior node (i, j) in counterclockwise order
    ring = [
        Gl[1:, 1:],  # lower of cell (i, j): east-north sector
        Gu[:-1, 1:],  # upper of cell (i-1, j)
        Gl[:-1, 1:],  # lower of cell (i-1, j)
        Gu[:-1, :-1],  # upper of cell (i-1, j-1)
        Gl[1:, :-1],  # lower of cell (i, j-1)
        Gu[1:, :-1],  # upper of cell (i, j-1)
    ]
    acc = 0.0
    for k in range(6):
        g, hnext = ring[k], ring[(k + 1) % 6]
        acc = acc + g[..., 0] * hnext[..., 1] - g[..., 1] * hnext[..., 0]
    out[1:-1, 1:-1] = 0.5 * acc
    out[_boundary_nodes(v.mask) | ~v.mask] = 0.0
    return out


@dataclass(frozen=True)
class RidgeGapProfile:
    points: np.ndarray
    dist: np.ndarray
    gap: np.ndarray
    envelope: np.ndarray
    F: float

    @property
    def max_ratio(self) -> float:
        env = np.where(self.envelope > 0, self.envelope, np.nan)
        r = self.gap / env
        r = r[np.isfinite(r)]
        return float(r.max()) if r.size else 0.0


def _four_point_lift(q: np.ndarray, z: np.ndarray):
    """Lower convex hull of four points: max of the planes through three of them lying below the fourth."""
    planes = []
    for k in range(4):
        tri = [m for m in range(4) if m != k]
        M = np.column_stack([q[tri], np.ones(3)])
        pl = np.linalg.solve(M, z[tri])
        if pl[0] * q[k, 0] + pl[1] * q[k, 1] + pl[2] <= z[k] + 1e-12 * (1 + abs(z[k])):
            planes.append(pl)
    P = np.array(planes)
    return lambda x: (x[..., 0, None] * P[:, 0] + x[..., 1, None] * P[:, 1] + P[:, 2]).max(axis=-1)


def _side(x, a, b):
    return (b[0] - a[0]) * (x[..., 1] - a[1]) - (b[1] - a[1]) * (x[..., 0] - a[0])


def ridge_gap_diagnostic(v, ridge, atoms, n: int = 21) -> RidgeGapProfile:
    """Gap |v - L v| on the rhombus of a ridge, against sqrt(F) sqrt(F + dist).

    ``v`` is a PLConvexFunction or a scalar GridField (linearly interpolated),
    ``atoms`` the disclination points so that a_i = atoms[ridge.i].
    """
    pts = np.asarray(atoms, dtype=float).reshape(-1, 2)
    ai, aj = pts[ridge.i], pts[ridge.j]
    bp, bm = np.asarray(ridge.b_plus, float), np.asarray(ridge.b_minus, float)
    quad = np.array([ai, bp, aj, bm])
    area = 0.5 * abs(_side(bp, ai, aj)) + 0.5 * abs(_side(bm, ai, aj))
    if not area > 1e-14 or _side(bp, ai, aj) * _side(bm, ai, aj) >= 0:
        raise GeometryError("degenerate rhombus")
    if isinstance(v, PLConvexFunction):
        f = lambda X: v(X)
        atoms_v = [(np.array([float(a.point[0]), float(a.point[1])]), float(a.mass)) for a in ma_atoms(v).atoms]
    elif isinstance(v, GridField):
        f = _bilinear(v)
        mu = grid_ma_measure(v)
        P = v.points()
        nz = mu != 0
        atoms_v = list(zip(P[nz], mu[nz]))
    else:
        raise PreconditionError("v must be a PLConvexFunction or a GridField")
    poly = ConvexPolygon(tuple(map(tuple, quad)))
    F = 0.0
    for x, mass in atoms_v:
        if poly.contains(tuple(x)):
            F += mass * min(np.hypot(*(x - ai)), np.hypot(*(x - aj)))
    # transect grid in rhombus coordinates: x = a_i + s (a_j - a_i) + t (b - mid)
    s = np.linspace(0, 1, n)
    t = np.linspace(-1, 1, n)
    S, T = np.meshgrid(s, t, indexing="ij")
    lam = 1 - np.abs(2 * S - 1)
    mid = 0.5 * (ai + aj)
    Bp, Bm = bp - mid, bm - mid
    X = ai + S[..., None] * (aj - ai) + (lam * np.clip(T, 0, None))[..., None] * Bp + (lam * np.clip(-T, 0, None))[..., None] * Bm
    X = X.reshape(-1, 2)
    L = _four_point_lift(quad, np.asarray(f(quad), dtype=float))
    gap = np.abs(np.asarray(f(X), dtype=float) - L(X))
    e = (aj - ai) / np.linalg.norm(aj - ai)
    r = X - ai
    along = np.clip(r @ e, 0, np.linalg.norm(aj - ai))
    dist = np.linalg.norm(r - along[:, None] * e, axis=1)
    F = max(F, 0.0)
    env = math.sqrt(F) * np.sqrt(F + dist)
    return RidgeGapProfile(X, dist, gap, env, F)


def _bilinear(g: GridField) -> Callable:
    n1, n2 = g.shape
    x = g.origin[0] + g.spacing * np.arange(n1)
    y = g.origin[1] + g.spacing * np.arange(n2)
    it = RegularGridInterpolator((x, y), g.values, bounds_error=False, fill_value=None)
    return lambda X: it(np.asarray(X, dtype=float).reshape(-1, 2)).reshape(np.shape(X)[:-1])
