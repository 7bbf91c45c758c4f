"""h-sweeps with exponent fits, randomized property suites and report files."""

from __future__ import annotations

import csv
import io
import json
import math
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np
from scipy import stats

from .constructions import FAMILIES, Disk, Reference, cone_directions, domain_from_json, superposed_cones
from .convex import LiftSpec, alexandrov_gap_check, lift, lifting_support_check
from .energy import (
    CellTensor,
    EnergyBreakdown,
    dual_pairing_check,
    membrane_tensor,
    optimal_inplane,
    sample,
    strain,
    support_nodes,
    triangle_masks,
)
from .errors import ConstructionError, FitError, GeometryError, ParameterError, RidgelabError
from .geom import AffineSupport, ConvexPolygon, PLConvexFunction, first_moment, ma_integral
from .grid import GridField
from .solver import DisclinationMeasure, stability_probe

# ----------------------------------------------------------------------------
# sweeps


def default_fixture() -> tuple[Disk, DisclinationMeasure]:
    """Unit disk with two equal atoms at (+-0.4, 0)."""
    return Disk(), DisclinationMeasure.from_arrays([[-0.4, 0.0], [0.4, 0.0]], [2.0, 2.0])


@dataclass(frozen=True)
class SweepSpec:
    family: str
    h_max: float = 2 ** -5.5
    ratio: float = 2 ** -0.5
    count: int = 8
    nodes_per_layer: int = 8
    max_nodes: int = 1025
    domain: object = None
    measure: DisclinationMeasure | None = None
    seed: int = 0

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ParameterError(f"unknown family {self.family!r}; choose from {sorted(FAMILIES)}")
        if not 0 < self.ratio < 1:
            raise ParameterError("ratio must lie in (0, 1)")
        if self.count < 4:
            raise ParameterError("slope fits need count >= 4")
        if not self.h_max > 0:
            raise ParameterError("h_max must be positive")
        if self.nodes_per_layer < 1:
            raise ParameterError("nodes_per_layer must be >= 1")
        if (self.domain is None) != (self.measure is None):
            raise ParameterError("give both domain and measure, or neither")
        if self.domain is None:
            dom, mu = default_fixture()
            object.__setattr__(self, "domain", dom)
            object.__setattr__(self, "measure", mu)

    @property
    def hs(self) -> list[float]:
        return [self.h_max * self.ratio ** k for k in range(self.count)]

    def to_json(self) -> dict:
        return {
            "family": self.family,
            "h_max": self.h_max,
            "ratio": self.ratio,
            "count": self.count,
            "nodes_per_layer": self.nodes_per_layer,
            "max_nodes": self.max_nodes,
            "domain": self.domain.to_json() if hasattr(self.domain, "to_json") else None,
            "measure": self.measure.to_json(),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SweepSpec":
        dom = domain_from_json(data["domain"]) if data.get("domain") is not None else None
        mu = DisclinationMeasure.from_json(data["measure"]) if data.get("measure") is not None else None
        keys = ("h_max", "ratio", "count", "nodes_per_layer", "max_nodes", "seed")
        return cls(data["family"], domain=dom, measure=mu, **{k: data[k] for k in keys if k in data})


@dataclass(frozen=True)
class PowerFit:
    """log E = log C + beta log h by least squares."""

    beta: float
    stderr: float
    log_c: float
    residual: float
    n: int

    def predict(self, h) -> np.ndarray:
        return np.exp(self.log_c) * np.asarray(h, dtype=float) ** self.beta


@dataclass(frozen=True)
class LogFit:
    """E = a h^2 log(1/h), fitted in log space."""

    a: float
    residual: float
    n: int

    def predict(self, h) -> np.ndarray:
        h = np.asarray(h, dtype=float)
        return self.a * h * h * np.log(1 / h)


def _rms(x) -> float:
    x = np.asarray(x, dtype=float)
    return float(math.sqrt(np.mean(x * x))) if len(x) else 0.0


def fit_power(h, E) -> PowerFit:
    h, E = np.asarray(h, dtype=float), np.asarray(E, dtype=float)
    if len(h) < 4:
        raise FitError(f"need at least 4 feasible points, got {len(h)}")
    if np.any(E <= 0):
        raise FitError("energies must be positive for a log-log fit")
    r = stats.linregress(np.log(h), np.log(E))
    res = np.log(E) - (r.intercept + r.slope * np.log(h))
    return PowerFit(float(r.slope), float(r.stderr), float(r.intercept), _rms(res), len(h))


def fit_log_corrected(h, E) -> LogFit:
    h, E = np.asarray(h, dtype=float), np.asarray(E, dtype=float)
    if len(h) < 4:
        raise FitError(f"need at least 4 feasible points, got {len(h)}")
    model = np.log(h * h * np.log(1 / h))
    la = float(np.mean(np.log(E) - model))
    return LogFit(math.exp(la), _rms(np.log(E) - model - la), len(h))


def fixed_power_residual(h, E, beta: float) -> float:
    """RMS log residual of the best C h^beta at a fixed exponent."""
    lh, lE = np.log(np.asarray(h, dtype=float)), np.log(np.asarray(E, dtype=float))
    d = lE - beta * lh
    return _rms(d - d.mean())


def best_capped_power_residual(h, E, beta_max: float) -> tuple[float, float]:
    """min over beta <= beta_max of the fixed-power residual, and the minimizer.

    The residual is a convex quadratic in beta with minimum at the free
    least-squares slope, so the constrained minimizer is the clipped slope.
    """
    free = fit_power(h, E).beta
    b = min(free, beta_max)
    return fixed_power_residual(h, E, b), b


@dataclass
class SweepPoint:
    h: float
    feasible: bool
    energy: EnergyBreakdown | None = None
    inplane_residual: float | None = None
    message: str = ""
    seconds: float = 0.0
    metadata: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        out = {"h": self.h, "feasible": self.feasible, "message": self.message}
        if self.energy is not None:
            out["energy"] = self.energy.to_json()
            out["inplane_residual"] = self.inplane_residual
        return out


@dataclass
class ScalingReport:
    spec: SweepSpec
    points: list
    fit: PowerFit | None
    fit_untrimmed: PowerFit | None
    fit_unexcised: PowerFit | None
    log_fit: LogFit | None = None
    log_fit_untrimmed: LogFit | None = None
    capped_power: dict | None = None

    @property
    def feasible(self) -> list[bool]:
        return [p.feasible for p in self.points]

    @property
    def beta(self) -> float | None:
        return None if self.fit is None else self.fit.beta

    def to_json(self) -> dict:
        def f(x):
            return None if x is None else asdict(x)

        return {
            "format": "scaling.v1",
            "spec": self.spec.to_json(),
            "points": [p.to_json() for p in sorted(self.points, key=lambda p: -p.h)],
            "fit": f(self.fit),
            "fit_untrimmed": f(self.fit_untrimmed),
            "fit_unexcised": f(self.fit_unexcised),
            "log_fit": f(self.log_fit),
            "log_fit_untrimmed": f(self.log_fit_untrimmed),
            "capped_power": self.capped_power,
        }

    def to_csv(self) -> str:
        return scaling_csv(self.to_json())


CSV_COLUMNS = (
    "h",
    "feasible",
    "membrane",
    "bending",
    "total",
    "membrane_unexcised",
    "bending_unexcised",
    "total_unexcised",
    "fit_power",
    "fit_log",
)


def scaling_csv(report: dict | None) -> str:
    """Plot-ready CSV; fit columns hold the fitted curves at each h."""
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    if report is None:
        return buf.getvalue()
    fit = report.get("fit") or report.get("fit_untrimmed")
    lf = report.get("log_fit")
    for p in report.get("points", []):
        h = p["h"]
        row = [repr(float(h)), int(bool(p["feasible"]))]
        e = p.get("energy")
        if e is None:
            row += [""] * 6
        else:
            un = e.get("unexcised") or e
            row += [repr(e["membrane"]), repr(e["bending"]), repr(e["total"]), repr(un["membrane"]), repr(un["bending"]), repr(un["total"])]
        row.append(repr(float(math.exp(fit["log_c"]) * h ** fit["beta"])) if fit else "")
        row.append(repr(float(lf["a"] * h * h * math.log(1 / h))) if lf else "")
        w.writerow(row)
    return buf.getvalue()


def _run_point(spec: SweepSpec, ref: Reference, h: float) -> SweepPoint:
    t0 = time.perf_counter()
    builder = FAMILIES[spec.family]
    try:
        out = builder(spec.domain, spec.measure, h, nodes_per_layer=spec.nodes_per_layer, max_nodes=spec.max_nodes, reference=ref)
    except (ConstructionError, GeometryError) as exc:
        return SweepPoint(h, False, message=str(exc), seconds=time.perf_counter() - t0)
    E = out.energy()
    return SweepPoint(h, True, E, out.residual, seconds=time.perf_counter() - t0, metadata=out.metadata)


def sweep(spec: SweepSpec, reference: Reference | None = None, threads: int = 1, progress=None) -> ScalingReport:
    """Build the family at every h of the spec, evaluate energies and fit exponents.

    Fits use feasible points only. The primary fit drops the largest and
    smallest feasible h; the untrimmed fit is reported alongside.
    """
    ref = reference if reference is not None else Reference(spec.domain, spec.measure)
    hs = spec.hs
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = dict(zip(hs, ex.map(lambda h: _run_point(spec, ref, h), hs)))
    else:
        results = {}
        for h in hs:
            results[h] = _run_point(spec, ref, h)
            if progress is not None:
                progress(results[h])
    points = [results[h] for h in hs]
    return fit_report(spec, points)


def fit_report(spec: SweepSpec, points: list) -> ScalingReport:
    good = [p for p in points if p.feasible]
    if len(good) < 4:
        raise FitError(f"only {len(good)} feasible h values; need 4")
    good.sort(key=lambda p: p.h)
    h = np.array([p.h for p in good])
    E = np.array([p.energy.total for p in good])
    Eu = np.array([(p.energy.unexcised or p.energy).total for p in good])
    full = fit_power(h, E)
    trimmed = fit_power(h[1:-1], E[1:-1]) if len(good) >= 6 else None
    rep = ScalingReport(spec, points, trimmed or full, full, fit_power(h, Eu))
    if spec.family == "nobc":
        sel = slice(1, -1) if len(good) >= 6 else slice(None)
        rep.log_fit = fit_log_corrected(h[sel], E[sel])
        rep.log_fit_untrimmed = fit_log_corrected(h, E)
        res, b = best_capped_power_residual(h[sel], E[sel], 1.5)
        rep.capped_power = {"beta_max": 1.5, "beta": b, "residual": res}
    return rep


def crossover(upper: ScalingReport, lower: ScalingReport) -> float | None:
    """Largest h such that lower < upper at that h and at every smaller swept h."""
    eu = {p.h: p.energy.total for p in upper.points if p.feasible}
    el = {p.h: p.energy.total for p in lower.points if p.feasible}
    common = sorted(set(eu) & set(el))
    best = None
    for h in common:
        if el[h] < eu[h]:
            best = h
        else:
            break
    return best


@dataclass
class RefinementStudy:
    """In-plane residuals of the cone pair on nested grids."""

    cells: list
    residuals: list
    excision: float

    @property
    def ratios(self) -> list:
        r = self.residuals
        return [r[k] / r[k + 1] for k in range(len(r) - 1)]

    def to_json(self) -> dict:
        return {"cells": self.cells, "residuals": self.residuals, "ratios": self.ratios, "excision": self.excision}


def cone_pair_refinement(
    domain: Disk | None = None,
    measure: DisclinationMeasure | None = None,
    cells=(50, 100, 200, 400),
    excision: float = 0.0,
    opening: float = 0.8,
    reference: Reference | None = None,
) -> RefinementStudy:
    """Residual of m = Dv1 (x) Dv1 - Dv0 (x) Dv0 for superposed cones v1 and the solution v0.

    Both have the same Monge-Ampere measure, so the residual tends to zero.
    ``cells`` counts grid cells across the bounding box; with ``excision``
    > 0 discs of that radius around the atoms are dropped from the mask.
    """
    if domain is None or measure is None:
        domain, measure = default_fixture()
    ref = reference or Reference(domain, measure)
    e, eps_max = cone_directions(domain, measure)
    eps = opening * eps_max
    (x0, y0), (x1, y1) = domain.as_array().min(axis=0), domain.as_array().max(axis=0)
    width = max(x1 - x0, y1 - y0)
    out = []
    for n in cells:
        d = width / n
        shape = (n + 1, n + 1)
        origin = (float(x0), float(y0))
        v1 = sample(lambda X: superposed_cones(X, measure, e, eps), origin, d, shape, domain=_polygon_of(domain))
        mask = v1.mask.copy()
        if excision > 0:
            P = v1.points()
            for a in measure.points:
                mask &= np.hypot(P[..., 0] - a[0], P[..., 1] - a[1]) >= excision
        v1 = GridField(origin, d, v1.values, mask)
        v0 = sample(ref, origin, d, shape, mask=mask)
        _, r = optimal_inplane(membrane_tensor(v1, v0))
        out.append(r)
    return RefinementStudy(list(cells), out, excision)


def _polygon_of(domain):
    return domain.polygon if isinstance(domain, Disk) else domain


# ----------------------------------------------------------------------------
# randomized fixtures


def random_lift_spec(rng: np.random.Generator, exact: bool = False, domain: ConvexPolygon | None = None) -> LiftSpec:
    """Boundary-zero spec with 2-8 interior points and heights in [-1, -0.1]."""
    if domain is None:
        domain = ConvexPolygon.box(-1, -1, 1, 1) if exact else ConvexPolygon.box(-1.0, -1.0, 1.0, 1.0)
    k = int(rng.integers(2, 9))
    V = domain.as_array()
    lo, hi = V.min(axis=0), V.max(axis=0)
    pts = []
    while len(pts) < k:
        if exact:
            x = (Fraction(int(rng.integers(-15, 16)), 16), Fraction(int(rng.integers(-15, 16)), 16))
            fx = (float(x[0]), float(x[1]))
        else:
            fx = tuple(float(c) for c in rng.uniform(lo, hi))
            x = fx
        if not domain.contains(x, strict=True) or domain.boundary_distance(fx) < 0.05:
            continue
        if any(abs(float(x[0]) - float(q[0])) + abs(float(x[1]) - float(q[1])) < 0.05 for q, _ in pts):
            continue
        z = Fraction(-int(rng.integers(10, 101)), 100) if exact else float(rng.uniform(-1.0, -0.1))
        pts.append((x, z))
    zero = 0 if exact else 0.0
    return LiftSpec.on_polygon(domain, zero, pts)


def random_concave_weight(rng: np.random.Generator, domain: ConvexPolygon):
    """phi = max(0, min of 1-4 affine functions), each shifted to be >= 0 on the domain.

    With every piece nonnegative on the domain the outer max is inactive
    there, so phi is concave and nonnegative where the measures live.
    """
    k = int(rng.integers(1, 5))
    V = domain.as_array()
    pieces = []
    for _ in range(k):
        p = rng.normal(size=2)
        c = float(-(V @ p).min() + rng.uniform(0.0, 1.0))
        pieces.append((float(p[0]), float(p[1]), c))

    def phi(x):
        return max(0.0, min(a * float(x[0]) + b * float(x[1]) + c for a, b, c in pieces))

    return phi, pieces


def _raised(spec: LiftSpec, rng: np.random.Generator) -> LiftSpec:
    pts = [(x, z * float(rng.uniform(0.0, 1.0))) for x, z in spec.interior]
    return LiftSpec(spec.boundary, tuple(pts))


# ----------------------------------------------------------------------------
# property suites


SUITES = ("monotonicity", "invariance", "lifting", "alexandrov", "stability", "dualnorm")

DEFAULT_TRIALS = {"monotonicity": 1000, "invariance": 200, "lifting": 500, "alexandrov": 500, "stability": 20, "dualnorm": 50}


@dataclass
class SuiteResult:
    suite: str
    trials: int
    violations: int
    worst: float
    counterexamples: list = field(default_factory=list)
    seconds: float = 0.0
    corrupted: bool = False

    @property
    def passed(self) -> bool:
        return self.violations == 0

    def to_json(self) -> dict:
        return {
            "suite": self.suite,
            "trials": self.trials,
            "violations": self.violations,
            "worst": self.worst,
            "corrupted": self.corrupted,
            "passed": self.passed,
            "counterexamples": self.counterexamples,
        }


@dataclass
class VerifyReport:
    seed: int
    results: list

    @property
    def passed(self) -> bool:
        return all(r.passed for r in self.results)

    def to_json(self) -> dict:
        return {"format": "verify.v1", "seed": self.seed, "passed": self.passed, "results": [r.to_json() for r in self.results]}


def _spec_json(spec: LiftSpec) -> dict:
    return spec.to_json()


def _suite_monotonicity(rng, trials, corrupt, keep):
    slack = 1e-10
    out = SuiteResult("monotonicity", trials, 0, -math.inf, corrupted=corrupt)
    for _ in range(trials):
        sv = random_lift_spec(rng)
        su = _raised(sv, rng)
        v, u = lift(sv), lift(su)
        phi, pieces = random_concave_weight(rng, sv.domain)
        iu, iv = float(ma_integral(u, phi)), float(ma_integral(v, phi))
        excess = iu - iv
        bad = excess <= slack if corrupt else excess > slack
        out.worst = max(out.worst, excess)
        if bad:
            out.violations += 1
            if len(out.counterexamples) < keep:
                out.counterexamples.append({"u": _spec_json(su), "v": _spec_json(sv), "phi": pieces, "excess": excess})
    return out


def _local_bump(rng, domain: ConvexPolygon, v: PLConvexFunction):
    """max(v, s + delta) for a support s of v whose cell stays off the boundary.

    For small rational delta the raised plane wins only near its old cell,
    so u = v near the boundary and beyond.
    """
    inner = [k for k, cl in enumerate(v.cells) if all(domain.contains(q, strict=True) for q in cl.polygon)]
    if not inner:
        return None, None
    cl = v.cells[inner[int(rng.integers(len(inner)))]]
    base = v.supports[cl.support]
    for j in range(1, 12):
        plane = AffineSupport(base.p, base.c + Fraction(int(rng.integers(1, 8)), 8 ** j))
        others = [s for s in v.supports if s != base]
        u = PLConvexFunction(domain, others + [plane])
        cell = [c for c in u.cells if u.supports[c.support] == plane]
        if cell and all(domain.contains(q, strict=True) for q in cell[0].polygon):
            return u, plane
    return None, None


def _suite_invariance(rng, trials, corrupt, keep):
    out = SuiteResult("invariance", trials, 0, 0.0, corrupted=corrupt)
    done = 0
    while done < trials:
        sv = random_lift_spec(rng, exact=True)
        v = lift(sv)
        u, plane = _local_bump(rng, sv.domain, v)
        if u is None:
            continue
        done += 1
        mu_, mv = first_moment(u), first_moment(v)
        diff = max(abs(mu_[0] - mv[0]), abs(mu_[1] - mv[1]))
        bad = diff == 0 if corrupt else diff != 0
        out.worst = max(out.worst, float(diff))
        if bad:
            out.violations += 1
            if len(out.counterexamples) < keep:
                out.counterexamples.append({"v": _spec_json(sv), "plane": {"p": [str(c) for c in plane.p], "c": str(plane.c)}, "diff": str(diff)})
    return out


def _suite_lifting(rng, trials, corrupt, keep):
    out = SuiteResult("lifting", trials, 0, 0.0, corrupted=corrupt)
    for _ in range(trials):
        spec = random_lift_spec(rng)
        u = lift(spec)
        chk = lifting_support_check(u, spec)
        bad = chk.stray_mass <= 1e-12 if corrupt else chk.stray_mass > 1e-12
        out.worst = max(out.worst, chk.stray_mass)
        if bad:
            out.violations += 1
            if len(out.counterexamples) < keep:
                out.counterexamples.append({"spec": _spec_json(spec), "stray_mass": chk.stray_mass})
    return out


def _random_subpolygon(rng, domain: ConvexPolygon) -> ConvexPolygon:
    c = rng.uniform(-0.5, 0.5, size=2)
    m = int(rng.integers(3, 7))
    r = rng.uniform(0.1, 0.45)
    th = np.sort(rng.uniform(0, 2 * np.pi, size=m))
    pts = [tuple(float(q) for q in c + r * np.array([math.cos(t), math.sin(t)])) for t in th]
    from .hull import convex_hull_2d

    hull = convex_hull_2d(pts, exact=False)
    if len(hull) < 3:
        return ConvexPolygon.box(c[0] - r, c[1] - r, c[0] + r, c[1] + r)
    return ConvexPolygon(tuple(hull))


def _suite_alexandrov(rng, trials, corrupt, keep):
    out = SuiteResult("alexandrov", trials, 0, -math.inf, corrupted=corrupt)
    for _ in range(trials):
        spec = random_lift_spec(rng)
        u = lift(spec)
        U = _random_subpolygon(rng, spec.domain)
        V = U.as_array()
        w = rng.dirichlet(np.ones(len(V)))
        x = tuple(float(q) for q in w @ V)
        chk = alexandrov_gap_check(u, U, x)
        excess = chk.gap - chk.bound
        bad = chk.holds if corrupt else not chk.holds
        out.worst = max(out.worst, excess)
        if bad:
            out.violations += 1
            if len(out.counterexamples) < keep:
                out.counterexamples.append({"spec": _spec_json(spec), "U": U.to_json(), "x": list(x), "gap": chk.gap, "bound": chk.bound})
    return out


def _suite_stability(rng, trials, corrupt, keep):
    """sup|v_mu - v_nu| <= C sum |sqrt(sigma) - sqrt(tau)| with C = diam / sqrt(pi)."""
    out = SuiteResult("stability", trials, 0, -math.inf, corrupted=corrupt)
    domain = ConvexPolygon.regular(128)
    C = domain.diameter / math.sqrt(math.pi)
    for _ in range(trials):
        n = int(rng.integers(1, 4))
        pts = []
        while len(pts) < n:
            x = rng.uniform(-0.6, 0.6, size=2)
            if np.hypot(*x) < 0.7 and all(np.hypot(*(x - q)) > 0.2 for q in pts):
                pts.append(x)
        s = rng.uniform(0.2, 1.5, size=n)
        t = s * rng.uniform(0.7, 1.3, size=n)
        mu = DisclinationMeasure.from_arrays(pts, s)
        nu = DisclinationMeasure.from_arrays(pts, t)
        pr = stability_probe(domain, mu, nu)
        excess = pr.ratio - C
        bad = excess <= 0 if corrupt else excess > 0
        out.worst = max(out.worst, pr.ratio)
        if bad:
            out.violations += 1
            if len(out.counterexamples) < keep:
                out.counterexamples.append({"mu": mu.to_json(), "nu": nu.to_json(), "gap": pr.gap, "budget": pr.budget})
    return out


def _suite_dualnorm(rng, trials, corrupt, keep, n: int = 33):
    """Pairing with Airy stresses never exceeds the optimal in-plane residual."""
    out = SuiteResult("dualnorm", trials, 0, -math.inf, corrupted=corrupt)
    d = 2.0 / (n - 1)
    x = -1 + d * np.arange(n)
    X, Y = np.meshgrid(x, x, indexing="ij")
    mask = X * X + Y * Y <= 1.0
    origin = (-1.0, -1.0)
    inner = support_nodes(mask)
    for k in range(trials):
        vals = rng.normal(size=(2, n - 1, n - 1, 3))
        if k % 2:
            # nearly compatible: e(w) plus small noise, so the residual is small
            w = GridField(origin, d, rng.normal(size=(n, n, 2)), mask)
            vals = strain(w).values + 10.0 ** rng.uniform(-6, 0) * vals
        m = CellTensor(origin=origin, spacing=d, mask=mask, values=np.where(triangle_masks(mask)[..., None], vals, 0.0))
        _, res = optimal_inplane(m)
        psi = np.where(inner, rng.normal(size=(n, n)), 0.0)
        pair = dual_pairing_check(m, GridField(origin, d, psi, mask))
        excess = (pair - res) / max(res, 1e-300)
        bad = excess <= 1e-8 if corrupt else excess > 1e-8
        out.worst = max(out.worst, excess)
        if bad:
            out.violations += 1
            if len(out.counterexamples) < keep:
                out.counterexamples.append({"pairing": pair, "residual": res})
    return out


_RUNNERS = {
    "monotonicity": _suite_monotonicity,
    "invariance": _suite_invariance,
    "lifting": _suite_lifting,
    "alexandrov": _suite_alexandrov,
    "stability": _suite_stability,
    "dualnorm": _suite_dualnorm,
}


def verify(suite: str, seed: int = 0, trials: int | None = None, corrupt: bool = False, keep: int = 5, out_dir: str | None = None) -> VerifyReport:
    """Run one property suite (or all) with randomized inputs.

    ``corrupt`` flips every checked inequality, so a working harness must
    report a violation on each trial. Counterexamples are kept in the report
    and, with ``out_dir``, written as replayable JSON fixtures.
    """
    names = SUITES if suite == "all" else (suite,)
    for s in names:
        if s not in _RUNNERS:
            raise ParameterError(f"unknown suite {s!r}; choose from {SUITES + ('all',)}")
    results = []
    for k, s in enumerate(names):
        rng = np.random.default_rng([seed, k])
        n = DEFAULT_TRIALS[s] if trials is None else trials
        t0 = time.perf_counter()
        r = _RUNNERS[s](rng, n, corrupt, keep)
        r.seconds = time.perf_counter() - t0
        results.append(r)
    rep = VerifyReport(seed, results)
    if out_dir is not None:
        os.makedirs(out_dir, exist_ok=True)
        for r in results:
            for j, ce in enumerate(r.counterexamples):
                with open(os.path.join(out_dir, f"counterexample-{r.suite}-{j}.json"), "w") as fh:
                    json.dump({"suite": r.suite, "seed": seed, **ce}, fh, indent=2, sort_keys=True)
    return rep


# ----------------------------------------------------------------------------
# reports


def write_report(artifacts: list[str], out_dir: str) -> dict:
    """Summarize sweep/verify JSON artifacts into summary.txt, report.json and one CSV per sweep."""
    loaded = []
    for path in artifacts:
        if not os.path.exists(path):
            raise FileNotFoundError(path)
        with open(path) as fh:
            loaded.append((os.path.basename(path), json.load(fh)))
    os.makedirs(out_dir, exist_ok=True)
    summary_lines = []
    machine = {"format": "report.v1", "sweeps": {}, "verify": {}}
    for name, data in sorted(loaded, key=lambda t: t[0]):
        fmt = data.get("format")
        if fmt == "scaling.v1":
            fam = data["spec"]["family"]
            machine["sweeps"][fam] = {"fit": data.get("fit"), "fit_untrimmed": data.get("fit_untrimmed"), "log_fit": data.get("log_fit"), "capped_power": data.get("capped_power")}
            with open(os.path.join(out_dir, f"{fam}.csv"), "w") as fh:
                fh.write(scaling_csv(data))
            fit = data.get("fit")
            line = f"{fam}: beta = {fit['beta']:.4f} +- {fit['stderr']:.4f}" if fit else f"{fam}: no fit"
            n_ok = sum(1 for p in data["points"] if p["feasible"])
            summary_lines.append(f"{line} ({n_ok}/{len(data['points'])} feasible)")
            if data.get("log_fit"):
                cp = data.get("capped_power") or {}
                summary_lines.append(f"  log-corrected residual {data['log_fit']['residual']:.4g} vs best power (beta <= {cp.get('beta_max')}) {cp.get('residual', float('nan')):.4g}")
        elif fmt == "verify.v1":
            for r in data["results"]:
                machine["verify"][r["suite"]] = {k: r[k] for k in ("trials", "violations", "passed", "worst")}
                summary_lines.append(f"verify {r['suite']}: {r['violations']}/{r['trials']} violations")
        else:
            raise ParameterError(f"{name}: unknown artifact format {fmt!r}")
    if not machine["sweeps"]:
        with open(os.path.join(out_dir, "sweep.csv"), "w") as fh:
            fh.write(scaling_csv(None))
    with open(os.path.join(out_dir, "report.json"), "w") as fh:
        json.dump(machine, fh, indent=2, sort_keys=True)
        fh.write("\n")
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write("\n".join(summary_lines) + ("\n" if summary_lines else ""))
    return machine
