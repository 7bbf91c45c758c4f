"""ridgelab command line: solve, extract ridges, build families, sweep, verify, report."""

from __future__ import annotations

import argparse
import json
import os
import sys

import numpy as np

from .constructions import FAMILIES, Disk, Reference, domain_from_json
from .energy import eval_energy
from .errors import RidgelabError
from .grid import GridField
from .harness import SUITES, SweepSpec, default_fixture, scaling_csv, sweep, verify, write_report
from .solver import DisclinationMeasure, extract_ridges, solve_mad

EXIT_VIOLATION = 4


def _load_json(path: str):
    with open(path) as fh:
        return json.load(fh)


def _fixture(args):
    """(domain, measure) from --domain/--measure files, defaulting to the two-atom disk."""
    dom, mu = default_fixture()
    if args.domain:
        dom = domain_from_json(_load_json(args.domain))
    if args.measure:
        mu = DisclinationMeasure.from_json(_load_json(args.measure))
    return dom, mu


def _polygon(dom):
    return dom.polygon if isinstance(dom, Disk) else dom


def _emit(args, name: str, payload: dict, csv_text: str | None = None) -> None:
    os.makedirs(args.out_dir, exist_ok=True)
    path = os.path.join(args.out_dir, name + ".json")
    with open(path, "w") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    if csv_text is not None:
        with open(os.path.join(args.out_dir, name + ".csv"), "w") as fh:
            fh.write(csv_text)
    if args.format == "csv" and csv_text is not None:
        sys.stdout.write(csv_text)
    else:
        sys.stdout.write(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def cmd_ma_solve(args) -> int:
    dom, mu = _fixture(args)
    v, rep = solve_mad(_polygon(dom), mu, tol=args.tol, max_iter=args.max_iter)
    os.makedirs(args.out_dir, exist_ok=True)
    with open(os.path.join(args.out_dir, "v0.plconvex.json"), "w") as fh:
        fh.write(v.dumps())
    _emit(args, "ma-solve", rep.to_json())
    return 0


def cmd_ridges(args) -> int:
    dom, mu = _fixture(args)
    v, _ = solve_mad(_polygon(dom), mu)
    _emit(args, "ridges", extract_ridges(v, mu).to_json())
    return 0


def cmd_construct(args) -> int:
    dom, mu = _fixture(args)
    out = FAMILIES[args.family](dom, mu, args.h, nodes_per_layer=args.nodes_per_layer, max_nodes=args.max_nodes)
    os.makedirs(args.out_dir, exist_ok=True)
    for name, f in (("u", out.u), ("v", out.v), ("v0", out.v0)):
        f.save(os.path.join(args.out_dir, f"{name}.grid"))
    E = out.energy()
    _emit(args, "construct", {"family": out.family, "h": out.h, "inplane_residual": out.residual, "energy": E.to_json(), "metadata": out.metadata})
    return 0


def cmd_energy(args) -> int:
    u, v, v0 = (GridField.load(p) for p in (args.u, args.v, args.v0))
    atoms = None
    if args.measure:
        atoms = DisclinationMeasure.from_json(_load_json(args.measure)).points
    E = eval_energy(u, v, v0, args.h, atoms=atoms, excision=not args.no_excision)
    _emit(args, "energy", E.to_json())
    return 0


def cmd_sweep(args) -> int:
    dom, mu = _fixture(args)
    spec = SweepSpec(
        args.family,
        h_max=args.h_max,
        ratio=args.ratio,
        count=args.count,
        nodes_per_layer=args.nodes_per_layer,
        max_nodes=args.max_nodes,
        domain=dom,
        measure=mu,
        seed=args.seed,
    )
    rep = sweep(spec, reference=Reference(dom, mu), threads=args.threads)
    payload = rep.to_json()
    _emit(args, f"sweep-{args.family}", payload, scaling_csv(payload))
    return 0


def cmd_verify(args) -> int:
    rep = verify(args.suite, seed=args.seed, trials=args.trials, corrupt=args.corrupt, out_dir=args.out_dir)
    _emit(args, f"verify-{args.suite}", rep.to_json())
    return 0 if rep.passed else EXIT_VIOLATION


def cmd_report(args) -> int:
    machine = write_report(args.artifacts, args.out_dir)
    sys.stdout.write(json.dumps(machine, indent=2, sort_keys=True) + "\n")
    return 0


def _parser() -> argparse.ArgumentParser:
    def globals_(suppress: bool) -> argparse.ArgumentParser:
        # flags are accepted before or after the verb; only the top level sets defaults
        g = argparse.ArgumentParser(add_help=False)

        def d(v):
            return argparse.SUPPRESS if suppress else v

        g.add_argument("--seed", type=int, default=d(0), help="seed for randomized fixtures")
        g.add_argument("--threads", type=int, default=d(1), help="worker threads for sweeps")
        g.add_argument("--out-dir", default=d("ridgelab-out"), help="directory for artifacts")
        g.add_argument("--format", choices=("json", "csv"), default=d("json"), help="stdout format")
        return g

    common = globals_(True)

    fixture = argparse.ArgumentParser(add_help=False)
    fixture.add_argument("--domain", help="polygon JSON ([[x,y],...]) or {\"disk\": {...}}")
    fixture.add_argument("--measure", help="disc.v1 JSON {\"atoms\": [{\"a\": [x,y], \"sigma\": s}]}")

    grid = argparse.ArgumentParser(add_help=False)
    grid.add_argument("--nodes-per-layer", type=int, default=8)
    grid.add_argument("--max-nodes", type=int, default=1025)

    p = argparse.ArgumentParser(prog="ridgelab", description=__doc__, parents=[globals_(False)])
    sub = p.add_subparsers(dest="verb", required=True)

    s = sub.add_parser("ma-solve", parents=[common, fixture], help="solve the Dirichlet problem for v0")
    s.add_argument("--tol", type=float, default=1e-10)
    s.add_argument("--max-iter", type=int, default=200)
    s.set_defaults(func=cmd_ma_solve)

    s = sub.add_parser("ridges", parents=[common, fixture], help="extract the ridges of v0")
    s.set_defaults(func=cmd_ridges)

    s = sub.add_parser("construct", parents=[common, fixture, grid], help="build one family member and its energy")
    s.add_argument("--family", choices=sorted(FAMILIES), required=True)
    s.add_argument("--h", type=float, required=True)
    s.set_defaults(func=cmd_construct)

    s = sub.add_parser("energy", parents=[common], help="evaluate the plate energy of grid fields")
    s.add_argument("--u", required=True)
    s.add_argument("--v", required=True)
    s.add_argument("--v0", required=True)
    s.add_argument("--h", type=float, required=True)
    s.add_argument("--measure", help="atoms to excise around")
    s.add_argument("--no-excision", action="store_true")
    s.set_defaults(func=cmd_energy)

    s = sub.add_parser("sweep", parents=[common, fixture, grid], help="h-sweep with exponent fit")
    s.add_argument("--family", choices=sorted(FAMILIES), required=True)
    s.add_argument("--h-max", type=float, default=2 ** -5.5)
    s.add_argument("--ratio", type=float, default=2 ** -0.5)
    s.add_argument("--count", type=int, default=8)
    s.set_defaults(func=cmd_sweep)

    s = sub.add_parser("verify", parents=[common], help="randomized property suites")
    s.add_argument("--suite", choices=SUITES + ("all",), default="all")
    s.add_argument("--trials", type=int, default=None)
    s.add_argument("--corrupt", action="store_true", help="flip every checked inequality (harness self-test)")
    s.set_defaults(func=cmd_verify)

    s = sub.add_parser("report", parents=[common], help="summarize sweep and verify artifacts")
    s.add_argument("artifacts", nargs="*")
    s.set_defaults(func=cmd_report)
    return p


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    np.seterr(all="ignore")
    try:
        return args.func(args)
    except RidgelabError as exc:
        print(f"ridgelab: {exc}", file=sys.stderr)
        return exc.exit_code
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as exc:
        print(f"ridgelab: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
