"""Command-line front end for the experiment harness.

Exit codes: 0 on success, 2 when any solver row failed to reach optimality,
1 on usage errors.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

import numpy as np

from .harness import (
    ABLATABLE,
    FORMULATIONS,
    ExperimentConfig,
    any_solver_failure,
    build_formulation,
    records_to_csv,
    run_ablation,
    run_case_study,
    run_comparison,
)
from .network import InputPolytope, OutputHalfspace, load_network
from .oracle import exact_verify
from .solver import SolveStatus, SolverConfig, solve


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _parse_box(text: str, dim: int) -> tuple[tuple[float, ...], tuple[float, ...]]:
    vals = [float(v) for v in text.split(",") if v.strip()]
    if len(vals) == 2:
        vals = vals * dim
    if len(vals) != 2 * dim or any(vals[2 * i] >= vals[2 * i + 1] for i in range(dim)):
        raise ValueError(f"box needs lo,hi per coordinate for {dim} inputs")
    return tuple(vals[0::2]), tuple(vals[1::2])


def _parse_list(text: str) -> tuple[str, ...]:
    return tuple(v.strip() for v in text.split(",") if v.strip())


def _add_common(sub):
    sub.add_argument("--instances", type=int, default=20,
                     help="number of random instances (default 20)")
    sub.add_argument("--seed", type=int, default=0, help="seed base (default 0)")
    sub.add_argument("--dims", default="2,10,1",
                     help="comma-separated layer widths (default 2,10,1)")
    sub.add_argument("--box", default="-1.0,0.1",
                     help="input box as lo,hi[,lo,hi...] (default -1.0,0.1 per coordinate)")
    sub.add_argument("--tol", type=float, default=1e-5,
                     help="solver residual tolerance (default 1e-5)")
    sub.add_argument("--jobs", type=int, default=1, help="worker processes")
    sub.add_argument("--out", default=None, help="output directory for CSV files")


def _experiment_config(args) -> ExperimentConfig:
    dims = tuple(int(v) for v in args.dims.split(","))
    lo, hi = _parse_box(args.box, dims[0])
    cfg = ExperimentConfig(
        dims=dims,
        num_instances=args.instances,
        seed_base=args.seed,
        lo=lo,
        hi=hi,
        solver=SolverConfig(eps_abs=args.tol, eps_rel=args.tol),
        jobs=args.jobs,
    )
    if getattr(args, "formulations", None):
        cfg = ExperimentConfig(**{**cfg.__dict__,
                                  "formulations": _parse_list(args.formulations)})
    if getattr(args, "ablations", None):
        cfg = ExperimentConfig(**{**cfg.__dict__,
                                  "ablations": _parse_list(args.ablations)})
    return cfg


def _emit(csv_text: str, out_dir, name: str) -> None:
    if out_dir is None:
        sys.stdout.write(csv_text)
    else:
        path = Path(out_dir)
        path.mkdir(parents=True, exist_ok=True)
        (path / name).write_text(csv_text)
        print(f"wrote {path / name}")


def main(argv=None) -> int:
    parser = _Parser(prog="cpverify",
                     description="ReLU verification via conic moment relaxations")
    subs = parser.add_subparsers(dest="command", required=True)

    p_cmp = subs.add_parser("compare", parents=[], help="relaxations vs exact values")
    _add_common(p_cmp)
    p_cmp.add_argument("--formulations", default=",".join(FORMULATIONS),
                       help="subset of " + ",".join(FORMULATIONS))

    p_abl = subs.add_parser("ablate", help="single-constraint-class ablations")
    _add_common(p_abl)
    p_abl.add_argument("--ablations", default=",".join(ABLATABLE),
                       help="subset of " + ",".join(ABLATABLE))

    p_case = subs.add_parser("case-study", help="bundled exact-but-rank-four example")
    p_case.add_argument("--out", default=None, help="directory for certificate and CSV")
    p_case.add_argument("--tol", type=float, default=1e-6)

    p_ver = subs.add_parser("verify", help="verify a stored network file")
    p_ver.add_argument("network", help="path to a network JSON file")
    p_ver.add_argument("--box", required=True, help="input box lo,hi[,lo,hi...]")
    p_ver.add_argument("--c", default=None,
                       help="output direction coefficients (default all ones)")
    p_ver.add_argument("--d", type=float, default=0.0, help="safety threshold")
    p_ver.add_argument("--formulation", default="0SOS", choices=FORMULATIONS)
    p_ver.add_argument("--tol", type=float, default=1e-5)
    p_ver.add_argument("--exact", action="store_true",
                       help="also run the enumeration oracle")

    try:
        args = parser.parse_args(argv)
    except ValueError as exc:
        print(f"cpverify: error: {exc}", file=sys.stderr)
        return 1

    try:
        if args.command == "compare":
            cfg = _experiment_config(args)
            records = run_comparison(cfg)
            _emit(records_to_csv(records), args.out, "comparison.csv")
            return 2 if any_solver_failure(records) else 0
        if args.command == "ablate":
            cfg = _experiment_config(args)
            records = run_ablation(cfg)
            _emit(records_to_csv(records), args.out, "ablation.csv")
            return 2 if any_solver_failure(records) else 0
        if args.command == "case-study":
            solver = SolverConfig(eps_abs=args.tol, eps_rel=args.tol, max_iter=400_000)
            report = run_case_study(out_dir=args.out, solver=solver)
            cert = report["certificate"]
            print(f"relaxation value: {report['relaxation_value']:.7f}")
            print(f"exact optimum:    {report['exact']:.7f}")
            print(f"certificate:      {cert.verdict}"
                  + (f" (rank {cert.K}, residual {cert.residual:.3g})"
                     if cert.exact else f" ({cert.reason})"))
            for w, corner, dist in report["corner_matches"]:
                print(f"  witness ({w.x[0]: .4f}, {w.x[1]: .4f}) -> corner "
                      f"({corner[0]: .0f}, {corner[1]: .0f}), value {w.value:.4f}")
            return 0 if report["status"] == SolveStatus.OPTIMAL.value else 2
        if args.command == "verify":
            net = load_network(args.network)
            lo, hi = _parse_box(args.box, net.input_dim)
            poly = InputPolytope.from_box(lo, hi)
            c = (np.array([float(v) for v in args.c.split(",")])
                 if args.c else np.ones(net.output_dim))
            output = OutputHalfspace(c=c, d=args.d)
            prog = build_formulation(args.formulation, net, poly, output)
            res = solve(prog, SolverConfig(eps_abs=args.tol, eps_rel=args.tol))
            print(f"{args.formulation} lower bound: {res.objective:.8g} "
                  f"({res.status.value})")
            if res.objective >= args.d:
                print(f"verdict: SAFE (bound >= {args.d:g})")
            elif args.exact:
                oracle = exact_verify(net, poly, output)
                print(f"exact optimum: {oracle.opt:.8g} at {oracle.argmin}")
                verdict = "SAFE" if oracle.opt >= args.d else "UNSAFE"
                print(f"verdict: {verdict}")
            else:
                print("verdict: UNKNOWN (relaxation bound below threshold; "
                      "rerun with --exact)")
            return 0 if res.status == SolveStatus.OPTIMAL else 2
    except (ValueError, OSError) as exc:
        print(f"cpverify: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
