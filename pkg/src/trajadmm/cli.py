"""Command-line front end.

Subcommands: ``optimize`` (run the consensus solver on a problem file),
``sample`` (evaluate a coefficients file onto a CSV grid), ``check``
(feasibility/continuity report), ``bench`` (scaling benchmark on synthetic
corridors), and ``oracle`` (dense ground-truth solve for comparison).

Exit codes: 0 success/converged, 2 iteration-limited, 3 invalid input,
4 internal numeric failure.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

EXIT_OK = 0
EXIT_ITERATION_LIMITED = 2
EXIT_INVALID_INPUT = 3
EXIT_NUMERIC_FAILURE = 4


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        sys.exit(EXIT_INVALID_INPUT)


def _build_parser():
    parser = _Parser(prog="trajadmm",
                     description="Parallel consensus trajectory optimization")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("optimize", help="solve a problem file")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("--out", default="coefficients.json",
                   help="coefficients output file")
    p.add_argument("--trace", default=None, help="write per-iteration trace CSV")
    p.add_argument("--mode", choices=["closed-form", "numerical"], default=None,
                   help="override the solver mode")
    p.add_argument("--epsilon", type=float, default=None,
                   help="override the stopping tolerance")
    p.add_argument("--threads", type=int, default=None,
                   help="override the worker count (0 = auto)")
    p.add_argument("--max-iters", type=int, default=None,
                   help="override the iteration cap")
    p.add_argument("--plot", action="store_true",
                   help="render trajectory/residual figures next to the output")

    p = sub.add_parser("sample", help="sample a coefficients file to CSV")
    p.add_argument("coefficients", help="coefficients JSON file")
    p.add_argument("--dt", type=float, required=True, help="sample spacing [s]")
    p.add_argument("--out", default="samples.csv", help="CSV output file")
    p.add_argument("--plot", action="store_true",
                   help="render a trajectory figure next to the CSV")

    p = sub.add_parser("check", help="feasibility and continuity report")
    p.add_argument("coefficients", help="coefficients JSON file")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("--out", default=None, help="also write the report as JSON")

    p = sub.add_parser("bench", help="scaling benchmark on synthetic corridors")
    p.add_argument("--sizes", default="16,64,256",
                   help="comma-separated segment counts")
    p.add_argument("--threads", default="1",
                   help="comma-separated worker counts")
    p.add_argument("--reps", type=int, default=1, help="repetitions per point")
    p.add_argument("--seed", type=int, default=0, help="instance random seed")
    p.add_argument("--iters", type=int, default=50,
                   help="fixed iteration count per run")
    p.add_argument("--hyperplanes", type=int, default=24,
                   help="corridor faces per segment")
    p.add_argument("--samples", type=int, default=24,
                   help="constraint samples per segment")
    p.add_argument("--out", default="bench.csv", help="CSV output file")
    p.add_argument("--plot", action="store_true",
                   help="render scaling figures next to the CSV")

    p = sub.add_parser("oracle", help="dense ground-truth solve (desk scale)")
    p.add_argument("problem", help="problem JSON file")
    p.add_argument("--out", default="oracle.json", help="coefficients output file")
    p.add_argument("--pins", action="store_true",
                   help="pin interior waypoint positions")
    p.add_argument("--active-set", action="store_true",
                   help="include corridor inequalities via active-set enumeration")
    return parser


def _override_solver(spec, args):
    from .problem import ProblemSpec, SolverConfig

    s = spec.solver
    kw = dict(
        mode=args.mode or s.mode,
        epsilon=args.epsilon if args.epsilon is not None else s.epsilon,
        rho0=s.rho0, mu=s.mu, tau_incr=s.tau_incr, tau_decr=s.tau_decr,
        max_iters=args.max_iters if args.max_iters is not None else s.max_iters,
        rho_min=s.rho_min, rho_max=s.rho_max, adaptive_rho=s.adaptive_rho,
        threads=args.threads if args.threads is not None else s.threads,
    )
    return ProblemSpec(
        cfg=spec.cfg, path=spec.path, segments=spec.segments,
        boundary_start=spec.boundary_start, boundary_end=spec.boundary_end,
        v_max=spec.v_max, weights=spec.weights, solver=SolverConfig(**kw),
        pin_waypoints=spec.pin_waypoints,
    )


def _cmd_optimize(args):
    from .admm import FactorizationError, TraceRow, optimize
    from .io import SchemaError, load_problem, save_coefficients
    from .problem import validate_problem

    try:
        spec = _override_solver(load_problem(args.problem), args)
    except (OSError, SchemaError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    report = validate_problem(spec)
    for w in report.warnings:
        print(f"warning: {w}", file=sys.stderr)
    if not report.ok:
        for e in report.errors:
            print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT

    trace_fh = None
    callback = None
    if args.trace:
        trace_fh = open(args.trace, "w")
        trace_fh.write(TraceRow.CSV_HEADER + "\n")
        trace_fh.flush()

        def callback(row):
            trace_fh.write(row.csv_row() + "\n")
            trace_fh.flush()

    try:
        res = optimize(spec, trace_callback=callback)
    except FactorizationError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC_FAILURE
    finally:
        if trace_fh is not None:
            trace_fh.close()

    save_coefficients(args.out, res.trajectory, status=res.status,
                      objective=res.objective, rp_norm=res.rp_norm,
                      rd_norm=res.rd_norm, iterations=res.iterations)
    print(f"{res.status} after {res.iterations} iterations: "
          f"objective {res.objective:.6g}, |r_p| {res.rp_norm:.3g}, "
          f"|r_d| {res.rd_norm:.3g} -> {args.out}")
    if args.plot:
        from .plots import plot_trace, plot_trajectory

        stem = Path(args.out).with_suffix("")
        fig1 = plot_trajectory(res.trajectory, f"{stem}_trajectory.png",
                               path=spec.path, v_max=spec.v_max)
        print(f"figure: {fig1}")
        fig2 = plot_trace(res.trace, f"{stem}_residuals.png")
        print(f"figure: {fig2}")
    return EXIT_OK if res.converged else EXIT_ITERATION_LIMITED


def _cmd_sample(args):
    from .io import SchemaError, load_coefficients, sample_csv_rows

    try:
        traj = load_coefficients(args.coefficients)
        with open(args.out, "w") as fh:
            for line in sample_csv_rows(traj, args.dt):
                fh.write(line + "\n")
    except (OSError, SchemaError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    print(f"wrote {args.out}")
    if args.plot:
        from .plots import plot_trajectory

        fig = plot_trajectory(traj, str(Path(args.out).with_suffix("")) + "_trajectory.png",
                              dt=args.dt)
        print(f"figure: {fig}")
    return EXIT_OK


def _cmd_check(args):
    from .io import SchemaError, load_coefficients, load_problem
    from .problem import build_segment_matrices

    try:
        traj = load_coefficients(args.coefficients)
        spec = load_problem(args.problem)
    except (OSError, SchemaError, ValueError, KeyError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    if traj.n_segments != spec.n_segments or traj.dims != spec.cfg.dims:
        print(
            f"error: coefficients describe {traj.n_segments} segments x "
            f"{traj.dims} dims, problem has {spec.n_segments} x {spec.cfg.dims}",
            file=sys.stderr,
        )
        return EXIT_INVALID_INPUT

    s = spec.cfg.cont_orders
    gaps = traj.splice_gaps(orders=s) if spec.n_segments > 1 else np.zeros((0, s, traj.dims))
    gap_sq = float(np.sum(gaps**2))
    threshold = spec.n_segments * spec.solver.epsilon
    report = {
        "splits": [
            {
                "index": i + 1,
                "max_gap": float(np.abs(gaps[i]).max()),
                "gap_by_order": [float(np.abs(gaps[i, r]).max()) for r in range(s)],
            }
            for i in range(spec.n_segments - 1)
        ],
        "splice_norm": float(np.sqrt(gap_sq)),
        "splice_tolerance": threshold,
        "splice_within_tolerance": bool(gap_sq < threshold**2),
    }
    max_viol = 0.0
    max_excess = 0.0
    for i in range(spec.n_segments):
        mats = build_segment_matrices(spec, i)
        c = traj.coefficients[i].ravel()
        if mats.corridor.shape[0]:
            max_viol = max(max_viol, float(np.max(mats.corridor @ c
                                                  - mats.corridor_offsets)))
        for j in range(mats.velocity.shape[0]):
            speed = float(np.linalg.norm(mats.velocity[j] @ c))
            max_excess = max(max_excess, speed - spec.v_max)
    report["max_corridor_violation"] = max(max_viol, 0.0)
    report["max_velocity_excess"] = max(max_excess, 0.0)

    for split in report["splits"]:
        print(f"split {split['index']}: max gap {split['max_gap']:.3g}")
    print(f"splice norm {report['splice_norm']:.3g} "
          f"(tolerance {report['splice_tolerance']:.3g}, "
          f"{'PASS' if report['splice_within_tolerance'] else 'FAIL'})")
    print(f"max corridor violation {report['max_corridor_violation']:.3g}")
    print(f"max velocity excess {report['max_velocity_excess']:.3g}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump(report, fh, indent=2)
            fh.write("\n")
        print(f"wrote {args.out}")
    return EXIT_OK


def _cmd_bench(args):
    from .bench import BENCH_FIELDS, run_bench

    try:
        sizes = [int(v) for v in args.sizes.split(",") if v]
        threads = [int(v) for v in args.threads.split(",") if v]
    except ValueError:
        print("error: --sizes and --threads must be comma-separated integers",
              file=sys.stderr)
        return EXIT_INVALID_INPUT

    with open(args.out, "w") as fh:
        fh.write(",".join(BENCH_FIELDS) + "\n")
        fh.flush()

        def progress(row):
            fh.write(",".join(repr(row[k]) if isinstance(row[k], float)
                              else str(row[k]) for k in BENCH_FIELDS) + "\n")
            fh.flush()
            print(f"N={row['n_segments']:5d} threads={row['threads']} "
                  f"rep={row['repetition']} total {row['total_ms']:9.2f} ms "
                  f"({row['per_iter_per_segment_us']:.2f} us/iter/segment)")

        rows = run_bench(sizes, threads_list=threads, repetitions=args.reps,
                         seed=args.seed, iterations=args.iters,
                         hyperplanes=args.hyperplanes, samples=args.samples,
                         progress=progress)
    print(f"wrote {args.out}")
    if args.plot:
        from .plots import plot_bench

        fig = plot_bench(rows, str(Path(args.out).with_suffix("")) + "_scaling.png")
        print(f"figure: {fig}")
    return EXIT_OK


def _cmd_oracle(args):
    from .io import SchemaError, load_problem, save_coefficients
    from .oracle import OracleError, active_set_qp, kkt_solve

    try:
        spec = load_problem(args.problem)
    except (OSError, SchemaError, ValueError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    try:
        if args.active_set:
            traj, obj = active_set_qp(spec, pins=args.pins)
        else:
            traj, obj = kkt_solve(spec, pins=args.pins)
    except OracleError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INVALID_INPUT
    except np.linalg.LinAlgError as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_NUMERIC_FAILURE
    save_coefficients(args.out, traj, status="oracle", objective=obj,
                      rp_norm=0.0, rd_norm=0.0, iterations=0)
    print(f"oracle objective {obj:.6g} -> {args.out}")
    return EXIT_OK


_COMMANDS = {
    "optimize": _cmd_optimize,
    "sample": _cmd_sample,
    "check": _cmd_check,
    "bench": _cmd_bench,
    "oracle": _cmd_oracle,
}


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    return _COMMANDS[args.command](args)


if __name__ == "__main__":
    sys.exit(main())
