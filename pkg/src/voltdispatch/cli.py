"""Command-line front end.

Subcommands
-----------
solve     minimum-actuation dispatch on a feeder, joint or per-bus mode
compare   one table row per tolerance: both frameworks side by side
surface   log F(z) on a 2-D grid for an arbitrary 2x2 covariance
validate  check a feeder document and print its derived R/X matrices

All numeric CSV output uses 6 significant digits and is byte-identical
across repeated invocations with the same inputs (the probability
estimators run on fixed internal seeds, echoed in the report header).
Exit codes: 0 success, 1 error, 2 infeasible.
"""

from __future__ import annotations

import argparse
import json
import math
import sys
import time
from dataclasses import dataclass, field

import numpy as np

from . import mvnprob
from .errors import DimensionMismatch, VoltDispatchError
from .feeders import BUILTIN_FEEDERS, FeederSpec, load_feeder
from .mvnprob import SURFACE_TARGET_ERROR, unit_box_F
from .solver import SolveStatus, SolverConfig, compare_frameworks, solve_joint, solve_per_bus
from .uncertainty import validate_covariance

# 2-D demo covariance for the surface command
DEMO_SURFACE_SIGMA = ((0.9, 0.5), (0.5, 0.6))

EXIT_OK = 0
EXIT_ERROR = 1
EXIT_INFEASIBLE = 2


@dataclass
class RunReport:
    """Everything a run produced; every number traces to a solver or
    estimator result."""

    instance: str
    command: str
    config: dict
    rows: list = field(default_factory=list)
    csv_text: str = ""
    timing_s: float = 0.0
    seeds: dict = field(default_factory=dict)
    exit_code: int = EXIT_OK


def _fmt(x) -> str:
    if x is None or (isinstance(x, float) and math.isnan(x)):
        return ""
    if isinstance(x, float):
        return f"{x:.6g}"
    return str(x)


def _csv(rows) -> str:
    return "\n".join(",".join(_fmt(c) for c in row) for row in rows) + "\n"


def _load_spec(ref: str) -> FeederSpec:
    if ref in BUILTIN_FEEDERS:
        return BUILTIN_FEEDERS[ref]()
    return load_feeder(ref)


def _solve_rows(spec: FeederSpec, result) -> list:
    rows = [("bus", "q_star")]
    rows += [(i + 1, float(q)) for i, q in enumerate(result.q_star)]
    rows += [
        ("objective", result.objective),
        ("achieved_g", result.achieved_g),
        ("status", result.status.value),
    ]
    return rows


def cmd_solve(feeder_ref: str, mode: str, tolerance: float | None, out_path: str | None,
              cfg: SolverConfig | None = None) -> RunReport:
    spec = _load_spec(feeder_ref)
    cfg = cfg or SolverConfig()
    t0 = time.perf_counter()
    if mode == "joint":
        alpha = tolerance if tolerance is not None else spec.alpha
        if alpha is None:
            raise ValueError("joint mode needs --alpha (feeder has no default)")
        result = solve_joint(spec.problem(alpha=alpha), cfg)
        tol_used = alpha
    elif mode == "per-bus":
        eta = tolerance
        if eta is None:
            eta = spec.etas[0] if spec.etas else None
        if eta is None:
            raise ValueError("per-bus mode needs --eta (feeder has no default)")
        result = solve_per_bus(spec.problem(eta=eta), cfg)
        tol_used = eta
    else:
        raise ValueError(f"unknown mode {mode!r}")
    report = RunReport(
        instance=spec.name,
        command=f"solve --mode {mode} tol={tol_used:.6g}",
        config={"mode": mode, "tolerance": tol_used, **_cfg_dict(cfg)},
        rows=_solve_rows(spec, result),
        timing_s=time.perf_counter() - t0,
        seeds={"qmc_shift_seed": mvnprob.QMC_SHIFT_SEED},
        exit_code=EXIT_INFEASIBLE if result.status == SolveStatus.INFEASIBLE else EXIT_OK,
    )
    report.csv_text = _csv(report.rows)
    _write_out(report, out_path)
    return report


def cmd_compare(feeder_ref: str, alpha: float | None, eta_list, out_path: str | None,
                cfg: SolverConfig | None = None) -> RunReport:
    spec = _load_spec(feeder_ref)
    cfg = cfg or SolverConfig()
    alphas = [alpha if alpha is not None else spec.alpha]
    if alphas[0] is None:
        raise ValueError("compare needs --alpha (feeder has no default)")
    etas = list(eta_list) if eta_list else list(spec.etas)
    t0 = time.perf_counter()
    table = compare_frameworks(spec.problem(), alphas, etas, cfg)
    rows = [("framework", "tolerance", "status", "joint_g")]
    rows += [(r.framework, r.tolerance, r.status.value, r.joint_g) for r in table]
    report = RunReport(
        instance=spec.name,
        command="compare",
        config={"alphas": alphas, "etas": etas, **_cfg_dict(cfg)},
        rows=rows,
        timing_s=time.perf_counter() - t0,
        seeds={"qmc_shift_seed": mvnprob.QMC_SHIFT_SEED},
    )
    report.csv_text = _csv(rows)
    _write_out(report, out_path)
    return report


def _surface_sigma(ref: str) -> np.ndarray:
    if ref == "builtin":
        return np.array(DEMO_SURFACE_SIGMA)
    with open(ref, "r", encoding="utf-8") as fh:
        doc = json.load(fh)
    if "dense" in doc:
        return np.asarray(doc["dense"], dtype=float)
    if "stddev" in doc and "correlation" in doc:
        sd = np.asarray(doc["stddev"], dtype=float)
        return np.asarray(doc["correlation"], dtype=float) * np.outer(sd, sd)
    raise ValueError("covariance file needs 'dense' or 'stddev'+'correlation'")


def cmd_surface(sigma_ref: str, grid: tuple[float, float, int], out_path: str | None) -> RunReport:
    sigma = _surface_sigma(sigma_ref)
    if sigma.shape != (2, 2):
        raise DimensionMismatch(
            f"surface needs a 2x2 covariance, got shape {sigma.shape}"
        )
    model = validate_covariance(sigma)
    lo, hi, steps = grid
    axis = np.linspace(lo, hi, steps)
    t0 = time.perf_counter()
    rows = [("z1", "z2", "logF")]
    for z1 in axis:
        for z2 in axis:
            est = unit_box_F(np.array([z1, z2]), model, SURFACE_TARGET_ERROR)
            rows.append((float(z1), float(z2), math.log(max(est.value, 1e-300))))
    report = RunReport(
        instance=f"surface:{sigma_ref}",
        command=f"surface --grid {lo:g},{hi:g},{steps}",
        config={"grid": list(grid), "target_error": SURFACE_TARGET_ERROR},
        rows=rows,
        timing_s=time.perf_counter() - t0,
        seeds={"qmc_shift_seed": mvnprob.QMC_SHIFT_SEED},
    )
    report.csv_text = _csv(rows)
    _write_out(report, out_path)
    return report


def cmd_validate(feeder_ref: str) -> RunReport:
    t0 = time.perf_counter()
    spec = _load_spec(feeder_ref)
    sens = spec.sensitivities()
    spec.uncertainty()
    rows = [("matrix", "row", "values")]
    for name, M in (("R", sens.R), ("X", sens.X)):
        for i, row in enumerate(M):
            rows.append((name, i + 1, " ".join(_fmt(float(v)) for v in row)))
    report = RunReport(
        instance=spec.name,
        command="validate",
        config={},
        rows=rows,
        timing_s=time.perf_counter() - t0,
    )
    report.csv_text = _csv(rows)
    return report


def _cfg_dict(cfg: SolverConfig) -> dict:
    return {
        "constraint_tol": cfg.constraint_tol,
        "prob_target_error": cfg.prob_target_error,
        "max_iter": cfg.max_iter,
    }


def _write_out(report: RunReport, out_path: str | None):
    if out_path:
        with open(out_path, "w", encoding="utf-8", newline="") as fh:
            fh.write(report.csv_text)


def _print_report(report: RunReport, pretty: bool):
    print(f"# instance: {report.instance}")
    print(f"# command:  {report.command}")
    if report.config:
        print(f"# config:   {json.dumps(report.config)}")
    if report.seeds:
        print(f"# seeds:    {json.dumps(report.seeds)}")
    print(f"# elapsed:  {report.timing_s:.3f}s")
    if pretty and report.rows:
        widths = [
            max(len(_fmt(r[c])) for r in report.rows)
            for c in range(len(report.rows[0]))
        ]
        for row in report.rows:
            print("  ".join(_fmt(v).ljust(w) for v, w in zip(row, widths)).rstrip())
    else:
        sys.stdout.write(report.csv_text)


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="voltdispatch",
        description="Joint chance-constrained reactive dispatch on radial feeders",
    )
    sub = parser.add_subparsers(dest="subcommand", required=True)

    def common(p):
        p.add_argument("--feeder", required=True,
                       help="feeder file path or builtin name "
                            f"({', '.join(sorted(BUILTIN_FEEDERS))})")
        p.add_argument("--tol", type=float, default=1e-4,
                       help="solver constraint tolerance")
        p.add_argument("--out", help="CSV output path")
        p.add_argument("--seed", type=int,
                       help="override the internal estimator seed")
        p.add_argument("--pretty", action="store_true",
                       help="aligned text table instead of CSV on stdout")

    p_solve = sub.add_parser("solve", help="solve one dispatch instance")
    common(p_solve)
    p_solve.add_argument("--mode", choices=("joint", "per-bus"), default="joint")
    p_solve.add_argument("--alpha", type=float, help="joint tolerance")
    p_solve.add_argument("--eta", type=float, action="append", default=[],
                         help="per-bus tolerance")

    p_cmp = sub.add_parser("compare", help="compare frameworks on one feeder")
    common(p_cmp)
    p_cmp.add_argument("--alpha", type=float, help="joint tolerance")
    p_cmp.add_argument("--eta", type=float, action="append", default=[],
                       help="per-bus tolerance (repeatable)")

    p_surf = sub.add_parser("surface", help="emit the log F(z) surface grid")
    p_surf.add_argument("--sigma", required=True,
                        help="covariance JSON path, or 'builtin'")
    p_surf.add_argument("--grid", default="-2,3,51",
                        help="min,max,steps lattice for both axes")
    p_surf.add_argument("--out", help="CSV output path")
    p_surf.add_argument("--seed", type=int)
    p_surf.add_argument("--pretty", action="store_true")

    p_val = sub.add_parser("validate", help="validate a feeder document")
    p_val.add_argument("--feeder", required=True)
    p_val.add_argument("--pretty", action="store_true")
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    if getattr(args, "seed", None) is not None:
        mvnprob.QMC_SHIFT_SEED = args.seed
    try:
        if args.subcommand == "solve":
            mode = args.mode
            tol = args.alpha if mode == "joint" else (args.eta[0] if args.eta else None)
            cfg = SolverConfig(constraint_tol=args.tol)
            report = cmd_solve(args.feeder, mode, tol, args.out, cfg)
        elif args.subcommand == "compare":
            cfg = SolverConfig(constraint_tol=args.tol)
            report = cmd_compare(args.feeder, args.alpha, args.eta, args.out, cfg)
        elif args.subcommand == "surface":
            parts = args.grid.split(",")
            if len(parts) != 3:
                raise ValueError("--grid must be min,max,steps")
            grid = (float(parts[0]), float(parts[1]), int(parts[2]))
            report = cmd_surface(args.sigma, grid, args.out)
        else:
            report = cmd_validate(args.feeder)
    except (VoltDispatchError, OSError, ValueError) as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_ERROR
    _print_report(report, getattr(args, "pretty", False))
    return report.exit_code


if __name__ == "__main__":
    sys.exit(main())
