"""Command-line harness.

Subcommands: ``generate`` (synthetic instances), ``crude`` (width-reduced
MWU stage), ``boost`` (full pipeline), ``oracle`` (verification solve),
``check`` (loss certification suite), ``scale`` (row-count sweep
recording step counts).  Verbosity via the ``WIDTHRED_LOG`` environment
variable; exit codes: 0 ok, 2 usage or input error, 3 numerical failure,
4 theory-violation guard.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import errors
from .crude import MwuConfig, qsc_mwu, solve_linf
from .instances import generate, load_instance, save_instance
from .losses import check_qsc, make_loss, SymmetricExpLoss
from .oracles import oracle_solve
from .refine import RefineConfig, boost_pipeline
from .report import SolveReport, write_trace_csv

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3
EXIT_THEORY = 4

_USAGE_ERRORS = (
    errors.ParseError,
    errors.DimensionMismatch,
    errors.InvalidParameter,
    errors.EmptyVector,
    errors.MissingConstant,
    errors.UnsupportedOrder,
    errors.OutOfDomain,
    FileNotFoundError,
)
_NUMERICAL_ERRORS = (
    errors.RankDeficient,
    errors.Infeasible,
    errors.InfeasibleAugmented,
    errors.OracleFailure,
    errors.NonConverged,
    np.linalg.LinAlgError,
)

log = logging.getLogger("widthred.cli")


def _setup_logging():
    level = os.environ.get("WIDTHRED_LOG", "WARNING").upper()
    logging.basicConfig(
        level=getattr(logging, level, logging.WARNING),
        format="%(levelname)s %(name)s: %(message)s",
    )


def _loss_params(args):
    params = {}
    for key in ("nu", "p", "mu"):
        value = getattr(args, key, None)
        if value is not None:
            params[key] = value
    return params


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _write_solution(out: Path, x, fmt: str):
    if fmt == "csv":
        path = out / "solution.csv"
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("index,value\n")
            for i, v in enumerate(np.asarray(x, dtype=float)):
                fh.write(f"{i},{v!r}\n")
    else:
        path = out / "solution.json"
        with open(path, "w", encoding="utf-8") as fh:
            json.dump({"x": [float(v) for v in x]}, fh, indent=1)
            fh.write("\n")
    return path


def _write_report(out: Path, report: SolveReport):
    with open(out / "report.json", "w", encoding="utf-8") as fh:
        fh.write(report.to_json())
        fh.write("\n")
    write_trace_csv(report.trace, out / "trace.csv")


def _mwu_config(args, eps) -> MwuConfig:
    kwargs = {"epsilon": eps}
    if args.c_tau is not None:
        kwargs["c_tau"] = args.c_tau
    if args.c_alpha is not None:
        kwargs["c_alpha"] = args.c_alpha
    if args.max_width_steps is not None:
        kwargs["max_width_steps"] = args.max_width_steps
    return MwuConfig(**kwargs)


def _radius(args, instance) -> float:
    if args.radius is not None:
        return args.radius
    if instance.R_hint is not None:
        return float(instance.R_hint)
    raise errors.InvalidParameter(
        "no radius: pass --radius or use an instance with an R hint")


def cmd_generate(args) -> int:
    params = _loss_params(args)
    params["loss"] = args.loss
    params["planted_radius"] = args.planted_radius
    instance = generate(args.kind, args.seed, args.d, args.n, args.m, params)
    out = Path(args.out)
    if out.is_dir():
        out = out / "instance.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    save_instance(instance, out)
    print(json.dumps({"written": str(out), "d": instance.d,
                      "n": instance.n, "m": instance.m,
                      "loss": instance.loss_key}))
    return EXIT_OK


def cmd_crude(args) -> int:
    instance = load_instance(args.instance)
    R = _radius(args, instance)
    sol = qsc_mwu(instance, R, _mwu_config(args, args.eps))
    out = _out_dir(args)
    report = SolveReport(
        x=sol.x_tilde,
        objective=sol.objective,
        feasibility_residual=sol.feasibility_residual,
        flow_steps=sol.flow_steps,
        width_steps=sol.width_steps,
        R_used=R,
        M=instance.loss.M,
        epsilon=args.eps,
        trace=sol.trace,
        extra={"linf_bound": sol.linf_bound, "tau": sol.tau,
               "alpha": sol.alpha, "phi_initial": sol.phi_initial,
               "phi_final": sol.phi_final},
    )
    _write_solution(out, sol.x_tilde, args.format)
    _write_report(out, report)
    print(report.to_json())
    return EXIT_OK


def cmd_boost(args) -> int:
    instance = load_instance(args.instance)
    R = _radius(args, instance)
    crude_config = _mwu_config(args, 1.0)
    report = boost_pipeline(instance, R, args.eps, crude_config,
                            RefineConfig())
    out = _out_dir(args)
    _write_solution(out, report.x, args.format)
    _write_report(out, report)
    print(report.to_json())
    return EXIT_OK


def cmd_oracle(args) -> int:
    instance = load_instance(args.instance)
    result = oracle_solve(instance, tol=args.tol, method=args.method)
    out = _out_dir(args)
    doc = {
        "f_opt": result.f_opt,
        "method": result.method,
        "certified_tol": result.certified_tol,
        "iterations": result.iterations,
        "x_opt": [float(v) for v in result.x_opt],
    }
    with open(out / "oracle.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(json.dumps({k: doc[k] for k in
                      ("f_opt", "method", "certified_tol", "iterations")}))
    return EXIT_OK


def cmd_check(args) -> int:
    if args.instance is not None:
        instance = load_instance(args.instance)
        loss, name = instance.loss, instance.loss_key
    else:
        made = make_loss(args.loss, **_loss_params(args))
        loss = made.loss if isinstance(made, SymmetricExpLoss) else made
        name = args.loss
    lo, hi = (-args.grid_span, args.grid_span)
    grid = np.linspace(max(lo, loss.w0 - args.grid_span), hi, args.grid_points)
    cert = check_qsc(loss, grid)
    rows = cert.rows()
    width = max(len(r[0]) for r in rows)
    print(f"loss {name!r}: M = {loss.M:.6g}, grid "
          f"[{grid[0]:.3g}, {grid[-1]:.3g}] x{len(grid)}")
    for label, value, bound, ok in rows:
        print(f"  {label:<{width}}  {value:.12g}  ({bound})  "
              f"{'PASS' if ok else 'FAIL'}")
    out = _out_dir(args)
    with open(out / "check.json", "w", encoding="utf-8") as fh:
        json.dump({
            "loss": name,
            "M": loss.M,
            "max_third_ratio": cert.max_third_ratio,
            "ratio_ok": cert.ratio_ok,
            "max_stability_excess": cert.max_stability_excess,
            "stability_ok": cert.stability_ok,
            "passed": cert.passed,
        }, fh, indent=1)
        fh.write("\n")
    return EXIT_OK if cert.passed else EXIT_NUMERICAL


def _scale_one(m, args):
    params = _loss_params(args)
    params["loss"] = args.loss
    instance = generate("gaussian", args.seed + int(round(math.log2(m))),
                        args.d, args.n, m, params)
    R = args.radius_scale * m ** (-1.0 / 3.0)
    config = MwuConfig(epsilon=args.eps, width_safety=args.width_safety)
    sol = qsc_mwu(instance, R, config)
    return {
        "m": m,
        "flow_steps": sol.flow_steps,
        "width_steps": sol.width_steps,
        "tau": sol.tau,
        "objective": sol.objective,
    }


def cmd_scale(args) -> int:
    grid = [int(v) for v in args.m_grid.split(",")]
    with ThreadPoolExecutor(max_workers=args.workers) as pool:
        rows = list(pool.map(lambda m: _scale_one(m, args), grid))
    rows.sort(key=lambda r: r["m"])
    out = _out_dir(args)
    with open(out / "scale.csv", "w", encoding="utf-8", newline="\n") as fh:
        fh.write("m,flow_steps,width_steps,tau,objective\n")
        for r in rows:
            fh.write(f"{r['m']},{r['flow_steps']},{r['width_steps']},"
                     f"{r['tau']!r},{r['objective']!r}\n")
    positive = [(math.log(r["m"]), math.log(r["width_steps"]))
                for r in rows if r["width_steps"] > 0]
    slope = math.nan
    if len(positive) >= 2:
        xs = np.array([p[0] for p in positive])
        ys = np.array([p[1] for p in positive])
        slope = float(np.polyfit(xs, ys, 1)[0])
    doc = {"rows": rows, "width_step_loglog_slope": slope}
    with open(out / "scale.json", "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=1)
        fh.write("\n")
    print(json.dumps({"width_step_loglog_slope": slope,
                      "rows": len(rows)}))
    return EXIT_OK


def cmd_linf(args) -> int:
    instance = load_instance(args.instance)
    x = solve_linf(instance, args.eps)
    out = _out_dir(args)
    _write_solution(out, x, args.format)
    norm = float(np.max(np.abs(instance.P @ x)))
    print(json.dumps({"linf_norm": norm}))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="widthred",
        description="Width-reduced MWU solvers for constrained "
                    "quasi-self-concordant minimization",
    )
    sub = parser.add_subparsers(dest="cmd", required=True)

    def add_common(p, instance=True):
        if instance:
            p.add_argument("--instance", required=True, help="instance file")
        p.add_argument("--out", default="widthred-out", help="output directory")
        p.add_argument("--format", choices=("json", "csv"), default="json")

    def add_mwu_flags(p):
        p.add_argument("--radius", type=float, default=None)
        p.add_argument("--c-tau", dest="c_tau", type=float, default=None)
        p.add_argument("--c-alpha", dest="c_alpha", type=float, default=None)
        p.add_argument("--max-width-steps", dest="max_width_steps",
                       type=int, default=None)

    def add_loss_flags(p):
        p.add_argument("--loss", default="logistic",
                       choices=("exp", "sym-exp", "lp", "logistic"))
        p.add_argument("--nu", type=float, default=None)
        p.add_argument("--p", type=float, default=None)
        p.add_argument("--mu", type=float, default=None)

    p = sub.add_parser("generate", help="write a synthetic instance")
    p.add_argument("--kind", default="gaussian")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--d", type=int, required=True)
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--planted-radius", dest="planted_radius",
                   type=float, default=1.0)
    add_loss_flags(p)
    p.add_argument("--out", default="instance.json")
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("crude", help="run the width-reduced MWU stage")
    add_common(p)
    add_mwu_flags(p)
    p.add_argument("--eps", type=float, default=0.5)
    p.set_defaults(func=cmd_crude)

    p = sub.add_parser("boost", help="crude stage plus residual refinement")
    add_common(p)
    add_mwu_flags(p)
    p.add_argument("--eps", type=float, default=1e-4,
                   help="target optimality gap")
    p.set_defaults(func=cmd_boost)

    p = sub.add_parser("linf", help="min-max regression front end")
    add_common(p)
    p.add_argument("--eps", type=float, default=0.25)
    p.set_defaults(func=cmd_linf)

    p = sub.add_parser("oracle", help="independent verification solve")
    add_common(p)
    p.add_argument("--tol", type=float, default=1e-10)
    p.add_argument("--method", default="projected-newton",
                   choices=("projected-newton", "grid-search", "lp-vertex"))
    p.set_defaults(func=cmd_oracle)

    p = sub.add_parser("check", help="loss certification suite")
    p.add_argument("--instance", default=None)
    add_loss_flags(p)
    p.add_argument("--grid-span", dest="grid_span", type=float, default=10.0)
    p.add_argument("--grid-points", dest="grid_points", type=int, default=401)
    p.add_argument("--out", default="widthred-out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_check)

    p = sub.add_parser("scale", help="row-count sweep of step counts")
    p.add_argument("--m-grid", dest="m_grid",
                   default="64,128,256,512,1024,2048,4096")
    p.add_argument("--d", type=int, default=4)
    p.add_argument("--n", type=int, default=12)
    p.add_argument("--seed", type=int, default=7)
    p.add_argument("--eps", type=float, default=0.5)
    p.add_argument("--radius-scale", dest="radius_scale", type=float,
                   default=0.6)
    p.add_argument("--width-safety", dest="width_safety", type=float,
                   default=1.0)
    p.add_argument("--workers", type=int, default=4)
    add_loss_flags(p)
    p.add_argument("--out", default="widthred-out")
    p.add_argument("--format", choices=("json", "csv"), default="json")
    p.set_defaults(func=cmd_scale)

    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except errors.TheoryViolation as exc:
        _emit_error(exc, EXIT_THEORY)
        return EXIT_THEORY
    except _USAGE_ERRORS as exc:
        _emit_error(exc, EXIT_USAGE)
        return EXIT_USAGE
    except _NUMERICAL_ERRORS as exc:
        _emit_error(exc, EXIT_NUMERICAL)
        return EXIT_NUMERICAL


def _emit_error(exc, code):
    print(json.dumps({
        "error": type(exc).__name__,
        "message": str(exc),
        "exit_code": code,
    }), file=sys.stderr)


if __name__ == "__main__":
    sys.exit(main())
