"""Command-line experiment drivers.

Subcommands: truncation-study, optimize, compare-mc, sample-field, and
check-derivatives.  Every command is deterministic given (config, seed);
numeric CSV output uses 17 significant digits so regression baselines
round-trip losslessly.  Exit codes: 0 success, 2 config error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from .config import (
    PROFILES,
    build_mean_field,
    build_ouu_config,
    build_setup,
    resolve_config,
)
from .errors import ConfigError, NumericalError
from .fem import build_mesh
from .ouu import (
    OuuConfig,
    evaluate_true_risk,
    optimize,
    optimize_saa,
    true_objective_for_controls,
)
from .random_field import field_on_mesh, field_on_neumann_boundary
from .semilinear import SemilinearProblem
from .surrogate import truncation_rate_study
from .utils import fmt

OUTDIR_ENV = "RISKQUAD_OUTDIR"


def _write_csv(path, header, rows, footer_lines=()):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(
                ",".join(v if isinstance(v, str) else fmt(v) for v in row) + "\n"
            )
        for line in footer_lines:
            fh.write(f"# {line}\n")


def _outdir(args):
    out = args.out or os.environ.get(OUTDIR_ENV) or "riskquad-out"
    path = Path(out)
    path.mkdir(parents=True, exist_ok=True)
    return path


def _load(args, overrides=None):
    over = dict(overrides or {})
    if args.seed is not None:
        over["seed"] = args.seed
    if args.threads is not None:
        over["threads"] = args.threads
    return resolve_config(args.profile, args.config, over)


def _rate_setup(cfg):
    """Problem + field + nominal control for the truncation study."""
    if cfg.experiment.problem == "poisson":
        mesh, gf, problem = build_setup(cfg)
        z0 = np.full(problem.n_controls, cfg.ouu.z0)
        return problem, gf, z0
    if cfg.experiment.problem == "semilinear":
        mesh = build_mesh(cfg.mesh.nx, cfg.mesh.ny, 1.0, 1.0)
        problem = SemilinearProblem(mesh, c=cfg.experiment.semilinear_c)
        gf = field_on_neumann_boundary(
            mesh, cfg.random_field.kappa, cfg.random_field.alpha,
            rng_seed=cfg.seed, space=problem.trace_space,
        )
        z0 = np.full(mesh.n_nodes, 1.0)
        return problem, gf, z0
    raise ConfigError(f"unknown experiment problem {cfg.experiment.problem!r}")


def cmd_truncation_study(args):
    cfg = _load(args)
    out = _outdir(args)
    problem, gf, z0 = _rate_setup(cfg)
    study = truncation_rate_study(
        problem, gf, z0, cfg.experiment.eps_list, cfg.experiment.rate_n_mc,
        seed=cfg.seed, threads=cfg.threads,
    )
    path = out / "truncation_rates.csv"
    _write_csv(
        path,
        ["eps", "err_lin", "err_quad"],
        zip(study.eps, study.err_lin, study.err_quad),
        footer_lines=[
            f"slope_lin={fmt(study.slope_lin)}",
            f"slope_quad={fmt(study.slope_quad)}",
            f"n_mc={study.n_mc} seed={study.seed}",
        ],
    )
    print(f"wrote {path}")
    print(f"slope_lin={study.slope_lin:.3f} slope_quad={study.slope_quad:.3f}")
    return 0


def _write_trace(path, legs):
    rows = []
    for leg in legs:
        for r in leg.rows:
            rows.append(
                (leg.beta, r.iteration, r.value, r.grad_norm, r.solves,
                 r.active_bounds)
            )
    _write_csv(
        path,
        ["beta", "iter", "J", "grad_norm", "pde_solves_cumulative",
         "active_bounds_count"],
        rows,
    )


def _write_risk_samples(path, risk):
    cols = [risk.samples]
    header = ["theta"]
    if risk.lin_samples is not None:
        header += ["theta_lin", "theta_quad"]
        cols += [risk.lin_samples, risk.quad_samples]
    _write_csv(path, header, zip(*cols))


def _report_text(report, z):
    lines = [
        "risk-averse objective report",
        f"J              = {fmt(report.value)}",
        f"theta_bar      = {fmt(report.theta_bar)}",
        f"tr_hc          = {fmt(report.tr_hc)}",
        f"tr_hc_sq       = {fmt(report.tr_hc_sq)}",
        f"grad_term      = {fmt(report.grad_term)}",
        f"mean_term      = {fmt(report.mean_term)}",
        f"variance_term  = {fmt(report.variance_term)}",
        f"control_cost   = {fmt(report.control_cost)}",
        f"pde_solves     = {report.pde_solves}",
        f"grad_norm      = {fmt(report.grad_norm)}",
        "control vector:",
    ]
    lines += [f"  z[{i:2d}] = {fmt(v)}" for i, v in enumerate(z)]
    return "\n".join(lines) + "\n"


def cmd_optimize(args):
    cfg = _load(args)
    out = _outdir(args)
    mesh, gf, problem = build_setup(cfg)
    ouu_cfg = build_ouu_config(cfg.ouu, seed=cfg.seed)
    z0 = np.full(problem.n_controls, cfg.ouu.z0)

    result = optimize(problem, gf, ouu_cfg, z0=z0)
    _write_trace(out / "iterates.csv", result.legs)
    _write_csv(
        out / "optimal_control.csv",
        ["well", "rate"],
        [(i, v) for i, v in enumerate(result.z)],
    )
    with open(out / "risk_report.txt", "w", encoding="utf-8") as fh:
        fh.write(_report_text(result.final_report, result.z))

    n_risk = cfg.experiment.true_risk_samples
    for tag, z in (("initial", z0), ("optimal", result.z)):
        risk = evaluate_true_risk(
            problem, gf, z, n_risk, seed=cfg.seed + 2, threads=cfg.threads
        )
        _write_risk_samples(out / f"true_risk_{tag}.csv", risk)
        print(
            f"{tag}: E[theta]={risk.mean:.6g} Var[theta]={risk.variance:.6g}"
        )
    if result.degraded:
        print("warning: line search stalled; returned best iterate", file=sys.stderr)
    print(f"wrote results to {out}")
    return 0


def cmd_compare_mc(args):
    cfg = _load(args)
    out = _outdir(args)
    exp = cfg.experiment
    rows = []
    controls = []
    meta = []
    for beta in exp.compare_betas:
        mesh, gf, problem = build_setup(cfg)
        schedule = (0.0, beta) if beta > 0 else (beta,)
        for method in exp.compare_methods:
            if method in ("quad_randomized", "quad_eigenbasis"):
                mode = "randomized" if method == "quad_randomized" else "eigenbasis"
                for n_tr in exp.compare_n_tr:
                    ouu_cfg = OuuConfig(
                        beta=beta, gamma=cfg.ouu.gamma, n_tr=n_tr,
                        trace_mode=mode, beta_schedule=schedule,
                        grad_reduction_tol=cfg.ouu.grad_reduction_tol,
                        max_iter=exp.compare_max_iter, seed=cfg.seed,
                        z_min=cfg.ouu.z_min, z_max=cfg.ouu.z_max,
                    )
                    res = optimize(
                        problem, gf, ouu_cfg,
                        z0=np.full(problem.n_controls, cfg.ouu.z0),
                    )
                    controls.append(res.z)
                    meta.append((method, beta, n_tr, 4 + 4 * n_tr))
            elif method == "saa":
                for n_mc in exp.compare_n_mc:
                    ouu_cfg = OuuConfig(
                        beta=beta, gamma=cfg.ouu.gamma, n_tr=cfg.ouu.n_tr,
                        trace_mode="randomized", beta_schedule=schedule,
                        grad_reduction_tol=cfg.ouu.grad_reduction_tol,
                        max_iter=exp.compare_max_iter, seed=cfg.seed,
                        z_min=cfg.ouu.z_min, z_max=cfg.ouu.z_max,
                    )
                    res = optimize_saa(problem, gf, ouu_cfg, n_mc)
                    controls.append(res.z)
                    meta.append((method, beta, n_mc, 2 * n_mc))
            else:
                raise ConfigError(f"unknown compare method {method!r}")
        values, errors = true_objective_for_controls(
            problem, gf, controls, beta, cfg.ouu.gamma,
            exp.compare_eval_samples, seed=cfg.seed + 5,
        )
        for (method, b, level, solves), val, se in zip(meta, values, errors):
            rows.append((method, b, level, solves, val, se))
        controls, meta = [], []
    path = out / "compare_mc.csv"
    _write_csv(
        path,
        ["method", "beta", "work_level", "pde_solves_per_eval",
         "true_objective", "mc_standard_error"],
        rows,
    )
    print(f"wrote {path}")
    return 0


def cmd_sample_field(args):
    cfg = _load(args)
    out = _outdir(args)
    mesh = build_mesh(cfg.mesh.nx, cfg.mesh.ny, cfg.mesh.lx, cfg.mesh.ly)
    mean = build_mean_field(mesh, cfg.random_field.mean)
    gf = field_on_mesh(
        mesh, cfg.random_field.kappa, cfg.random_field.alpha,
        mean=mean, rng_seed=cfg.seed,
    )
    n = cfg.experiment.n_samples
    draws = gf.sample_batch(n, eps=cfg.experiment.sample_eps, seed=cfg.seed)
    header = ["x", "y"] + [f"sample_{k}" for k in range(n)]
    rows = zip(mesh.node_x, mesh.node_y, *[draws[:, k] for k in range(n)])
    path = out / "field_samples.csv"
    _write_csv(path, header, rows)
    print(f"wrote {path}")
    return 0


def cmd_check_derivatives(args):
    cfg = _load(args, overrides={"mesh": {"nx": 12, "ny": 6}})
    from .checks import run_derivative_checks

    results = run_derivative_checks(seed=cfg.seed)
    ok = True
    for name, err, tol in results:
        status = "PASS" if err <= tol else "FAIL"
        ok = ok and err <= tol
        print(f"[{status}] {name}: rel err {err:.3e} (tol {tol:.1e})")
    if not ok:
        raise NumericalError("a derivative check failed")
    return 0


def main(argv=None):
    parser = argparse.ArgumentParser(
        prog="riskquad",
        description="Risk-averse well control with quadratic surrogates.",
    )
    parser.add_argument("--config", help="JSON config file", default=None)
    parser.add_argument(
        "--profile", choices=sorted(PROFILES), default=None,
        help="named base configuration (default: paper_section6)",
    )
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--out", default=None,
                        help=f"output directory (or ${OUTDIR_ENV})")
    parser.add_argument("--threads", type=int, default=None,
                        help="cap on concurrent PDE solves")
    sub = parser.add_subparsers(dest="command", required=True)
    sub.add_parser("truncation-study").set_defaults(fn=cmd_truncation_study)
    sub.add_parser("optimize").set_defaults(fn=cmd_optimize)
    sub.add_parser("compare-mc").set_defaults(fn=cmd_compare_mc)
    sub.add_parser("sample-field").set_defaults(fn=cmd_sample_field)
    sub.add_parser("check-derivatives").set_defaults(fn=cmd_check_derivatives)

    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
