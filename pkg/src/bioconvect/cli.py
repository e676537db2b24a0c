"""Command-line front end.

Subcommands map one-to-one onto the library's main entry points:

    eigs             build the eigenbases and export manifest + field blocks
    malpha           solve the stratified profile and verify its bounds
    stationary       solve the coupled steady state
    evolve           integrate a configured run and write diagnostics
    check-smallness  evaluate the global small-data certificate
    monitor          integrate and check the strong-solution monitors
    experiment       run one of the canned experiments
    emit-plots       turn a finished run directory into per-panel CSVs

Exit status: 0 when every assertion passed, 2 when at least one check
failed, 1 on execution errors (bad arguments, solver breakdown, I/O).
The BIOCONVECT_THREADS environment variable caps experiment worker pools.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import os
import sys

import numpy as np

from bioconvect.config import ConfigError, SimConfig, config_to_dict, load_config
from bioconvect.domain import make_domain
from bioconvect.operators import build_bases
from bioconvect.stationary import (
    ConvergenceError,
    solve_malpha,
    solve_stationary,
    verify_malpha_bounds,
)
from bioconvect.evolution import integrate, write_diagnostics_csv, write_summary_json
from bioconvect.estimates import (
    estimate_chain_constants,
    global_smallness_check,
    monitor_strong_estimates,
)
from bioconvect.experiments import (
    EXPERIMENT_KINDS,
    ExperimentSpec,
    _window_prediction,
    emit_plot_data,
    prepare_run,
    run_experiment,
    worker_count,
)


class UsageError(Exception):
    """Bad command-line input, reported as an execution error."""


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage problems; the contract reserves 2 for
    # assertion failures, so route those through the error path instead.
    def error(self, message):
        raise UsageError(message)


def _print_check(name: str, passed: bool, detail: str = "") -> None:
    tag = "ok " if passed else "FAIL"
    suffix = f": {detail}" if detail else ""
    print(f"[{tag}] {name}{suffix}")


def _load(args) -> SimConfig:
    cfg = load_config(args.config)
    if getattr(args, "out", None):
        cfg = dataclasses.replace(cfg, outdir=args.out)
    return cfg


def _outdir(cfg: SimConfig, required: bool = True) -> str:
    out = cfg.outdir
    if not out:
        if required:
            raise UsageError("no output directory (set run.outdir in the config or pass --out)")
        return ""
    os.makedirs(out, exist_ok=True)
    return out


# ---------------------------------------------------------------------------
# subcommand handlers (each returns the number of failed assertions)
# ---------------------------------------------------------------------------

def cmd_eigs(args) -> int:
    cfg = _load(args)
    if args.n is not None:
        cfg = dataclasses.replace(cfg, n=args.n)
    dom = make_domain(cfg.domain)
    basis = build_bases(dom, cfg.n, cfg.theta, cfg.U)
    sto, con = basis.stokes, basis.concentration

    gram_err_u = float(np.max(np.abs(sto.gram - np.eye(cfg.n))))
    gram_err_z = float(np.max(np.abs(con.gram - np.eye(cfg.n))))
    div_max = float(np.max(np.abs(sto.div_residuals)))
    bc_u = float(np.max(np.abs(sto.bc_residuals)))
    bc_z = float(np.max(np.abs(con.bc_residuals)))

    failures = 0
    for name, value, tol in [
        ("velocity_orthonormal", gram_err_u, 1e-8),
        ("concentration_orthonormal", gram_err_z, 1e-8),
        ("divergence_free", div_max, 1e-8),
        ("velocity_boundary_residual", bc_u, 1e-6),
        ("concentration_boundary_residual", bc_z, 1e-6),
    ]:
        ok = value <= tol
        failures += not ok
        _print_check(name, ok, f"{value:.3e} (tol {tol:.0e})")

    print(f"velocity eigenvalues: first {min(cfg.n, 5)} of {cfg.n}:",
          " ".join(f"{v:.6g}" for v in sto.eigenvalues[:5]))
    print(f"concentration eigenvalues: first {min(cfg.n, 5)} of {cfg.n}:",
          " ".join(f"{v:.6g}" for v in con.eigenvalues[:5]))

    out = _outdir(cfg, required=False)
    if out:
        h = hashlib.sha256()
        h.update(repr((cfg.domain.Lx, cfg.domain.H, cfg.domain.Nx, cfg.domain.Nz)).encode())
        h.update(dom.x.tobytes())
        h.update(dom.z.tobytes())
        manifest = {
            "n": cfg.n,
            "domain": {"Lx": cfg.domain.Lx, "H": cfg.domain.H,
                       "Nx": cfg.domain.Nx, "Nz": cfg.domain.Nz,
                       "hash": h.hexdigest()},
            "physics": {"theta": cfg.theta, "U": cfg.U},
            "velocity_eigenvalues": [float(v) for v in sto.eigenvalues],
            "concentration_eigenvalues": [float(v) for v in con.eigenvalues],
            "tolerances": {
                "gram_velocity": gram_err_u,
                "gram_concentration": gram_err_z,
                "divergence_max": div_max,
                "bc_velocity_max": bc_u,
                "bc_concentration_max": bc_z,
            },
            "field_blocks": ["velocity_fields.npy", "concentration_fields.npy"],
        }
        with open(os.path.join(out, "manifest.json"), "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        np.save(os.path.join(out, "velocity_fields.npy"), sto.fields)
        np.save(os.path.join(out, "concentration_fields.npy"), con.fields)
        print(f"wrote manifest and field blocks to {out}")
    return failures


def cmd_malpha(args) -> int:
    cfg = _load(args)
    dom = make_domain(cfg.domain)
    m = solve_malpha(dom, cfg.theta, cfg.U, cfg.alpha)
    result = verify_malpha_bounds(m)

    failures = 0
    for b in result["bounds"]:
        failures += not b.passed
        _print_check(b.name, b.passed,
                     f"lhs {b.lhs:.6e} <= rhs {b.rhs:.6e} [{b.constant_provenance}]")
    for key, value in sorted(m.diagnostics.items()):
        print(f"  {key}: {value:.6e}")

    out = _outdir(cfg, required=False)
    if out:
        payload = {
            "parameters": {"theta": cfg.theta, "U": cfg.U, "alpha": cfg.alpha},
            "diagnostics": {k: float(v) for k, v in m.diagnostics.items()},
            "grad_l4": result["grad_l4"],
            "bounds": [
                {"name": b.name, "lhs": float(b.lhs), "rhs": float(b.rhs),
                 "passed": bool(b.passed), "margin": float(b.margin),
                 "constant_provenance": b.constant_provenance}
                for b in result["bounds"]
            ],
        }
        with open(os.path.join(out, "malpha.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        np.save(os.path.join(out, "malpha_profile.npy"), m.profile)
        print(f"wrote profile and bound report to {out}")
    return failures


def cmd_stationary(args) -> int:
    cfg = _load(args)
    dom = make_domain(cfg.domain)
    basis = build_bases(dom, cfg.n, cfg.theta, cfg.U)
    f = cfg.forcing.evaluate(dom)
    try:
        sol = solve_stationary(basis, cfg.theta, cfg.U, cfg.alpha, cfg.viscosity, f=f)
    except ConvergenceError as exc:
        _print_check("picard_converged", False, str(exc))
        return 1

    _print_check("picard_converged", sol.converged, f"{sol.iterations} sweeps")
    print(f"  residual_velocity: {sol.residual_velocity:.6e}")
    print(f"  residual_concentration: {sol.residual_concentration:.6e}")
    print(f"  mass: {sol.mass:.9e}")

    out = _outdir(cfg, required=False)
    if out:
        np.save(os.path.join(out, "stationary_velocity_coeffs.npy"), sol.velocity_coeffs)
        np.save(os.path.join(out, "stationary_concentration_coeffs.npy"), sol.concentration_coeffs)
        payload = {
            "converged": sol.converged,
            "sweeps": sol.iterations,
            "residual_velocity": sol.residual_velocity,
            "residual_concentration": sol.residual_concentration,
            "trace": sol.trace,
            "config": config_to_dict(cfg),
        }
        with open(os.path.join(out, "stationary.json"), "w") as fh:
            json.dump(payload, fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote coefficients and summary to {out}")
    return 0 if sol.converged else 1


def cmd_evolve(args) -> int:
    cfg = _load(args)
    setup = prepare_run(cfg)
    traj = integrate(setup.state0, cfg, setup.workspace)

    ok = traj.completed and not traj.blown_up
    _print_check("completed", ok,
                 f"final t = {traj.times[-1]:.6g}, {len(traj.states)} saves")
    led = traj.diagnostics
    print(f"  final |u| = {led.norm_u[-1]:.6e}, |scalar| = {led.norm_scalar[-1]:.6e}, "
          f"mass = {led.mass[-1]:.9e}")

    out = _outdir(cfg, required=False)
    if out:
        write_diagnostics_csv(led, os.path.join(out, "diagnostics.csv"))
        write_summary_json(traj, os.path.join(out, "summary.json"),
                           extra={"config": config_to_dict(cfg)})
        print(f"wrote diagnostics.csv and summary.json to {out}")
    return 0 if ok else 1


def cmd_check_smallness(args) -> int:
    cfg = _load(args)
    if cfg.scheme != "strong":
        raise UsageError("check-smallness expects a strong-scheme config "
                         "(the certificate lives in the deviation formulation)")
    setup = prepare_run(cfg)
    constants = estimate_chain_constants(setup.basis, cfg.theta, cfg.U,
                                         cfg.viscosity, seed=cfg.seed)
    fx, fz = setup.workspace.f_grids
    f_sq = float(setup.domain.integrate(fx**2 + fz**2))
    report = global_smallness_check(
        setup.basis, cfg.theta, cfg.U, cfg.alpha, cfg.viscosity, setup.malpha,
        setup.u0_field, setup.scalar0_field, f_sup_sq=f_sq, constants=constants,
    )

    failures = 0
    for check in report.conditions:
        failures += not check.passed
        _print_check(check.name, check.passed,
                     f"lhs {check.lhs:.6e} vs rhs {check.rhs:.6e}"
                     + (f" ({check.note})" if check.note else ""))
    print(f"beta = {report.beta:.6e}; overall: {'PASS' if report.passed else 'FAIL'}")

    out = _outdir(cfg, required=False)
    if out:
        with open(os.path.join(out, "smallness.json"), "w") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        print(f"wrote smallness.json to {out}")
    return failures


def cmd_monitor(args) -> int:
    cfg = _load(args)
    if cfg.scheme != "strong":
        raise UsageError("monitor expects a strong-scheme config")
    setup = prepare_run(cfg)
    constants = estimate_chain_constants(setup.basis, cfg.theta, cfg.U,
                                         cfg.viscosity, seed=cfg.seed)
    _, wres, _, _ = _window_prediction(setup, constants)
    t_star = min(wres.t_star, cfg.t_end) if wres.t_star > 0 else None
    traj = integrate(setup.state0, cfg, setup.workspace)
    report = monitor_strong_estimates(traj, setup.workspace, constants, t_star=t_star)

    failures = 0
    _print_check("completed", traj.completed and not traj.blown_up,
                 f"final t = {traj.times[-1]:.6g}")
    failures += not (traj.completed and not traj.blown_up)
    _print_check("h1_short_time_bound", report.h1_passed,
                 f"min margin {report.h1_min_margin:.3e}")
    failures += not report.h1_passed
    if report.grad4_window_passed is not None:
        _print_check("grad_xi_l4_below_one", report.grad4_window_passed,
                     f"max {report.grad4_max_in_window:.6e} on [0, {t_star:.6g}]")
        failures += not report.grad4_window_passed
    else:
        print("  (no certified window; |grad xi|_4 check skipped)")
    _print_check("dt_scalar_finite", report.dteta_finite,
                 f"max surrogate {report.dteta_surrogate_max:.6e}")
    failures += not report.dteta_finite

    out = _outdir(cfg, required=False)
    if out:
        with open(os.path.join(out, "monitor.json"), "w") as fh:
            json.dump(report.as_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        write_diagnostics_csv(traj.diagnostics, os.path.join(out, "diagnostics.csv"))
        print(f"wrote monitor.json and diagnostics.csv to {out}")
    return failures


def cmd_experiment(args) -> int:
    cfg = _load(args)
    spec = ExperimentSpec(
        kind=args.kind,
        config=cfg,
        ns=tuple(args.ns) if args.ns else (8, 16, 32),
        delta=args.delta,
        perturbation_amplitude=args.amplitude,
        check_linearity=args.check_linearity,
        outdir=cfg.outdir,
        seed=cfg.seed if args.seed is None else args.seed,
    )
    print(f"running {args.kind} with {worker_count()} worker(s)")
    report = run_experiment(spec)

    failures = 0
    for check in report.checks:
        failures += not check.passed
        _print_check(check.name, check.passed, check.detail)
    print(f"experiment {args.kind}: {'PASS' if report.passed else 'FAIL'}")
    if spec.outdir:
        print(f"outputs in {spec.outdir}")
    return failures


def cmd_emit_plots(args) -> int:
    written = emit_plot_data(args.run_dir)
    for path in written:
        print(f"wrote {path}")
    if not written:
        print("nothing to emit (no recognized series in report.json)")
    return 0


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _add_config_arg(sub, out_help="output directory (overrides run.outdir)"):
    sub.add_argument("--config", required=True, help="TOML or JSON run configuration")
    sub.add_argument("--out", default=None, help=out_help)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="bioconvect",
                     description="Spectral-Galerkin bioconvection toolkit")
    subs = parser.add_subparsers(dest="command", required=True)

    p = subs.add_parser("eigs", help="build and export the eigenbases")
    _add_config_arg(p)
    p.add_argument("--n", type=int, default=None, help="mode count override")
    p.set_defaults(func=cmd_eigs)

    p = subs.add_parser("malpha", help="solve the stratified profile, verify bounds")
    _add_config_arg(p)
    p.set_defaults(func=cmd_malpha)

    p = subs.add_parser("stationary", help="solve the coupled steady state")
    _add_config_arg(p)
    p.set_defaults(func=cmd_stationary)

    p = subs.add_parser("evolve", help="time-integrate the configured run")
    _add_config_arg(p)
    p.set_defaults(func=cmd_evolve)

    p = subs.add_parser("check-smallness", help="evaluate the small-data certificate")
    _add_config_arg(p)
    p.set_defaults(func=cmd_check_smallness)

    p = subs.add_parser("monitor", help="integrate and check strong-solution monitors")
    _add_config_arg(p)
    p.set_defaults(func=cmd_monitor)

    p = subs.add_parser("experiment", help="run a canned experiment")
    p.add_argument("kind", choices=EXPERIMENT_KINDS)
    _add_config_arg(p)
    p.add_argument("--ns", type=int, nargs="+", default=None,
                   help="basis sizes for the convergence sweep")
    p.add_argument("--delta", type=float, default=1e-6,
                   help="twin-run perturbation scale")
    p.add_argument("--amplitude", type=float, default=1e-3,
                   help="stability perturbation amplitude")
    p.add_argument("--seed", type=int, default=None, help="seed override")
    p.add_argument("--check-linearity", action="store_true",
                   help="also run the doubled-perturbation response check")
    p.set_defaults(func=cmd_experiment)

    p = subs.add_parser("emit-plots", help="write per-panel CSVs for a run directory")
    p.add_argument("run_dir", help="directory containing report.json")
    p.set_defaults(func=cmd_emit_plots)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        failures = args.func(args)
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        return 1
    except (ConfigError, FileNotFoundError, ConvergenceError, ValueError,
            RuntimeError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0 if failures == 0 else 2


if __name__ == "__main__":
    sys.exit(main())
