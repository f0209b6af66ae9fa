"""Command line: ``boxlift {refine,estimate,optimize,run,report}``."""
from __future__ import annotations

import argparse
import configparser
import csv
import sys
from pathlib import Path

import numpy as np

from . import plots
from .dmp_refine import CONVERGED, DIMS, RefTrajectory, write_refine_log
from .friction import decompose
from .estimator import InertialEstimate, infer_added_mass_location
from .pipeline import ConvergenceError, lift_experiment, run_phase1, run_pipeline, run_summary
from .scenario import ScenarioConfig, ScenarioError
from .simplant import SettleError, rollout
from .wrench_opt import OPTIMAL, assemble_socp, solution_csv, solution_report, solve_socp

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_NONCONVERGED = 2

RZ_NOTE = ("r_z is not identifiable from upright lifting: gravity is parallel to z, so the z offset "
           "of the CoM never enters the moment balance; it is reported as 0")


class InputError(Exception):
    pass


def _vec(v) -> str:
    return ", ".join(repr(float(x)) for x in v)


def load_scenario(args) -> ScenarioConfig:
    sc = ScenarioConfig.load(args.scenario) if args.scenario else ScenarioConfig()
    over = {}
    if args.seed is not None:
        over["seed"] = args.seed
    if args.rs is not None:
        over["r_s"] = args.rs
    if args.mu is not None:
        over["mu"] = args.mu
    if args.lc is not None:
        over["l_c"] = args.lc
    return sc.replace(**over) if over else sc


def _out_dir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def _reference(sc: ScenarioConfig) -> RefTrajectory:
    try:
        return sc.reference()
    except FileNotFoundError as exc:
        raise InputError(f"trajectory file not found: {exc.filename}") from None
    except ValueError as exc:
        raise InputError(f"bad trajectory file: {exc}") from None


# -- subcommands ----------------------------------------------------------


def cmd_refine(sc: ScenarioConfig, out: Path) -> int:
    ref = _reference(sc)
    res = run_phase1(sc)
    RefTrajectory(res.trajectory, ref.dt).to_csv(out / "refined_trajectory.csv")
    with open(out / "handle_references.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["t"] + [f"{h}_{d}" for h in "LR" for d in DIMS])
        for t, a, b in zip(ref.times, res.handle_L, res.handle_R):
            wr.writerow([repr(float(t))] + [repr(float(v)) for v in np.concatenate([a, b])])
    write_refine_log(out / "refine_log.txt", res, sc.exploration(), sc.seed, sc.active_dims, sc.N)
    before = np.linalg.norm(rollout(res.nominal_trajectory, sc.nominal_plant()).F_env, axis=1)
    after = np.linalg.norm(res.rollout.F_env, axis=1)
    (out / "env_force.svg").write_text(plots.env_force_figure(ref.times, before, after))
    print(f"refine: {res.status} after {res.iterations} iterations")
    print(f"  contact cost J2: {res.nominal[2]:.6g} -> {res.best[2]:.6g} "
          f"(reduction {100 * res.J2_reduction:.2f}%)")
    print(f"  tracking cost J1: {res.nominal[1]:.6g} -> {res.best[1]:.6g}")
    return EXIT_OK if res.status == CONVERGED else EXIT_NONCONVERGED


def estimate_text(sc: ScenarioConfig, est: InertialEstimate, ramp_steps: int) -> str:
    lines = [
        "[estimate]",
        f"m_hat = {est.m_hat!r}",
        f"r_com_hat = {_vec(est.r_com_hat)}",
        "observable = " + ", ".join("yes" if m else "no" for m in est.observable_mask),
        f"mass_residual = {est.mass_residual!r}",
        f"com_residual = {est.com_residual!r}",
        "[experiment]",
        f"seed = {sc.seed}",
        f"samples = {sc.M}",
        f"ramp_steps = {ramp_steps}",
        f"sigma_f = {sc.sigma_f!r}",
        f"sigma_tau = {sc.sigma_tau!r}",
    ]
    if sc.added_mass > 0:
        loc = infer_added_mass_location(est, sc.base_mass, sc.added_mass)
        lines.append(f"added_mass_location = {_vec(loc)}")
    lines += ["[notes]", f"r_z = {RZ_NOTE}"]
    return "\n".join(lines) + "\n"


def read_estimate(path) -> InertialEstimate:
    cp = configparser.ConfigParser(interpolation=None)
    try:
        if not cp.read(path):
            raise InputError(f"estimate file not found: {path}")
        sec = cp["estimate"]
        mask = tuple(v.strip() == "yes" for v in sec["observable"].split(","))
        return InertialEstimate(float(sec["m_hat"]), [float(v) for v in sec["r_com_hat"].split(",")], mask,
                                float(sec.get("mass_residual", "0")), float(sec.get("com_residual", "0")))
    except (KeyError, ValueError, configparser.Error) as exc:
        raise InputError(f"malformed estimate file {path}: {exc}") from None


def cmd_estimate(sc: ScenarioConfig, out: Path) -> int:
    lift = lift_experiment(sc)
    lift.batch.to_csv(out / "measurements.csv")
    text = estimate_text(sc, lift.estimate, lift.ramp_steps)
    (out / "estimate.txt").write_text(text)
    e = lift.estimate
    print(f"estimate: m_hat = {e.m_hat:.6f} kg (true {sc.box_model().mass:.6f})")
    print("  r_com_hat = (" + ", ".join(f"{1e3 * v:.3f}" for v in e.r_com_hat) + ") mm")
    print(f"  note: {RZ_NOTE}")
    return EXIT_OK


def cmd_optimize(sc: ScenarioConfig, out: Path, estimate_path=None) -> int:
    if estimate_path:
        est = read_estimate(estimate_path)
    else:
        est = lift_experiment(sc).estimate
    p = assemble_socp(sc.grasp_geometry(), est, sc.weight(), sc.gravity_vec())
    s = solve_socp(p, tol=sc.tol)
    # timing varies run to run, so it stays out of the written report
    report = "\n".join(l for l in solution_report(p, s).splitlines() if not l.startswith("solve time")) + "\n"
    (out / "wrench_report.txt").write_text(report)
    (out / "wrenches.csv").write_text(solution_csv(p, s))
    print(report, end="")
    if s.status != OPTIMAL:
        return EXIT_NONCONVERGED
    rows, ls_pts, cone_pts = [], [], []
    for name, w, n in (("left", s.w_L, sc.n_L), ("right", s.w_R, sc.n_R)):
        d = decompose(w, n)
        ft = float(np.linalg.norm(d.f_t))
        rows.append([name, repr(float(d.f_n)), repr(ft), repr(float(d.tau_n))])
        ls_pts.append((name, d.f_n, ft, d.tau_n))
        cone_pts.append((name, d.f_n, ft))
    with open(out / "limit_surface_points.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["handle", "f_n", "f_t_norm", "tau_n"])
        wr.writerows(rows)
    fp = sc.friction()
    (out / "limit_surface.svg").write_text(plots.limit_surface_figure(ls_pts, fp))
    (out / "friction_cone.svg").write_text(plots.friction_cone_figure(cone_pts, fp))
    return EXIT_OK


def cmd_run(sc: ScenarioConfig, out: Path, no_phase1=False, no_phase2=False, no_phase3=False) -> int:
    _reference(sc)
    res = run_pipeline(sc, no_phase1=no_phase1, no_phase2=no_phase2, no_phase3=no_phase3)
    (out / "execution_log.csv").write_text(res.log.to_csv())
    summary = run_summary(sc, res)
    (out / "summary.txt").write_text(summary)
    t = [s.t for s in res.log.steps]
    dev = [np.degrees(np.linalg.norm(s.box[3:] - s.box_ref[3:])) for s in res.log.steps]
    sq = [abs(s.w_meas[0][:3] @ sc.n_L) + abs(s.w_meas[1][:3] @ sc.n_R) for s in res.log.steps]
    (out / "execution.svg").write_text(plots.execution_figure(t, dev, sq))
    print(summary, end="")
    return EXIT_NONCONVERGED if res.log.aborted else EXIT_OK


REPORT_FILES = ("refine_log.txt", "estimate.txt", "wrench_report.txt", "summary.txt")


def cmd_report(out: Path) -> int:
    found = [f for f in REPORT_FILES if (out / f).exists()]
    if not found:
        raise InputError(f"no results in {out}; run refine, estimate, optimize or run first")
    parts = []
    for f in found:
        parts.append(f"==== {f} ====")
        parts.append((out / f).read_text().rstrip("\n"))
    text = "\n".join(parts) + "\n"
    (out / "report.txt").write_text(text)
    print(text, end="")
    return EXIT_OK


# -- argument handling ----------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario file (INI); built-in defaults if omitted")
    common.add_argument("--seed", type=int, help="override the scenario seed")
    common.add_argument("--out", default="out", help="output directory (default: out)")
    common.add_argument("--rs", type=float, help="friction safety margin r_s")
    common.add_argument("--mu", type=float, help="friction coefficient")
    common.add_argument("--lc", type=float, help="torsion weighting length l_c [m]")

    ap = argparse.ArgumentParser(prog="boxlift", description="Dual-arm box lifting pipeline.")
    sub = ap.add_subparsers(dest="command", required=True)
    sub.add_parser("refine", parents=[common], help="refine the reference path around obstacles")
    sub.add_parser("estimate", parents=[common], help="lift the box and estimate mass and CoM")
    opt = sub.add_parser("optimize", parents=[common], help="compute the contact wrenches")
    opt.add_argument("--estimate", help="estimate file written by 'estimate' (runs the lift if omitted)")
    run = sub.add_parser("run", parents=[common], help="full pipeline with closed-loop execution")
    run.add_argument("--no-phase1", action="store_true", help="transport along the unrefined reference")
    run.add_argument("--no-phase2", action="store_true", help="assume the CoM at the box centre")
    run.add_argument("--no-phase3", action="store_true", help="naive symmetric wrench assignment")
    sub.add_parser("report", parents=[common], help="collect the text reports in --out")
    return ap


def main(argv=None) -> int:
    ap = build_parser()
    args = ap.parse_args(argv)
    if args.seed is not None and args.seed < 0:
        print("boxlift: error: --seed must be non-negative", file=sys.stderr)
        return EXIT_INPUT
    try:
        if args.command == "report":
            return cmd_report(Path(args.out))
        sc = load_scenario(args)
        out = _out_dir(args)
        if args.command == "refine":
            return cmd_refine(sc, out)
        if args.command == "estimate":
            return cmd_estimate(sc, out)
        if args.command == "optimize":
            return cmd_optimize(sc, out, args.estimate)
        return cmd_run(sc, out, args.no_phase1, args.no_phase2, args.no_phase3)
    except (InputError, ScenarioError) as exc:
        print(f"boxlift: error: {exc}", file=sys.stderr)
        return EXIT_INPUT
    except (ConvergenceError, SettleError) as exc:
        print(f"boxlift: did not converge: {exc}", file=sys.stderr)
        return EXIT_NONCONVERGED


if __name__ == "__main__":
    sys.exit(main())
