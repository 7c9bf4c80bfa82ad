"""Command-line front end.

Subcommands: solve, simulate, evaluate-exact, validate, sweep.
Exit codes: 0 ok, 2 config error, 3 numerical error, 4 scale guard, 1 other.
"""

import argparse
import csv
import json
import os
import sys

import numpy as np

from . import control, matkit, model, oracle, sim, solver
from .errors import (
    DefinitenessError,
    NcslqrError,
    NonFiniteError,
    ParseError,
    ProbabilityError,
    ScaleGuardError,
    ShapeError,
    SingularBlockError,
)

EXIT_OK = 0
EXIT_OTHER = 1
EXIT_CONFIG = 2
EXIT_NUMERIC = 3
EXIT_GUARD = 4

CONFIG_ERRORS = (ParseError, ShapeError, ProbabilityError)
NUMERIC_ERRORS = (SingularBlockError, DefinitenessError, NonFiniteError)


def _load_spec(path):
    try:
        return model.load_problem(path), EXIT_OK
    except (ParseError, ShapeError, ProbabilityError, DefinitenessError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return None, EXIT_CONFIG


def _build_policy(kind, spec, solution_path):
    bundle = None
    if kind == "optimal" or solution_path:
        bundle = solver.load_bundle(solution_path) if solution_path else solver.solve_backward(spec)
    return control.make_policy(kind, spec, bundle=bundle), bundle


def cmd_solve(args):
    spec, rc = _load_spec(args.config)
    if spec is None:
        return rc
    try:
        bundle = solver.solve_backward(spec)
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    if args.out:
        solver.save_bundle(bundle, args.out)
    print(f"j_star = {bundle.j_star:.12g}")
    for t in range(spec.T + 1):
        lo_p = min(matkit.min_eig(v) for v in bundle.values.P[t].values())
        lo_pt = min(matkit.min_eig(v) for v in bundle.values.Ptilde[t].values())
        print(f"t={t}: min eig P {lo_p:.3e}, min eig Ptilde {lo_pt:.3e}, e {bundle.values.e[t]:.6g}")
    return EXIT_OK


def cmd_simulate(args):
    spec, rc = _load_spec(args.config)
    if spec is None:
        return rc
    try:
        policy, _ = _build_policy(args.policy, spec, args.solution)
        report = sim.monte_carlo(spec, policy, args.runs, args.seed, threads=args.threads)
    except NonFiniteError as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    rows = [
        ["policy", "runs", "seed", "mean_cost", "std_err"],
        [report.policy, report.runs, report.seed, repr(report.mean_cost), repr(report.std_err)],
    ]
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    print(",".join(str(c) for c in rows[0]))
    print(",".join(str(c) for c in rows[1]))
    if args.dump_trajectories:
        os.makedirs(args.dump_trajectories, exist_ok=True)
        for i in range(args.runs):
            traj = sim.simulate_run(spec, policy, args.seed, i)
            sim.trajectory_to_csv(
                traj, os.path.join(args.dump_trajectories, f"run_{i:06d}.csv")
            )
    return EXIT_OK


def cmd_evaluate_exact(args):
    spec, rc = _load_spec(args.config)
    if spec is None:
        return rc
    try:
        policy, bundle = _build_policy(args.policy, spec, args.solution)
        if bundle is None:
            bundle = solver.solve_backward(spec)
        report = oracle.oracle_report(spec, policy, j_star=bundle.j_star)
        if args.policy == "optimal":
            stat = oracle.stationarity_check(spec, bundle, raise_on_violation=False)
            report["stationarity"] = {
                "max_abs_gradient": stat["max_abs_gradient"],
                "worst_entry": stat["worst_entry"],
                "max_cost_decrease": stat["max_cost_decrease"],
                "ok": stat["ok"],
            }
    except ScaleGuardError as exc:
        print(f"scale guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    text = json.dumps(report, indent=1)
    if args.out:
        with open(args.out, "w") as fh:
            fh.write(text + "\n")
    print(text)
    return EXIT_OK


def _validate_checks(spec, args):
    """Invariant battery for one instance; yields (name, ok, detail)."""
    bundle = solver.solve_backward(spec)
    yield "solve", True, f"j_star = {bundle.j_star:.9g}"

    lo = min(
        min(matkit.min_eig(v) for v in bundle.values.P[t].values())
        for t in range(spec.T + 2)
    )
    lo_t = min(
        min(matkit.min_eig(v) for v in bundle.values.Ptilde[t].values())
        for t in range(spec.T + 2)
    )
    yield "psd-tables", min(lo, lo_t) >= -1e-9, f"min eigenvalue {min(lo, lo_t):.3e}"

    if spec.modes.kappa1 == 1:
        worst = 0.0
        for t in range(spec.T + 1):
            for m0 in range(spec.modes.kappa0):
                worst = max(
                    worst,
                    float(np.max(np.abs(bundle.values.P[t][(m0, None)] - bundle.values.P[t][(m0, 0)]))),
                    float(np.max(np.abs(bundle.values.Ptilde[t][(m0, None)] - bundle.values.Ptilde[t][(m0, 0)]))),
                    float(np.max(np.abs(bundle.gains.K[t][(m0, None)] - bundle.gains.K[t][(m0, 0)]))),
                )
        yield "kappa1-collapse", worst <= 1e-12, f"max table gap {worst:.3e}"

    cen = control.centralized_solve(spec)
    if spec.channel.p1 == 1.0:
        ref = bundle
    else:
        spec_p1 = model.load_config({**model.problem_to_config(spec), "channel": {"p1": 1.0}})
        ref = solver.solve_backward(spec_p1)
    worst = 0.0
    for t in range(spec.T + 1):
        for key, mat in cen.P[t].items():
            worst = max(worst, float(np.max(np.abs(mat - ref.values.P[t][key]))))
    yield "centralized-match", worst <= 1e-10, f"max |P - P_centralized| {worst:.3e} (at p1=1)"

    if oracle.sequence_count(spec) <= oracle.SEQUENCE_GUARD:
        opt = control.OptimalPolicy(spec, bundle)
        cost = oracle.exact_expected_cost(spec, opt)
        rel = abs(cost - bundle.j_star) / max(1.0, abs(bundle.j_star))
        yield "oracle-analytic-identity", rel <= 1e-8, (
            f"exact {cost:.9g} vs analytic {bundle.j_star:.9g} (rel {rel:.3e})"
        )
    else:
        yield "oracle-analytic-identity", True, "skipped (above enumeration guard)"

    opt = control.OptimalPolicy(spec, bundle)
    report = sim.monte_carlo(spec, opt, args.runs, args.seed)
    gap = abs(report.mean_cost - bundle.j_star)
    bound = 3.0 * report.std_err if report.std_err > 0 else 1e-9
    yield "mc-consistency", gap <= bound, (
        f"|{report.mean_cost:.6g} - {bundle.j_star:.6g}| = {gap:.3e} vs 3*SE {bound:.3e}"
    )

    runs = min(args.runs, 2000)
    errs = np.zeros((runs, spec.T + 1, spec.dims.d_x1))
    for i in range(runs):
        traj = sim.simulate_run(spec, opt, args.seed + 1, i)
        errs[i] = traj.x1 - traj.x_hat1
    mean_err = errs.mean(axis=0)
    se = errs.std(axis=0, ddof=1) / np.sqrt(runs) + 1e-12
    ok = bool(np.all(np.abs(mean_err) <= 3.0 * se + 1e-9))
    yield "estimator-unbiasedness", ok, (
        f"max |mean innovation|/SE = {float(np.max(np.abs(mean_err) / se)):.2f}"
    )


def cmd_validate(args):
    spec, rc = _load_spec(args.config)
    if spec is None:
        return rc
    results = []
    try:
        for name, ok, detail in _validate_checks(spec, args):
            results.append({"check": name, "ok": bool(ok), "detail": detail})
            print(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
    except ScaleGuardError as exc:
        print(f"scale guard: {exc}", file=sys.stderr)
        return EXIT_GUARD
    except NUMERIC_ERRORS as exc:
        print(f"numerical error: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    summary = {"all_pass": all(r["ok"] for r in results), "checks": results}
    print(json.dumps(summary))
    return EXIT_OK if summary["all_pass"] else EXIT_OTHER


def cmd_sweep(args):
    spec, rc = _load_spec(args.config)
    if spec is None:
        return rc
    values = []
    for v in args.values.split(","):
        p = float(v)
        if p in values:
            print(f"warning: duplicate sweep value {p} ignored", file=sys.stderr)
            continue
        values.append(p)
    rows = [["p1", "j_star", "mc_mean", "mc_se"]]
    cfg = model.problem_to_config(spec)
    for p in values:
        try:
            spec_p = model.load_config({**cfg, "channel": {"p1": p}})
            bundle = solver.solve_backward(spec_p)
            policy = control.OptimalPolicy(spec_p, bundle)
            report = sim.monte_carlo(spec_p, policy, args.runs, args.seed)
        except (ProbabilityError,) + CONFIG_ERRORS as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        except NUMERIC_ERRORS as exc:
            print(f"numerical error: {exc}", file=sys.stderr)
            return EXIT_NUMERIC
        rows.append([
            repr(float(p)), repr(float(bundle.j_star)),
            repr(float(report.mean_cost)), repr(float(report.std_err)),
        ])
    if args.out:
        with open(args.out, "w", newline="") as fh:
            csv.writer(fh).writerows(rows)
    for row in rows:
        print(",".join(str(c) for c in row))
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(
        prog="ncslqr",
        description="Solve, simulate, and verify optimal decentralized control "
        "of a two-plant switched linear system over a lossy acknowledged channel.",
    )
    parser.add_argument(
        "--threads",
        type=int,
        default=int(os.environ.get("NCSLQR_THREADS", "1")),
        help="worker count hint (results are identical at any value)",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="run the backward recursions, write the solution bundle")
    p.add_argument("--config", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_solve)

    p = sub.add_parser("simulate", help="Monte Carlo rollout of a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--solution")
    p.add_argument("--policy", default="optimal", choices=["optimal", "zero", "ce", "centralized"])
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.add_argument("--dump-trajectories")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("evaluate-exact", help="exact enumeration cost of a policy")
    p.add_argument("--config", required=True)
    p.add_argument("--solution")
    p.add_argument("--policy", default="optimal", choices=["optimal", "zero", "ce", "centralized"])
    p.add_argument("--out")
    p.set_defaults(func=cmd_evaluate_exact)

    p = sub.add_parser("validate", help="run the invariant battery on one config")
    p.add_argument("--config", required=True)
    p.add_argument("--runs", type=int, default=20000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("sweep", help="solve and simulate across channel success rates")
    p.add_argument("--config", required=True)
    p.add_argument("--param", default="p1", choices=["p1"])
    p.add_argument("--values", required=True)
    p.add_argument("--runs", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out")
    p.set_defaults(func=cmd_sweep)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except NcslqrError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_OTHER


if __name__ == "__main__":
    sys.exit(main())
