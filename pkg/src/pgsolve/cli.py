"""Command-line entry point ``pgsolve``.

Exit codes: 0 success, 1 usage, 2 invalid input, 3 numerical failure,
4 an asserted estimate failed.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import (
    BlowUp,
    CFLViolation,
    FormatError,
    NoConvergence,
    ParseError,
    SnapshotIOError,
    UnknownKey,
    UnknownPreset,
    ValidationError,
)

EXIT_OK, EXIT_USAGE, EXIT_INVALID, EXIT_NUMERICAL, EXIT_ESTIMATE = 0, 1, 2, 3, 4
INVALID = (ValidationError, ParseError, UnknownKey, UnknownPreset, FormatError, SnapshotIOError, FileNotFoundError)
NUMERICAL = (NoConvergence, BlowUp, CFLViolation, FloatingPointError, ArithmeticError)


class _Usage(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _Usage(f"{self.prog}: {message}")


def _floats(text):
    try:
        return [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _ints(text):
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}")


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pgsolve", description="Planetary geostrophic thermal model: solver and estimate checks.")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    r = sub.add_parser("run", help="run a scenario and write ledger, snapshots and manifest")
    r.add_argument("config")
    r.add_argument("--out", help="output directory (overrides [output].directory)")

    ps = sub.add_parser("pressure-solve", help="solve the pressure problem for a temperature snapshot")
    ps.add_argument("config")
    ps.add_argument("--temp", required=True, help="SPGF temperature snapshot")
    ps.add_argument("--out", default="pressure.spgf", help="pressure snapshot to write")
    ps.add_argument("--report", default=None, help="JSON-lines residual report (default: next to --out)")

    e = sub.add_parser("eigens", help="print the lowest eigenmodes as CSV")
    e.add_argument("config")
    e.add_argument("-m", type=int, default=10, help="number of modes")

    v = sub.add_parser("verify", help="run the scenario, then every estimate check")
    v.add_argument("config")
    v.add_argument("--out", help="output directory")

    m = sub.add_parser("mms", help="manufactured-solution convergence study of the pressure solve")
    m.add_argument("config")
    m.add_argument("--levels", type=_ints, default=[16, 32, 64])

    pt = sub.add_parser("perturb", help="continuous-dependence experiment")
    pt.add_argument("config")
    pt.add_argument("--eta", type=_floats, required=True, help="comma-separated perturbation sizes")
    return p


def _out_dir(args, scenario, default):
    if getattr(args, "out", None):
        return Path(args.out)
    if scenario.output.directory:
        return Path(scenario.output.directory)
    return Path(default)


def _dump(obj):
    def fix(x):
        if isinstance(x, dict):
            return {str(k): fix(v) for k, v in x.items()}
        if isinstance(x, (list, tuple)):
            return [fix(v) for v in x]
        if isinstance(x, (np.floating, float)):
            x = float(x)
            return x if np.isfinite(x) else None
        if isinstance(x, (np.integer,)):
            return int(x)
        if isinstance(x, np.bool_):
            return bool(x)
        if isinstance(x, np.ndarray):
            return fix(x.tolist())
        return x

    return json.dumps(fix(obj), indent=2, sort_keys=True)


def cmd_run(args):
    from .config import parse_config
    from .runner import run

    s = parse_config(args.config)
    out = _out_dir(args, s, "pgsolve-run")
    res = run(s, out_dir=out)
    print(_dump({"out_dir": str(out), "rows": len(res.ledger), "stats": res.stats}))
    return EXIT_OK


def cmd_pressure(args):
    from .config import parse_config
    from .grid import norm_l2
    from .pressure import assemble_pressure_system, diagnose_velocity, discrete_divergence, solve_pressure
    from .snapshot import read_snapshot, write_snapshot

    s = parse_config(args.config)
    T = read_snapshot(args.temp, s.grid)
    system = assemble_pressure_system(s.params, s.grid, **s.solver.options())
    sol = solve_pressure(system, T)
    write_snapshot(sol.p, args.out)
    report = Path(args.report) if args.report else Path(args.out).with_suffix(".residuals.jsonl")
    with open(report, "w") as fh:
        for i, r in enumerate(sol.history):
            fh.write(json.dumps({"iteration": i + 1, "residual": float(r)}) + "\n")
        vel = diagnose_velocity(s.params, sol.p, T)
        fh.write(
            json.dumps(
                {
                    "final": True,
                    "iterations": sol.iterations,
                    "residual": sol.residual,
                    "divergence_l2": norm_l2(discrete_divergence(vel)),
                }
            )
            + "\n"
        )
    print(_dump({"pressure": args.out, "report": str(report), "iterations": sol.iterations, "residual": sol.residual}))
    return EXIT_OK


def cmd_eigens(args):
    from .config import parse_config
    from .spectral import build_basis

    if args.m < 1:
        raise _Usage("eigens: -m must be >= 1")
    s = parse_config(args.config)
    basis = build_basis(s.params, args.m)
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["kx", "ky", "n", "mu_n", "lambda"])
    for (kx, ky, n), lam in zip(basis.modes, basis.eigenvalues):
        w.writerow([int(kx), int(ky), int(n), repr(float(basis.mu[n - 1])), repr(float(lam))])
    return EXIT_OK


def verify_scenario(scenario, out_dir=None):
    """Run ``scenario`` and evaluate every check; returns (summary dict, passed)."""
    from .estimates import (
        boundedness_monitors,
        coercivity_violations,
        decay_bound_check,
        dissipation_budget_check,
        poincare_violations,
    )
    from .runner import run

    res = run(scenario, out_dir=out_dir)
    led, p = res.ledger, scenario.params
    decay = decay_bound_check(led, p)
    diss = dissipation_budget_check(led, p)
    nmax = max(scenario.grid.shape)
    adv_limit = 1e-10 * nmax
    checks = {
        "decay_envelope": {**decay.summary(), "passed": decay.failures == 0},
        "decay_lambda1": {"failures": decay.lambda1_failures, "passed": decay.lambda1_failures == 0},
        "dissipation_budget": diss.summary(),
        "poincare": {"violations": poincare_violations(led), "passed": poincare_violations(led) == 0},
        "coercivity": {"violations": coercivity_violations(led), "passed": coercivity_violations(led) == 0},
        "advection_cancellation": {
            "max_ratio": res.stats["adv_cancel_max_ratio"],
            "limit": adv_limit,
            "passed": res.stats["adv_cancel_max_ratio"] <= adv_limit,
        },
    }
    if scenario.engine == "galerkin":
        fails = res.stats["modal_bound_failures"]
        checks["modal_decay"] = {"failures": fails, "passed": fails == 0}
    monitors = {
        "boundedness": boundedness_monitors(led).summary(),
        "velocity_ratio_max": float(led.column("vel_ratio").max()),
        "divergence_max": float(led.column("div_resid").max()),
    }
    passed = all(c["passed"] for c in checks.values())
    return {"passed": passed, "checks": checks, "monitors": monitors, "stats": res.stats}, passed


def cmd_verify(args):
    from .config import parse_config

    s = parse_config(args.config)
    out = _out_dir(args, s, "pgsolve-verify")
    summary, passed = verify_scenario(s, out)
    summary["ledger"] = str(out / "ledger.csv")
    (out / "verify.json").write_text(_dump(summary) + "\n")
    print(_dump(summary))
    return EXIT_OK if passed else EXIT_ESTIMATE


def cmd_mms(args):
    from .config import parse_config
    from .mms import mms_study

    s = parse_config(args.config)
    if len(args.levels) < 2:
        raise _Usage("mms: need at least two levels")
    study = mms_study(s.params, tuple(args.levels), **s.solver.options())
    w = csv.writer(sys.stdout, lineterminator="\n")
    w.writerow(["n", "pressure_error", "velocity_error", "divergence_l2", "iterations", "seconds"])
    for lv in study.levels:
        w.writerow([lv.n, lv.pressure_error, lv.velocity_error, lv.divergence_norm, lv.iterations, f"{lv.seconds:.3f}"])
    for attr in ("pressure_error", "velocity_error", "divergence_norm"):
        print(f"# order {attr}: " + " ".join(f"{o:.3f}" for o in study.orders(attr)))
    return EXIT_OK


def cmd_perturb(args):
    from .config import parse_config
    from .estimates import continuous_dependence_experiment

    s = parse_config(args.config)
    if any(e < 0 for e in args.eta):
        raise _Usage("perturb: eta values must be non-negative")
    rep = continuous_dependence_experiment(s, args.eta)
    out = rep.summary()
    out["times"] = rep.times
    out["theta_norms"] = {repr(k): v for k, v in rep.theta_norms.items()}
    print(_dump(out))
    ok = (not np.isfinite(rep.collapse_error) or rep.collapse_ok) and (0.0 not in rep.theta_norms or np.max(rep.theta_norms[0.0]) == 0.0)
    return EXIT_OK if ok else EXIT_ESTIMATE


COMMANDS = {
    "run": cmd_run,
    "pressure-solve": cmd_pressure,
    "eigens": cmd_eigens,
    "verify": cmd_verify,
    "mms": cmd_mms,
    "perturb": cmd_perturb,
}


def _thread_limit():
    value = os.environ.get("SPG_THREADS")
    if not value:
        return contextlib.nullcontext()
    try:
        n = int(value)
    except ValueError:
        raise ValidationError("SPG_THREADS", f"SPG_THREADS must be an integer, got {value!r}")
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - optional dependency
        return contextlib.nullcontext()
    return threadpool_limits(limits=n)


def main(argv=None) -> int:
    try:
        args = build_parser().parse_args(argv)
        with _thread_limit():
            return COMMANDS[args.command](args)
    except _Usage as exc:
        print(exc, file=sys.stderr)
        return EXIT_USAGE
    except INVALID as exc:
        print(f"pgsolve: invalid input: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NUMERICAL as exc:
        print(f"pgsolve: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
