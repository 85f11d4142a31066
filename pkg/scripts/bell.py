#!/usr/bin/env python3
"""
Bell test audit script.

Simulates trial data from quantum and local-realist models, analyses trial
files with the supermartingale test, plans run times, optimises the CH-E
value and checks space-time feasibility.
"""

import argparse
import logging
import math
import sys
from pathlib import Path

import numpy as np
import polars as pl

# Add src to path for imports
sys.path.insert(0, str(Path(__file__).parent.parent / "src"))

from bell_audit import report
from bell_audit.adversaries import (
    QuantumModel,
    chsh_optimal_angles,
    lhv_max_j,
    lhv_three_outcome_max,
    make_generator,
    quantum_cond_probs,
    simulate,
)
from bell_audit.config import (
    RunConfig,
    build_profile,
    build_seed,
    build_source,
    build_spacetime,
    build_spec,
    load_config,
    parse_assignments,
    resolve_config_path,
)
from bell_audit.core import (
    CountsTable,
    JointProbs,
    PredictabilityMode,
    adapted_bound_check,
    adapted_che_jeps,
    binomial_tolerance,
    che_j,
    che_j_stderr,
    estimate_cond_probs,
    no_signaling_check,
)
from bell_audit.errors import (
    BracketError,
    InfeasibleExperimentError,
    InsufficientDataError,
    ValidationError,
)
from bell_audit.martingale import (
    IncrementKind,
    ProcessScanner,
    bonferroni,
    concentrate,
    default_streak,
    hoeffding_pvalue,
    plan_runtime,
    setting_frequency_diagnostic,
)
from bell_audit.optimizer import critical_efficiency, optimize_j, threshold_sweep
from bell_audit.rng import RngSeed
from bell_audit.spacetime import feasibility_table, validate_geometry
from bell_audit.trials import read_trials_csv, write_trials_csv

logger = logging.getLogger("bell")

EXIT_OK = 0
EXIT_FAILED = 1
EXIT_VALIDATION = 2
EXIT_INFEASIBLE = 3
EXIT_IO = 4


def _run_config(args, command: str) -> RunConfig:
    """Resolve defaults, config file, --set assignments and explicit flags."""
    overrides = parse_assignments(getattr(args, "set", None))
    for key in ("seed", "stream", "mode", "s", "trials", "kind", "workers"):
        value = getattr(args, key, None)
        if value is not None:
            overrides[key] = value
    values = load_config(args.config, overrides)
    return RunConfig(
        command=command,
        config_path=resolve_config_path(args.config),
        input_path=Path(args.input) if getattr(args, "input", None) else None,
        output_path=Path(args.output) if getattr(args, "output", None) else None,
        values=values,
    )


def _empirical(counts: CountsTable) -> dict:
    """Empirical J with its error bar and a 5-sigma no-signaling check."""
    try:
        probs = estimate_cond_probs(counts)
    except InsufficientDataError as e:
        return {"J": None, "note": str(e)}
    tol = binomial_tolerance(counts)
    return {
        "J": che_j(probs),
        "J_stderr": che_j_stderr(counts),
        "no_signaling": no_signaling_check(probs, tol).to_dict() if tol > 0 else None,
        "counts": counts.to_dict(),
    }


def cmd_simulate(args) -> dict:
    """Generate trials and write them to a CSV file."""
    run = _run_config(args, "simulate")
    if run.output_path is None:
        raise ValidationError("simulate requires --out")
    values = run.values
    profile = build_profile(values)
    generator = make_generator(build_source(values), values["trials"], profile)
    counts = CountsTable.zeros()

    def counted(blocks):
        nonlocal counts
        for block in blocks:
            counts = counts + block.counts()
            yield block

    blocks = simulate(generator, values["trials"], build_seed(values), workers=values["workers"])
    rows = write_trials_csv(counted(blocks), run.output_path)
    result = {
        "command": "simulate",
        "output": str(run.output_path),
        "trials": rows,
        "generator": generator.describe(),
        "empirical": _empirical(counts),
        "config": run.to_dict(),
    }
    if profile.mode is PredictabilityMode.COMMUNICATION and result["empirical"]["J"] is not None:
        result["adapted_bound"] = adapted_bound_check(result["empirical"]["J"], profile.eps_ab)
    return result


def cmd_analyze(args) -> dict:
    """Run the supermartingale analysis on a trial CSV."""
    run = _run_config(args, "analyze")
    if run.input_path is None:
        raise ValidationError("analyze requires --in")
    values = run.values
    profile = build_profile(values)
    spec = build_spec(values)
    s = values["s"] if values["s"] is not None else default_streak(spec)

    scanner = ProcessScanner(spec, s)
    for block in read_trials_csv(run.input_path):
        scanner.feed(block)
    summary = scanner.summary()

    result = {
        **summary.to_dict(),
        "mode": profile.mode.value,
        "epsA": profile.epsA,
        "epsB": profile.epsB,
        "qf": profile.qf,
        "p_ij": [[spec.p11, spec.p12], [spec.p21, spec.p22]],
        "spec": spec.to_dict(),
        "empirical": _empirical(scanner.counts),
        "setting_frequencies": setting_frequency_diagnostic(scanner.counts, spec),
    }
    if spec.kind is IncrementKind.ADAPTED and profile.mode is not PredictabilityMode.COMMUNICATION:
        result["J_eps"] = adapted_che_jeps(JointProbs.from_counts(scanner.counts), profile)
    # beyond one half there is a single test, so no Bonferroni split
    if values["p_epsilon"] is not None and profile.mode is not PredictabilityMode.BEYOND_HALF:
        result["bonferroni"] = bonferroni(summary.p_value, values["p_epsilon"], values["alpha"])
    result["config"] = run.to_dict()

    if run.output_path is not None:
        run.output_path.write_text(report.dumps(result) + "\n", encoding="utf-8")
    return result


def cmd_plan(args) -> dict:
    """Estimate the run time needed to reach the target threshold."""
    run = _run_config(args, "plan")
    values = run.values
    eps_ab = values["epsAB"] if values["epsAB"] is not None else build_profile(values).eps_ab
    plan = plan_runtime(
        R=values["rate"],
        J=values["J"],
        eps_ab=eps_ab,
        c=values["c"],
        f=values["f"],
        s=values["s"],
        r=values["range"],
    )
    return {
        "command": "plan",
        **plan.to_dict(),
        "inputs": {
            "rate": values["rate"],
            "J": values["J"],
            "epsAB": eps_ab,
            "c": values["c"],
            "f": values["f"],
        },
        "config": run.to_dict(),
    }


def cmd_optimize(args) -> dict:
    """Maximise J, find the critical efficiency, or sweep the efficiency."""
    run = _run_config(args, "optimize")
    values = run.values
    common = {
        "fixed_r": values["fixed_r"],
        "visibility": values["visibility"],
        "pDark": values["pDark"],
        "starts": values["starts"],
    }

    if args.threshold:
        eta_star = critical_efficiency(tol=values["tol"], **common)
        return {"command": "optimize", "eta_star": eta_star, "tol": values["tol"], "config": run.to_dict()}

    if args.sweep:
        step = values["sweep_step"]
        if step <= 0:
            raise ValidationError(f"sweep_step must be positive, got {step}")
        etas = np.arange(values["sweep_start"], values["sweep_stop"] + step / 2, step)
        rows = threshold_sweep([float(eta) for eta in etas], **common)
        result = {"command": "optimize", "rows": rows, "config": run.to_dict()}
        if run.output_path is not None:
            pl.DataFrame(rows).write_csv(run.output_path, float_precision=17)
            result["output"] = str(run.output_path)
        return result

    best = optimize_j(values["eta"], **common)
    return {"command": "optimize", **best.to_dict(), "config": run.to_dict()}


def cmd_spacetime(args) -> dict:
    """Check the timing constraints of the layout."""
    run = _run_config(args, "spacetime")
    config = build_spacetime(run.values)
    for row in feasibility_table(config):
        print(row, file=sys.stderr)
    return {"command": "spacetime", **validate_geometry(config), "config": run.to_dict()}


def cmd_selftest(args) -> dict:
    """Run the built-in identity checks."""
    checks = []

    def check(name: str, passed: bool, **detail):
        checks.append({"name": name, "passed": bool(passed), **detail})

    lhv = lhv_max_j()
    check("lhv_max_j", lhv["max_j"] == 0.0, **lhv)

    three = lhv_three_outcome_max()
    check("lhv_three_outcome", three["max_value"] <= 0.0, max_value=three["max_value"])

    rng = RngSeed(seed=20150101).block_generator(0)
    stream = rng.choice([4.0, -4.0, 0.0], size=10_000, p=[0.01, 0.01, 0.98]) - 1e-3
    stopped = concentrate(stream, 0, 1e-3)
    check(
        "concentration_s0_identity",
        stopped.M == len(stream) and np.array_equal(stopped.stopped_values, np.cumsum(stream)),
        M=stopped.M,
    )

    p_20 = hoeffding_pvalue(20.0, 1, 8.0)
    p_22 = hoeffding_pvalue(45.0, 4, 9.0)
    expected = math.exp(-12.5)
    check(
        "hoeffding_compensation",
        abs(p_20 - expected) <= 1e-15 and abs(p_22 - expected) <= 1e-15,
        p_c20_r8=p_20,
        p_c22_5_r9=p_22,
    )

    plan = plan_runtime(R=1e6, J=1e-6, eps_ab=1e-7, c=20.0, f=2e-5)
    years = plan.t_plain / (365.25 * 24 * 3600)
    hours = plan.t_doob / 3600
    check("plan_runtime", 15 <= years <= 17 and 3 <= hours <= 4, years=years, hours=hours)

    alpha1, alpha2, beta1, beta2 = chsh_optimal_angles()
    quantum = che_j(quantum_cond_probs(QuantumModel(alpha1=alpha1, alpha2=alpha2, beta1=beta1, beta2=beta2)))
    check("quantum_bound", abs(quantum - (math.sqrt(2) - 1) / 2) <= 1e-9, J=quantum)

    passed = all(c["passed"] for c in checks)
    result = {"command": "selftest", "passed": passed, "checks": checks}
    if not passed:
        result["error"] = "selftest failed: " + ", ".join(c["name"] for c in checks if not c["passed"])
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        description="Bell test simulation and memory-loophole-free analysis"
    )
    parser.add_argument("--verbose", "-v", action="store_true", help="Debug logging on stderr")

    # Options shared by every command
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="Config file (default: $BELL_AUDIT_CONFIG)")
    common.add_argument("--in", dest="input", help="Input trial CSV")
    common.add_argument("--out", dest="output", help="Output file")
    common.add_argument("--seed", type=int, help="Root seed")
    common.add_argument("--stream", type=int, help="Substream index")
    common.add_argument("--mode", help="communication-fraction, excess-predictability or beyond-half")
    common.add_argument("--s", type=int, help="Streak length for concentration")
    common.add_argument("--trials", type=int, help="Number of trials")
    common.add_argument("--kind", help="Increment kind: plain-J, shifted-K or adapted-Jeps")
    common.add_argument("--workers", type=int, help="Generator threads")
    common.add_argument(
        "--set", action="append", metavar="KEY=VALUE", help="Override a config key (repeatable)"
    )

    subparsers = parser.add_subparsers(dest="command", required=True)

    subparsers.add_parser("simulate", parents=[common], help="Generate a trial CSV")
    subparsers.add_parser("analyze", parents=[common], help="Analyse a trial CSV")
    subparsers.add_parser("plan", parents=[common], help="Run-time estimate")

    p_optimize = subparsers.add_parser("optimize", parents=[common], help="Optimise J over the quantum model")
    p_optimize.add_argument("--threshold", action="store_true", help="Find the critical efficiency")
    p_optimize.add_argument("--sweep", action="store_true", help="Optimise over a range of efficiencies")

    subparsers.add_parser("spacetime", parents=[common], help="Space-time feasibility report")
    subparsers.add_parser("selftest", parents=[common], help="Run internal identity checks")
    return parser


def run_command(args) -> tuple[dict, int]:
    """Dispatch to a handler and map failures to exit statuses."""
    commands = {
        "simulate": cmd_simulate,
        "analyze": cmd_analyze,
        "plan": cmd_plan,
        "optimize": cmd_optimize,
        "spacetime": cmd_spacetime,
        "selftest": cmd_selftest,
    }

    handler = commands.get(args.command)
    if handler is None:
        return {"error": f"Unknown command: {args.command}"}, EXIT_VALIDATION
    try:
        result = handler(args)
    except ValidationError as e:
        return {"error": str(e), "kind": type(e).__name__}, EXIT_VALIDATION
    except (InfeasibleExperimentError, BracketError) as e:
        return {"error": str(e), "kind": type(e).__name__}, EXIT_INFEASIBLE
    except OSError as e:
        return {"error": str(e), "kind": type(e).__name__}, EXIT_IO
    return result, (EXIT_OK if "error" not in result else EXIT_FAILED)


def main():
    parser = build_parser()
    args = parser.parse_args()

    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.WARNING,
        stream=sys.stderr,
        format="%(levelname)s %(name)s: %(message)s",
    )

    result, status = run_command(args)
    print(report.dumps(result))
    sys.exit(status)


if __name__ == "__main__":
    main()
