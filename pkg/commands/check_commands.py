"""``check`` subcommand: the invariant suite, optionally with the convergence sweep."""
from __future__ import annotations

import argparse

from commands.context import CommandContext, emit
from commands.exit_codes import EXIT_ACCEPTANCE, cli_handler
from experiments.invariants import CheckResult, run_invariant_suite
from experiments.sweep import sweep_epsilon


@cli_handler
def check_command(args: argparse.Namespace, ctx: CommandContext):
    results = run_invariant_suite(ctx.config)
    if args.with_sweep:
        sweep = sweep_epsilon(ctx.config, progress=False)
        convergence = sweep.reports["convergence"]
        results += [
            CheckResult("macro_convergence", bool(convergence.get("macro_error_passed")),
                        convergence.get("macro_error_ratio"), 0.5),
            CheckResult("spectral_hausdorff", bool(convergence.get("hausdorff_passed")),
                        convergence.get("hausdorff_ratio"), 0.5),
            CheckResult("spectral_gap", bool(sweep.reports["spectral_gap"]["passed"]),
                        sweep.reports["spectral_gap"]["bound"], None, sweep.reports["spectral_gap"]),
        ]
    rows = [{"name": r.name, "passed": r.passed, "value": r.value if isinstance(r.value, float) else None,
             "tol": r.tol} for r in results]
    manifest = ctx.write("check", {
        "check.json": {"checks": results, "passed": all(r.passed for r in results)},
        "check.csv": {"columns": ("name", "passed", "value", "tol"), "rows": rows},
    })
    failed = [r.name for r in results if not r.passed]
    emit({"manifest": manifest, "checks": len(results), "failed": failed})
    return EXIT_ACCEPTANCE if failed else None


def register(subparsers) -> None:
    parser = subparsers.add_parser("check", help="run the invariant suite")
    parser.add_argument("--with-sweep", action="store_true", help="include the eps sweep gates (slow)")
    parser.set_defaults(handler=check_command)
