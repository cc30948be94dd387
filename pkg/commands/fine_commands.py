"""``eps-solve``, ``eps-eigs`` and ``sweep`` subcommands."""
from __future__ import annotations

import argparse
import logging

from commands.context import CommandContext, emit, epsilon_tag, parse_epsilon
from commands.exit_codes import EXIT_ACCEPTANCE, EXIT_SOLVER, cli_handler
from commands.limit_commands import limit_solver
from experiments.fine_scale import FineScaleProblem, two_scale_distance
from experiments.sweep import ROW_COLUMNS, sweep_epsilon
from reporting.plots import spectra_figure

logger = logging.getLogger(__name__)


def fine_problem(ctx: CommandContext, eps: float) -> FineScaleProblem:
    geometry, solver = ctx.config.geometry, ctx.config.solver
    return FineScaleProblem(geometry.rectangle, eps, geometry.fine_cell_res, ctx.material,
                            geometry.cell_geometry(geometry.fine_cell_res), tol=solver.tol,
                            linear_solver=solver.linear_solver, maxiter=solver.max_iterations,
                            eig_tol=solver.eig_tol)


@cli_handler
def eps_solve_command(args: argparse.Namespace, ctx: CommandContext):
    eps = parse_epsilon(args.eps)
    exp = ctx.config.experiment
    forcing = exp.forcing()
    run = fine_problem(ctx, eps).solve_resolvent(forcing.eps_sampler(eps), exp.alpha)
    payload = run.to_dict()
    if args.compare:
        limit = limit_solver(ctx).solve_limit_resolvent(forcing, exp.alpha)
        payload["distance"] = two_scale_distance(run, limit)
    artifacts = {f"run_{epsilon_tag(eps)}.json": payload}
    if run.report.history:
        artifacts[f"history_{epsilon_tag(eps)}.csv"] = {
            "columns": ("iter", "residual"),
            "rows": [{"iter": i, "residual": r} for i, r in run.report.history_rows()],
        }
    manifest = ctx.write("eps-solve", artifacts)
    emit({"manifest": manifest, "energy": run.energy, "energy_defect": run.energy_defect,
          **payload.get("distance", {})})


@cli_handler
def eps_eigs_command(args: argparse.Namespace, ctx: CommandContext):
    eps = parse_epsilon(args.eps)
    problem = fine_problem(ctx, eps)
    report = problem.eigenpairs(args.k or ctx.config.experiment.k)
    rows = [{"index": j, "lambda": value, "residual": report.residuals[j]} for j, value in enumerate(report.values)]
    manifest = ctx.write("eps-eigs", {
        f"eps_eigs_{epsilon_tag(eps)}.json": {"epsilon": eps, "dofs": 2 * problem.mesh.n_nodes,
                                              **report.to_dict()},
        f"eps_eigs_{epsilon_tag(eps)}.csv": {"columns": ("index", "lambda", "residual"), "rows": rows},
    })
    emit({"manifest": manifest, "lambda": report.values})


@cli_handler
def sweep_command(args: argparse.Namespace, ctx: CommandContext):
    result = sweep_epsilon(ctx.config, progress=not args.quiet)
    artifacts = {
        "sweep.csv": {"columns": ROW_COLUMNS, "rows": result.rows},
        "sweep.json": result,
        "spectra.svg": spectra_figure({eps: s.values for eps, s in result.spectra.items()},
                                      result.limit.spectrum.values, result.window),
    }
    for eps, run in result.runs.items():
        artifacts[f"run_{epsilon_tag(eps)}.json"] = run
    manifest = ctx.write("sweep", artifacts)
    convergence = result.reports["convergence"]
    emit({"manifest": manifest, "rows": len(result.rows), "failed": len(result.rows) - len(result.succeeded),
          "convergence": convergence})
    if not result.succeeded:
        return EXIT_SOLVER
    if args.strict and not (convergence.get("macro_error_passed") and convergence.get("hausdorff_passed")
                            and result.reports["spectral_gap"]["passed"]):
        return EXIT_ACCEPTANCE
    return None


def register(subparsers) -> None:
    parser = subparsers.add_parser("eps-solve", help="resolvent problem at one eps")
    parser.add_argument("--eps", required=True, help="1/n")
    parser.add_argument("--compare", action="store_true", help="also solve the limit and report the distance")
    parser.set_defaults(handler=eps_solve_command)

    parser = subparsers.add_parser("eps-eigs", help="lowest eigenvalues at one eps")
    parser.add_argument("--eps", required=True, help="1/n")
    parser.add_argument("--k", type=int, default=None)
    parser.set_defaults(handler=eps_eigs_command)

    parser = subparsers.add_parser("sweep", help="convergence sweep over the configured eps list")
    parser.add_argument("--strict", action="store_true", help="exit with 4 when a convergence gate fails")
    parser.add_argument("--quiet", action="store_true", help="no progress bar")
    parser.set_defaults(handler=sweep_command)
