"""``stokes-eigs``, ``macro-eigs`` and ``limit-spectrum`` subcommands."""
from __future__ import annotations

import argparse
from dataclasses import replace

from commands.context import CommandContext, emit
from commands.exit_codes import cli_handler
from experiments.sweep import auto_window
from geometry.mesh import build_cell_mesh
from homogenization.micro_stokes import MicroStokesSolver, inclusion_mesh
from homogenization.two_scale import LimitProblemSolver
from reporting.plots import velocity_magnitude_figure


def limit_solver(ctx: CommandContext) -> LimitProblemSolver:
    solver = ctx.config.solver
    return LimitProblemSolver(ctx.macro_mesh(), ctx.cell_mesh(), ctx.material, tol=solver.tol,
                              inner_solver=solver.inner_solver, workers=ctx.workers,
                              seed=ctx.config.experiment.seed)


@cli_handler
def stokes_eigs_command(args: argparse.Namespace, ctx: CommandContext):
    solver = ctx.config.solver
    geometry = ctx.config.geometry.cell_geometry(args.res)
    if args.radius is not None:
        if args.radius <= 0:
            raise ValueError(f"--radius must be > 0, got {args.radius}")
        geometry = replace(geometry, size=args.radius)
    micro = MicroStokesSolver(inclusion_mesh(build_cell_mesh(geometry)), viscosity=ctx.material.micro_viscosity,
                              tol=solver.tol, inner_solver=solver.inner_solver)
    spectrum = micro.stokes_eigenpairs(args.k or ctx.config.experiment.k)
    rows = [{"index": j, "mu": mu, "mean_norm": spectrum.mean_norms[j], "nonzero_mean": spectrum.nonzero_mean[j],
             "divergence_norm": spectrum.report.divergence_norms[j], "residual": spectrum.report.residuals[j]}
            for j, mu in enumerate(spectrum.values)]
    artifacts = {
        "stokes_eigs.json": {"radius": geometry.size, "resolution": geometry.resolution, **spectrum.to_dict()},
        "stokes_eigs.csv": {"columns": ("index", "mu", "mean_norm", "nonzero_mean", "divergence_norm", "residual"),
                            "rows": rows},
    }
    if args.svg:
        for j, field_ in enumerate(spectrum.fields[:args.svg], start=1):
            artifacts[f"stokes_mode_{j}.svg"] = velocity_magnitude_figure(
                micro.mesh, field_.velocity, f"|v_{j}|, mu = {spectrum.values[j - 1]:.6g}")
    manifest = ctx.write("stokes-eigs", artifacts)
    emit({"manifest": manifest, "mu": spectrum.values, "mean_norms": spectrum.mean_norms})


@cli_handler
def macro_eigs_command(args: argparse.Namespace, ctx: CommandContext):
    solver = limit_solver(ctx)
    spectrum = solver.macro_eigenpairs(args.k or ctx.config.experiment.k)
    rows = [{"index": j, "lambda": value, "residual": spectrum.report.residuals[j]}
            for j, value in enumerate(spectrum.values)]
    manifest = ctx.write("macro-eigs", {
        "macro_eigs.json": {"chom": solver.effective_tensor(), **spectrum.report.to_dict()},
        "macro_eigs.csv": {"columns": ("index", "lambda", "residual"), "rows": rows},
    })
    emit({"manifest": manifest, "lambda": spectrum.values})


@cli_handler
def limit_spectrum_command(args: argparse.Namespace, ctx: CommandContext):
    solver = limit_solver(ctx)
    window = args.window or ctx.config.experiment.window or auto_window(solver)
    limit = solver.limit_spectrum(window, k_start=ctx.config.experiment.k,
                                  reconstruct_companions=args.companions)
    rows = [{"value": value, "labels": labels} for value, labels in limit.spectrum.rows()]
    manifest = ctx.write("limit-spectrum", {
        "limit_spectrum.json": limit,
        "limit_spectrum.csv": {"columns": ("value", "labels"), "rows": rows},
    })
    emit({"manifest": manifest, "window": window, "values": limit.spectrum.values})


def register(subparsers) -> None:
    parser = subparsers.add_parser("stokes-eigs", help="Stokes eigenpairs of the inclusion")
    parser.add_argument("--k", type=int, default=None)
    parser.add_argument("--res", type=int, default=None, help="cell resolution")
    parser.add_argument("--radius", type=float, default=None, help="inclusion size, overrides [geometry] size")
    parser.add_argument("--svg", type=int, nargs="?", const=1, default=0, metavar="N",
                        help="also plot |v| of the first N eigenvelocities (default 1)")
    parser.set_defaults(handler=stokes_eigs_command)

    parser = subparsers.add_parser("macro-eigs", help="Dirichlet eigenpairs of the homogenized operator")
    parser.add_argument("--k", type=int, default=None)
    parser.set_defaults(handler=macro_eigs_command)

    parser = subparsers.add_parser("limit-spectrum", help="macro and micro spectrum below a window")
    parser.add_argument("--window", type=float, default=None, help="upper window end (default 1.1 * mu_2)")
    parser.add_argument("--companions", action="store_true", help="also solve for the coupled macro parts")
    parser.set_defaults(handler=limit_spectrum_command)
