"""``cell-mesh`` and ``chom`` subcommands."""
from __future__ import annotations

import argparse
import logging
from typing import Any, Dict, List

from commands.context import CommandContext, emit
from commands.exit_codes import cli_handler
from fem.tensors import VOIGT_LABELS
from geometry.mesh import Phase
from geometry.mesh_io import format_mesh
from homogenization.cell_problem import CellHomogenizer, tensor_checks
from reporting.plots import mesh_figure

logger = logging.getLogger(__name__)

VOIGT_ENTRIES = ("c11", "c12", "c13", "c22", "c23", "c33")
_UPPER = ((0, 0), (0, 1), (0, 2), (1, 1), (1, 2), (2, 2))


def homogenizer(ctx: CommandContext, resolution: int = None) -> CellHomogenizer:
    solver = ctx.config.solver
    return CellHomogenizer(ctx.cell_mesh(resolution), ctx.material, tol=solver.tol, maxiter=solver.max_iterations,
                           bubble_samples=solver.bubble_samples, seed=ctx.config.experiment.seed,
                           workers=ctx.workers)


def chom_summary(cell: CellHomogenizer) -> Dict[str, Any]:
    """C^hom with the comparison tensors, the structure checks and the solver monitors."""
    chom = cell.compute_effective_tensor()
    chat = cell.compute_perforated_tensor()
    mean = cell.arithmetic_mean()
    kernel = cell.kernel_basis()
    solves = {rs: cell.solve_cell_problem(rs) for rs in VOIGT_LABELS}
    return {
        "voigt": chom.voigt,
        "chat": chat.voigt,
        "mean": mean.voigt,
        "checks": tensor_checks(chom, chat, mean, seed=cell.seed),
        "kernel_invariance": cell.kernel_invariance_defect(),
        "kernel_dimension": kernel.dimension,
        "kernel_annihilation": float(kernel.annihilation_defects(cell.system().matrix).max())
        if kernel.members.size else 0.0,
        "solves": {rs: {"consistency_defect": s.consistency_defect, "zero_rhs": s.zero_rhs, **s.report.to_dict()}
                   for rs, s in solves.items()},
    }


@cli_handler
def cell_mesh_command(args: argparse.Namespace, ctx: CommandContext):
    mesh = ctx.cell_mesh(args.resolution)
    geometry = ctx.config.geometry.cell_geometry(args.resolution)
    summary = {
        "resolution": geometry.resolution,
        "nodes": mesh.n_nodes,
        "triangles": mesh.n_triangles,
        "periodic_pairs": len(mesh.periodic_pairs),
        "inclusion_area": mesh.phase_area(Phase.INCLUSION),
        "exact_inclusion_area": geometry.inclusion_area,
        "matrix_connected": mesh.matrix_connected(),
    }
    manifest = ctx.write("cell-mesh", {
        "cell_mesh.txt": format_mesh(mesh),
        "cell_mesh.json": summary,
        "cell_mesh.svg": mesh_figure(mesh),
    })
    emit({"manifest": manifest, **summary})


@cli_handler
def chom_command(args: argparse.Namespace, ctx: CommandContext):
    resolutions: List[int] = args.resolutions or [ctx.config.geometry.cell_res]
    rows = []
    summary: Dict[str, Any] = {}
    for resolution in resolutions:
        summary = chom_summary(homogenizer(ctx, resolution))
        rows.append({"resolution": resolution,
                     **{name: summary["voigt"][i, j] for name, (i, j) in zip(VOIGT_ENTRIES, _UPPER)}})
        logger.info("chom at resolution %d done", resolution)
    manifest = ctx.write("chom", {
        "chom.json": {"resolution": resolutions[-1], **summary},
        "chom_convergence.csv": {"columns": ("resolution",) + VOIGT_ENTRIES, "rows": rows},
    })
    emit({"manifest": manifest, "voigt": summary["voigt"], "checks": summary["checks"]})


def register(subparsers) -> None:
    parser = subparsers.add_parser("cell-mesh", help="build and export the periodic cell mesh")
    parser.add_argument("--resolution", type=int, default=None, help="segments per cell edge")
    parser.set_defaults(handler=cell_mesh_command)

    parser = subparsers.add_parser("chom", help="effective tensor, perforated tensor and structure checks")
    parser.add_argument("--resolutions", type=int, nargs="+", default=None,
                        help="cell resolutions for the convergence table (last one is reported)")
    parser.set_defaults(handler=chom_command)
