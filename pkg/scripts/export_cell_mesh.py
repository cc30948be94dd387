"""Export the configured periodic cell mesh as text and SVG, optionally with its stiffness matrix.

Run from project root:
    python scripts/export_cell_mesh.py --resolution 32 --out results/cell [--matrix]
"""
from __future__ import annotations
import os
import sys
import argparse

SCRIPT_DIR = os.path.dirname(os.path.abspath(__file__))
PROJECT_ROOT = os.path.abspath(os.path.join(SCRIPT_DIR, '..'))
if PROJECT_ROOT not in sys.path:
    sys.path.insert(0, PROJECT_ROOT)

from config.run_config import parse_config  # noqa: E402
from fem.assembly import FormKind, assemble_form, write_coo  # noqa: E402
from fem.constraints import MEAN_ZERO, PERIODIC, constrain  # noqa: E402
from geometry.mesh import build_cell_mesh  # noqa: E402
from geometry.mesh_io import read_mesh, write_mesh  # noqa: E402
from reporting.plots import mesh_figure  # noqa: E402
from reporting.report_writer import ReportWriter  # noqa: E402


def main():
    parser = argparse.ArgumentParser(description="Write the periodic cell mesh")
    parser.add_argument("--config", default=None)
    parser.add_argument("--resolution", type=int, default=None)
    parser.add_argument("--out", default=os.path.join("results", "cell"))
    parser.add_argument("--matrix", action="store_true",
                        help="also write the periodic degenerate stiffness as 'row col value' lines")
    args = parser.parse_args()

    config = parse_config(args.config)
    mesh = build_cell_mesh(config.geometry.cell_geometry(args.resolution))
    os.makedirs(args.out, exist_ok=True)
    path = write_mesh(mesh, os.path.join(args.out, "cell_mesh.txt"))
    again = read_mesh(path)
    if again.n_nodes != mesh.n_nodes or again.n_triangles != mesh.n_triangles:
        raise SystemExit(f"Mesh file {path} did not read back")

    writer = ReportWriter(args.out, deterministic=True)
    writer.record(path)
    if args.matrix:
        mesh_p2 = mesh.elevate("P2")
        system = constrain(assemble_form(mesh_p2, FormKind.DEGENERATE, config.material.material_spec()),
                           mesh_p2, {PERIODIC, MEAN_ZERO})
        writer.record(write_coo(system.matrix, os.path.join(args.out, "cell_stiffness.coo")))
        print(f"Stiffness: {system.size} reduced dofs, {system.matrix.nnz} nonzeros")
    writer.write("cell_mesh.svg", mesh_figure(mesh))
    writer.finish()
    print(f"Wrote {mesh.n_nodes} nodes, {mesh.n_triangles} triangles to {args.out}")


if __name__ == "__main__":
    main()
