"""Mesh-refinement reference values for the micro eigenvalues and C^hom.

Each quantity is computed on three nested cell resolutions and extrapolated with
Richardson's rule for a second-order method. The stored file remembers the cell
(geometry and material) it was built for; a file built for another cell is stale.
"""
from __future__ import annotations

import json
import logging
from pathlib import Path
from typing import Dict, Optional, Sequence, Union

import numpy as np

from config import settings
from config.run_config import RunConfig
from errors import ReportIoError
from geometry.mesh import build_cell_mesh
from homogenization.cell_problem import CellHomogenizer
from homogenization.micro_stokes import MicroStokesSolver, inclusion_mesh
from reporting.report_writer import _safe_json

logger = logging.getLogger(__name__)

ORDER = 2
RESOLUTIONS = (32, 64, 128)
ORACLE_AGREEMENT = 0.01
CELL_KEYS = ("shape", "center", "size")


def richardson(coarse, fine, order: int = ORDER) -> np.ndarray:
    """Extrapolate two values on meshes h and h/2."""
    coarse, fine = np.asarray(coarse, dtype=float), np.asarray(fine, dtype=float)
    return fine + (fine - coarse) / (2 ** order - 1)


def cell_key(config: RunConfig) -> Dict[str, Dict[str, str]]:
    """The part of a run configuration the reference values depend on."""
    described = config.to_dict()
    return {"geometry": {k: described["geometry"][k] for k in CELL_KEYS}, "material": described["material"]}


def oracle_level(config: RunConfig, resolution: int, with_chom: bool = True) -> Dict:
    geometry = config.geometry.cell_geometry(resolution)
    material = config.material.material_spec()
    mesh = build_cell_mesh(geometry)
    stokes = MicroStokesSolver(inclusion_mesh(mesh), viscosity=material.micro_viscosity, tol=config.solver.tol,
                               inner_solver=config.solver.inner_solver)
    level = {"resolution": resolution, "mu": stokes.stokes_eigenpairs(2).values[:2]}
    if with_chom:
        chom = CellHomogenizer(mesh, material, tol=config.solver.tol, seed=config.experiment.seed)
        level["chom"] = chom.compute_effective_tensor().voigt
    return level


def build_oracles(config: RunConfig, resolutions: Sequence[int] = RESOLUTIONS, with_chom: bool = True) -> Dict:
    if len(resolutions) != 3 or list(resolutions) != sorted(resolutions):
        raise ValueError(f"Need three increasing resolutions, got {list(resolutions)}")
    levels = []
    for resolution in resolutions:
        logger.info("reference values: solving the cell problems at resolution %d", resolution)
        levels.append(oracle_level(config, resolution, with_chom))
    coarse, mid, fine = levels
    mu = richardson(mid["mu"], fine["mu"])
    oracles = {
        "cell": cell_key(config),
        "resolutions": list(resolutions),
        "levels": levels,
        "mu1": float(mu[0]),
        "mu2": float(mu[1]),
        # observed convergence rate of mu_1 over the three levels
        "mu1_rate": float(np.log2(abs(coarse["mu"][0] - mid["mu"][0]) /
                                  max(abs(mid["mu"][0] - fine["mu"][0]), 1e-300))),
    }
    if with_chom:
        oracles["chom"] = richardson(mid["chom"], fine["chom"])
    return _safe_json(oracles)


def write_oracles(oracles: Dict, path: Union[str, Path]) -> Path:
    path = Path(path)
    try:
        path.parent.mkdir(parents=True, exist_ok=True)
        path.write_text(json.dumps(_safe_json(oracles), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except OSError as e:
        raise ReportIoError(f"Cannot write reference values to {path}: {e}") from e
    return path


def load_oracles(path: Union[str, Path]) -> Optional[Dict]:
    """The stored reference values, or None when the file does not exist."""
    path = Path(path)
    if not path.exists():
        return None
    try:
        oracles = json.loads(path.read_text(encoding="utf-8"))
    except (OSError, ValueError) as e:
        raise ReportIoError(f"Cannot read reference values from {path}: {e}") from e
    if not isinstance(oracles, dict) or not {"cell", "mu1", "mu2"} <= set(oracles):
        raise ReportIoError(f"{path} does not hold reference values")
    return oracles


def ensure_oracles(config: RunConfig, path: Union[str, Path, None] = None,
                   resolutions: Sequence[int] = RESOLUTIONS) -> Dict:
    """Reference values for the configured cell, built and stored when absent or stale."""
    path = Path(path or settings.ORACLE_PATH)
    oracles = load_oracles(path)
    if oracles is not None and oracles["cell"] == cell_key(config):
        return oracles
    if oracles is None:
        logger.warning("no reference values at %s, building them from resolutions %s", path, list(resolutions))
    else:
        logger.warning("reference values at %s belong to another cell, rebuilding", path)
    oracles = build_oracles(config, resolutions, with_chom=False)
    write_oracles(oracles, path)
    return oracles


def oracle_defects(mu: Sequence[float], oracles: Dict) -> np.ndarray:
    """Relative deviation of (mu_1, mu_2) from the reference values."""
    reference = np.array([oracles["mu1"], oracles["mu2"]], dtype=float)
    return np.abs(np.asarray(mu, dtype=float)[:2] - reference) / reference
