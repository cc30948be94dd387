"""Convergence sweep over a list of eps values against one homogenized limit."""
from __future__ import annotations

import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, List

import numpy as np
from tqdm import tqdm

from config.run_config import RunConfig
from experiments.fine_scale import (
    EpsRun, FineScaleProblem, a_priori_report, concentration_report, spectral_gap_report, spectrum_hausdorff,
    two_scale_distance,
)
from geometry.mesh import build_cell_mesh, build_macro_mesh
from homogenization.two_scale import LimitProblemSolver, LimitSpectrum, SpectrumSet, TwoScaleField

logger = logging.getLogger(__name__)

WINDOW_MARGIN = 1.1
MACRO_ERROR_RATIO = 0.5
HAUSDORFF_RATIO = 0.5

ROW_COLUMNS = ("epsilon", "success", "dofs", "iterations", "l2_macro_error", "norm_defect", "hausdorff",
               "lambda_min", "n_fine", "window_complete", "slices", "solve_time", "spectrum_time", "error")


@dataclass
class SweepResult:
    config: RunConfig
    window: float
    limit: LimitSpectrum
    limit_field: TwoScaleField
    rows: List[Dict[str, Any]]
    runs: Dict[float, EpsRun] = field(default_factory=dict)
    spectra: Dict[float, SpectrumSet] = field(default_factory=dict)
    reports: Dict[str, Any] = field(default_factory=dict)

    @property
    def succeeded(self) -> List[Dict[str, Any]]:
        return [row for row in self.rows if row["success"]]

    def to_dict(self) -> Dict[str, Any]:
        return {
            "config": self.config.to_dict(),
            "window": self.window,
            "limit": self.limit.to_dict(),
            "limit_macro_norm": self.limit_field.macro_l2_norm(),
            "limit_micro_norm": self.limit_field.micro_l2_norm(),
            "rows": self.rows,
            "reports": self.reports,
        }


class EpsilonSweep:
    """Builds the limit objects once, then solves every eps-problem against them."""

    def __init__(self, config: RunConfig, progress: bool = True):
        self.config = config
        self.progress = progress
        geometry = config.geometry
        self.material = config.material.material_spec()
        self.forcing = config.experiment.forcing()
        self.domain = geometry.rectangle
        self.cell_geometry = geometry.cell_geometry()
        self.fine_geometry = geometry.cell_geometry(geometry.fine_cell_res)
        self.limit_solver = LimitProblemSolver(
            build_macro_mesh(self.domain, config.experiment.macro_res), build_cell_mesh(self.cell_geometry),
            self.material, tol=config.solver.tol, inner_solver=config.solver.inner_solver,
            workers=config.solver.workers, seed=config.experiment.seed)

    # ---- Public API ---- #
    def run(self) -> SweepResult:
        exp = self.config.experiment
        window = exp.window or auto_window(self.limit_solver)
        limit = self.limit_solver.limit_spectrum(window, k_start=exp.k)
        limit_field = self.limit_solver.solve_limit_resolvent(self.forcing, exp.alpha)
        logger.info("sweep over eps = %s, window %.6g", [f"1/{n}" for n in exp.epsilon], window)

        workers = 1 if self.config.solver.deterministic else self.config.solver.workers
        tasks = [(eps, limit, limit_field, window) for eps in exp.epsilons]
        if workers > 1:
            with ThreadPoolExecutor(max_workers=workers) as pool:
                outcomes = list(tqdm(pool.map(lambda t: self.run_one(*t), tasks), total=len(tasks),
                                     desc="eps sweep", disable=not self.progress))
        else:
            outcomes = [self.run_one(*t) for t in tqdm(tasks, desc="eps sweep", disable=not self.progress)]

        result = SweepResult(self.config, window, limit, limit_field, [o["row"] for o in outcomes])
        for outcome in outcomes:
            eps = outcome["row"]["epsilon"]
            if outcome["run"] is not None:
                result.runs[eps] = outcome["run"]
                result.spectra[eps] = outcome["spectrum"]
        result.reports = self.reports(result, [o["concentration"] for o in outcomes if o["concentration"]])
        return result

    def run_one(self, eps: float, limit: LimitSpectrum, limit_field: TwoScaleField,
                window: float) -> Dict[str, Any]:
        """One eps entry; failures come back as a flagged row instead of an exception."""
        try:
            solver = self.config.solver
            problem = FineScaleProblem(self.domain, eps, self.config.geometry.fine_cell_res, self.material,
                                       self.fine_geometry, tol=solver.tol, linear_solver=solver.linear_solver,
                                       maxiter=solver.max_iterations, eig_tol=solver.eig_tol)
            run = problem.solve_resolvent(self.forcing.eps_sampler(eps), self.config.experiment.alpha)
            distance = two_scale_distance(run, limit_field)

            start = time.perf_counter()
            spectrum, modes, coverage = problem.spectrum_in_window(window, self.config.experiment.k_slice)
            spectrum_time = time.perf_counter() - start
            run.eigs = spectrum
            lambda_min = spectrum.values[0] if len(spectrum) else float(problem.eigenpairs(1).values[0])
            mu1 = float(limit.micro.values[0])
            concentration = concentration_report(problem, spectrum, modes, mu1)
            row = {
                "epsilon": eps,
                "success": True,
                "dofs": run.dofs,
                "iterations": run.report.iterations,
                **distance,
                "hausdorff": spectrum_hausdorff(spectrum, limit.spectrum, window),
                "lambda_min": float(lambda_min),
                "n_fine": len(spectrum),
                "window_complete": coverage.complete,
                "slices": coverage.slices,
                "solve_time": run.runtime,
                "spectrum_time": spectrum_time,
            }
            logger.info("eps=%g done: l2 error %.4e, hausdorff %.4e", eps, row["l2_macro_error"], row["hausdorff"])
            return {"row": row, "run": run, "spectrum": spectrum, "concentration": concentration}
        except Exception as e:
            logger.warning("eps=%g failed: %s", eps, e)
            return {"row": {"epsilon": eps, "success": False, "error": str(e)}, "run": None,
                    "spectrum": None, "concentration": None}

    def reports(self, result: SweepResult, concentrations: List[Dict[str, Any]]) -> Dict[str, Any]:
        rows = result.succeeded
        limit_min = float(result.limit.spectrum.values[0])
        out: Dict[str, Any] = {
            "a_priori": a_priori_report(list(result.runs.values())),
            "spectral_gap": spectral_gap_report({r["epsilon"]: r["lambda_min"] for r in rows}, limit_min),
            "concentration": min(concentrations, key=lambda c: c["epsilon"]) if concentrations else None,
            "convergence": convergence_checks(rows),
        }
        return out


def auto_window(limit_solver: LimitProblemSolver) -> float:
    """Upper window end 1.1 * mu_2."""
    micro = limit_solver.micro_eigenpairs(3)
    return WINDOW_MARGIN * float(micro.values[1])


def convergence_checks(rows: List[Dict[str, Any]]) -> Dict[str, Any]:
    """Monotonicity of the macro error and of the spectral distance over decreasing eps."""
    rows = sorted(rows, key=lambda r: -r["epsilon"])
    if len(rows) < 2:
        return {"macro_error_decreasing": None, "hausdorff_decreasing": None}
    errors = np.array([r["l2_macro_error"] for r in rows])
    distances = np.array([r["hausdorff"] for r in rows])
    macro_ratio = float(errors[-1] / errors[0]) if errors[0] > 0 else 0.0
    hausdorff_ratio = float(distances[-1] / distances[0]) if distances[0] > 0 else 0.0
    windows_complete = all(r.get("window_complete", True) for r in rows)
    return {
        "macro_error_decreasing": bool(np.all(np.diff(errors) < 0)),
        "macro_error_ratio": macro_ratio,
        "macro_error_passed": bool(np.all(np.diff(errors) < 0) and macro_ratio <= MACRO_ERROR_RATIO),
        "hausdorff_decreasing": bool(np.all(np.diff(distances) <= 0)),
        "hausdorff_ratio": hausdorff_ratio,
        "windows_complete": windows_complete,
        "hausdorff_passed": bool(np.all(np.diff(distances) <= 0) and hausdorff_ratio <= HAUSDORFF_RATIO
                                 and windows_complete),
    }


def sweep_epsilon(config: RunConfig, progress: bool = True) -> SweepResult:
    return EpsilonSweep(config, progress).run()
