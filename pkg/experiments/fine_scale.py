"""The eps-problem on the tiled domain and its comparison with the homogenized limit.

Displacements are P2 on the fine mesh with u = 0 on the outer boundary. The
stiffness integrates C1 + eps^2 C0 (or C1 + C0 with the contrast scaling off).
"""
from __future__ import annotations

import logging
import time
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
from matplotlib.tri import Triangulation
from scipy.sparse import csr_matrix
from scipy.sparse.linalg import spsolve

from errors import EmptyWindow, IncompatibleInputs
from fem.assembly import FormKind, assemble_form, assemble_load, evaluate_at_quadrature, l2_norm
from fem.constraints import DIRICHLET, constrain
from fem.elements import element_dofs, element_geometry, inverse_jacobians, shape_values
from fem.tensors import MaterialSpec
from geometry.mesh import CellGeometry, Phase, PeriodicMesh, Rectangle, build_fine_mesh
from homogenization.two_scale import SpectrumLabel, SpectrumSet, TwoScaleField
from solvers.eigen import RESIDUAL_TOL, eig_generalized
from solvers.krylov import cg_solve
from solvers.reports import EigReport, SolveReport

logger = logging.getLogger(__name__)

EDGE_GUARD = 0.05
BOUND_SLACK = 1.1
GAP_FACTOR = 0.5
CONCENTRATION_THRESHOLD = 0.8
DUPLICATE_TOL = 1e-8
SPAN_TOL = 0.5
MAX_SLICES = 400

VectorSampler = Callable[[np.ndarray], np.ndarray]


@dataclass
class WindowCoverage:
    window: float
    covered_to: float          # every eigenvalue below this was gathered
    slices: int
    complete: bool

    def to_dict(self) -> Dict:
        return {"window": self.window, "covered_to": self.covered_to, "slices": self.slices,
                "complete": self.complete}


@dataclass
class EpsRun:
    epsilon: float
    mesh: PeriodicMesh                       # P2 fine mesh
    u: Optional[np.ndarray] = None           # full dofs
    energy: float = 0.0                      # a(u, u)
    alpha: float = 0.0
    load_norm: float = 0.0                   # ||f^eps||
    energy_defect: float = 0.0               # |a(u,u) + alpha|u|^2 - (f,u)| / |(f,u)|
    norms: Dict[str, float] = field(default_factory=dict)
    eigs: Optional[SpectrumSet] = None
    report: Optional[SolveReport] = None
    runtime: float = 0.0

    @property
    def dofs(self) -> int:
        return 2 * self.mesh.n_nodes

    def to_dict(self) -> Dict:
        out = {
            "epsilon": self.epsilon,
            "dofs": self.dofs,
            "alpha": self.alpha,
            "energy": self.energy,
            "load_norm": self.load_norm,
            "energy_defect": self.energy_defect,
            "norms": dict(self.norms),
            "runtime": self.runtime,
        }
        if self.eigs is not None:
            out["eigs"] = self.eigs.to_dict()
        if self.report is not None:
            out["report"] = self.report.to_dict()
        return out


class FineScaleProblem:
    """Stiffness and mass of the eps-problem, assembled once per (eps, mesh)."""

    def __init__(self, domain: Rectangle, eps: float, cells_res: int, material: MaterialSpec,
                 geometry: Optional[CellGeometry] = None, tol: float = 1e-10,
                 linear_solver: str = "direct", maxiter: Optional[int] = None, eig_tol: float = RESIDUAL_TOL):
        if linear_solver not in ("direct", "cg"):
            raise ValueError(f"Unknown linear solver {linear_solver!r}")
        self.epsilon = float(eps)
        self.material = material.with_epsilon(self.epsilon)
        self.tol = tol
        self.linear_solver = linear_solver
        self.maxiter = maxiter
        self.eig_tol = eig_tol
        self.mesh = build_fine_mesh(domain, eps, cells_res, geometry).elevate("P2")

        stiffness = constrain(assemble_form(self.mesh, FormKind.SCALED_FULL, self.material, epsilon=self.epsilon),
                              self.mesh, {DIRICHLET})
        self.dof_map = stiffness.dof_map
        self.K = stiffness.matrix
        P = self.dof_map.prolongation
        self.M = csr_matrix(P.T @ assemble_form(self.mesh, FormKind.MASS).matrix @ P)
        logger.info("fine problem eps=%g: %d free dofs", self.epsilon, self.K.shape[0])

    # ---- Public API ---- #
    def solve_resolvent(self, f: VectorSampler, alpha: float) -> EpsRun:
        """(C grad u, grad w) + alpha (u, w) = (f, w) for all w vanishing on the boundary."""
        if alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {alpha}")
        start = time.perf_counter()
        load = assemble_load(self.mesh, f)
        b = self.dof_map.restrict(load)
        A = csr_matrix(self.K + alpha * self.M)
        if not np.any(b):
            x, report = np.zeros(len(b)), SolveReport(0, 0.0, True)
        elif self.linear_solver == "direct":
            x = spsolve(A.tocsc(), b)
            report = SolveReport(1, float(np.linalg.norm(A @ x - b) / np.linalg.norm(b)), True)
        else:
            x, report = cg_solve(A, b, self.tol, maxiter=self.maxiter, preconditioner="jacobi")

        energy = float(x @ (self.K @ x))
        mass = float(x @ (self.M @ x))
        work = float(b @ x)
        defect = abs(energy + alpha * mass - work) / abs(work) if work else 0.0
        u = self.dof_map.expand(x)
        run = EpsRun(self.epsilon, self.mesh, u, energy, alpha, self._load_norm(f), defect,
                     self.bound_norms(u), report=report)
        run.runtime = time.perf_counter() - start
        logger.info("eps=%g resolvent: energy %.6e, identity defect %.2e", self.epsilon, energy, defect)
        return run

    def bound_norms(self, u: np.ndarray) -> Dict[str, float]:
        """||u||, ||eps grad u|| and ||C1^(1/2) grad u|| of a full dof field."""
        laplacian = assemble_form(self.mesh, FormKind.LAPLACIAN).matrix
        degenerate = assemble_form(self.mesh, FormKind.DEGENERATE, self.material).matrix
        return {
            "l2": l2_norm(self.mesh, u),
            "eps_grad": self.epsilon * float(np.sqrt(max(u @ (laplacian @ u), 0.0))),
            "degenerate_energy": float(np.sqrt(max(u @ (degenerate @ u), 0.0))),
        }

    def eigenpairs(self, k: int, shift: float = 0.0) -> EigReport:
        return eig_generalized(self.K, self.M, k, shift, residual_tol=self.eig_tol)

    def eigenvalues(self, k: int) -> SpectrumSet:
        report = self.eigenpairs(k)
        logger.info("eps=%g eigenvalues: %s", self.epsilon, np.round(report.values, 6).tolist())
        return SpectrumSet.fragment(report.values, SpectrumLabel.FINE)

    def spectrum_in_window(self, window: float, k_slice: int = 8,
                           max_slices: int = MAX_SLICES) -> Tuple[SpectrumSet, np.ndarray, WindowCoverage]:
        """Eigenvalues in [0, window] gathered by contiguous shift-invert slices.

        A slice at shift s returning pairs within distance d of s holds every
        eigenvalue of (s - d, s + d). The next slice sits at s + d, so the
        slices tile [0, window] without gaps. A slice that stalls inside a
        cluster or fails to reach back to the covered end is repeated with twice
        as many pairs. Values seen by several slices are kept once per
        M-orthogonal eigenvector.
        """
        n = self.K.shape[0]
        k = min(k_slice, n)
        covered, shift, slices = 0.0, 0.0, 0
        found: List[Tuple[float, int, np.ndarray]] = []
        complete = False
        while slices < max_slices:
            report = self.eigenpairs(k, shift)
            slices += 1
            values = report.values
            sigma = float(report.shift)
            radius = float(np.abs(values - sigma).max())
            reach = sigma + radius
            if k < n and (sigma - radius > covered or reach <= covered):
                k = min(2 * k, n)
                logger.debug("eps=%g: slice at %.6g stalls, retrying with %d pairs", self.epsilon, sigma, k)
                continue
            found.extend((float(v), slices, report.vectors[:, j]) for j, v in enumerate(values))
            covered = max(covered, reach)
            if k >= n or covered >= window:
                complete = True
                break
            shift = covered
        coverage = WindowCoverage(window, window if complete else covered, slices, complete)
        if complete:
            logger.info("eps=%g: %d slices for window %.4g", self.epsilon, slices, window)
        else:
            logger.error("eps=%g: window %.4g only covered up to %.4g after %d slices",
                         self.epsilon, window, covered, slices)

        values, modes = _deduplicate(found, window, self.M)
        full = self.dof_map.prolongation @ modes if modes.size else np.zeros((self.dof_map.n_full, 0))
        return SpectrumSet.fragment(values, SpectrumLabel.FINE, window), full, coverage

    def inclusion_fraction(self, mode: np.ndarray) -> float:
        """Share of the L2 mass of a full dof field lying in the inclusions."""
        total = l2_norm(self.mesh, mode) ** 2
        if total == 0.0:
            return 0.0
        return l2_norm(self.mesh, mode, phase=Phase.INCLUSION) ** 2 / total

    def _load_norm(self, f: VectorSampler) -> float:
        geo = element_geometry(self.mesh)
        values = np.asarray(f(geo.points.reshape(-1, 2)), dtype=float).reshape(-1, 2)
        return float(np.sqrt(np.sum(geo.wdet.ravel() * np.einsum("lc,lc->l", values, values))))


def _deduplicate(found: List[Tuple[float, int, np.ndarray]], window: float,
                 M) -> Tuple[np.ndarray, np.ndarray]:
    """One value per independent eigenvector among nearly equal values from different slices."""
    found = sorted((item for item in found if item[0] <= window), key=lambda item: (item[0], item[1]))
    clusters: List[List[Tuple[float, int, np.ndarray]]] = []
    for item in found:
        if clusters and abs(item[0] - clusters[-1][-1][0]) <= DUPLICATE_TOL * max(abs(item[0]), 1.0):
            clusters[-1].append(item)
        else:
            clusters.append([item])
    values, modes = [], []
    for cluster in clusters:
        basis: List[np.ndarray] = []
        for value, _, vector in cluster:
            residual = np.array(vector, dtype=float)
            for b in basis:
                residual -= (b @ (M @ residual)) * b
            norm = float(np.sqrt(max(residual @ (M @ residual), 0.0)))
            scale = float(np.sqrt(max(vector @ (M @ vector), 0.0)))
            if norm > SPAN_TOL * scale:
                basis.append(residual / norm)
                values.append(value)
        modes.extend(basis)
    if not values:
        return np.zeros(0), np.zeros((0, 0))
    return np.asarray(values), np.column_stack(modes)


# ---- comparison with the limit ---- #
def evaluate_at_points(mesh: PeriodicMesh, u: np.ndarray, points: np.ndarray) -> np.ndarray:
    """Values of a P2 vector field at arbitrary points of the mesh, shape (n, 2)."""
    points = np.atleast_2d(points)
    vertices = mesh.nodes[:mesh.n_vertices]
    finder = Triangulation(vertices[:, 0], vertices[:, 1], mesh.corners).get_trifinder()
    owner = np.asarray(finder(points[:, 0], points[:, 1]))
    if np.any(owner < 0):
        raise IncompatibleInputs(f"{int(np.sum(owner < 0))} points lie outside the macro mesh")
    inv, _ = inverse_jacobians(mesh)
    origin = mesh.nodes[mesh.corners[owner, 0]]
    reference = np.einsum("nij,nj->ni", inv[owner], points - origin)
    values = shape_values(mesh.element_order, reference)                       # (n, n_local)
    local = np.asarray(u)[element_dofs(mesh, 2)[owner]].reshape(len(points), -1, 2)
    return np.einsum("na,nac->nc", values, local)


def two_scale_distance(run: EpsRun, limit: TwoScaleField) -> Dict[str, float]:
    """l2_macro_error = ||u_eps - u|| over the domain; norm_defect = | ||u_eps||^2 - ||u + v||^2 |."""
    if run.u is None:
        raise IncompatibleInputs("The eps run carries no resolvent solution")
    fine, macro = run.mesh.bounds, limit.macro_mesh.bounds
    if not np.allclose([fine.x0, fine.x1, fine.y0, fine.y1], [macro.x0, macro.x1, macro.y0, macro.y1],
                       atol=1e-12):
        raise IncompatibleInputs(f"Fine domain {fine} differs from the macro domain {macro}")
    geo = element_geometry(run.mesh)
    points = geo.points.reshape(-1, 2)
    fine_values = evaluate_at_quadrature(run.mesh, run.u).reshape(-1, 2)
    diff = fine_values - evaluate_at_points(limit.macro_mesh, limit.u, points)
    error = float(np.sqrt(np.sum(geo.wdet.ravel() * np.einsum("lc,lc->l", diff, diff))))
    defect = abs(l2_norm(run.mesh, run.u) ** 2 - limit.two_scale_norm_squared())
    return {"l2_macro_error": error, "norm_defect": float(defect)}


def spectrum_hausdorff(fineset: SpectrumSet, limitset: SpectrumSet, window: float) -> float:
    """Symmetric Hausdorff distance inside [0, window].

    Fine values within 0.05 * window of the window end are not required to lie
    near a limit value.
    """
    fine = fineset.truncate(window).as_array()
    limit = limitset.truncate(window).as_array()
    if not len(fine) or not len(limit):
        raise EmptyWindow(f"Empty spectrum below {window} ({len(fine)} fine, {len(limit)} limit values)")
    gaps = np.abs(fine[:, None] - limit[None, :])
    to_fine = float(gaps.min(axis=0).max())
    inner = fine <= window * (1.0 - EDGE_GUARD)
    to_limit = float(gaps[inner].min(axis=1).max()) if np.any(inner) else 0.0
    return max(to_fine, to_limit)


# ---- sweep reports ---- #
def a_priori_report(runs: Sequence[EpsRun]) -> Dict:
    """Norm-to-load ratios; the constant is fitted on the coarsest run."""
    usable = sorted((r for r in runs if r.load_norm > 0 and r.norms), key=lambda r: -r.epsilon)
    if not usable:
        return {"constant": None, "rows": [], "passed": True}
    ratios = [{name: value / r.load_norm for name, value in r.norms.items()} for r in usable]
    constant = max(ratios[0].values())
    rows = [{"epsilon": r.epsilon, **ratio} for r, ratio in zip(usable, ratios)]
    passed = all(max(ratio.values()) <= BOUND_SLACK * constant for ratio in ratios[1:])
    return {"constant": constant, "rows": rows, "passed": bool(passed)}


def spectral_gap_report(minima: Dict[float, float], limit_minimum: float) -> Dict:
    bound = GAP_FACTOR * limit_minimum
    rows = [{"epsilon": eps, "lambda_min": value} for eps, value in sorted(minima.items(), reverse=True)]
    return {"bound": bound, "rows": rows, "passed": bool(all(r["lambda_min"] >= bound for r in rows))}


def concentration_report(problem: FineScaleProblem, spectrum: SpectrumSet, modes: np.ndarray,
                         mu1: float) -> Dict:
    """Inclusion mass share of the fine eigenfunction whose eigenvalue is nearest mu1."""
    if not len(spectrum):
        return {"epsilon": problem.epsilon, "value": None, "fraction": None, "passed": False}
    values = spectrum.as_array()
    j = int(np.argmin(np.abs(values - mu1)))
    fraction = problem.inclusion_fraction(modes[:, j])
    logger.info("eps=%g: mode at %.6g keeps %.1f%% of its mass in the inclusions",
                problem.epsilon, values[j], 100 * fraction)
    return {"epsilon": problem.epsilon, "value": float(values[j]), "fraction": float(fraction),
            "threshold": CONCENTRATION_THRESHOLD, "passed": bool(fraction >= CONCENTRATION_THRESHOLD)}


# ---- module-level entry points ---- #
def solve_eps_resolvent(domain: Rectangle, eps: float, cells_res: int, material: MaterialSpec,
                        f: VectorSampler, alpha: float, geometry: Optional[CellGeometry] = None,
                        **kwargs) -> EpsRun:
    return FineScaleProblem(domain, eps, cells_res, material, geometry, **kwargs).solve_resolvent(f, alpha)


def eps_eigenvalues(domain: Rectangle, eps: float, cells_res: int, material: MaterialSpec, k: int,
                    geometry: Optional[CellGeometry] = None, **kwargs) -> SpectrumSet:
    return FineScaleProblem(domain, eps, cells_res, material, geometry, **kwargs).eigenvalues(k)
