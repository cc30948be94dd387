"""Static figures for the reports."""
from __future__ import annotations

from typing import Mapping, Optional, Sequence

import numpy as np
from matplotlib.figure import Figure

from geometry.mesh import Phase, PeriodicMesh


def spectra_figure(spectra: Mapping[float, Sequence[float]], limit_values: Sequence[float],
                   window: Optional[float] = None) -> Figure:
    """Fine eigenvalues against eps, with horizontal lines at the limit spectrum."""
    fig = Figure(figsize=(6.0, 4.5))
    ax = fig.add_subplot(1, 1, 1)
    for value in limit_values:
        ax.axhline(float(value), color="0.6", linewidth=0.6, zorder=1)
    for eps in sorted(spectra, reverse=True):
        values = np.asarray(spectra[eps], dtype=float)
        ax.scatter(np.full(len(values), eps), values, s=10, color="C0", zorder=2)
    ax.set_xscale("log", base=2)
    ax.invert_xaxis()
    ax.set_xlabel("eps")
    ax.set_ylabel("eigenvalue")
    if window is not None:
        ax.set_ylim(0.0, float(window))
    ax.set_title("fine spectra and limit spectrum")
    fig.tight_layout()
    return fig


def mesh_figure(mesh: PeriodicMesh) -> Figure:
    """Cell or fine mesh with the inclusion phase shaded."""
    fig = Figure(figsize=(5.0, 5.0))
    ax = fig.add_subplot(1, 1, 1)
    corners = mesh.corners
    x, y = mesh.nodes[:, 0], mesh.nodes[:, 1]
    ax.tripcolor(x, y, corners, facecolors=(mesh.phases == Phase.INCLUSION).astype(float),
                 cmap="Greys", vmin=0.0, vmax=2.0, edgecolors="k", linewidth=0.2)
    ax.set_aspect("equal")
    ax.set_axis_off()
    fig.tight_layout()
    return fig


def velocity_magnitude_figure(mesh: PeriodicMesh, velocity: np.ndarray, title: Optional[str] = None) -> Figure:
    """|v| of an interleaved nodal velocity, drawn at the element corners."""
    fig = Figure(figsize=(5.0, 5.0))
    ax = fig.add_subplot(1, 1, 1)
    n = mesh.n_vertices
    magnitude = np.linalg.norm(np.asarray(velocity, dtype=float).reshape(-1, 2)[:n], axis=1)
    image = ax.tripcolor(mesh.nodes[:n, 0], mesh.nodes[:n, 1], mesh.corners, magnitude,
                         shading="gouraud", cmap="viridis")
    fig.colorbar(image, ax=ax, shrink=0.8)
    ax.set_aspect("equal")
    ax.set_axis_off()
    if title:
        ax.set_title(title)
    fig.tight_layout()
    return fig
