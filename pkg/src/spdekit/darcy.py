"""Steady Darcy flow on the finite volume grid.

Pressure is fixed at the left and right sides, top and bottom are no-flow;
viscosity is folded into the permeability (mu = 1).
"""
from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .fvm import assemble_tpfa, discrete_divergence
from .mesh import Mesh
from .sparse import cg_solve


@dataclass(frozen=True, eq=False)
class PermeabilityField:
    values: np.ndarray
    streak_mask: np.ndarray
    k_base: float = 1.0
    contrast: float = 100.0


@dataclass(frozen=True, eq=False)
class VelocityField:
    # Darcy flux through each face along its stored normal (velocity * length)
    face_flux: np.ndarray
    face_velocity: np.ndarray

    def scaled(self, c: float) -> "VelocityField":
        return VelocityField(c * self.face_flux, c * self.face_velocity)


def streak_permeability(mesh: Mesh, k_base: float = 1.0, contrast: float = 100.0,
                        centers=(0.25, 0.5, 0.75), width: float | None = None) -> PermeabilityField:
    """Horizontal high-permeability bands spanning the whole x range.

    ``centers`` are fractions of L2; ``width`` defaults to L2 / 10. A cell is
    in a band when its centre is.
    """
    if k_base <= 0 or contrast <= 0:
        raise ValueError("k_base and contrast must be positive")
    width = mesh.L2 / 10 if width is None else width
    y = mesh.cell_centers[:, 1]
    mask = np.zeros(len(y), dtype=bool)
    for c in centers:
        mask |= np.abs(y - c * mesh.L2) < width / 2
    return PermeabilityField(np.where(mask, contrast * k_base, k_base), mask, k_base, contrast)


def uniform_permeability(mesh: Mesh, k: float = 1.0) -> PermeabilityField:
    n = len(mesh.cell_centers)
    return PermeabilityField(np.full(n, float(k)), np.zeros(n, dtype=bool), float(k), 1.0)


def _pressure_operator(mesh, perm, p_left, p_right):
    return assemble_tpfa(mesh, perm.values, {"left": ("dirichlet", p_left), "right": ("dirichlet", p_right)})


def solve_pressure(mesh: Mesh, perm: PermeabilityField, p_left: float = 1.0, p_right: float = 0.0,
                   tol: float = 1e-14) -> np.ndarray:
    """Cell pressures of ``div(k grad p) = 0`` by TPFA."""
    if np.any(perm.values <= 0):
        raise ValueError("permeability must be positive")
    op = _pressure_operator(mesh, perm, p_left, p_right)
    p, rep = cg_solve(op.K_fv, op.b_rhs, tol=tol, max_iter=20 * len(op.b_rhs))
    if not rep.converged:
        raise RuntimeError(f"pressure solve did not converge (residual {rep.final_residual_norm:.2e})")
    return p


def reconstruct_velocity(mesh: Mesh, perm: PermeabilityField, pressure: np.ndarray,
                         p_left: float = 1.0, p_right: float = 0.0) -> VelocityField:
    """Face fluxes ``T (p_upstream - p_downstream)`` consistent with the pressure solve."""
    op = _pressure_operator(mesh, perm, p_left, p_right)
    T = op.transmissibility
    c0, c1 = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    flux = np.zeros(len(T))
    interior = c1 >= 0
    flux[interior] = T[interior] * (pressure[c0[interior]] - pressure[c1[interior]])
    for side, g in (("left", p_left), ("right", p_right)):
        f = mesh.face_tags == side
        flux[f] = T[f] * (pressure[c0[f]] - g)
    return VelocityField(flux, flux / mesh.face_lengths)


def boundary_fluxes(mesh: Mesh, vel: VelocityField) -> dict:
    """Total outward flux per side."""
    return {s: float(vel.face_flux[mesh.face_tags == s].sum()) for s in ("left", "right", "bottom", "top")}


def divergence(mesh: Mesh, vel: VelocityField) -> np.ndarray:
    return discrete_divergence(mesh, vel.face_flux)


def write_darcy_csv(mesh: Mesh, perm: PermeabilityField, pressure: np.ndarray,
                    vel: VelocityField, directory: str | Path) -> list[Path]:
    """Per-cell permeability/pressure and per-face velocity tables for streamline plots."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    cells = directory / "darcy_cells.csv"
    faces = directory / "darcy_faces.csv"
    with open(cells, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["cell", "x", "y", "permeability", "pressure"])
        for c, ((x, y), k, p) in enumerate(zip(mesh.cell_centers, perm.values, pressure)):
            w.writerow([c, repr(float(x)), repr(float(y)), repr(float(k)), repr(float(p))])
    with open(faces, "w", newline="") as f:
        w = csv.writer(f)
        w.writerow(["face", "x", "y", "nx", "ny", "velocity", "flux"])
        for k in range(len(mesh.face_cells)):
            (x, y), (nx, ny) = mesh.face_centers[k], mesh.face_normals[k]
            w.writerow([k, repr(float(x)), repr(float(y)), nx, ny,
                        repr(float(vel.face_velocity[k])), repr(float(vel.face_flux[k]))])
    return [cells, faces]
