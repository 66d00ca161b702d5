"""Cell-centred finite volume operators on the structured grid.

Diffusion uses two-point flux approximation (TPFA) with harmonic-mean face
transmissibilities; advection uses first-order upwinding. Matrices act on
cell values and return integrated fluxes (divide by cell area for rates).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.sparse as sps

from .mesh import SIDES, Mesh
from .sparse import SparseMatrix


@dataclass(frozen=True, eq=False)
class FvOperator:
    mesh: Mesh
    # TPFA matrix with interior faces only (homogeneous Neumann everywhere)
    K_neumann: SparseMatrix
    # per-cell diagonal contribution of Dirichlet faces
    dirichlet_diag: np.ndarray
    # per-cell Dirichlet flux contribution T_face * g
    b_rhs: np.ndarray
    transmissibility: np.ndarray
    cell_areas: np.ndarray

    @property
    def K_fv(self) -> SparseMatrix:
        """Full TPFA matrix including the Dirichlet faces."""
        return SparseMatrix.from_scipy(self.K_neumann.to_scipy() + sps.diags(self.dirichlet_diag), True)

    @property
    def mass(self) -> SparseMatrix:
        return SparseMatrix.from_scipy(sps.diags(self.cell_areas), True)

    def boundary_functional(self, X: np.ndarray) -> np.ndarray:
        """Diffusive flux into each cell through Dirichlet faces (integrated, not per area)."""
        if X.ndim == 1:
            return self.b_rhs - self.dirichlet_diag * X
        return self.b_rhs[:, None] - self.dirichlet_diag[:, None] * X


def _side_bc(bc, side):
    """Normalise a boundary entry to (kind, value)."""
    v = bc.get(side, "neumann") if bc else "neumann"
    if isinstance(v, str):
        if v != "neumann":
            raise ValueError(f"boundary condition {v!r} on {side} needs a value")
        return "neumann", 0.0
    kind, value = v
    if kind not in ("neumann", "dirichlet"):
        raise ValueError(f"unknown boundary condition {kind!r} on side {side}")
    return kind, float(value)


def assemble_tpfa(mesh: Mesh, D, bc: dict | None = None) -> FvOperator:
    """TPFA discretization of ``-div(D grad .)``.

    ``bc`` maps a side name to ``"neumann"`` or ``("dirichlet", value)``;
    missing sides are homogeneous Neumann.
    """
    if mesh.kind != "fvm":
        raise ValueError("assemble_tpfa needs a finite volume grid")
    nc = len(mesh.cell_centers)
    Dc = np.broadcast_to(np.asarray(D, dtype=float), (nc,))
    if np.any(Dc <= 0):
        raise ValueError("diffusivity must be positive in every cell")

    fc = mesh.face_cells
    c0, c1 = fc[:, 0], fc[:, 1]
    interior = c1 >= 0
    d0 = np.linalg.norm(mesh.face_centers - mesh.cell_centers[c0], axis=1)
    T = np.zeros(len(fc))
    ci0, ci1 = c0[interior], c1[interior]
    d1 = np.linalg.norm(mesh.face_centers[interior] - mesh.cell_centers[ci1], axis=1)
    T[interior] = mesh.face_lengths[interior] / (d0[interior] / Dc[ci0] + d1 / Dc[ci1])

    rows = np.concatenate([ci0, ci1, ci0, ci1])
    cols = np.concatenate([ci0, ci1, ci1, ci0])
    Ti = T[interior]
    vals = np.concatenate([Ti, Ti, -Ti, -Ti])
    K = sps.coo_matrix((vals, (rows, cols)), shape=(nc, nc)).tocsr()

    diag = np.zeros(nc)
    b = np.zeros(nc)
    for side in SIDES:
        kind, g = _side_bc(bc, side)
        if kind != "dirichlet":
            continue
        f = np.flatnonzero(mesh.face_tags == side)
        c = c0[f]
        T[f] = mesh.face_lengths[f] * Dc[c] / d0[f]
        np.add.at(diag, c, T[f])
        np.add.at(b, c, T[f] * g)
    return FvOperator(mesh, SparseMatrix.from_scipy(K, True), diag, b, T, mesh.cell_areas.copy())


def upwind_advection(mesh: Mesh, face_velocity) -> SparseMatrix:
    """Donor-cell flux matrix ``U`` with ``(U X)_c`` the total outflow of cell ``c``.

    ``face_velocity`` is the normal velocity along each stored face normal.
    Inflow through boundary faces is not in ``U``; see :func:`upwind_inflow`.
    The contribution to ``dX_c/dt`` is ``-(U X)_c / area_c``.
    """
    if face_velocity is None:
        raise ValueError("face velocity is required")
    v = np.asarray(face_velocity, dtype=float)
    if v.shape != (len(mesh.face_cells),):
        raise ValueError(f"expected {len(mesh.face_cells)} face velocities, got shape {v.shape}")
    F = v * mesh.face_lengths
    c0, c1 = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    nc = len(mesh.cell_centers)
    interior = c1 >= 0

    fwd = interior & (F > 0)   # donor c0 -> c1
    bwd = interior & (F < 0)   # donor c1 -> c0
    out = ~interior & (F > 0)  # boundary outflow
    rows = np.concatenate([c0[fwd], c1[fwd], c1[bwd], c0[bwd], c0[out]])
    cols = np.concatenate([c0[fwd], c0[fwd], c1[bwd], c1[bwd], c0[out]])
    vals = np.concatenate([F[fwd], -F[fwd], -F[bwd], F[bwd], F[out]])
    U = sps.coo_matrix((vals, (rows, cols)), shape=(nc, nc)).tocsr()
    return SparseMatrix.from_scipy(U)


def upwind_inflow(mesh: Mesh, face_velocity, boundary_values: dict) -> np.ndarray:
    """Integrated advective inflow per cell from boundary faces carrying a prescribed value."""
    v = np.asarray(face_velocity, dtype=float)
    F = v * mesh.face_lengths
    src = np.zeros(len(mesh.cell_centers))
    for side, g in boundary_values.items():
        f = np.flatnonzero((mesh.face_tags == side) & (F < 0))
        np.add.at(src, mesh.face_cells[f, 0], -F[f] * g)
    return src


def discrete_divergence(mesh: Mesh, face_flux) -> np.ndarray:
    """Net outward flux per cell for fluxes given along the stored face normals."""
    F = np.asarray(face_flux, dtype=float)
    c0, c1 = mesh.face_cells[:, 0], mesh.face_cells[:, 1]
    div = np.bincount(c0, weights=F, minlength=len(mesh.cell_centers))
    interior = c1 >= 0
    div -= np.bincount(c1[interior], weights=F[interior], minlength=len(mesh.cell_centers))
    return div


def nonlinear_reaction(X):
    """Componentwise ``-x / (|x| + 1)``."""
    X = np.asarray(X, dtype=float)
    return -X / (np.abs(X) + 1.0)


def l2_norm(areas: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Discrete L2 norm ``sqrt(sum area_c v_c^2)``, column-wise for 2-D input."""
    w = areas if v.ndim == 1 else areas[:, None]
    return np.sqrt(np.sum(w * v * v, axis=0))
