"""P1 finite element operators for A = div(D grad .) + d00 I.

Sign convention: ``K`` is the (positive semi-definite) stiffness matrix of
``-div(D grad .)``, so the Galerkin form of ``A_h`` is ``-M^{-1} (K + |d00| M)``.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np
import scipy.sparse as sps
import scipy.sparse.linalg as sla

from .mesh import SIDES, Mesh
from .sparse import SolveReport, SparseMatrix, cg_solve


@dataclass(frozen=True)
class Neumann:
    """Homogeneous Neumann (natural) condition."""


@dataclass(frozen=True)
class Dirichlet:
    value: float = 0.0


@dataclass(frozen=True)
class Robin:
    """``D grad u . n + sigma u = 0``."""
    sigma: float


BoundaryCondition = Union[Neumann, Dirichlet, Robin]

# "direct": sparse LU factored once per dt; "cg": Jacobi-preconditioned CG per solve
SOLVERS = ("direct", "cg")


@dataclass
class OperatorSpec:
    # scalar, constant 2x2 tensor, or per-triangle (nt, 2, 2) tensor
    diffusion: object = 1.0
    d00: float = 0.0
    bc: dict = field(default_factory=lambda: {s: Neumann() for s in SIDES})

    def tensor(self, n_elements: int) -> np.ndarray:
        D = np.asarray(self.diffusion, dtype=float)
        if D.ndim == 0:
            D = D * np.eye(2)
        if D.shape == (2, 2):
            D = np.broadcast_to(D, (n_elements, 2, 2))
        if D.shape != (n_elements, 2, 2):
            raise ValueError(f"diffusion tensor has shape {D.shape}, expected (2,2) or ({n_elements},2,2)")
        return D


@dataclass(frozen=True, eq=False)
class DiscreteOperator:
    mesh: Mesh
    M: SparseMatrix
    K: SparseMatrix
    d00: float
    dirichlet_dofs: np.ndarray
    dirichlet_values: np.ndarray

    @property
    def h(self) -> float:
        return self.mesh.h

    @property
    def n_dofs(self) -> int:
        return self.M.n_rows


def _element_data(mesh: Mesh):
    p = mesh.vertices[mesh.triangles]
    x, y = p[..., 0], p[..., 1]
    area = 0.5 * ((x[:, 1] - x[:, 0]) * (y[:, 2] - y[:, 0]) - (x[:, 2] - x[:, 0]) * (y[:, 1] - y[:, 0]))
    if np.any(area <= 0):
        raise ValueError("degenerate or clockwise triangle in mesh")
    # gradients of the three hat functions, shape (nt, 3, 2)
    grads = np.stack([
        np.stack([y[:, 1] - y[:, 2], x[:, 2] - x[:, 1]], axis=-1),
        np.stack([y[:, 2] - y[:, 0], x[:, 0] - x[:, 2]], axis=-1),
        np.stack([y[:, 0] - y[:, 1], x[:, 1] - x[:, 0]], axis=-1),
    ], axis=1) / (2.0 * area)[:, None, None]
    return area, grads


def _scatter(mesh: Mesh, local: np.ndarray) -> sps.csr_matrix:
    t = mesh.triangles
    rows = np.repeat(t, 3, axis=1).ravel()
    cols = np.tile(t, (1, 3)).ravel()
    n = len(mesh.vertices)
    return sps.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def assemble(mesh: Mesh, spec: OperatorSpec) -> DiscreteOperator:
    """Exact P1 mass and stiffness matrices; Dirichlet dofs are recorded, not eliminated."""
    if mesh.kind != "fem":
        raise ValueError("assemble needs a triangulation")
    if spec.d00 > 0:
        raise ValueError("d00 must be <= 0")
    area, grads = _element_data(mesh)
    D = spec.tensor(len(area))
    if not np.allclose(D, np.swapaxes(D, 1, 2)):
        raise ValueError("diffusion tensor must be symmetric")
    if np.linalg.eigvalsh(D).min() <= 0:
        raise ValueError("diffusion tensor violates uniform ellipticity")

    Mloc = area[:, None, None] / 12.0 * (np.ones((3, 3)) + np.eye(3))
    Kloc = area[:, None, None] * np.einsum("eia,eab,ejb->eij", grads, D, grads)
    M = _scatter(mesh, Mloc)
    K = _scatter(mesh, Kloc)

    n = len(mesh.vertices)
    dofs, vals = [], []
    for side in SIDES:
        bc = spec.bc.get(side, Neumann())
        if isinstance(bc, Robin):
            e = mesh.edge_sides[side]
            L = np.linalg.norm(mesh.vertices[e[:, 1]] - mesh.vertices[e[:, 0]], axis=1)
            loc = bc.sigma * L[:, None, None] / 6.0 * (np.ones((2, 2)) + np.eye(2))
            rows = np.repeat(e, 2, axis=1).ravel()
            cols = np.tile(e, (1, 2)).ravel()
            K = K + sps.coo_matrix((loc.ravel(), (rows, cols)), shape=(n, n)).tocsr()
        elif isinstance(bc, Dirichlet):
            v = mesh.vertex_sides[side]
            dofs.append(v)
            vals.append(np.full(len(v), float(bc.value)))
        elif not isinstance(bc, Neumann):
            raise ValueError(f"unknown boundary condition {bc!r} on side {side}")
    if dofs:
        # corners shared by two Dirichlet sides keep the first value
        d, first = np.unique(np.concatenate(dofs), return_index=True)
        g = np.concatenate(vals)[first]
    else:
        d, g = np.zeros(0, dtype=np.int64), np.zeros(0)
    return DiscreteOperator(mesh, SparseMatrix.from_scipy(M, True), SparseMatrix.from_scipy(K, True),
                            float(spec.d00), d, g)


def implicit_step_matrix(op: DiscreteOperator, dt: float) -> SparseMatrix:
    """``M + dt K + dt |d00| M`` with Dirichlet rows and columns replaced by identity."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    A = op.M.to_scipy() * (1.0 + dt * abs(op.d00)) + dt * op.K.to_scipy()
    if len(op.dirichlet_dofs):
        keep = np.ones(op.n_dofs)
        keep[op.dirichlet_dofs] = 0.0
        P = sps.diags(keep)
        A = P @ A @ P + sps.diags(1.0 - keep)
    return SparseMatrix.from_scipy(A, symmetric=True)


class ImplicitStep:
    """Applies ``S_{h,dt} = (I - dt A_h)^{-1}`` to nodal vectors.

    ``matrix`` is the SPD system, ``rhs_operator`` maps nodal values to the
    right-hand side (the mass matrix for FEM, cell areas for FVM).
    """

    def __init__(self, matrix: SparseMatrix, rhs_operator: SparseMatrix,
                 dirichlet_dofs=None, dirichlet_values=None, lift=None, tol: float = 1e-10,
                 solver: str = "direct"):
        if solver not in SOLVERS:
            raise ValueError(f"solver must be one of {SOLVERS}")
        self.matrix = matrix
        self.rhs_operator = rhs_operator
        self.dirichlet_dofs = np.zeros(0, dtype=np.int64) if dirichlet_dofs is None else dirichlet_dofs
        self.dirichlet_values = np.zeros(0) if dirichlet_values is None else dirichlet_values
        self.lift = lift
        self.tol = tol
        self.solver = solver
        self._report = None
        self._last = None
        self._lu = None
        if solver == "direct":
            # factor once; reused for every step and realization
            self._lu = sla.splu(matrix.to_scipy().tocsc(), permc_spec="MMD_AT_PLUS_A",
                                options=dict(SymmetricMode=True))

    @property
    def last_iterations(self) -> int:
        return 0 if self._report is None else self._report.iterations

    @property
    def last_report(self) -> SolveReport | None:
        """Report of the most recent solve; direct solves report their relative residual."""
        if self._report is None and self._last is not None:
            rhs, x = self._last
            res = np.linalg.norm(rhs - self.matrix @ x, axis=0) / np.maximum(np.linalg.norm(rhs, axis=0), 1e-300)
            self._report = SolveReport(0, float(np.max(res)), True)
        return self._report

    def apply(self, v: np.ndarray) -> np.ndarray:
        rhs = self.rhs_operator @ v
        if len(self.dirichlet_dofs):
            if rhs.ndim == 1:
                rhs = rhs + self.lift
                rhs[self.dirichlet_dofs] = self.dirichlet_values
            else:
                rhs = rhs + self.lift[:, None]
                rhs[self.dirichlet_dofs] = self.dirichlet_values[:, None]
        if self._lu is not None:
            x = self._lu.solve(rhs)
            # residual is evaluated on demand by last_report
            self._last, self._report = (rhs, x), None
            return x
        x, rep = cg_solve(self.matrix, rhs, tol=self.tol, x0=v)
        self._last, self._report = None, rep
        if not rep.converged:
            raise RuntimeError(f"implicit solve did not converge: residual {rep.final_residual_norm:.3e}"
                               f" after {rep.iterations} iterations")
        return x


def implicit_step(op: DiscreteOperator, dt: float, tol: float = 1e-10, solver: str = "direct") -> ImplicitStep:
    A = implicit_step_matrix(op, dt)
    lift = None
    if len(op.dirichlet_dofs):
        full = op.M.to_scipy() * (1.0 + dt * abs(op.d00)) + dt * op.K.to_scipy()
        g = np.zeros(op.n_dofs)
        g[op.dirichlet_dofs] = op.dirichlet_values
        lift = -(full @ g)
    return ImplicitStep(A, op.M, op.dirichlet_dofs, op.dirichlet_values, lift, tol, solver)


# 7-point degree-5 rule on the reference triangle (Dunavant), barycentric
_a1, _b1 = 0.059715871789770, 0.470142064105115
_a2, _b2 = 0.797426985353087, 0.101286507323456
_Q7_BARY = np.array([
    [1 / 3, 1 / 3, 1 / 3],
    [_a1, _b1, _b1], [_b1, _a1, _b1], [_b1, _b1, _a1],
    [_a2, _b2, _b2], [_b2, _a2, _b2], [_b2, _b2, _a2],
])
_Q7_W = np.array([0.225, *[0.132394152788506] * 3, *[0.125939180544827] * 3])


def load_vector(mesh: Mesh, f: Callable[[np.ndarray, np.ndarray], np.ndarray]) -> np.ndarray:
    """``b_i = integral of f * phi_i`` by a degree-5 rule on each triangle."""
    area, _ = _element_data(mesh)
    p = mesh.vertices[mesh.triangles]  # (nt, 3, 2)
    qp = np.einsum("qk,tkd->tqd", _Q7_BARY, p)
    fq = f(qp[..., 0], qp[..., 1])  # (nt, nq)
    local = area[:, None] * np.einsum("tq,q,qk->tk", fq, _Q7_W, _Q7_BARY)
    return np.bincount(mesh.triangles.ravel(), weights=local.ravel(), minlength=len(mesh.vertices))


def project_Ph(op: DiscreteOperator, field, mode: str = "trivial") -> np.ndarray:
    """Map a field onto V_h.

    ``trivial`` treats nodal samples as the finite element function (the
    noise is evaluated at the vertices). ``l2`` solves ``M x = b``; for a
    callable ``f(x, y)`` the load vector is integrated by quadrature, for
    nodal samples it is ``M v`` and the projection reduces to the identity.
    """
    if mode == "trivial":
        v = np.asarray(field, dtype=float)
        if v.shape[0] != op.n_dofs:
            raise ValueError(f"expected {op.n_dofs} nodal values, got {v.shape[0]}")
        return v.copy()
    if mode != "l2":
        raise ValueError(f"unknown projection mode {mode!r}")
    if callable(field):
        b = load_vector(op.mesh, field)
    else:
        v = np.asarray(field, dtype=float)
        if v.shape[0] != op.n_dofs:
            raise ValueError(f"expected {op.n_dofs} nodal values, got {v.shape[0]}")
        b = op.M @ v
    x, rep = cg_solve(op.M, b, tol=1e-13)
    if not rep.converged:
        raise RuntimeError("mass-matrix solve did not converge")
    return x


def l2_norm(M: SparseMatrix, v: np.ndarray) -> np.ndarray:
    """Discrete L2 norm ``sqrt(v . M v)``, column-wise for 2-D input."""
    return np.sqrt(np.einsum("i...,i...->...", v, M @ v))
