"""CSR matrices and a Jacobi-preconditioned conjugate gradient solver.

Storage and the matrix-vector kernel are delegated to ``scipy.sparse``;
the solver is written out so that it can advance many right-hand sides
(one per Monte-Carlo realization) at once.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sps


@dataclass(frozen=True, eq=False)
class SparseMatrix:
    n_rows: int
    n_cols: int
    row_offsets: np.ndarray
    col_indices: np.ndarray
    values: np.ndarray
    symmetric: bool = False
    _csr: sps.csr_matrix = field(default=None, repr=False)

    @classmethod
    def from_scipy(cls, A, symmetric: bool = False) -> "SparseMatrix":
        A = sps.csr_matrix(A, dtype=float, copy=True)
        A.sum_duplicates()
        A.sort_indices()
        A.eliminate_zeros()
        for arr in (A.data, A.indices, A.indptr):
            arr.flags.writeable = False
        return cls(A.shape[0], A.shape[1], A.indptr, A.indices, A.data, symmetric, A)

    @classmethod
    def from_dense(cls, A, symmetric: bool = False) -> "SparseMatrix":
        return cls.from_scipy(sps.csr_matrix(np.asarray(A, dtype=float)), symmetric)

    @classmethod
    def identity(cls, n: int) -> "SparseMatrix":
        return cls.from_scipy(sps.identity(n, format="csr"), symmetric=True)

    @property
    def shape(self) -> tuple[int, int]:
        return self.n_rows, self.n_cols

    def to_scipy(self) -> sps.csr_matrix:
        return self._csr

    def to_dense(self) -> np.ndarray:
        return self._csr.toarray()

    def diagonal(self) -> np.ndarray:
        return self._csr.diagonal()

    def __matmul__(self, x):
        return spmv(self, x)

    def __add__(self, other: "SparseMatrix") -> "SparseMatrix":
        return SparseMatrix.from_scipy(self._csr + other._csr, self.symmetric and other.symmetric)

    def scaled(self, c: float) -> "SparseMatrix":
        return SparseMatrix.from_scipy(c * self._csr, self.symmetric)

    def check(self) -> None:
        """Raise ``ValueError`` if the CSR structure is malformed."""
        ro = self.row_offsets
        if len(ro) != self.n_rows + 1 or ro[0] != 0 or np.any(np.diff(ro) < 0):
            raise ValueError("row_offsets must be non-decreasing with length n_rows + 1")
        ci = self.col_indices
        if len(ci) and (ci.min() < 0 or ci.max() >= self.n_cols):
            raise ValueError("column index out of range")
        for r in range(self.n_rows):
            if np.any(np.diff(ci[ro[r]:ro[r + 1]]) <= 0):
                raise ValueError(f"column indices not strictly increasing in row {r}")
        if self.symmetric:
            A = self._csr
            if abs(A - A.T).max() > 1e-12 * max(abs(A).max(), 1.0):
                raise ValueError("matrix flagged symmetric is not symmetric")


def spmv(A: SparseMatrix, x) -> np.ndarray:
    """CSR product ``A @ x``; ``x`` may be a vector or an (n_cols, k) block."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] != A.n_cols:
        raise ValueError(f"dimension mismatch: matrix has {A.n_cols} columns, vector has {x.shape[0]} rows")
    return A.to_scipy() @ x


@dataclass
class SolveReport:
    iterations: int
    # relative residual ||A x - b|| / ||b||, worst column for block solves
    final_residual_norm: float
    converged: bool
    residual_history: list = field(default_factory=list, repr=False)


def cg_solve(A: SparseMatrix, b, tol: float = 1e-10, max_iter: int | None = None,
             x0=None, record_history: bool = False) -> tuple[np.ndarray, SolveReport]:
    """Solve ``A x = b`` for SPD ``A`` by Jacobi-preconditioned CG.

    A 2-D ``b`` is treated as independent right-hand sides; each column runs
    its own CG recursion and is frozen once ``||r|| <= tol * ||b||``, so a
    column's result matches a single-column solve up to rounding in the
    block reductions.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")
    b = np.asarray(b, dtype=float)
    vector = b.ndim == 1
    B = b[:, None] if vector else b
    n, k = B.shape
    if n != A.n_rows or A.n_rows != A.n_cols:
        raise ValueError("dimension mismatch in cg_solve")
    if max_iter is None:
        max_iter = 10 * n
    Acsr = A.to_scipy()
    dinv = 1.0 / A.diagonal()

    X = np.zeros((n, k)) if x0 is None else np.array(x0, dtype=float).reshape(n, k)
    R = B - Acsr @ X if x0 is not None else B.copy()
    bnorm = np.sqrt(np.einsum("ij,ij->j", B, B))
    safe_b = np.where(bnorm > 0, bnorm, 1.0)
    target = tol * bnorm
    rnorm = np.sqrt(np.einsum("ij,ij->j", R, R))
    active = rnorm > target
    history = [rnorm / safe_b] if record_history else []

    dinv = dinv[:, None]
    Z = dinv * R
    P = Z.copy()
    rz = np.einsum("ij,ij->j", R, Z)
    it = 0
    while it < max_iter and active.any():
        it += 1
        AP = Acsr @ P
        pAp = np.einsum("ij,ij->j", P, AP)
        # frozen columns take alpha = 0 so their iterates stay bit-identical
        alpha = np.where(active, rz / np.where(active, pAp, 1.0), 0.0)
        X += alpha * P
        R -= alpha * AP
        rnorm = np.where(active, np.sqrt(np.einsum("ij,ij->j", R, R)), rnorm)
        np.multiply(dinv, R, out=Z)
        rz_new = np.einsum("ij,ij->j", R, Z)
        beta = np.where(active, rz_new / np.where(active, rz, 1.0), 0.0)
        rz = np.where(active, rz_new, rz)
        P *= beta
        P += Z
        active &= rnorm > target
        if record_history:
            history.append(rnorm / safe_b)

    rel = rnorm / safe_b
    report = SolveReport(
        iterations=it,
        final_residual_norm=float(rel.max()) if k else 0.0,
        converged=not active.any(),
        residual_history=[float(h.max()) for h in history],
    )
    return (X[:, 0] if vector else X), report
