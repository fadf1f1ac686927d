"""Sparse matrix assembly and direct LU solves.

Thin layer over scipy.sparse: triplet assembly with duplicate summing, and a
SuperLU factorization (COLAMD fill-reducing ordering, partial pivoting) that
is reusable across right-hand sides.  Singular pivots raise a structured
error that names a suspect row when one can be identified (an all-zero
row/column typically signals a missing constraint, e.g. the zero-mean row).
"""

from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse.linalg import splu


class SingularMatrixError(Exception):
    def __init__(self, message: str, row: int | None = None):
        super().__init__(message)
        self.row = row


@dataclass
class SparseMatrix:
    """Compressed-row matrix with optional symmetry tag."""

    data: sparse.csr_matrix
    symmetric: bool = False

    @property
    def shape(self):
        return self.data.shape

    @property
    def nnz(self):
        return self.data.nnz

    def matvec(self, x: np.ndarray) -> np.ndarray:
        return self.data @ x

    def toarray(self) -> np.ndarray:
        return self.data.toarray()


def finalize(rows, cols, values, shape, symmetric: bool = False) -> SparseMatrix:
    """Sum duplicate triplets into CSR with deterministic ordering."""
    rows = np.asarray(rows, dtype=np.int64)
    cols = np.asarray(cols, dtype=np.int64)
    values = np.asarray(values, dtype=float)
    if rows.size and (rows.min() < 0 or rows.max() >= shape[0]
                      or cols.min() < 0 or cols.max() >= shape[1]):
        raise IndexError("triplet index out of range")
    A = sparse.coo_matrix((values, (rows, cols)), shape=shape).tocsr()
    A.sum_duplicates()
    if not np.all(np.isfinite(A.data)):
        raise ValueError("non-finite matrix entry")
    return SparseMatrix(data=A, symmetric=symmetric)


class LUSolver:
    """LU factorization of a square sparse matrix, reusable for many solves."""

    def __init__(self, A):
        A = A.data if isinstance(A, SparseMatrix) else A
        if A.shape[0] != A.shape[1]:
            raise ValueError("LU needs a square matrix")
        self._A = A.tocsc()
        try:
            self._lu = splu(self._A)
        except RuntimeError as exc:
            raise _diagnose_singularity(self._A, exc) from exc

    def solve(self, b: np.ndarray) -> np.ndarray:
        x = self._lu.solve(b)
        if not np.all(np.isfinite(x)):
            raise SingularMatrixError("LU solve produced non-finite values")
        return x


def lu_solve(A, rhs: np.ndarray) -> np.ndarray:
    """Direct solve with residual check ||Ax - b|| <= 1e-10 ||b||."""
    solver = LUSolver(A)
    x = solver.solve(rhs)
    Ad = A.data if isinstance(A, SparseMatrix) else A
    nb = np.linalg.norm(rhs)
    res = np.linalg.norm(Ad @ x - rhs)
    if nb > 0 and res > 1e-10 * nb:
        # one refinement step before declaring failure
        x = x + solver.solve(rhs - Ad @ x)
        res = np.linalg.norm(Ad @ x - rhs)
        if res > 1e-10 * nb:
            raise SingularMatrixError(
                f"solve residual {res / nb:.3e} exceeds 1e-10 (ill-conditioned system)")
    return x


def _diagnose_singularity(A, exc) -> SingularMatrixError:
    csr = A.tocsr()
    row_nnz = np.diff(csr.indptr)
    empty_rows = np.flatnonzero(row_nnz == 0)
    if len(empty_rows):
        r = int(empty_rows[0])
        return SingularMatrixError(
            f"singular pivot: row {r} is empty (missing constraint row?)", row=r)
    col_nnz = np.diff(A.tocsc().indptr)
    empty_cols = np.flatnonzero(col_nnz == 0)
    if len(empty_cols):
        c = int(empty_cols[0])
        return SingularMatrixError(
            f"singular pivot: column {c} is empty (missing constraint column?)", row=c)
    return SingularMatrixError(f"singular pivot during LU factorization: {exc}")
