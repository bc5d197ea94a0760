"""Dense real linear algebra: Cholesky solves and truncated SVD.

Matrices are plain C-ordered ``float64`` numpy arrays. Factorisations run
through :mod:`neural_galerkin.kernels`; products use numpy's ``@``.
"""

from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import EmptyMatrix, KernelError, NotPositiveDefinite

PIVOT_TOL = 1e-14
SYMMETRY_TOL = 1e-12


def as_matrix(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    if A.ndim != 2:
        raise ValueError(f"expected a 2-D array, got shape {A.shape}")
    if not np.all(np.isfinite(A)):
        raise ValueError("matrix has non-finite entries")
    return A


def symmetrize(A) -> np.ndarray:
    A = np.asarray(A, dtype=np.float64)
    return 0.5 * (A + A.T)


def check_symmetric(A, tol=SYMMETRY_TOL):
    scale = np.max(np.abs(A)) if A.size else 0.0
    if A.shape[0] != A.shape[1]:
        raise ValueError(f"matrix is not square: {A.shape}")
    if np.max(np.abs(A - A.T), initial=0.0) > tol * max(scale, 1e-300):
        raise ValueError("matrix is not symmetric")


class CholeskyFactor:
    """Lower factor ``L`` of an SPD matrix, reusable across right-hand sides."""

    def __init__(self, A):
        A = as_matrix(A)
        check_symmetric(A)
        try:
            self.L = kernels.cholesky(A, PIVOT_TOL)
        except KernelError as exc:
            raise NotPositiveDefinite(
                f"Cholesky pivot {exc.args[0]} is not positive; "
                "the basis is numerically degenerate"
            ) from None
        self.n = A.shape[0]

    def solve(self, B):
        B = np.asarray(B, dtype=np.float64)
        if B.shape[0] != self.n:
            raise ValueError(f"right-hand side has {B.shape[0]} rows, expected {self.n}")
        return kernels.cho_solve(self.L, B)


def cholesky(A) -> CholeskyFactor:
    return CholeskyFactor(A)


def spd_solve(A, B):
    """Solve ``A X = B`` for symmetric positive definite ``A``.

    Raises :class:`NotPositiveDefinite` when a Cholesky pivot falls below
    ``1e-14 * max(diag(A))``.
    """
    return CholeskyFactor(A).solve(B)


@dataclass(frozen=True)
class SvdResult:
    """Thin SVD with the retained block marked.

    ``left_vectors`` (rows x r) and ``right_vectors`` (cols x r) hold only the
    ``retained_rank`` leading components; ``singular_values`` holds all
    ``min(rows, cols)`` values in non-increasing order.
    """

    left_vectors: np.ndarray
    singular_values: np.ndarray
    right_vectors: np.ndarray
    retained_rank: int

    def reconstruct(self) -> np.ndarray:
        r = self.retained_rank
        return (self.left_vectors * self.singular_values[:r]) @ self.right_vectors.T


def _jacobi(A):
    """Singular values and right vectors by one-sided Jacobi on the columns of ``A``.

    Tall inputs are first reduced to their triangular QR factor. Wide inputs
    are rotated directly, which keeps ``V`` orthogonal to working precision;
    the surplus columns collapse to zero norm.
    """
    rows, cols = A.shape
    work = kernels.householder_r(A) if rows > cols else A
    W, V, _ = kernels.jacobi_svd(work)
    s = np.sqrt(np.einsum("ij,ij->j", W, W))
    order = np.argsort(-s, kind="stable")
    return s[order], V[:, order]


def truncated_svd(A, rel_tol: float) -> SvdResult:
    """SVD by one-sided Jacobi, keeping components with ``s >= rel_tol * s_max``."""
    if not 0.0 < rel_tol < 1.0:
        raise ValueError("rel_tol must lie in (0, 1)")
    A = as_matrix(A)
    rows, cols = A.shape
    if rows == 0 or cols == 0:
        raise EmptyMatrix(f"cannot decompose a {rows}x{cols} matrix")
    s, V = _jacobi(A)
    s = s[:min(rows, cols)]
    s_max = s[0]
    r = int(np.count_nonzero(s >= rel_tol * s_max)) if s_max > 0 else 0
    V = V[:, :r]
    U = (A @ V) / s[:r]
    return SvdResult(np.ascontiguousarray(U), s, np.ascontiguousarray(V), r)


def lower_solve(L, B):
    """Forward substitution ``L X = B`` for lower-triangular ``L``."""
    L = as_matrix(L)
    X = np.array(B, dtype=np.float64)
    for i in range(L.shape[0]):
        X[i] = (X[i] - L[i, :i] @ X[:i]) / L[i, i]
    return X
