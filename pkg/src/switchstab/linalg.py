"""Tolerance-aware dense linear algebra: ranks, kernels, eigen extremes.

Every rank decision in the package goes through :func:`numeric_rank` so that
all modules share one relative singular-value cutoff. Matrices are plain
``numpy`` arrays in row-major layout; empty matrices (zero rows or columns)
are first-class and have rank 0 / full kernel.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import DimensionMismatch, NonFiniteMatrix

__all__ = [
    "Tolerance",
    "DEFAULT_TOL",
    "numeric_rank",
    "kernel_basis",
    "kernel_included",
    "normalized_columns",
    "spectral_norm",
    "sym_eig_extremes",
    "least_squares",
]


@dataclass(frozen=True)
class Tolerance:
    """Shared numeric cutoffs: relative rank cutoff and PSD margin."""

    rank_rel: float = 1e-9
    psd_margin: float = 1e-6

    def __post_init__(self):
        if not (self.rank_rel > 0 and self.psd_margin > 0):
            raise ValueError("tolerances must be positive")


DEFAULT_TOL = Tolerance()


def as_matrix(M) -> np.ndarray:
    """Coerce to a finite float 2-d array."""
    A = np.asarray(M, dtype=float)
    if A.ndim != 2:
        raise DimensionMismatch(f"expected 2-d array, got shape {A.shape}")
    if A.size and not np.all(np.isfinite(A)):
        raise NonFiniteMatrix("matrix contains non-finite entries")
    return A


def _singular_values(A: np.ndarray) -> np.ndarray:
    if A.size == 0:
        return np.zeros(0)
    return np.linalg.svd(A, compute_uv=False)


def numeric_rank(M, tol: Tolerance = DEFAULT_TOL) -> int:
    """Number of singular values above ``rank_rel * sigma_max``."""
    A = as_matrix(M)
    s = _singular_values(A)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.sum(s > tol.rank_rel * s[0]))


def kernel_basis(M, tol: Tolerance = DEFAULT_TOL) -> np.ndarray:
    """Orthonormal columns spanning ker M; shape (cols, cols - rank)."""
    A = as_matrix(M)
    k = A.shape[1]
    if A.shape[0] == 0 or k == 0:
        return np.eye(k)
    _, s, vt = np.linalg.svd(A, full_matrices=True)
    if s.size == 0 or s[0] == 0.0:
        rank = 0
    else:
        rank = int(np.sum(s > tol.rank_rel * s[0]))
    return vt[rank:].T.copy()


def kernel_included(A, B, tol: Tolerance = DEFAULT_TOL) -> bool:
    """True iff ker A is contained in ker B.

    Decided by rank([A; B]) == rank(A). Both ranks use one absolute cutoff
    scaled by the largest singular value of the stacked matrix, so blocks of
    very different magnitude cannot flip the comparison.
    """
    A = as_matrix(A)
    B = as_matrix(B)
    if A.shape[1] != B.shape[1]:
        raise DimensionMismatch(
            f"column counts differ: {A.shape[1]} vs {B.shape[1]}"
        )
    stacked = np.vstack([A, B])
    s_stack = _singular_values(stacked)
    if s_stack.size == 0 or s_stack[0] == 0.0:
        return True  # both blocks are zero: kernels are the whole space
    cutoff = tol.rank_rel * s_stack[0]
    rank_stack = int(np.sum(s_stack > cutoff))
    rank_a = int(np.sum(_singular_values(A) > cutoff))
    return rank_stack == rank_a


def normalized_columns(M) -> np.ndarray:
    """Each nonzero column scaled to unit norm (zero columns left alone).

    Rank and kernel questions about data matrices are scale-free per column;
    equalizing the columns keeps tiny recorded transitions visible next to
    large ones under the relative rank cutoff.
    """
    A = as_matrix(M).copy()
    if A.size == 0:
        return A
    norms = np.linalg.norm(A, axis=0)
    norms[norms == 0.0] = 1.0
    return A / norms


def spectral_norm(M) -> float:
    """Largest singular value (2-norm); 0 for empty matrices."""
    s = _singular_values(as_matrix(M))
    return float(s[0]) if s.size else 0.0


def sym_eig_extremes(M) -> tuple[float, float]:
    """(min, max) eigenvalue of the symmetric part (M + M^T)/2."""
    A = as_matrix(M)
    if A.shape[0] != A.shape[1]:
        raise DimensionMismatch("square matrix required")
    w = np.linalg.eigvalsh((A + A.T) / 2.0)
    return float(w[0]), float(w[-1])


def least_squares(A, b) -> np.ndarray:
    """Minimum-norm least-squares solution of A x = b."""
    A = as_matrix(A)
    rhs = np.asarray(b, dtype=float)
    sol, _, _, _ = np.linalg.lstsq(A, rhs, rcond=None)
    return sol
