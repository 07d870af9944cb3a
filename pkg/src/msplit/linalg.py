"""Symmetric positive definite solves and generalized eigenproblems.

Thin, checked wrappers around scipy: sparse direct factorization with an
iterative fallback for the fine-grid systems, dense Cholesky for the small
time-stepping systems, and the generalized symmetric eigensolver used by the
local spectral problems. Every routine verifies the property it promises and
raises :class:`NumericalError` with context when it cannot deliver.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.linalg
import scipy.sparse as sp
import scipy.sparse.linalg as spla

__all__ = [
    "NumericalError",
    "EigResult",
    "SpdFactor",
    "DenseSpdFactor",
    "factorize_spd",
    "solve_spd",
    "eig_gsym",
    "cholesky_check",
    "smallest_pivot",
]

DEFAULT_TOL = 1e-10
PIVOT_FLOOR = 1e-14
CG_MAXITER = 5000


class NumericalError(RuntimeError):
    """A factorization or solve could not deliver its accuracy contract."""


def require_symmetric(mat, tol: float = 1e-12, name: str = "matrix") -> None:
    """Raise if ``mat`` is not numerically symmetric."""
    if mat.shape[0] != mat.shape[1]:
        raise ValueError(f"{name} is not square: {mat.shape}")
    if sp.issparse(mat):
        gap = abs(mat - mat.T).max()
    else:
        gap = np.abs(mat - mat.T).max()
    scale = abs(mat).max() if sp.issparse(mat) else np.abs(mat).max()
    if gap > tol * max(scale, 1.0):
        raise ValueError(f"{name} is not symmetric (max asymmetry {gap:.3e})")


class SpdFactor:
    """Reusable direct factorization of a sparse SPD matrix.

    Solves are verified against the residual tolerance; a Jacobi-preconditioned
    conjugate gradient picks up the rare case where the direct solve degrades.
    """

    def __init__(self, mat, tol: float = DEFAULT_TOL, context: str = ""):
        self.mat = mat.tocsr() if sp.issparse(mat) else sp.csr_matrix(mat)
        self.tol = tol
        self.context = context
        try:
            self._lu = spla.splu(self.mat.tocsc())
        except RuntimeError as exc:
            self._lu = None
            self._lu_error = str(exc)

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        rhs = np.asarray(rhs, dtype=float)
        rhs_norm = np.linalg.norm(rhs)
        if rhs_norm == 0.0:
            return np.zeros_like(rhs)
        if self._lu is not None:
            x = self._lu.solve(rhs)
            if np.linalg.norm(self.mat @ x - rhs) <= self.tol * rhs_norm:
                return x
        return self._cg(rhs, rhs_norm)

    def solve_many(self, rhs: np.ndarray) -> np.ndarray:
        """Solve for each column of a dense right-hand side block."""
        out = np.empty_like(np.asarray(rhs, dtype=float))
        for j in range(rhs.shape[1]):
            out[:, j] = self.solve(rhs[:, j])
        return out

    def _cg(self, rhs, rhs_norm):
        diag = self.mat.diagonal()
        if np.any(diag <= 0.0):
            where = self.context or "matrix"
            raise NumericalError(f"non-positive diagonal during solve of {where}")
        precond = spla.LinearOperator(self.mat.shape, matvec=lambda v: v / diag)
        x, info = spla.cg(self.mat, rhs, rtol=self.tol, atol=0.0, M=precond,
                          maxiter=CG_MAXITER)
        residual = np.linalg.norm(self.mat @ x - rhs)
        if info != 0 or residual > self.tol * rhs_norm:
            where = f" for {self.context}" if self.context else ""
            raise NumericalError(
                f"iterative fallback did not converge{where}: "
                f"residual {residual:.3e} vs target {self.tol * rhs_norm:.3e}")
        return x


def factorize_spd(mat, tol: float = DEFAULT_TOL, context: str = "") -> SpdFactor:
    """Factorize a sparse SPD matrix once for repeated solves."""
    return SpdFactor(mat, tol=tol, context=context)


def solve_spd(mat, rhs: np.ndarray, tol: float = DEFAULT_TOL) -> np.ndarray:
    """Solve an SPD system to ||A x - b|| <= tol * ||b||."""
    return SpdFactor(mat, tol=tol).solve(rhs)


class DenseSpdFactor:
    """Dense Cholesky factorization for the coarse time-stepping blocks."""

    def __init__(self, mat: np.ndarray, context: str = ""):
        mat = np.asarray(mat, dtype=float)
        try:
            self._factor = scipy.linalg.cho_factor(mat, lower=True)
        except scipy.linalg.LinAlgError as exc:
            where = f" of {context}" if context else ""
            raise NumericalError(f"Cholesky factorization{where} failed: {exc}") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        return scipy.linalg.cho_solve(self._factor, rhs)


@dataclass
class EigResult:
    """Eigenpairs of a symmetric pencil (A, S), ascending, S-orthonormal."""

    values: np.ndarray
    vectors: np.ndarray  # columns

    @property
    def n(self) -> int:
        return len(self.values)


def eig_gsym(astiff: np.ndarray, smass: np.ndarray, context: str = "") -> EigResult:
    """Solve A v = lambda S v for a symmetric pencil with S positive definite.

    Returns all eigenvalues ascending with S-orthonormal eigenvectors and
    verifies the residual of every pair against 1e-8 * ||A||.
    """
    astiff = np.asarray(astiff, dtype=float)
    smass = np.asarray(smass, dtype=float)
    where = f" in {context}" if context else ""
    try:
        values, vectors = scipy.linalg.eigh(astiff, smass)
    except scipy.linalg.LinAlgError as exc:
        raise NumericalError(f"generalized eigensolve failed{where}: {exc}") from exc
    scale = np.linalg.norm(astiff, 2) if astiff.size else 0.0
    residual = np.abs(astiff @ vectors - (smass @ vectors) * values).max() if astiff.size else 0.0
    if residual > 1e-8 * max(scale, 1e-300):
        raise NumericalError(
            f"eigen residual {residual:.3e} exceeds 1e-8 * ||A|| = {1e-8 * scale:.3e}{where}")
    return EigResult(values=values, vectors=vectors)


def _pivots(mat: np.ndarray):
    """Cholesky pivots diag(L)^2, or None if the factorization breaks down."""
    try:
        chol = np.linalg.cholesky(mat)
    except np.linalg.LinAlgError:
        return None
    d = np.diagonal(chol)
    return d * d


def cholesky_check(mat: np.ndarray) -> bool:
    """True iff a Cholesky factorization completes with healthy pivots.

    Pivots must exceed the floor 1e-14 * max|A|; a zero matrix fails.
    """
    mat = np.asarray(mat, dtype=float)
    scale = np.abs(mat).max() if mat.size else 0.0
    if scale == 0.0:
        return False
    pivots = _pivots(mat)
    if pivots is None:
        return False
    return bool(pivots.min() > PIVOT_FLOOR * scale)


def smallest_pivot(mat: np.ndarray) -> float:
    """Smallest Cholesky pivot of a symmetric matrix.

    When the factorization breaks down, falls back to the smallest eigenvalue
    (non-positive in that case) so callers still get a signed margin.
    """
    mat = np.asarray(mat, dtype=float)
    if mat.size == 0:
        return 0.0
    pivots = _pivots(mat)
    if pivots is None:
        return float(np.linalg.eigvalsh(mat).min())
    return float(pivots.min())
