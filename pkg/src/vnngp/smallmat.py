"""Dense K x K linear algebra with a jitter ladder.

The public functions wrap LAPACK through numpy/scipy. The ``*_nb`` helpers
at the bottom are the loop versions called from inside compiled batch
kernels, where LAPACK exceptions are not available.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg as sla

from ._accel import njit
from .errors import ArgumentError, NumericalError

JITTER_LADDER = (0.0, 1e-8, 1e-6, 1e-4)
MAX_DIM = 4096


@dataclass(frozen=True)
class CholFactor:
    L: np.ndarray
    jitter_used: float = 0.0

    @property
    def dim(self) -> int:
        return self.L.shape[0]


def chol_jittered(A, scale: float = 1.0, max_dim: int = MAX_DIM) -> CholFactor:
    """Cholesky of (A + A.T)/2 + jitter*I, escalating jitter on failure.

    Jitter runs through ``JITTER_LADDER`` times ``scale``; the first value
    that factorizes is recorded on the result.
    """
    A = np.asarray(A, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {A.shape}")
    n = A.shape[0]
    if n > max_dim:
        raise ArgumentError(f"matrix dimension {n} exceeds limit {max_dim}")
    if n == 0:
        return CholFactor(np.zeros((0, 0)), 0.0)
    S = 0.5 * (A + A.T)
    eye = np.eye(n)
    for j in JITTER_LADDER:
        jit = j * scale
        try:
            L = np.linalg.cholesky(S + jit * eye if jit else S)
        except np.linalg.LinAlgError:
            continue
        if np.all(np.isfinite(L)):
            return CholFactor(L, jit)
    raise NumericalError(
        f"Cholesky failed for {n}x{n} matrix at max jitter "
        f"{JITTER_LADDER[-1] * scale:g} (scale {scale:g})")


def solve(F: CholFactor, B):
    """X with (L L^T) X = B."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.dim:
        raise ArgumentError(f"right-hand side has {B.shape[0]} rows, factor is {F.dim}")
    if F.dim == 0:
        return B.copy()
    return sla.cho_solve((F.L, True), B, check_finite=False)


def tri_solve(F: CholFactor, B):
    """L^{-1} B."""
    B = np.asarray(B, dtype=float)
    if B.shape[0] != F.dim:
        raise ArgumentError(f"right-hand side has {B.shape[0]} rows, factor is {F.dim}")
    if F.dim == 0:
        return B.copy()
    return sla.solve_triangular(F.L, B, lower=True, check_finite=False)


def logdet(F: CholFactor) -> float:
    return float(2.0 * np.sum(np.log(np.diag(F.L))))


def inverse(F: CholFactor) -> np.ndarray:
    return solve(F, np.eye(F.dim))


def quad_form(F: CholFactor, x) -> float:
    """x^T (L L^T)^{-1} x."""
    z = tri_solve(F, x)
    return float(z @ z)


# -- compiled-kernel helpers -------------------------------------------------

@njit(cache=True, inline="always")
def chol_inplace_nb(A, n):
    """Overwrite the leading n x n block of A with its lower Cholesky factor.

    Returns False on a nonpositive pivot. The strict upper triangle is zeroed.
    """
    for j in range(n):
        s = A[j, j]
        for k in range(j):
            s -= A[j, k] * A[j, k]
        if not s > 0.0:
            return False
        d = np.sqrt(s)
        A[j, j] = d
        for i in range(j + 1, n):
            t = A[i, j]
            for k in range(j):
                t -= A[i, k] * A[j, k]
            A[i, j] = t / d
        for i in range(j):
            A[i, j] = 0.0
    return True


@njit(cache=True, inline="always")
def cho_solve_nb(L, n, b, out):
    """Solve (L L^T) x = b on the leading n x n block; writes x into out."""
    for i in range(n):
        t = b[i]
        for k in range(i):
            t -= L[i, k] * out[k]
        out[i] = t / L[i, i]
    for i in range(n - 1, -1, -1):
        t = out[i]
        for k in range(i + 1, n):
            t -= L[k, i] * out[k]
        out[i] = t / L[i, i]
