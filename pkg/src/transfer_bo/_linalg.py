"""Shared linear-algebra helpers: robust Cholesky and flop accounting."""

import numpy as np
from scipy import linalg as sla


class NumericalError(RuntimeError):
    """A linear-algebra operation failed beyond the allowed jitter escalation."""


class InputError(ValueError):
    """Caller-supplied data violates a precondition."""


# Jitter escalation: start at 1e-10 * trace(K)/N, multiply by 10, give up at
# 1e-4 * trace(K)/N.
JITTER_START = 1e-10
JITTER_MAX = 1e-4


def chol_with_jitter(mat, counter=None):
    """Lower Cholesky factor of a symmetric PSD matrix with adaptive jitter.

    Returns (L, jitter_used). Raises NumericalError reporting the final
    jitter tried once the escalation budget is exhausted.
    """
    n = mat.shape[0]
    if n == 0:
        return np.zeros((0, 0)), 0.0
    scale = float(np.trace(mat)) / n
    if scale <= 0.0:
        scale = 1.0
    jitter = 0.0
    while True:
        try:
            L = sla.cholesky(mat + jitter * np.eye(n), lower=True)
            if counter is not None:
                counter.add_cholesky(n)
            return L, jitter
        except sla.LinAlgError:
            jitter = JITTER_START * scale if jitter == 0.0 else jitter * 10.0
            if jitter > JITTER_MAX * scale:
                raise NumericalError(
                    f"Cholesky failed for {n}x{n} matrix; final jitter tried "
                    f"{jitter / 10.0:.3e} (scale {scale:.3e})"
                ) from None


def solve_lower(L, b, counter=None):
    """Solve L x = b with L lower triangular."""
    if L.shape[0] == 0:
        return np.zeros_like(b)
    if counter is not None:
        counter.add_triangular_solve(L.shape[0], b.shape[1] if b.ndim > 1 else 1)
    return sla.solve_triangular(L, b, lower=True)


def chol_solve(L, b, counter=None):
    """Solve (L L^T) x = b."""
    if L.shape[0] == 0:
        return np.zeros_like(b)
    if counter is not None:
        counter.add_triangular_solve(L.shape[0], b.shape[1] if b.ndim > 1 else 1)
        counter.add_triangular_solve(L.shape[0], b.shape[1] if b.ndim > 1 else 1)
    return sla.cho_solve((L, True), b)


def logdet_from_chol(L):
    if L.shape[0] == 0:
        return 0.0
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def symmetrize(mat):
    return 0.5 * (mat + mat.T)


class FlopCounter:
    """Analytic multiplication counts for the structured-solve cost model.

    Counts are derived from the shapes actually passed through the blocked
    routines, so tests can compare blocked against dense cost without timing.
    """

    def __init__(self):
        self.flops = 0

    def add_cholesky(self, n):
        self.flops += n ** 3 // 3

    def add_triangular_solve(self, n, nrhs):
        self.flops += n * n * nrhs

    def add_matmul(self, m, k, n):
        self.flops += m * k * n

    @staticmethod
    def dense_cholesky_flops(n):
        return n ** 3 // 3
