"""Cholesky helpers shared by the GP and OMGP code."""
import numpy as np
from scipy import linalg
from scipy.linalg import lapack

LOG_2PI = np.log(2.0 * np.pi)


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a matrix stays indefinite after the maximum jitter."""


def jittered_cholesky(matrix, scale=1.0, start=1e-10, stop=1e-4):
    """Lower Cholesky factor, escalating diagonal jitter on failure.

    The plain matrix is tried first; on failure ``start * scale`` is added to
    the diagonal and multiplied by ten until ``stop * scale``.

    Returns
    -------
    (L, jitter) : lower factor and the jitter actually added.
    """
    matrix = np.asarray(matrix, dtype=float)
    try:
        return np.linalg.cholesky(matrix), 0.0
    except np.linalg.LinAlgError:
        pass
    eye = np.eye(matrix.shape[0])
    rel = start
    while rel <= stop * (1.0 + 1e-9):
        jitter = rel * scale
        try:
            return np.linalg.cholesky(matrix + jitter * eye), jitter
        except np.linalg.LinAlgError:
            rel *= 10.0
    raise FactorizationError(
        f"matrix not positive definite after jitter {stop * scale:.3g} (size {matrix.shape[0]})"
    )


def cho_solve(L, b):
    return linalg.cho_solve((L, True), b, check_finite=False)


def inverse_from_chol(L):
    """Inverse of ``L @ L.T`` from its lower Cholesky factor."""
    inv, info = lapack.dpotri(L, lower=1)
    if info != 0:
        raise FactorizationError(f"dpotri failed with info={info}")
    inv = np.tril(inv)
    return inv + np.tril(inv, -1).T


def solve_lower(L, b):
    return linalg.solve_triangular(L, b, lower=True, check_finite=False)


def logdet_from_chol(L) -> float:
    return 2.0 * float(np.sum(np.log(np.diag(L))))


def mvn_logpdf(y, mean, cov, scale=1.0) -> float:
    """Log density of a multivariate normal evaluated through a Cholesky factor."""
    L, _ = jittered_cholesky(cov, scale)
    return mvn_logpdf_chol(y, mean, L)


def mvn_logpdf_chol(y, mean, L) -> float:
    z = solve_lower(L, np.asarray(y, dtype=float) - mean)
    n = z.size
    return float(-0.5 * (z @ z) - 0.5 * logdet_from_chol(L) - 0.5 * n * LOG_2PI)
