import numpy as np
import scipy.linalg

from .exceptions import ConditioningError

JITTER_SCALE = 1e-14
JITTER_RETRIES = 6

_LOG_2PI = np.log(2.0 * np.pi)


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + np.swapaxes(matrix, -1, -2))


def jittered_cholesky(cov: np.ndarray) -> np.ndarray:
    """
    Lower Cholesky factor of a (stack of) covariance matrices

    Retries with a diagonal jitter of 1e-14 * trace, growing by 10 per retry,
    at most 6 retries. A zero trace falls back to a jitter floor of 1e-14.

    Raises:
        ConditioningError: if every retry fails
    """
    cov = symmetrize(np.asarray(cov, dtype=float))
    if not np.all(np.isfinite(cov)):
        raise ConditioningError(msg="covariance has non-finite entries")
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass

    m = cov.shape[-1]
    trace = np.trace(cov, axis1=-2, axis2=-1)
    base = np.asarray(JITTER_SCALE * np.where(trace > 0.0, trace, 1.0))
    eye = np.eye(m)
    for retry in range(JITTER_RETRIES):
        jitter = base * 10.0 ** retry
        try:
            return np.linalg.cholesky(cov + jitter[..., None, None] * eye)
        except np.linalg.LinAlgError:
            continue
    raise ConditioningError(
        msg=f"Cholesky failed after {JITTER_RETRIES} jitter retries "
            f"(max jitter {float(np.max(base)) * 10.0 ** (JITTER_RETRIES - 1):.3e})"
    )


def psd_sqrt(cov: np.ndarray) -> np.ndarray:
    """ Square root factor of a PSD matrix that tolerates exact singularity """
    w, v = np.linalg.eigh(symmetrize(cov))
    return v * np.sqrt(np.clip(w, 0.0, None))


def clip_psd(cov: np.ndarray) -> np.ndarray:
    """ Symmetrize and zero eigenvalues below -1e-12 * trace """
    cov = symmetrize(cov)
    w, v = np.linalg.eigh(cov)
    if w.min() >= 0.0:
        return cov
    tol = 1e-12 * abs(np.trace(cov))
    w = np.where(w < -tol, 0.0, np.clip(w, 0.0, None))
    return symmetrize((v * w) @ v.T)


def solve_spd(S: np.ndarray, b: np.ndarray) -> np.ndarray:
    """ Solve S x = b for symmetric positive definite S; LinAlgError if not PD """
    factor = scipy.linalg.cho_factor(S, lower=True, check_finite=True)
    return scipy.linalg.cho_solve(factor, b)


def gaussian_logpdf(x: np.ndarray, mean: np.ndarray, chol: np.ndarray) -> np.ndarray:
    """
    Log-density of N(mean, chol chol^T) at x, batched over leading axes

    Args:
        x: (..., m) points
        mean: (..., m) means
        chol: (..., m, m) lower Cholesky factors

    Returns:
        (...) log-densities
    """
    diff = np.asarray(x - mean, dtype=float)
    m = diff.shape[-1]
    if chol.ndim == 2 and diff.ndim == 1:
        white = scipy.linalg.solve_triangular(chol, diff, lower=True)
    else:
        white = np.linalg.solve(chol, diff[..., None])[..., 0]
    log_det = 2.0 * np.sum(np.log(np.abs(np.diagonal(chol, axis1=-2, axis2=-1))), axis=-1)
    return -0.5 * (np.sum(white ** 2, axis=-1) + log_det + m * _LOG_2PI)


def innovation_log_density(residual: np.ndarray, S: np.ndarray) -> tuple[float, float]:
    """
    Quadratic form and log-density of a residual under N(0, S)

    Returns:
        (r^T S^-1 r, log N(r; 0, S))

    Raises:
        numpy.linalg.LinAlgError: if S is not positive definite
    """
    chol = np.linalg.cholesky(S)
    white = scipy.linalg.solve_triangular(chol, residual, lower=True)
    quad = float(white @ white)
    log_det = 2.0 * float(np.sum(np.log(np.diag(chol))))
    return quad, -0.5 * (quad + log_det + residual.shape[-1] * _LOG_2PI)
