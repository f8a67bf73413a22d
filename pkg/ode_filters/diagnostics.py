"""
Accuracy and calibration metrics, and numerical stability certificates
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

from ._linalg import jittered_cholesky, symmetrize
from .exceptions import ConfigurationError, NoFixedPointError, OdeFilterError
from .gaussian import UpdateVariant, VariantTag, run_filter
from .priors import IwpSpec, discretize_iwp

if TYPE_CHECKING:
    from collections.abc import Callable

    from .gaussian import FilterTrace
    from .problems import OdeProblem


@dataclass(frozen=True, eq=False)
class RunMetrics:
    rmse: float
    chi2_bar: float
    per_step_chi2: np.ndarray
    d: int


@dataclass(frozen=True, eq=False)
class StabilityCertificate:
    """
    Closed-loop spectral radius of the steady-state Kalman filter

    Args:
        radius: spectral radius of A - A K H
        gain: steady-state gain K
        iterations: Riccati iterations run
        converged: whether the iteration reached its fixed point
    """

    radius: float
    gain: np.ndarray
    iterations: int
    converged: bool

    @property
    def certified(self) -> bool:
        return self.converged and self.radius < 1.0


def compute_metrics(trace: FilterTrace, reference: Callable[[float], np.ndarray]) -> RunMetrics:
    """
    RMSE and chi^2 statistics of the filtered solution against a reference

    Both use steps 1..N; chi^2 uses the filtered covariance of X1.

    Raises:
        ConditioningError: if C Sigma_F C^T cannot be factorized, with `step` set
    """
    C = trace.C
    errors = np.stack([np.atleast_1d(reference(t)) for t in trace.times]) - trace.filt_means @ C.T
    covs = C @ trace.filt_covs @ C.T

    chi2 = np.empty(trace.n_steps)
    for n in range(trace.n_steps):
        try:
            chol = jittered_cholesky(covs[n])
        except OdeFilterError as err:
            err.step = n + 1
            err.variant = trace.variant
            raise
        white = scipy.linalg.solve_triangular(chol, errors[n], lower=True)
        chi2[n] = white @ white

    return RunMetrics(
        rmse=float(np.sqrt(np.mean(np.sum(errors ** 2, axis=-1)))),
        chi2_bar=float(np.mean(chi2)),
        per_step_chi2=chi2,
        d=trace.d,
    )


def _riccati_step(A: np.ndarray, Q: np.ndarray, H: np.ndarray, P: np.ndarray) -> np.ndarray:
    K = np.linalg.solve(H @ P @ H.T, H @ P).T
    I_KH = np.eye(len(P)) - K @ H
    return symmetrize(A @ I_KH @ P @ I_KH.T @ A.T + Q)


def certify_stability(
        Lambda: np.ndarray,
        spec: IwpSpec,
        h: float,
        tol: float = 1e-12,
        max_iter: int = 100_000
) -> StabilityCertificate:
    """
    Steady-state exact Kalman filter for y' = Lambda y and the spectral radius
    of its closed loop A - A K H

    The recursion runs in Nordsieck coordinates (derivative block j scaled by
    h^j, Q by h^-(2q+1)) where A, Q and H are of order one. It starts from the
    stabilizing solution of the algebraic Riccati equation, or from a large
    covariance if that solve fails, and is iterated until the relative change of
    the predictive covariance is below tol.

    Raises:
        ConfigurationError: if Lambda is not full rank
        NoFixedPointError: if the recursion does not settle within max_iter steps;
            carries the last-iterate certificate
    """
    Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
    if Lambda.shape != (spec.d, spec.d) or np.linalg.matrix_rank(Lambda) < spec.d:
        raise ConfigurationError(msg="stability certificate needs a full-rank d x d Lambda")

    prior = discretize_iwp(spec, h)
    scale = np.repeat(h ** np.arange(spec.q + 1, dtype=float), spec.d)
    A = prior.A * np.outer(scale, 1.0 / scale)
    Q = symmetrize(prior.Q * np.outer(scale, scale) / h ** (2 * spec.q + 1))
    H = h * (prior.Cdot - Lambda @ prior.C) / scale

    try:
        P = symmetrize(scipy.linalg.solve_discrete_are(A.T, H.T, Q, np.zeros((spec.d, spec.d))))
    except (ValueError, np.linalg.LinAlgError):
        P = 1e8 * np.trace(Q) * np.eye(prior.dim)

    converged = False
    iterations = 0
    while iterations < max_iter:
        iterations += 1
        P_next = _riccati_step(A, Q, H, P)
        delta = np.linalg.norm(P_next - P)
        P = P_next
        if delta <= tol * np.linalg.norm(P):
            converged = True
            break

    K = np.linalg.solve(H @ P @ H.T, H @ P).T
    radius = float(np.max(np.abs(np.linalg.eigvals(A - A @ K @ H))))
    # gain mapped back to the unscaled state
    certificate = StabilityCertificate(
        radius=radius, gain=h * K / scale[:, None], iterations=iterations, converged=converged
    )
    if not converged:
        raise NoFixedPointError(iterations=iterations, certificate=certificate)
    return certificate


def empirical_decay(
        problem: OdeProblem,
        variant: UpdateVariant | VariantTag | str = VariantTag.KF,
        q: int = 2,
        h: float = 0.1,
        horizon: float | None = None
) -> float:
    """ Norm of the final filtered mean after running to t0 + horizon (default: the problem's span) """
    horizon = problem.t_end - problem.t0 if horizon is None else horizon
    prior = discretize_iwp(IwpSpec(q=q, d=problem.d), h)
    trace = run_filter(problem, prior, variant, n_steps=int(round(horizon / h)))
    return float(np.linalg.norm(trace.filt_means[-1]))
