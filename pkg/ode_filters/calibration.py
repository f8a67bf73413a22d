"""
Maximum-likelihood calibration of the diffusion scale sigma^2

A run with unit sigma^2 and R = 0 determines the run at any sigma^2: means are
unchanged and every covariance scales by sigma^2. The marginal likelihood is
then maximized in closed form by the mean of r^T S^-1 r over steps, divided by d.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np

from .exceptions import CalibrationError, DegenerateCalibrationWarning
from .gaussian import FilterTrace


@dataclass(frozen=True, eq=False)
class CalibrationResult:
    sigma2_hat: float
    per_step_terms: np.ndarray
    log_marginal_at_hat: float
    degenerate: bool = False
    method: str = "ml"


def _check_unit_trace(trace: FilterTrace) -> None:
    if np.any(trace.R != 0.0):
        raise CalibrationError(
            msg="closed-form calibration needs R = 0",
            variant=trace.variant
        )
    if not np.isclose(trace.sigma2, 1.0, rtol=1e-12, atol=0.0):
        raise CalibrationError(
            msg=f"calibration needs a unit-scale run, trace has sigma2={trace.sigma2}",
            variant=trace.variant
        )


def log_marginal(trace: FilterTrace, sigma2: float) -> float:
    """ Log marginal likelihood of `trace` had its prior been scaled by sigma2 """
    if not sigma2 > 0.0:
        return -np.inf
    quad = trace.quad_terms
    return float(np.sum(trace.log_terms + 0.5 * quad - 0.5 * quad / sigma2 - 0.5 * trace.d * np.log(sigma2)))


def _calibrate(trace: FilterTrace, method: str) -> CalibrationResult:
    _check_unit_trace(trace)
    terms = np.array(trace.quad_terms, copy=True)
    sigma2_hat = float(np.mean(terms) / trace.d)

    if sigma2_hat == 0.0:
        warnings.warn(
            f"all residuals of the {trace.variant} run vanish, sigma2_hat is zero",
            DegenerateCalibrationWarning,
            stacklevel=3
        )
        return CalibrationResult(
            sigma2_hat=0.0,
            per_step_terms=terms,
            log_marginal_at_hat=float("nan"),
            degenerate=True,
            method=method,
        )

    return CalibrationResult(
        sigma2_hat=sigma2_hat,
        per_step_terms=terms,
        log_marginal_at_hat=log_marginal(trace, sigma2_hat),
        method=method,
    )


def calibrate_sigma2(trace: FilterTrace) -> CalibrationResult:
    """
    Closed-form maximum-likelihood sigma^2 of an exact Kalman filter run

    Args:
        trace: run with unit sigma^2 and R = 0

    Raises:
        CalibrationError: if the trace has R != 0 or sigma^2 != 1
    """
    return _calibrate(trace, method="ml")


def quasi_ml_calibrate(trace: FilterTrace) -> CalibrationResult:
    """
    Same estimator applied to the approximate innovation moments of an
    EK0, EKF, UKF or KER run
    """
    return _calibrate(trace, method="quasi-ml")


def apply_calibration(trace: FilterTrace, result: CalibrationResult) -> FilterTrace:
    """ Rescale every covariance of a unit-scale trace by sigma2_hat """
    if result.degenerate:
        return dataclasses.replace(trace, sigma2_hat=0.0)
    return dataclasses.replace(trace.rescaled(result.sigma2_hat), sigma2_hat=result.sigma2_hat)
