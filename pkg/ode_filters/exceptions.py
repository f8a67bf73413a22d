class OdeFilterError(Exception):
    """ Generic exception for solver failures """

    def __init__(self, msg: str, step: int | None = None, variant: str | None = None):
        super().__init__(msg)
        self.msg = msg
        self.step = step
        self.variant = variant

    def __str__(self):
        context = []
        if self.step is not None:
            context.append(f"step={self.step}")
        if self.variant is not None:
            context.append(f"variant={self.variant}")
        if not context:
            return self.msg
        return f"({', '.join(context)}) {self.msg}"


class PriorSpecificationError(OdeFilterError):
    """ Raised when a prior is dimensionally or structurally malformed """


class NumericalOverflowError(OdeFilterError):
    """ Raised when a discretization produces non-finite entries """

    def __init__(self, h: float):
        super().__init__(msg=f"non-finite transition parameters at h={h}; |F h| too large")
        self.h = h


class UnsupportedInitError(OdeFilterError):
    """ Raised when an initialization mode needs derivatives the problem lacks """


class ProblemDefinitionError(OdeFilterError):
    """ Raised when an ODE problem violates its invariants """


class ConfigurationError(OdeFilterError):
    """ Raised for invalid solver or harness configuration """


class SingularInnovationError(OdeFilterError):
    """ Raised when the innovation covariance is not positive definite """

    def __init__(self, step: int | None = None, variant: str | None = None):
        super().__init__(
            msg="innovation covariance is not positive definite "
                "(R=0 with a degenerate predictive covariance?)",
            step=step,
            variant=variant
        )


class ConditioningError(OdeFilterError):
    """ Raised when a Cholesky factorization fails after the jitter ladder """


class WeightCollapseError(OdeFilterError):
    """ Raised when every particle weight underflows """

    def __init__(self, step: int):
        super().__init__(msg="all particle log-weights are non-finite", step=step)


class DegenerateSampleError(OdeFilterError):
    """ Raised when a density estimate is requested for degenerate samples """


class NoFixedPointError(OdeFilterError):
    """ Raised when the Riccati iteration does not reach a fixed point """

    def __init__(self, iterations: int, certificate=None):
        super().__init__(msg=f"Riccati iteration did not converge in {iterations} iterations")
        self.iterations = iterations
        self.certificate = certificate


class CalibrationError(OdeFilterError):
    """ Raised when a trace cannot be calibrated by the closed-form estimator """


class SolverParameterWarning(Warning):
    """ Warning for (potentially) invalid parameters """


class DegenerateCalibrationWarning(Warning):
    """ Warning for a zero diffusion estimate (all residuals vanish) """


class PseudoDensityWarning(Warning):
    """ Warning for the range-restricted transition density fallback """


class WeightCollapseWarning(Warning):
    """ Warning for a particle run recorded as nan after weight collapse """


class DivergenceWarning(Warning):
    """ Warning for a sweep row recorded as diverged """
