import math
import warnings
from collections.abc import Callable

from .exceptions import ConfigurationError, SolverParameterWarning
from .gaussian import VARIANT_ALIASES, VariantTag
from .particle import PF_VARIANTS
from .priors import InitMode
from .problems import PROBLEMS, OdeProblem

QUADRATURE_VARIANTS = ("ukf", "ker")


class SolverParameterValidation:
    def __init__(self):
        self._problems: dict[str, Callable[..., OdeProblem]] = dict(PROBLEMS)

        self._variants: list[str] = [
            *(tag.value for tag in VariantTag), *VARIANT_ALIASES, *PF_VARIANTS
        ]

        self._init_modes: list[str] = [mode.value for mode in InitMode]

    def add_problem(self, name: str, factory: Callable[..., OdeProblem]):
        self._problems[name] = factory

    def get_problems(self) -> list[str]:
        """ Returns list of registered problem names """
        return list(self._problems)

    def get_variants(self) -> list[str]:
        """ Returns list of solver variant names, aliases included """
        return self._variants

    def get_init_modes(self) -> list[str]:
        return self._init_modes

    def make_problem(self, name: str, **kwargs) -> OdeProblem:
        self._validate_problem(name)
        return self._problems[name](**kwargs)

    def _validate_problem(self, problem: str):
        if problem not in self._problems:
            raise ConfigurationError(msg=f"'{problem}' not in problem list: {self.get_problems()}")

    def _validate_variant(self, variant: str):
        if variant.lower() not in self._variants:
            raise ConfigurationError(msg=f"'{variant}' not in variant list: {self._variants}")

    def _validate_init_mode(self, init_mode: str):
        if init_mode not in self._init_modes:
            raise ConfigurationError(msg=f"'{init_mode}' not in init mode list: {self._init_modes}")

    @staticmethod
    def _validate_positive(name: str, values, integer: bool = False):
        for value in values:
            if integer and (not isinstance(value, int) or isinstance(value, bool)):
                raise ConfigurationError(msg=f"{name} must be an integer, got {value!r}")
            if not (isinstance(value, int | float) and math.isfinite(value) and value > 0):
                raise ConfigurationError(msg=f"{name} must be positive and finite, got {value!r}")

    def validate_params(self, params: dict):
        """
        Raise ConfigurationError for invalid values, warn on suspicious ones

        Args:
            params: any subset of the experiment configuration fields
        """
        if "problem" in params:
            self._validate_problem(params["problem"])
        if "variants" in params:
            if not params["variants"]:
                raise ConfigurationError(msg="at least one variant is required")
            for variant in params["variants"]:
                self._validate_variant(variant)
        if "init_mode" in params:
            self._validate_init_mode(params["init_mode"])
        if "q" in params:
            self._validate_positive("q", params["q"], integer=True)
            if max(params["q"]) > 4 and any(
                    v.lower() in QUADRATURE_VARIANTS for v in params.get("variants", ())
            ):
                warnings.warn(
                    f"q={max(params['q'])} with sigma-point variants: predictive covariances "
                    f"span many orders of magnitude and may need jitter",
                    SolverParameterWarning,
                    stacklevel=2
                )
        if "h" in params:
            self._validate_positive("h", params["h"])
            if max(params["h"]) > 1.0:
                warnings.warn(
                    f"step size {max(params['h'])} is larger than 1",
                    SolverParameterWarning,
                    stacklevel=2
                )
        if params.get("t_end") is not None:
            self._validate_positive("t_end", [params["t_end"]])
        if "r" in params and not (math.isfinite(params["r"]) and params["r"] >= 0.0):
            raise ConfigurationError(msg=f"r must be a nonnegative scalar, got {params['r']!r}")
        if "kappa" in params:
            self._validate_positive("kappa", params["kappa"])
            if min(params["kappa"]) < 1e-12:
                warnings.warn(
                    f"kappa={min(params['kappa'])} is below 1e-12, log-weight increments may overflow",
                    SolverParameterWarning,
                    stacklevel=2
                )
        if "particles" in params:
            self._validate_positive("particles", [params["particles"]], integer=True)
            if params["particles"] < 2:
                raise ConfigurationError(msg=f"need at least 2 particles, got {params['particles']}")
        if "threshold" in params and not 0.0 < params["threshold"] <= 1.0:
            raise ConfigurationError(msg=f"threshold must lie in (0, 1], got {params['threshold']}")
        for key in ("reps", "workers"):
            if key in params:
                self._validate_positive(key, [params[key]], integer=True)
        if "kde_h" in params:
            self._validate_positive("kde_h", [params["kde_h"]])
