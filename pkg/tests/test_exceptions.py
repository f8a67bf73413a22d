import math
from unittest import TestCase

import numpy as np

from ode_filters import (
    ConfigurationError,
    IwpSpec,
    NoFixedPointError,
    OdeFilterError,
    SingularInnovationError,
    SolverParameterWarning,
    WeightCollapseError,
    certify_stability,
    discretize_iwp,
    initial_belief,
    make_logistic,
    run_filter,
)
from ode_filters.parameters import SolverParameterValidation


class TestExceptions(TestCase):
    def setUp(self) -> None:
        self.validation = SolverParameterValidation()

    def test_message_context(self) -> None:
        self.assertEqual(str(OdeFilterError("boom")), "boom")
        self.assertEqual(str(OdeFilterError("boom", step=3, variant="ekf")), "(step=3, variant=ekf) boom")
        self.assertEqual(str(WeightCollapseError(step=7)), "(step=7) all particle log-weights are non-finite")
        self.assertIsInstance(SingularInnovationError(), OdeFilterError)

    def test_run_filter_names_step_and_variant(self) -> None:
        problem = make_logistic()
        prior = discretize_iwp(IwpSpec(q=1, d=1), 0.1).scaled(0.0)
        initial = initial_belief(IwpSpec(q=1, d=1), problem)
        with self.assertRaises(SingularInnovationError) as ctx:
            run_filter(problem, prior, "sch", initial=initial)
        self.assertEqual(ctx.exception.step, 1)
        self.assertEqual(ctx.exception.variant, "ek0")
        self.assertIn("step=1", str(ctx.exception))

    def test_no_fixed_point_carries_certificate(self) -> None:
        with self.assertRaises(NoFixedPointError) as ctx:
            certify_stability(np.array([[-1.0]]), IwpSpec(q=2, d=1), 0.1, max_iter=0)
        self.assertEqual(ctx.exception.iterations, 0)
        self.assertFalse(ctx.exception.certificate.converged)
        self.assertFalse(ctx.exception.certificate.certified)

    def test_warning_message(self) -> None:
        for params in (
                {"variants": ["ukf"], "q": [5]},
                {"h": [2.0]},
                {"kappa": [1e-13]},
        ):
            with self.assertWarns(SolverParameterWarning, msg=str(params)):
                self.validation.validate_params(params)

    def test_invalid_values(self) -> None:
        for params in (
                {"problem": "lorenz"},
                {"variants": ["rk4"]},
                {"variants": []},
                {"init_mode": "exact-4"},
                {"q": [1.5]},
                {"q": [True]},
                {"h": [-0.1]},
                {"h": [math.inf]},
                {"t_end": 0.0},
                {"r": -1.0},
                {"kappa": [0.0]},
                {"particles": 1},
                {"threshold": 0.0},
                {"reps": 0},
                {"workers": 2.5},
                {"kde_h": 0.0},
        ):
            with self.assertRaises(ConfigurationError, msg=str(params)):
                self.validation.validate_params(params)

    def test_valid_values(self) -> None:
        self.validation.validate_params({
            "problem": "bernoulli", "variants": ["PF2"], "q": [1], "h": [0.1], "kappa": [1.0, 1e-10],
            "particles": 2, "threshold": 1.0, "reps": 3, "workers": 1, "init_mode": "exact-3",
        })

    def test_problems(self) -> None:
        problems = self.validation.get_problems()
        self.assertIn("linear", problems)
        self.assertIn("bernoulli", problems)

        self.validation.add_problem("logistic_slow", lambda **kwargs: make_logistic(r=0.5, **kwargs))
        problems = self.validation.get_problems()
        self.assertIn("logistic_slow", problems)
        self.assertEqual(self.validation.make_problem("logistic_slow", t_end=1.0).t_end, 1.0)
        self.assertNotIn("logistic_slow", SolverParameterValidation().get_problems())

    def test_variants(self) -> None:
        variants = self.validation.get_variants()
        for name in ("ek0", "sch", "ekf", "ukf", "ker", "kf", "affine", "pf1", "pf2"):
            self.assertIn(name, variants)

    def test_init_modes(self) -> None:
        self.assertEqual(self.validation.get_init_modes(), ["exact-2", "exact-3", "affine"])
