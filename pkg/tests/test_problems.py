import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from ode_filters import (
    AffineField,
    OdeProblem,
    ProblemDefinitionError,
    get_problem,
    make_bernoulli,
    make_fitzhugh_nagumo,
    make_linear_oscillator,
    make_logistic,
)
from ode_filters.problems import evaluate_batch


class TestProblems(TestCase):
    def setUp(self) -> None:
        self.rng = np.random.default_rng(7)
        self.oscillator = make_linear_oscillator(0.0, math.pi)
        self.logistic = make_logistic(r=3.0, y0=0.1)
        self.bernoulli = make_bernoulli()
        self.fitzhugh = make_fitzhugh_nagumo(0.2, 0.2, 3.0)

    def test_oscillator_reference(self) -> None:
        assert_allclose(self.oscillator.reference(0.0), [1.0, 0.0])
        assert_allclose(self.oscillator.reference(1.0), [-1.0, 0.0], atol=1e-12)
        self.assertEqual(self.oscillator.t_span, (0.0, 10.0))
        self.assertEqual(self.oscillator.d, 2)

    def test_logistic_reference(self) -> None:
        assert_allclose(self.logistic.reference(0.0), [0.1])
        expected = math.exp(3.0) / (9.0 + math.exp(3.0))
        assert_allclose(self.logistic.reference(1.0), [expected], rtol=1e-12)
        self.assertAlmostEqual(expected, 0.69055, places=5)
        self.assertEqual(self.logistic.t_span, (0.0, 2.5))

    def test_logistic_initial_value_range(self) -> None:
        with self.assertRaises(ProblemDefinitionError):
            make_logistic(y0=1.5)

    def test_fitzhugh_field(self) -> None:
        assert_allclose(self.fitzhugh.f(np.array([-1.0, 1.0]), 0.0), [1.0, 1.0 / 3.0], rtol=1e-12)
        jac = self.fitzhugh.jacobian(np.array([0.0, 0.5]), 0.0)
        self.assertEqual(jac[0, 0], 3.0)
        assert_allclose(self.fitzhugh.y0, [-1.0, 1.0])
        with self.assertRaises(ProblemDefinitionError):
            make_fitzhugh_nagumo(c=0.0)

    def test_fitzhugh_baseline_satisfies_ode(self) -> None:
        problem = make_fitzhugh_nagumo(t_end=2.0)
        assert_allclose(problem.reference(0.0), [-1.0, 1.0])
        eps = 1e-4
        for t in (0.3, 0.9, 1.6):
            slope = (problem.reference(t + eps) - problem.reference(t - eps)) / (2.0 * eps)
            assert_allclose(slope, problem.f(problem.reference(t), t), atol=1e-5)

    def test_bernoulli_field(self) -> None:
        f = self.bernoulli.f
        assert_allclose(f(np.array([0.0]), 0.0), [0.0])
        assert_allclose(f(np.array([1.0]), 0.0), [0.0])
        assert_allclose(f(np.array([-1.0]), 0.0), [0.0])
        assert_allclose(f(np.array([0.5]), 0.0), [0.375])
        self.assertEqual(self.bernoulli.t_span, (0.0, 5.0))

    def test_analytic_references_satisfy_ode(self) -> None:
        eps = 1e-6
        for problem in (self.oscillator, self.logistic, self.bernoulli):
            for t in self.rng.uniform(problem.t0 + 0.1, problem.t_end - 0.1, size=20):
                slope = (problem.reference(t + eps) - problem.reference(t - eps)) / (2.0 * eps)
                self.assertLessEqual(np.linalg.norm(slope - problem.f(problem.reference(t), t)), 1e-6)

    def test_jacobians_match_finite_differences(self) -> None:
        for problem in (self.oscillator, self.logistic, self.bernoulli, self.fitzhugh):
            for y in self.rng.normal(size=(20, problem.d)):
                self.assertTrue(problem.jacobian_matches(y, 0.0), msg=problem.name)

    def test_batched_fields(self) -> None:
        states = self.rng.normal(size=(5, 2))
        batch = self.fitzhugh.f(states, 0.0)
        for state, row in zip(states, batch, strict=True):
            assert_allclose(self.fitzhugh.f(state, 0.0), row)
        self.assertEqual(self.fitzhugh.jacobian(states, 0.0).shape, (5, 2, 2))

    def test_evaluate_batch_loops_scalar_fields(self) -> None:
        def f(y, t):
            return np.array([float(y[0]) ** 2])

        states = np.array([[1.0], [2.0], [3.0]])
        assert_allclose(evaluate_batch(f, states, 0.0), [[1.0], [4.0], [9.0]])

    def test_wrong_jacobian_rejected(self) -> None:
        with self.assertRaises(ProblemDefinitionError):
            OdeProblem(
                name="bad",
                f=lambda y, t: y ** 2,
                y0=np.array([1.0]),
                t_span=(0.0, 1.0),
                jacobian=lambda y, t: np.array([[1.0]]),
            )

    def test_non_finite_field_rejected(self) -> None:
        with self.assertRaises(ProblemDefinitionError):
            OdeProblem(name="bad", f=lambda y, t: 1.0 / y, y0=np.array([0.0]), t_span=(0.0, 1.0))

    def test_affine_field(self) -> None:
        field = AffineField.constant(np.array([[1.0, 2.0], [0.0, -1.0]]), np.array([0.5, 0.0]))
        assert_allclose(field(np.array([1.0, 1.0]), 0.0), [3.5, -1.0])

    def test_registry(self) -> None:
        self.assertEqual(get_problem("logistic").name, "logistic")
        self.assertEqual(get_problem("linear", lambda1=-1.0).affine.Lambda(0.0)[0, 0], -1.0)
        with self.assertRaises(ProblemDefinitionError):
            get_problem("lorenz")
