import dataclasses
import math
from unittest import TestCase

import numpy as np
from numpy.testing import assert_allclose

from ode_filters import (
    ConditioningError,
    ConfigurationError,
    IwpSpec,
    OdeProblem,
    certify_stability,
    compute_metrics,
    discretize_iwp,
    empirical_decay,
    make_linear_oscillator,
    run_filter,
)
from ode_filters.problems import oscillator_matrix


def _grid_lookup(trace, values):
    def reference(t):
        return values[int(round((t - trace.t0) / trace.h)) - 1]
    return reference


class TestComputeMetrics(TestCase):
    def setUp(self) -> None:
        self.problem = make_linear_oscillator(0.0, math.pi)
        self.prior = discretize_iwp(IwpSpec(q=2, d=2), 0.05)
        self.trace = run_filter(self.problem, self.prior, "kf")

    def test_exact_reference(self) -> None:
        means = self.trace.filt_means @ self.trace.C.T
        metrics = compute_metrics(self.trace, _grid_lookup(self.trace, means))
        self.assertEqual(metrics.rmse, 0.0)
        self.assertEqual(metrics.chi2_bar, 0.0)
        self.assertEqual(metrics.per_step_chi2.shape, (self.trace.n_steps,))

    def test_constant_error_and_variance(self) -> None:
        n, e, v = 10, 0.3, 0.04
        base = run_filter(
            OdeProblem(name="scalar", f=lambda y, t: np.zeros(1), y0=np.zeros(1), t_span=(0.0, 1.0)),
            discretize_iwp(IwpSpec(q=1, d=1), 0.1),
            "ek0",
            n_steps=n,
        )
        covs = np.zeros((n, 2, 2))
        covs[:, 0, 0] = v
        covs[:, 1, 1] = 1.0
        trace = dataclasses.replace(base, filt_means=np.zeros((n, 2)), filt_covs=covs)
        metrics = compute_metrics(trace, lambda t: np.array([e]))
        self.assertAlmostEqual(metrics.chi2_bar, e ** 2 / v, places=10)
        self.assertAlmostEqual(metrics.rmse, e, places=12)
        self.assertEqual(metrics.chi2_bar, float(np.mean(metrics.per_step_chi2)))

    def test_well_specified_chi2_near_d(self) -> None:
        C = self.trace.C
        covs = C @ self.trace.filt_covs @ C.T
        chols = np.linalg.cholesky(covs)
        means = self.trace.filt_means @ C.T

        chi2_bars = []
        for seed in range(100):
            rng = np.random.default_rng(seed)
            noise = np.einsum("nij,nj->ni", chols, rng.standard_normal(means.shape))
            chi2_bars.append(compute_metrics(self.trace, _grid_lookup(self.trace, means + noise)).chi2_bar)
        d = self.trace.d
        self.assertTrue(0.7 * d <= np.mean(chi2_bars) <= 1.3 * d)

    def test_padding_invariance(self) -> None:
        reference = self.problem.reference
        n, m, d = self.trace.n_steps, self.prior.dim, self.trace.d
        means = np.concatenate([self.trace.filt_means, np.ones((n, d))], axis=1)
        covs = np.tile(np.eye(m + d), (n, 1, 1))
        covs[:, :m, :m] = self.trace.filt_covs
        padded = dataclasses.replace(self.trace, filt_means=means, filt_covs=covs, q=self.trace.q + 1)

        plain = compute_metrics(self.trace, reference)
        wide = compute_metrics(padded, reference)
        self.assertEqual(plain.rmse, wide.rmse)
        self.assertEqual(plain.chi2_bar, wide.chi2_bar)

    def test_singular_covariance_names_step(self) -> None:
        covs = np.array(self.trace.filt_covs, copy=True)
        covs[4] = np.full_like(covs[4], np.nan)
        broken = dataclasses.replace(self.trace, filt_covs=covs)
        with self.assertRaises(ConditioningError) as ctx:
            compute_metrics(broken, self.problem.reference)
        self.assertEqual(ctx.exception.step, 5)


class TestCertifyStability(TestCase):
    def test_undamped_oscillator(self) -> None:
        certificate = certify_stability(oscillator_matrix(0.0, math.pi), IwpSpec(q=2, d=2), 0.1)
        self.assertTrue(certificate.converged)
        self.assertLess(certificate.radius, 1.0)
        self.assertTrue(certificate.certified)
        self.assertEqual(certificate.gain.shape, (6, 2))

    def test_unstable_ode(self) -> None:
        certificate = certify_stability(np.eye(1), IwpSpec(q=1, d=1), 0.1)
        self.assertLess(certificate.radius, 1.0)

    def test_singular_lambda(self) -> None:
        with self.assertRaises(ConfigurationError):
            certify_stability(np.zeros((2, 2)), IwpSpec(q=2, d=2), 0.1)
        with self.assertRaises(ConfigurationError):
            certify_stability(np.eye(3), IwpSpec(q=2, d=2), 0.1)

    def test_unstable_ode_small_step(self) -> None:
        for q in range(1, 5):
            certificate = certify_stability(oscillator_matrix(1.0, 1.0), IwpSpec(q=q, d=2), 0.01)
            self.assertTrue(certificate.certified, msg=f"q={q} radius={certificate.radius}")

    def test_gain_in_original_coordinates(self) -> None:
        Lambda = oscillator_matrix(-1.0, 2.0)
        prior = discretize_iwp(IwpSpec(q=2, d=2), 0.1)
        certificate = certify_stability(Lambda, IwpSpec(q=2, d=2), 0.1)
        H = prior.Cdot - Lambda @ prior.C
        assert_allclose(H @ certificate.gain, np.eye(2), atol=1e-8)
        closed_loop = prior.A - prior.A @ certificate.gain @ H
        self.assertAlmostEqual(float(np.max(np.abs(np.linalg.eigvals(closed_loop)))), certificate.radius, places=6)

    def test_neutral_line_settles_quickly(self) -> None:
        certificate = certify_stability(oscillator_matrix(0.0, 1.0), IwpSpec(q=4, d=2), 0.01, max_iter=50)
        self.assertTrue(certificate.certified)

    def test_a_stability_sweep(self) -> None:
        grid = np.linspace(-2.0, 2.0, 5)
        for lambda1 in grid:
            for lambda2 in grid:
                if lambda1 == 0.0 and lambda2 == 0.0:
                    continue
                Lambda = oscillator_matrix(lambda1, lambda2)
                for q in range(1, 5):
                    for h in (0.01, 0.1, 1.0):
                        certificate = certify_stability(Lambda, IwpSpec(q=q, d=2), h)
                        msg = f"lambda=({lambda1}, {lambda2}) q={q} h={h} radius={certificate.radius}"
                        self.assertTrue(certificate.converged, msg=msg)
                        self.assertLess(certificate.radius, 1.0, msg=msg)


class TestEmpiricalDecay(TestCase):
    def test_damped_oscillator_decays(self) -> None:
        problem = make_linear_oscillator(-1.0, math.pi)
        self.assertLess(empirical_decay(problem, "kf", q=2, h=0.1, horizon=200.0), 1e-8)

    def test_undamped_oscillator_shrinks(self) -> None:
        problem = make_linear_oscillator(0.0, math.pi)
        early = empirical_decay(problem, "kf", q=2, h=0.1, horizon=20.0)
        late = empirical_decay(problem, "kf", q=2, h=0.1, horizon=200.0)
        self.assertLess(late, early)

    def test_small_step(self) -> None:
        problem = make_linear_oscillator(-5.0, math.pi)
        for variant in ("kf", "ekf", "ek0"):
            self.assertLess(empirical_decay(problem, variant, q=2, h=1e-3, horizon=8.0), 1e-8, msg=variant)

    def test_matches_final_filtered_mean(self) -> None:
        problem = make_linear_oscillator(-1.0, math.pi)
        trace = run_filter(problem, discretize_iwp(IwpSpec(q=2, d=2), 0.1), "kf", n_steps=30)
        assert_allclose(empirical_decay(problem, "kf", q=2, h=0.1, horizon=3.0), np.linalg.norm(trace.filt_means[-1]))
