import contextlib
import io
import json
import os
import tempfile
import warnings
from unittest import TestCase, mock

import pandas as pd

from ode_filters import SingularInnovationError
from ode_filters.cli import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main


def _run(*argv: str) -> tuple[int, str, str]:
    stdout, stderr = io.StringIO(), io.StringIO()
    with contextlib.redirect_stdout(stdout), contextlib.redirect_stderr(stderr), warnings.catch_warnings():
        warnings.simplefilter("ignore")
        code = main(list(argv))
    return code, stdout.getvalue(), stderr.getvalue()


class TestCli(TestCase):
    def setUp(self) -> None:
        self._tmp = tempfile.TemporaryDirectory()
        self.tmp = self._tmp.name

    def tearDown(self) -> None:
        self._tmp.cleanup()

    def test_solve_logistic(self) -> None:
        code, out, _ = _run("solve", "--problem", "logistic", "--variant", "ekf", "--q", "2", "--h", "0.01")
        self.assertEqual(code, EXIT_OK)
        lines = out.splitlines()
        self.assertEqual(lines[0], "t,mean_1,std_1,residual_norm,chi2")
        self.assertEqual(len(lines), 252)

    def test_solve_is_byte_identical(self) -> None:
        paths = [os.path.join(self.tmp, f"solve_{i}.csv") for i in range(2)]
        for path in paths:
            self.assertEqual(_run("solve", "--h", "0.05", "--seed", "1", "--out", path)[0], EXIT_OK)
        with open(paths[0], "rb") as first, open(paths[1], "rb") as second:
            self.assertEqual(first.read(), second.read())

    def test_usage_errors(self) -> None:
        for argv in (
                ("solve", "--variant", "rk4"),
                ("solve", "--h", "0"),
                ("benchmark", "--variant"),
                ("solve", "--particles", "many"),
                ("integrate",),
        ):
            code, _, err = _run(*argv)
            self.assertEqual(code, EXIT_USAGE, msg=str(argv))
            self.assertIn("usage", err)

    def test_help(self) -> None:
        self.assertEqual(_run("solve", "--help")[0], EXIT_OK)

    def test_init_mode_needs_affine_problem(self) -> None:
        code, _, err = _run("solve", "--problem", "fitzhugh", "--variant", "ek0", "--h", "0.1", "--init-mode", "affine")
        self.assertEqual(code, EXIT_USAGE)
        self.assertIn("affine", err)

    def test_solver_failure(self) -> None:
        failure = SingularInnovationError(step=3, variant="ek0")
        with mock.patch("ode_filters.harness.run_filter", side_effect=failure):
            code, _, err = _run("solve", "--problem", "logistic", "--variant", "sch", "--h", "0.1")
        self.assertEqual(code, EXIT_FAILURE)
        self.assertIn("solver failure", err)
        self.assertIn("step=3", err)

    def test_benchmark_header_and_determinism(self) -> None:
        argv = ("benchmark", "--problem", "logistic", "--variant", "sch", "ekf", "--q", "2", "--h", "0.1", "0.05")
        frames = []
        for i in range(2):
            path = os.path.join(self.tmp, f"bench_{i}.csv")
            self.assertEqual(_run(*argv, "--out", path)[0], EXIT_OK)
            with open(path) as fh:
                self.assertEqual(fh.readline().strip(), "variant,q,h,rmse,chi2_bar,sigma2_hat,runtime_ns")
            frames.append(pd.read_csv(path).drop(columns="runtime_ns"))
        self.assertEqual(len(frames[0]), 4)
        self.assertTrue(frames[0].equals(frames[1]))

    def test_pf_smoke(self) -> None:
        path = os.path.join(self.tmp, "pf.csv")
        code, _, _ = _run("pf", "--particles", "2", "--seed", "0", "--out", path)
        self.assertEqual(code, EXIT_OK)
        with open(path) as fh:
            self.assertEqual(fh.readline().strip(), "h,kappa,q,mean_estimate")
        with open(os.path.join(self.tmp, "pf_kde.csv")) as fh:
            self.assertEqual(fh.readline().strip(), "t,y,density")

    def test_pf_to_stdout_skips_density(self) -> None:
        code, out, _ = _run("pf", "--particles", "20", "--kappa", "1")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(out.splitlines()), 2)

    def test_stability_single_point(self) -> None:
        code, out, _ = _run("stability", "--lambda1", "-1", "--lambda2", "2", "--q", "2", "--h", "0.1")
        self.assertEqual(code, EXIT_OK)
        lines = out.splitlines()
        self.assertEqual(lines[0], "lambda1,lambda2,q,h,spectral_radius,certified")
        self.assertEqual(len(lines), 2)
        self.assertTrue(lines[1].endswith(",true"))

    def test_config_file_and_flag_precedence(self) -> None:
        config = os.path.join(self.tmp, "config.json")
        with open(config, "w") as fh:
            json.dump({"problem": "linear", "variants": ["kf"], "h": [0.5], "q": [3]}, fh)
        code, out, _ = _run("solve", "--config", config, "--h", "0.1")
        self.assertEqual(code, EXIT_OK)
        self.assertEqual(len(out.splitlines()), 102)
        self.assertTrue(out.startswith("t,mean_1,mean_2,"))

    def test_bad_config_file(self) -> None:
        config = os.path.join(self.tmp, "config.json")
        with open(config, "w") as fh:
            json.dump({"step": 0.1}, fh)
        self.assertEqual(_run("solve", "--config", config)[0], EXIT_USAGE)
