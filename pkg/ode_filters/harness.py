"""
Experiment harness: single solves, accuracy benchmarks, particle runs and
stability sweeps, each returned as a pandas DataFrame
"""
from __future__ import annotations

import dataclasses
import itertools
import json
import logging
import time
import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import TYPE_CHECKING

import numpy as np
import pandas as pd

from .calibration import apply_calibration, quasi_ml_calibrate
from .diagnostics import certify_stability, compute_metrics
from .exceptions import (
    ConfigurationError,
    DegenerateSampleError,
    DivergenceWarning,
    NoFixedPointError,
    OdeFilterError,
    SolverParameterWarning,
    WeightCollapseError,
    WeightCollapseWarning,
)
from .gaussian import UpdateVariant, run_filter
from .parameters import SolverParameterValidation
from .particle import PF_VARIANTS, kde_estimate, run_pf
from .priors import InitMode, IwpSpec, discretize_iwp
from .problems import oscillator_matrix

if TYPE_CHECKING:
    from collections.abc import Callable, Iterable

    from .problems import OdeProblem

logger = logging.getLogger(__name__)

COMMANDS = ("solve", "benchmark", "pf", "stability")

BENCHMARK_STEPS = tuple(float(h) for h in np.linspace(1e-3, 1e-1, 10))
STABILITY_GRID = tuple(float(x) for x in np.linspace(-2.0, 2.0, 5))


def command_defaults(command: str, problem: str | None = None) -> dict:
    """ Default configuration values of a command, some depending on the problem """
    match command:
        case "solve":
            return {"problem": problem or "logistic", "variants": ("ekf",), "q": (2,), "h": (0.01,)}
        case "benchmark":
            problem = problem or "linear"
            variants = ("sch", "ker", "kf", "ekf", "ukf") if problem == "linear" else ("sch", "ker", "ekf", "ukf")
            q = tuple(range(1, 7)) if problem == "linear" else tuple(range(1, 5))
            return {"problem": problem, "variants": variants, "q": q, "h": BENCHMARK_STEPS}
        case "pf":
            return {
                "problem": problem or "bernoulli",
                "variants": ("pf2",),
                "q": (1,),
                "h": (0.1,),
                "kappa": (1.0, 1e-10),
            }
        case "stability":
            return {"problem": "linear", "q": (1, 2, 3, 4), "h": (0.01, 0.1, 1.0)}
    raise ConfigurationError(msg=f"unknown command '{command}', expected one of {COMMANDS}")


@dataclass(frozen=True)
class ExperimentConfig:
    problem: str = "logistic"
    variants: tuple[str, ...] = ("ekf",)
    q: tuple[int, ...] = (2,)
    h: tuple[float, ...] = (0.01,)
    t_end: float | None = None
    r: float = 0.0
    kappa: tuple[float, ...] = (1.0,)
    particles: int = 1000
    seed: int = 0
    out: str | None = None
    reps: int = 1
    workers: int = 1
    init_mode: str = "exact-2"
    calibrate: bool = True
    lambda1: tuple[float, ...] = STABILITY_GRID
    lambda2: tuple[float, ...] = STABILITY_GRID
    kde_h: float = 0.1
    kde_times: tuple[float, ...] = (1.0, 3.0, 5.0)
    threshold: float = 0.5

    @classmethod
    def from_sources(cls, command: str, config_path: str | Path | None = None, **flags) -> ExperimentConfig:
        """
        Merge command defaults, an optional JSON file and flags; flags win

        Args:
            command: one of solve, benchmark, pf, stability
            config_path: JSON object whose keys are field names
            flags: field values, None meaning "not given"
        """
        names = {f.name for f in dataclasses.fields(cls)}
        overrides = {}
        if config_path is not None:
            try:
                with open(config_path) as fh:
                    loaded = json.load(fh)
            except (OSError, json.JSONDecodeError) as err:
                raise ConfigurationError(msg=f"cannot read config file '{config_path}': {err}") from err
            if not isinstance(loaded, dict):
                raise ConfigurationError(msg=f"config file '{config_path}' must hold a JSON object")
            overrides.update(loaded)
        overrides.update({key: value for key, value in flags.items() if value is not None})

        unknown = set(overrides) - names
        if unknown:
            raise ConfigurationError(msg=f"unknown configuration keys: {sorted(unknown)}")

        values = command_defaults(command, overrides.get("problem"))
        values.update(overrides)
        for key in ("variants", "q", "h", "kappa", "lambda1", "lambda2", "kde_times"):
            if key in values:
                values[key] = tuple(values[key]) if isinstance(values[key], list | tuple) else (values[key],)
        return cls(**values)

    def to_params(self) -> dict:
        return dataclasses.asdict(self)


def _kf_capable(problem: OdeProblem, variant: str) -> bool:
    return problem.affine is not None or UpdateVariant.parse(variant).tag.value != "kf"


class ExperimentHarness(SolverParameterValidation):
    """ Runs the solver experiments described by an ExperimentConfig """

    def __init__(self, config: ExperimentConfig):
        super().__init__()
        self.config = config

    def validate(self, command: str):
        params = self.config.to_params()
        if command == "stability":
            params.pop("variants")
        self.validate_params(params)
        if command == "stability":
            return

        problem = self._problem()
        init_mode = InitMode(self.config.init_mode)
        if init_mode is InitMode.EXACT_3 and problem.jacobian is None:
            raise ConfigurationError(msg=f"init mode 'exact-3' needs the Jacobian of '{problem.name}'")
        if init_mode is InitMode.AFFINE and problem.affine is None:
            raise ConfigurationError(msg=f"init mode 'affine' needs an affine problem, got '{problem.name}'")

        if command in ("solve", "benchmark"):
            for variant in self.config.variants:
                if variant.lower() in PF_VARIANTS:
                    raise ConfigurationError(msg=f"particle variant '{variant}' belongs to the pf command")
                if not _kf_capable(problem, variant):
                    raise ConfigurationError(msg=f"variant '{variant}' needs an affine problem, got '{problem.name}'")
                if variant.lower() == "ekf" and problem.jacobian is None:
                    raise ConfigurationError(msg=f"variant 'ekf' needs the Jacobian of '{problem.name}'")
        if command == "solve" and (len(self.config.variants) > 1 or len(self.config.q) > 1 or len(self.config.h) > 1):
            raise ConfigurationError(msg="solve takes exactly one variant, q and h")
        if command == "pf":
            if len(self.config.variants) != 1 or self.config.variants[0].lower() not in PF_VARIANTS:
                raise ConfigurationError(msg=f"pf takes exactly one of {sorted(PF_VARIANTS)}")

    def _problem(self, t_end: float | None = None) -> OdeProblem:
        t_end = self.config.t_end if t_end is None else t_end
        kwargs = {} if t_end is None else {"t_end": t_end}
        return self.make_problem(self.config.problem, **kwargs)

    def _variant(self, name: str, d: int) -> UpdateVariant:
        return UpdateVariant(tag=name, R=self.config.r * np.eye(d))

    def _map(self, fn: Callable, jobs: Iterable) -> list:
        """ Run jobs on the worker pool, results ordered like the jobs """
        jobs = list(jobs)
        logger.info(f"running {len(jobs)} jobs on {self.config.workers} worker(s)")
        if self.config.workers == 1:
            return [fn(job) for job in jobs]
        with ThreadPoolExecutor(max_workers=self.config.workers) as pool:
            return list(pool.map(fn, jobs))

    @staticmethod
    def _create_dataframe(rows: list[dict], columns: list[str]) -> pd.DataFrame:
        """
        Create pandas DataFrame from a list of dicts

        Args:
            rows: list of dicts
            columns: column order, every row must hold these keys

        Returns:
            pandas DataFrame
        """
        df = pd.DataFrame(rows, columns=columns)
        cols = df.columns[df.dtypes.eq("object")]
        df[cols] = df[cols].astype(str)
        return df

    def _calibrated_run(self, problem: OdeProblem, variant: UpdateVariant, q: int, h: float):
        prior = discretize_iwp(IwpSpec(q=q, d=problem.d), h)
        trace = run_filter(problem, prior, variant, init_mode=self.config.init_mode)
        if self.config.calibrate and self.config.r == 0.0:
            result = quasi_ml_calibrate(trace)
            if result.degenerate:
                logger.warning(f"{variant.tag.value} q={q} h={h}: residuals vanish, covariances left unscaled")
            trace = apply_calibration(trace, result)
        return trace

    def solve(self) -> pd.DataFrame:
        """
        Single solve on the grid t0, t0 + h, ..., T

        Returns:
            DataFrame with columns t, mean_i, std_i, residual_norm, chi2 (one row per grid point)
        """
        self.validate("solve")
        problem = self._problem()
        variant = self._variant(self.config.variants[0], problem.d)
        logger.info(f"solving '{problem.name}' with {variant.tag.value}, q={self.config.q[0]}, h={self.config.h[0]}")

        trace = self._calibrated_run(problem, variant, self.config.q[0], self.config.h[0])
        df = trace.to_dataframe()
        if problem.reference is not None:
            df["chi2"] = np.concatenate([[0.0], compute_metrics(trace, problem.reference).per_step_chi2])
        else:
            df["chi2"] = np.nan
        return df

    def _benchmark_row(self, job: tuple[str, int, float]) -> tuple[dict, str | None]:
        name, q, h = job
        problem = self._problem()
        variant = self._variant(name, problem.d)
        row = {"variant": name, "q": q, "h": h}
        start = time.perf_counter_ns()
        try:
            trace = self._calibrated_run(problem, variant, q, h)
            metrics = compute_metrics(trace, problem.reference)
        except OdeFilterError as err:
            row.update(rmse=np.inf, chi2_bar=np.nan, sigma2_hat=np.nan, runtime_ns=time.perf_counter_ns() - start)
            return row, str(err)
        row.update(
            rmse=metrics.rmse if np.isfinite(metrics.rmse) else np.inf,
            chi2_bar=metrics.chi2_bar,
            sigma2_hat=np.nan if trace.sigma2_hat is None else trace.sigma2_hat,
            runtime_ns=time.perf_counter_ns() - start,
        )
        return row, None if np.isfinite(metrics.rmse) else "non-finite error"

    def benchmark(self) -> pd.DataFrame:
        """
        Accuracy sweep over (variant, q, h)

        Returns:
            DataFrame with columns variant, q, h, rmse, chi2_bar, sigma2_hat, runtime_ns
        """
        self.validate("benchmark")
        if self._problem().reference is None:
            raise ConfigurationError(msg=f"benchmark needs a reference solution for '{self.config.problem}'")
        jobs = itertools.product(self.config.variants, self.config.q, self.config.h)
        rows = []
        for row, failure in self._map(self._benchmark_row, jobs):
            if failure is not None:
                logger.warning(f"{row['variant']} q={row['q']} h={row['h']} diverged: {failure}")
                warnings.warn(
                    f"{row['variant']} at q={row['q']}, h={row['h']} diverged and is recorded as rmse=inf",
                    DivergenceWarning,
                    stacklevel=2
                )
            rows.append(row)
        return self._create_dataframe(rows, ["variant", "q", "h", "rmse", "chi2_bar", "sigma2_hat", "runtime_ns"])

    def _pf_run(self, kappa: float, q: int, h: float, seed: int, t_end: float | None = None):
        problem = self._problem(t_end)
        prior = discretize_iwp(IwpSpec(q=q, d=problem.d), h)
        return run_pf(
            problem,
            prior,
            self.config.variants[0].lower(),
            n_particles=self.config.particles,
            kappa=kappa,
            rng=np.random.default_rng(seed),
            threshold=self.config.threshold,
            init_mode=self.config.init_mode,
        )

    def _pf_row(self, job: tuple[float, int, float]) -> tuple[dict, str | None]:
        kappa, q, h = job
        estimates = []
        for rep in range(self.config.reps):
            try:
                estimates.append(self._pf_run(kappa, q, h, self.config.seed + rep).means[-1])
            except WeightCollapseError as err:
                return {"h": h, "kappa": kappa, "q": q, "mean_estimate": np.nan}, str(err)
        estimate = np.mean(estimates, axis=0)
        row = {"h": h, "kappa": kappa, "q": q}
        if estimate.size == 1:
            row["mean_estimate"] = float(estimate[0])
        else:
            row.update({f"mean_estimate_{i + 1}": float(v) for i, v in enumerate(estimate)})
        return row, None

    def pf(self, with_kde: bool = True) -> tuple[pd.DataFrame, pd.DataFrame | None]:
        """
        Particle filter mean estimates at T over (kappa, q, h), averaged over
        `reps` seeds, plus density estimates of X1 at `kde_times`

        Returns:
            (means DataFrame with columns h, kappa, q, mean_estimate; KDE DataFrame with columns t, y, density)
        """
        self.validate("pf")
        jobs = itertools.product(self.config.kappa, self.config.q, self.config.h)
        rows = []
        for row, failure in self._map(self._pf_row, jobs):
            if failure is not None:
                logger.warning(f"pf kappa={row['kappa']} q={row['q']} h={row['h']} collapsed: {failure}")
                warnings.warn(
                    f"particle weights collapsed at kappa={row['kappa']}, q={row['q']}, h={row['h']}, recorded as nan",
                    WeightCollapseWarning,
                    stacklevel=2
                )
            rows.append(row)
        columns = list(dict.fromkeys(key for row in rows for key in row))
        means = self._create_dataframe(rows, columns)
        return means, self.kde() if with_kde else None

    def kde(self) -> pd.DataFrame:
        """ Density estimates of the first solution component at `kde_times` """
        problem = self._problem()
        t_end = max(self.config.kde_times)
        if t_end > problem.t_end:
            t_end = problem.t_end
        times = [t for t in self.config.kde_times if t <= problem.t_end]
        for t in set(self.config.kde_times) - set(times):
            warnings.warn(f"KDE time {t} lies beyond T={problem.t_end}, skipped", SolverParameterWarning, stacklevel=2)

        try:
            run = self._pf_run(self.config.kappa[0], self.config.q[0], self.config.kde_h, self.config.seed, t_end)
        except WeightCollapseError as err:
            warnings.warn(f"KDE run collapsed: {err}", WeightCollapseWarning, stacklevel=2)
            return self._create_dataframe([], ["t", "y", "density"])

        frames = []
        for t in times:
            ensemble = run.ensemble_at(t)
            try:
                grid, density = kde_estimate(ensemble.particles[:, 0], weights=ensemble.weights)
            except DegenerateSampleError as err:
                logger.warning(f"no density estimate at t={t}: {err}")
                continue
            frames.append(pd.DataFrame({"t": t, "y": grid, "density": density}))
        if not frames:
            return self._create_dataframe([], ["t", "y", "density"])
        return pd.concat(frames, ignore_index=True)

    def _stability_row(self, job: tuple[float, float, int, float]) -> dict:
        lambda1, lambda2, q, h = job
        row = {"lambda1": lambda1, "lambda2": lambda2, "q": q, "h": h}
        try:
            certificate = certify_stability(oscillator_matrix(lambda1, lambda2), IwpSpec(q=q, d=2), h)
        except NoFixedPointError as err:
            row.update(spectral_radius=err.certificate.radius, certified="unknown")
            return row
        row.update(spectral_radius=certificate.radius, certified="true" if certificate.certified else "false")
        return row

    def stability(self) -> pd.DataFrame:
        """
        Closed-loop spectral radius of the steady-state exact Kalman filter for
        the oscillator test equation over (lambda1, lambda2, q, h); the origin is skipped

        Returns:
            DataFrame with columns lambda1, lambda2, q, h, spectral_radius, certified
        """
        self.validate("stability")
        jobs = []
        for lambda1, lambda2, q, h in itertools.product(
                self.config.lambda1, self.config.lambda2, self.config.q, self.config.h
        ):
            if lambda1 == 0.0 and lambda2 == 0.0:
                continue
            jobs.append((lambda1, lambda2, q, h))
        if any(l1 == 0.0 and l2 == 0.0 for l1, l2 in itertools.product(self.config.lambda1, self.config.lambda2)):
            warnings.warn(
                "(lambda1, lambda2) = (0, 0) gives a singular test matrix and is excluded",
                SolverParameterWarning,
                stacklevel=2
            )
        rows = self._map(self._stability_row, jobs)
        return self._create_dataframe(rows, ["lambda1", "lambda2", "q", "h", "spectral_radius", "certified"])


def write_csv(df: pd.DataFrame, path: str | Path | None = None) -> str | None:
    """ Write with 17 significant digits and \\n line endings; returns the text when path is None """
    return df.to_csv(path, float_format="%.17g", lineterminator="\n", index=False)


def kde_path(path: str | Path) -> Path:
    path = Path(path)
    return path.with_name(f"{path.stem}_kde{path.suffix or '.csv'}")
