"""
Particle filter ODE solvers

Particles are proposed from one of two locally linearized Gaussian importance
densities and re-weighted by p(z | x_new) p(x_new | x_prev) / q(x_new | x_prev)
with the measurement model z = C_dot X - f(C X, t) + N(0, R). Weights are kept
in the log domain throughout, since R is typically tiny.
"""
from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass
from enum import Enum
from functools import lru_cache

import numpy as np
import scipy.signal
import scipy.special
import scipy.stats

from ._linalg import gaussian_logpdf, jittered_cholesky, psd_sqrt, symmetrize
from .exceptions import (
    ConfigurationError,
    DegenerateSampleError,
    OdeFilterError,
    PseudoDensityWarning,
    WeightCollapseError,
)
from .priors import DiscretePrior, InitMode, IwpSpec, initial_belief
from .problems import OdeProblem, evaluate_batch

_LOG_2PI = np.log(2.0 * np.pi)


class ProposalTag(str, Enum):
    EK0 = "ek0"
    EKF = "ekf"


PF_VARIANTS: dict[str, ProposalTag] = {
    "pf1": ProposalTag.EK0,
    "pf2": ProposalTag.EKF,
}


@dataclass(frozen=True, eq=False)
class ProposalKind:
    """
    Importance density plus the measurement covariance it is built for

    Args:
        tag: EK0 (H = C_dot) or EKF (H = C_dot - J_f C) linearization
        R: d x d positive definite measurement covariance
    """

    tag: ProposalTag
    R: np.ndarray

    def __post_init__(self):
        tag = self.tag
        if isinstance(tag, str) and tag.lower() in PF_VARIANTS:
            tag = PF_VARIANTS[tag.lower()]
        try:
            tag = ProposalTag(tag)
        except ValueError:
            raise ConfigurationError(
                msg=f"unknown proposal '{self.tag}', expected one of "
                    f"{[t.value for t in ProposalTag] + sorted(PF_VARIANTS)}"
            ) from None
        R = np.atleast_2d(np.asarray(self.R, dtype=float))
        try:
            chol = np.linalg.cholesky(symmetrize(R))
        except np.linalg.LinAlgError:
            raise ConfigurationError(
                msg="particle proposals need a positive definite R (the likelihood ratio is unbounded at R = 0)"
            ) from None
        object.__setattr__(self, "tag", tag)
        object.__setattr__(self, "R", R)
        object.__setattr__(self, "R_chol", chol)


@dataclass(frozen=True, eq=False)
class ParticleEnsemble:
    """ J weighted particles; `weights` are normalized and `log_weights` is their log """

    particles: np.ndarray
    weights: np.ndarray
    log_weights: np.ndarray

    @classmethod
    def from_log_weights(cls, particles: np.ndarray, log_weights: np.ndarray) -> ParticleEnsemble:
        log_weights = np.where(np.isfinite(log_weights), log_weights, -np.inf)
        normalized = log_weights - scipy.special.logsumexp(log_weights)
        weights = np.exp(normalized)
        weights /= weights.sum()
        return cls(particles=particles, weights=weights, log_weights=normalized)

    @classmethod
    def uniform(cls, particles: np.ndarray) -> ParticleEnsemble:
        J = particles.shape[0]
        return cls(
            particles=particles,
            weights=np.full(J, 1.0 / J),
            log_weights=np.full(J, -np.log(J)),
        )

    @property
    def size(self) -> int:
        return self.particles.shape[0]

    @property
    def ess(self) -> float:
        return float(1.0 / np.sum(self.weights ** 2))

    def mean(self, projection: np.ndarray | None = None) -> np.ndarray:
        states = self.particles if projection is None else self.particles @ projection.T
        return self.weights @ states


@lru_cache(maxsize=16)
def _transition_factor(prior: DiscretePrior) -> tuple[np.ndarray, np.ndarray, bool]:
    """
    Factor of the transition covariance Q

    Returns:
        (basis, scales, full_rank): Q = basis diag(scales) basis^T restricted to its range
    """
    try:
        return np.linalg.cholesky(prior.Q), np.ones(0), True
    except np.linalg.LinAlgError:
        pass
    w, v = np.linalg.eigh(symmetrize(prior.Q))
    keep = w > 1e-12 * max(float(np.max(w)), 0.0)
    return v[:, keep], w[keep], False


def _transition_logpdf(x_new: np.ndarray, x_prev: np.ndarray, prior: DiscretePrior) -> np.ndarray:
    mean = x_prev @ prior.A.T + prior.xi
    factor, scales, full_rank = _transition_factor(prior)
    if full_rank:
        return gaussian_logpdf(x_new, mean, factor)

    warnings.warn(
        "transition covariance is singular, using the density restricted to its range",
        PseudoDensityWarning,
        stacklevel=3
    )
    coords = (x_new - mean) @ factor
    return -0.5 * (np.sum(coords ** 2 / scales, axis=-1) + np.sum(np.log(scales)) + scales.size * _LOG_2PI)


def propose_batch(
        x_prev: np.ndarray,
        prior: DiscretePrior,
        problem: OdeProblem,
        t: float,
        kind: ProposalKind,
        rng: np.random.Generator
) -> tuple[np.ndarray, np.ndarray]:
    """
    Draw one proposal per particle

    The proposal is the Kalman update of N(A x + xi, Q) on z = 0 with the
    measurement linearized at A x + xi.

    Args:
        x_prev: (J, m) previous particles

    Returns:
        (samples (J, m), proposal log-densities (J,))

    Raises:
        ConditioningError: if a proposal covariance cannot be factorized
    """
    x_prev = np.atleast_2d(x_prev)
    J, m = x_prev.shape
    C, Cdot, Q = prior.C, prior.Cdot, prior.Q
    R = kind.R

    mu0 = x_prev @ prior.A.T + prior.xi
    y = mu0 @ C.T
    z_hat = mu0 @ Cdot.T - evaluate_batch(problem.f, y, t)
    eye = np.eye(m)
    noise = rng.standard_normal((J, m))

    match kind.tag:
        case ProposalTag.EK0:
            S = symmetrize(Cdot @ Q @ Cdot.T + R)
            K = np.linalg.solve(S, Cdot @ Q).T
            I_KH = eye - K @ Cdot
            cov = symmetrize(I_KH @ Q @ I_KH.T + K @ R @ K.T)
            mean = mu0 - z_hat @ K.T
            chol = jittered_cholesky(cov)
            samples = mean + noise @ chol.T
        case ProposalTag.EKF:
            if problem.jacobian is None:
                raise ConfigurationError(msg=f"EKF proposal needs the Jacobian of '{problem.name}'")
            jac = np.asarray(problem.jacobian(y, t)).reshape(J, problem.d, problem.d)
            H = Cdot - jac @ C
            S = symmetrize(H @ Q @ np.swapaxes(H, -1, -2) + R)
            K = np.swapaxes(np.linalg.solve(S, H @ Q), -1, -2)
            I_KH = eye - K @ H
            cov = symmetrize(I_KH @ Q @ np.swapaxes(I_KH, -1, -2) + K @ R @ np.swapaxes(K, -1, -2))
            mean = mu0 - (K @ z_hat[..., None])[..., 0]
            chol = jittered_cholesky(cov)
            samples = mean + (chol @ noise[..., None])[..., 0]

    return samples, gaussian_logpdf(samples, mean, chol)


def propose(
        x_prev: np.ndarray,
        prior: DiscretePrior,
        problem: OdeProblem,
        t: float,
        kind: ProposalKind,
        rng: np.random.Generator
) -> tuple[np.ndarray, float]:
    """ Single-particle version of `propose_batch` """
    samples, logpdf = propose_batch(np.asarray(x_prev)[None], prior, problem, t, kind, rng)
    return samples[0], float(logpdf[0])


def log_weight_increment(
        x_new: np.ndarray,
        x_prev: np.ndarray,
        proposal_logpdf: np.ndarray | float,
        prior: DiscretePrior,
        problem: OdeProblem,
        t: float,
        R: np.ndarray
) -> np.ndarray | float:
    """
    log p(z = 0 | x_new) + log p(x_new | x_prev) - log q(x_new | x_prev)

    Works on single particles or (J, m) stacks.
    """
    single = np.ndim(x_new) == 1
    x_new, x_prev = np.atleast_2d(x_new), np.atleast_2d(x_prev)
    R_chol = np.linalg.cholesky(symmetrize(np.atleast_2d(R)))

    measurement = x_new @ prior.Cdot.T - evaluate_batch(problem.f, x_new @ prior.C.T, t)
    log_lik = gaussian_logpdf(measurement, np.zeros_like(measurement), R_chol)
    increment = log_lik + _transition_logpdf(x_new, x_prev, prior) - proposal_logpdf
    return float(increment[0]) if single else increment


def resample(ensemble: ParticleEnsemble, threshold: float, rng: np.random.Generator) -> ParticleEnsemble:
    """
    Systematic resampling when the effective sample size drops below threshold * J

    Raises:
        ConfigurationError: if threshold is not in (0, 1]
    """
    if not 0.0 < threshold <= 1.0:
        raise ConfigurationError(msg=f"resampling threshold must lie in (0, 1], got {threshold}")
    J = ensemble.size
    if ensemble.ess >= threshold * J:
        return ensemble

    cumulative = np.cumsum(ensemble.weights)
    cumulative[-1] = 1.0
    positions = (np.arange(J) + rng.uniform()) / J
    indices = np.minimum(np.searchsorted(cumulative, positions, side="right"), J - 1)
    return ParticleEnsemble.uniform(ensemble.particles[indices])


@dataclass(frozen=True, eq=False)
class PfRun:
    """
    Result of a particle filter run

    `means` holds the weighted X1 mean at every grid time; `ensembles` holds the
    weighted (pre-resampling) ensembles at `snapshot_times`.
    """

    times: np.ndarray
    means: np.ndarray
    ess: np.ndarray
    resampled: np.ndarray
    snapshot_times: np.ndarray
    ensembles: list[ParticleEnsemble]
    kind: ProposalKind
    kappa: float
    q: int
    h: float

    @property
    def final(self) -> ParticleEnsemble:
        return self.ensembles[-1]

    def ensemble_at(self, t: float) -> ParticleEnsemble:
        index = int(np.argmin(np.abs(self.snapshot_times - t)))
        return self.ensembles[index]


def run_pf(
        problem: OdeProblem,
        prior: DiscretePrior,
        kind: ProposalKind | ProposalTag | str,
        n_particles: int,
        n_steps: int | None = None,
        kappa: float = 1.0,
        rng: np.random.Generator | None = None,
        threshold: float = 0.5,
        stride: int = 1,
        init_mode: InitMode | str = InitMode.EXACT_2
) -> PfRun:
    """
    Run a particle filter solver with R = kappa h^(2q+1) I

    Args:
        problem: ODE problem
        prior: discretized prior
        kind: proposal (its R is replaced by kappa h^(2q+1) I)
        n_particles: number of particles J
        n_steps: number of steps (default: round((T - t0) / h))
        kappa: measurement variance scale
        rng: random generator (default: numpy.random.default_rng())
        threshold: resampling ESS threshold as a fraction of J
        stride: keep every `stride`-th ensemble (the last one is always kept)
        init_mode: initial belief the first particles are drawn from

    Raises:
        ConfigurationError: for J < 2, kappa <= 0 or an invalid stride
        WeightCollapseError: if every log-weight is non-finite at some step
    """
    if n_particles < 2:
        raise ConfigurationError(msg=f"need at least 2 particles, got {n_particles}")
    if not kappa > 0.0:
        raise ConfigurationError(msg=f"kappa must be positive, got {kappa}")
    if stride < 1:
        raise ConfigurationError(msg=f"stride must be at least 1, got {stride}")
    rng = np.random.default_rng() if rng is None else rng

    d, h = problem.d, prior.h
    R = kappa * h ** (2 * prior.q + 1) * np.eye(d)
    if isinstance(kind, ProposalKind):
        kind = dataclasses.replace(kind, R=R)
    else:
        kind = ProposalKind(tag=kind, R=R)
    if n_steps is None:
        n_steps = int(round((problem.t_end - problem.t0) / h))
    if n_steps < 1:
        raise ConfigurationError(msg=f"need at least one step, got N={n_steps}")

    belief = initial_belief(IwpSpec(q=prior.q, d=d, sigma2=prior.sigma2), problem, init_mode)
    particles = belief.mean + rng.standard_normal((n_particles, prior.dim)) @ psd_sqrt(belief.cov).T
    ensemble = ParticleEnsemble.uniform(particles)

    times = problem.t0 + h * np.arange(1, n_steps + 1)
    means = np.empty((n_steps, d))
    ess = np.empty(n_steps)
    resampled = np.zeros(n_steps, dtype=bool)
    snapshot_times, ensembles = [], []

    for n, t in enumerate(times):
        step = n + 1
        try:
            samples, log_q = propose_batch(ensemble.particles, prior, problem, t, kind, rng)
            increment = log_weight_increment(samples, ensemble.particles, log_q, prior, problem, t, R)
        except OdeFilterError as err:
            err.step = step
            err.variant = kind.tag.value
            raise
        log_weights = ensemble.log_weights + increment
        if not np.any(np.isfinite(log_weights)):
            raise WeightCollapseError(step=step)

        ensemble = ParticleEnsemble.from_log_weights(samples, log_weights)
        means[n] = ensemble.mean(prior.C)
        ess[n] = ensemble.ess
        if step % stride == 0 or step == n_steps:
            snapshot_times.append(t)
            ensembles.append(ensemble)

        resampled_ensemble = resample(ensemble, threshold, rng)
        resampled[n] = resampled_ensemble is not ensemble
        ensemble = resampled_ensemble

    return PfRun(
        times=times,
        means=means,
        ess=ess,
        resampled=resampled,
        snapshot_times=np.asarray(snapshot_times),
        ensembles=ensembles,
        kind=kind,
        kappa=kappa,
        q=prior.q,
        h=h,
    )


def kde_estimate(
        samples: np.ndarray,
        bandwidth: str | float = "silverman",
        weights: np.ndarray | None = None,
        n_grid: int = 512
) -> tuple[np.ndarray, np.ndarray]:
    """
    Gaussian kernel density estimate on a grid spanning [min - 3 std, max + 3 std]

    Returns:
        (grid, density)

    Raises:
        DegenerateSampleError: for fewer than 2 samples or zero spread
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    if samples.size < 2:
        raise DegenerateSampleError(msg=f"density estimate needs at least 2 samples, got {samples.size}")
    if weights is not None:
        weights = np.asarray(weights, dtype=float)
        mean = weights @ samples / weights.sum()
        std = float(np.sqrt(weights @ (samples - mean) ** 2 / weights.sum()))
    else:
        std = float(np.std(samples))
    if not std > 0.0:
        raise DegenerateSampleError(msg="density estimate of samples with zero variance")

    kde = scipy.stats.gaussian_kde(samples, bw_method=bandwidth, weights=weights)
    grid = np.linspace(samples.min() - 3.0 * std, samples.max() + 3.0 * std, n_grid)
    return grid, kde(grid)


def count_local_maxima(density: np.ndarray, rel_height: float = 0.01) -> int:
    """ Number of peaks of a gridded density that reach rel_height times its maximum """
    density = np.asarray(density, dtype=float)
    peaks, _ = scipy.signal.find_peaks(density, height=rel_height * float(np.max(density)))
    return int(peaks.size)


def sign_split(samples: np.ndarray, weights: np.ndarray | None = None) -> tuple[float, float]:
    """
    Returns:
        (mass below zero, mass above zero)
    """
    samples = np.asarray(samples, dtype=float).reshape(-1)
    weights = np.full(samples.size, 1.0 / samples.size) if weights is None else np.asarray(weights) / np.sum(weights)
    return float(weights[samples < 0.0].sum()), float(weights[samples > 0.0].sum())
