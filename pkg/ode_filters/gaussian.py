"""
Gaussian filtering ODE solvers

Every solver alternates the prior prediction with an update on the
pseudo-measurement Z_n = C_dot X_n - f(C X_n, t_n), observed as z_n = 0.
The update variants differ only in how they approximate the moments of Z_n.
"""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from enum import Enum
from functools import lru_cache
from typing import NamedTuple

import numpy as np
import pandas as pd

from ._linalg import innovation_log_density, jittered_cholesky, solve_spd, symmetrize
from .exceptions import ConfigurationError, OdeFilterError, SingularInnovationError
from .priors import DiscretePrior, GaussBelief, InitMode, IwpSpec, block_projection, initial_belief
from .problems import AffineField, OdeProblem, evaluate_batch


class VariantTag(str, Enum):
    EK0 = "ek0"
    EKF = "ekf"
    UKF = "ukf"
    KER = "ker"
    KF = "kf"

    @classmethod
    def parse(cls, name: str | VariantTag) -> VariantTag:
        if isinstance(name, VariantTag):
            return name
        key = str(name).lower()
        key = VARIANT_ALIASES.get(key, key)
        try:
            return cls(key)
        except ValueError:
            raise ConfigurationError(
                msg=f"unknown update variant '{name}', expected one of "
                    f"{[tag.value for tag in cls] + sorted(VARIANT_ALIASES)}"
            ) from None


VARIANT_ALIASES: dict[str, str] = {
    "sch": "ek0",
    "affine": "kf",
}


@dataclass(frozen=True)
class SigmaPointRule:
    """
    Symmetric sigma-point rule with 2m + 1 nodes

    With the defaults (alpha=1, beta=0, kappa=0) the centre node has weight
    kappa / (m + kappa) = 0 and the rule is exact for polynomials up to degree 3.
    """

    alpha: float = 1.0
    beta: float = 0.0
    kappa: float = 0.0

    def weights(self, m: int) -> tuple[np.ndarray, np.ndarray, float]:
        """
        Returns:
            (mean weights, covariance weights, spread) where nodes sit at mean +- sqrt(spread) L e_i
        """
        lam = self.alpha ** 2 * (m + self.kappa) - m
        spread = m + lam
        if spread <= 0.0:
            raise ConfigurationError(msg=f"sigma-point spread m + lambda must be positive, got {spread}")
        wm = np.full(2 * m + 1, 0.5 / spread)
        wm[0] = lam / spread
        wc = wm.copy()
        wc[0] += 1.0 - self.alpha ** 2 + self.beta
        return wm, wc, spread

    def points(self, belief: GaussBelief) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """ Nodes of shape (2m+1, m) with their mean and covariance weights """
        m = belief.mean.size
        wm, wc, spread = self.weights(m)
        offsets = np.sqrt(spread) * jittered_cholesky(belief.cov).T
        nodes = np.concatenate([belief.mean[None], belief.mean + offsets, belief.mean - offsets])
        return nodes, wm, wc


@dataclass(frozen=True, eq=False)
class UpdateVariant:
    """
    Update rule plus its measurement covariance

    Args:
        tag: which approximation of the measurement moments to use
        R: d x d measurement covariance (default: zero)
        rule: sigma-point rule for UKF and KER
    """

    tag: VariantTag
    R: np.ndarray | None = None
    rule: SigmaPointRule = field(default_factory=SigmaPointRule)

    def __post_init__(self):
        object.__setattr__(self, "tag", VariantTag.parse(self.tag))
        if self.R is not None:
            R = np.atleast_2d(np.asarray(self.R, dtype=float))
            if R.shape[0] != R.shape[1] or not np.allclose(R, R.T):
                raise ConfigurationError(msg="measurement covariance R must be a symmetric matrix")
            if np.linalg.eigvalsh(R).min() < -1e-12 * max(np.trace(R), 1.0):
                raise ConfigurationError(msg="measurement covariance R must be positive semi-definite")
            object.__setattr__(self, "R", R)

    @classmethod
    def parse(cls, variant: UpdateVariant | VariantTag | str) -> UpdateVariant:
        if isinstance(variant, UpdateVariant):
            return variant
        return cls(tag=VariantTag.parse(variant))

    def measurement_cov(self, d: int) -> np.ndarray:
        if self.R is None:
            return np.zeros((d, d))
        if self.R.shape != (d, d):
            raise ConfigurationError(msg=f"R has shape {self.R.shape}, expected {(d, d)}")
        return self.R

    @property
    def metadata(self) -> dict:
        match self.tag:
            case VariantTag.UKF:
                return {"sigma_points": dataclasses.asdict(self.rule)}
            case VariantTag.KER:
                return {
                    "sigma_points": dataclasses.asdict(self.rule),
                    "quadrature": "sigma-point rule in place of kernel quadrature",
                    "cross_covariance": "dropped",
                }
        return {}

    def update(self, pred: GaussBelief, problem: OdeProblem, t: float, R: np.ndarray) -> Update:
        match self.tag:
            case VariantTag.EK0:
                return update_ek0(pred, problem, t, R)
            case VariantTag.EKF:
                return update_ekf(pred, problem, t, R)
            case VariantTag.UKF:
                return update_ukf(pred, problem, t, R, rule=self.rule)
            case VariantTag.KER:
                return update_ker(pred, problem, t, R, rule=self.rule)
            case VariantTag.KF:
                return update_affine_exact(pred, problem.affine, t, R)


class Update(NamedTuple):
    belief: GaussBelief
    residual: np.ndarray
    innovation_cov: np.ndarray


@lru_cache(maxsize=64)
def _selectors(d: int, m: int) -> tuple[np.ndarray, np.ndarray]:
    q = m // d - 1
    if q < 1 or (q + 1) * d != m:
        raise ConfigurationError(msg=f"state size {m} does not hold a derivative block for d={d}")
    return block_projection(0, d, q), block_projection(1, d, q)


def _measurement_cov(R: np.ndarray | None, d: int) -> np.ndarray:
    return np.zeros((d, d)) if R is None else np.atleast_2d(np.asarray(R, dtype=float))


def _gain(cross: np.ndarray, S: np.ndarray) -> np.ndarray:
    """ K = cross S^-1 through a Cholesky solve of S """
    S = symmetrize(S)
    trace = np.trace(S)
    if not np.all(np.isfinite(S)) or trace <= 0.0:
        raise SingularInnovationError()
    try:
        return solve_spd(S, cross.T).T
    except np.linalg.LinAlgError:
        raise SingularInnovationError() from None


def _linear_update(pred: GaussBelief, H: np.ndarray, residual: np.ndarray, R: np.ndarray) -> Update:
    """ Kalman update with a Joseph-form covariance """
    S = symmetrize(H @ pred.cov @ H.T + R)
    K = _gain(pred.cov @ H.T, S)
    mean = pred.mean + K @ residual
    I_KH = np.eye(pred.mean.size) - K @ H
    cov = symmetrize(I_KH @ pred.cov @ I_KH.T + K @ R @ K.T)
    return Update(GaussBelief(mean=mean, cov=cov), residual, S)


def predict(belief: GaussBelief, prior: DiscretePrior) -> GaussBelief:
    """ mu_P = A mu + xi, Sigma_P = A Sigma A^T + Q """
    return GaussBelief(
        mean=prior.A @ belief.mean + prior.xi,
        cov=symmetrize(prior.A @ belief.cov @ prior.A.T + prior.Q),
    )


def update_ek0(pred: GaussBelief, problem: OdeProblem, t: float, R: np.ndarray | None = None) -> Update:
    """
    Zeroth-order Taylor update: the vector field is treated as a constant
    at the predicted mean, so H = C_dot.
    """
    C, Cdot = _selectors(problem.d, pred.mean.size)
    z_hat = Cdot @ pred.mean - problem.f(C @ pred.mean, t)
    return _linear_update(pred, Cdot, -z_hat, _measurement_cov(R, problem.d))


def update_ekf(pred: GaussBelief, problem: OdeProblem, t: float, R: np.ndarray | None = None) -> Update:
    """
    First-order Taylor update with H = C_dot - J_f(C mu_P, t) C

    Raises:
        ConfigurationError: if the problem has no Jacobian
    """
    if problem.jacobian is None:
        raise ConfigurationError(msg=f"EKF update needs the Jacobian of '{problem.name}'")
    C, Cdot = _selectors(problem.d, pred.mean.size)
    y = C @ pred.mean
    z_hat = Cdot @ pred.mean - problem.f(y, t)
    H = Cdot - np.asarray(problem.jacobian(y, t)) @ C
    return _linear_update(pred, H, -z_hat, _measurement_cov(R, problem.d))


def update_ukf(
        pred: GaussBelief,
        problem: OdeProblem,
        t: float,
        R: np.ndarray | None = None,
        rule: SigmaPointRule | None = None
) -> Update:
    """
    Sigma-point update through the full measurement map x -> C_dot x - f(C x, t)

    Raises:
        ConditioningError: if the predictive covariance cannot be factorized
    """
    rule = rule or SigmaPointRule()
    C, Cdot = _selectors(problem.d, pred.mean.size)
    nodes, wm, wc = rule.points(pred)
    Z = nodes @ Cdot.T - evaluate_batch(problem.f, nodes @ C.T, t)

    z_hat = wm @ Z
    dZ = Z - z_hat
    dX = nodes - pred.mean
    S = symmetrize((wc * dZ.T) @ dZ + _measurement_cov(R, problem.d))
    K = _gain((wc * dX.T) @ dZ, S)

    residual = -z_hat
    mean = pred.mean + K @ residual
    cov = symmetrize(pred.cov - K @ S @ K.T)
    return Update(GaussBelief(mean=mean, cov=cov), residual, S)


def update_ker(
        pred: GaussBelief,
        problem: OdeProblem,
        t: float,
        R: np.ndarray | None = None,
        rule: SigmaPointRule | None = None
) -> Update:
    """
    Quadrature update that drops the cross-covariance of C_dot X and f(C X)

    The mean and variance of f are integrated with the sigma-point rule; the
    update is then linear in C_dot with V[f] added to the measurement noise.
    """
    rule = rule or SigmaPointRule()
    C, Cdot = _selectors(problem.d, pred.mean.size)
    nodes, wm, wc = rule.points(pred)
    F = evaluate_batch(problem.f, nodes @ C.T, t)

    f_mean = wm @ F
    dF = F - f_mean
    f_var = symmetrize((wc * dF.T) @ dF)
    residual = f_mean - Cdot @ pred.mean
    return _linear_update(pred, Cdot, residual, _measurement_cov(R, problem.d) + f_var)


def update_affine_exact(
        pred: GaussBelief,
        affine: AffineField,
        t: float,
        R: np.ndarray | None = None
) -> Update:
    """ Exact Kalman update for f(y, t) = Lambda(t) y + zeta(t) """
    Lam = np.atleast_2d(affine.Lambda(t))
    d = Lam.shape[0]
    C, Cdot = _selectors(d, pred.mean.size)
    H = Cdot - Lam @ C
    residual = np.asarray(affine.zeta(t), dtype=float) - H @ pred.mean
    return _linear_update(pred, H, residual, _measurement_cov(R, d))


@dataclass(frozen=True, eq=False)
class FilterTrace:
    """
    Per-step record of a Gaussian filter run on the grid t_n = t0 + n h, n = 1..N

    `quad_terms` holds r_n^T S_n^-1 r_n and `log_terms` the Gaussian
    log-density of z_n = 0 under the predicted measurement.
    """

    times: np.ndarray
    pred_means: np.ndarray
    pred_covs: np.ndarray
    filt_means: np.ndarray
    filt_covs: np.ndarray
    residuals: np.ndarray
    innovation_covs: np.ndarray
    quad_terms: np.ndarray
    log_terms: np.ndarray
    initial: GaussBelief
    t0: float
    h: float
    d: int
    q: int
    variant: str
    R: np.ndarray
    sigma2: float = 1.0
    sigma2_hat: float | None = None
    metadata: dict = field(default_factory=dict)

    @property
    def n_steps(self) -> int:
        return self.times.size

    @property
    def log_marginal(self) -> float:
        return float(np.sum(self.log_terms))

    @property
    def C(self) -> np.ndarray:
        return block_projection(0, self.d, self.q)

    def rescaled(self, sigma2: float) -> FilterTrace:
        """ Same run with every covariance multiplied by sigma2 (means unchanged) """
        if not sigma2 > 0.0:
            raise ConfigurationError(msg=f"rescaling needs sigma2 > 0, got {sigma2}")
        quad = self.quad_terms / sigma2
        log_terms = self.log_terms + 0.5 * (self.quad_terms - quad) - 0.5 * self.d * np.log(sigma2)
        return dataclasses.replace(
            self,
            pred_covs=sigma2 * self.pred_covs,
            filt_covs=sigma2 * self.filt_covs,
            innovation_covs=sigma2 * self.innovation_covs,
            quad_terms=quad,
            log_terms=log_terms,
            initial=self.initial.scaled(sigma2),
            R=sigma2 * self.R,
            sigma2=self.sigma2 * sigma2,
        )

    def solution_moments(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """
        Returns:
            (times, means, covs) of X1 including the initial point
        """
        C = self.C
        times = np.concatenate([[self.t0], self.times])
        means = np.concatenate([self.initial.mean[None], self.filt_means]) @ C.T
        covs = C @ np.concatenate([self.initial.cov[None], self.filt_covs]) @ C.T
        return times, means, covs

    def to_dataframe(self) -> pd.DataFrame:
        times, means, covs = self.solution_moments()
        stds = np.sqrt(np.clip(np.diagonal(covs, axis1=-2, axis2=-1), 0.0, None))
        residual_norm = np.concatenate([[0.0], np.linalg.norm(self.residuals, axis=-1)])

        columns = {"t": times}
        columns.update({f"mean_{i + 1}": means[:, i] for i in range(self.d)})
        columns.update({f"std_{i + 1}": stds[:, i] for i in range(self.d)})
        columns["residual_norm"] = residual_norm
        return pd.DataFrame(columns)


def _grid_steps(problem: OdeProblem, h: float, n_steps: int | None) -> int:
    if n_steps is None:
        n_steps = int(round((problem.t_end - problem.t0) / h))
    if n_steps < 1:
        raise ConfigurationError(msg=f"need at least one step, got N={n_steps}")
    return n_steps


def run_filter(
        problem: OdeProblem,
        prior: DiscretePrior,
        variant: UpdateVariant | VariantTag | str,
        n_steps: int | None = None,
        initial: GaussBelief | None = None,
        init_mode: InitMode | str = InitMode.EXACT_2
) -> FilterTrace:
    """
    Run a Gaussian filter solver over the uniform grid t_n = t0 + n h

    Args:
        problem: ODE problem
        prior: discretized prior, its h is the step size
        variant: update variant (a tag or name uses R = 0)
        n_steps: number of steps (default: round((T - t0) / h))
        initial: initial belief (default: from `init_mode`)
        init_mode: initialization mode used when `initial` is None

    Returns:
        FilterTrace

    Raises:
        OdeFilterError: any update failure, with `step` and `variant` attached
    """
    variant = UpdateVariant.parse(variant)
    d = problem.d
    if prior.d != d:
        raise ConfigurationError(msg=f"prior dimension {prior.d} does not match problem dimension {d}")
    if variant.tag is VariantTag.EKF and problem.jacobian is None:
        raise ConfigurationError(msg=f"EKF needs the Jacobian of '{problem.name}'", variant=variant.tag.value)
    if variant.tag is VariantTag.KF and problem.affine is None:
        raise ConfigurationError(
            msg=f"the exact Kalman filter needs an affine field, '{problem.name}' has none",
            variant=variant.tag.value
        )

    n_steps = _grid_steps(problem, prior.h, n_steps)
    R = variant.measurement_cov(d)
    if initial is None:
        initial = initial_belief(IwpSpec(q=prior.q, d=d, sigma2=prior.sigma2), problem, init_mode)

    m = prior.dim
    times = problem.t0 + prior.h * np.arange(1, n_steps + 1)
    pred_means, filt_means = np.empty((n_steps, m)), np.empty((n_steps, m))
    pred_covs, filt_covs = np.empty((n_steps, m, m)), np.empty((n_steps, m, m))
    residuals, innovation_covs = np.empty((n_steps, d)), np.empty((n_steps, d, d))
    quad_terms, log_terms = np.empty(n_steps), np.empty(n_steps)

    belief = initial
    for n, t in enumerate(times):
        try:
            pred = predict(belief, prior)
            belief, residual, S = variant.update(pred, problem, t, R)
            try:
                quad, log_term = innovation_log_density(residual, S)
            except np.linalg.LinAlgError:
                raise SingularInnovationError() from None
        except OdeFilterError as err:
            err.step = n + 1
            err.variant = variant.tag.value
            raise

        pred_means[n], pred_covs[n] = pred.mean, pred.cov
        filt_means[n], filt_covs[n] = belief.mean, belief.cov
        residuals[n], innovation_covs[n] = residual, S
        quad_terms[n], log_terms[n] = quad, log_term

    return FilterTrace(
        times=times,
        pred_means=pred_means,
        pred_covs=pred_covs,
        filt_means=filt_means,
        filt_covs=filt_covs,
        residuals=residuals,
        innovation_covs=innovation_covs,
        quad_terms=quad_terms,
        log_terms=log_terms,
        initial=initial,
        t0=problem.t0,
        h=prior.h,
        d=d,
        q=prior.q,
        variant=variant.tag.value,
        R=R,
        sigma2=prior.sigma2,
        metadata=variant.metadata,
    )


def condition_joint_gaussian(
        problem: OdeProblem,
        prior: DiscretePrior,
        initial: GaussBelief,
        n_steps: int,
        R: np.ndarray | None = None
) -> GaussBelief:
    """
    Posterior of X_N given Z_1 = ... = Z_N = 0 by conditioning the full joint Gaussian

    Only defined for affine problems, where every Z_k is linear in X_k.
    """
    if problem.affine is None:
        raise ConfigurationError(msg=f"joint conditioning needs an affine field, '{problem.name}' has none")
    d, m = problem.d, prior.dim
    C, Cdot = _selectors(d, m)
    R = _measurement_cov(R, d)

    means = [initial.mean]
    covs = [initial.cov]
    for _ in range(n_steps):
        means.append(prior.A @ means[-1] + prior.xi)
        covs.append(prior.A @ covs[-1] @ prior.A.T + prior.Q)

    # cross-covariance of X_i and X_j is A^(i-j) P_j for i >= j
    joint = np.zeros(((n_steps + 1) * m, (n_steps + 1) * m))
    for j in range(n_steps + 1):
        block = covs[j]
        for i in range(j, n_steps + 1):
            joint[i * m:(i + 1) * m, j * m:(j + 1) * m] = block
            joint[j * m:(j + 1) * m, i * m:(i + 1) * m] = block.T
            block = prior.A @ block

    H = np.zeros((n_steps * d, (n_steps + 1) * m))
    offset = np.zeros(n_steps * d)
    for k in range(1, n_steps + 1):
        t = problem.t0 + k * prior.h
        H[(k - 1) * d:k * d, k * m:(k + 1) * m] = Cdot - problem.affine.Lambda(t) @ C
        offset[(k - 1) * d:k * d] = problem.affine.zeta(t)

    z_mean = H @ np.concatenate(means) - offset
    S = H @ joint @ H.T + np.kron(np.eye(n_steps), R)
    cross = joint[n_steps * m:] @ H.T
    K = np.linalg.solve(S, cross.T).T
    return GaussBelief(
        mean=means[-1] - K @ z_mean,
        cov=symmetrize(covs[-1] - K @ S @ K.T),
    )


def bq_reduction_check(g, prior: DiscretePrior, n_steps: int) -> tuple[np.ndarray, np.ndarray]:
    """
    Filter an integrand g(t) as the ODE y' = g(t), y(0) = 0 and compare with
    conditioning the prior jointly on the observed derivatives X2(t_k) = g(t_k)

    Returns:
        (filter X1 means, oracle X1 means), each of shape (N, d)
    """
    d = np.atleast_1d(g(0.0)).size
    integrand = AffineField(
        Lambda=lambda t: np.zeros((d, d)),
        zeta=lambda t: np.atleast_1d(np.asarray(g(t), dtype=float)),
    )
    problem = OdeProblem(
        name="quadrature", f=integrand, y0=np.zeros(d), t_span=(0.0, n_steps * prior.h), affine=integrand
    )
    initial = initial_belief(IwpSpec(q=prior.q, d=d, sigma2=prior.sigma2), problem, InitMode.EXACT_2)
    trace = run_filter(problem, prior, VariantTag.KF, n_steps=n_steps, initial=initial)

    C = _selectors(d, prior.dim)[0]
    oracle = np.stack([
        C @ condition_joint_gaussian(problem, prior, initial, n).mean
        for n in range(1, n_steps + 1)
    ])
    return trace.filt_means @ C.T, oracle
