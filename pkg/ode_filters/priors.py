r"""
Gauss-Markov priors for probabilistic ODE solvers

The state stacks the solution and its first q derivatives block by block,

.. math::

    X = [X^{(1)}, X^{(2)}, \ldots, X^{(q+1)}], \qquad X^{(j)} \in \mathbb{R}^d,

and follows the linear SDE dX = (F X + u) dt + L dB. On a uniform grid with step h
the transition is X_{n+1} | X_n ~ N(A(h) X_n + \xi(h), Q(h)).
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import TYPE_CHECKING

import numpy as np
import scipy.linalg

from ._linalg import clip_psd, symmetrize
from .exceptions import (
    NumericalOverflowError,
    PriorSpecificationError,
    UnsupportedInitError,
)

if TYPE_CHECKING:
    from .problems import OdeProblem


class InitMode(str, Enum):
    """ Which derivative blocks of the initial state are set exactly """

    EXACT_2 = "exact-2"
    EXACT_3 = "exact-3"
    AFFINE = "affine"


@dataclass(frozen=True, eq=False)
class GaussBelief:
    """ Mean and covariance of the stacked state at one grid point """

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if cov.shape != (mean.size, mean.size):
            raise PriorSpecificationError(
                msg=f"belief covariance shape {cov.shape} does not match mean size {mean.size}"
            )
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    def scaled(self, sigma2: float) -> GaussBelief:
        return GaussBelief(mean=self.mean, cov=sigma2 * self.cov)


def block_projection(block: int, d: int, q: int) -> np.ndarray:
    """ Selector of derivative block `block` (0 is the solution itself) of a (q+1) d state """
    if not 0 <= block <= q:
        raise PriorSpecificationError(msg=f"no derivative block {block + 1} for q={q}")
    selector = np.zeros((1, q + 1))
    selector[0, block] = 1.0
    return np.kron(selector, np.eye(d))


@dataclass(frozen=True, eq=False)
class IwpSpec:
    """
    q-times integrated Wiener process prior on R^d

    Args:
        q: number of modelled derivatives
        d: ODE dimension
        Gamma: d x d positive definite diffusion scale (default: identity)
        sigma2: scalar multiplier of the diffusion and of the initial covariance
    """

    q: int
    d: int
    Gamma: np.ndarray | None = None
    sigma2: float = 1.0

    def __post_init__(self):
        if self.q < 0 or self.d < 1:
            raise PriorSpecificationError(msg=f"invalid IWP order q={self.q} or dimension d={self.d}")
        if not self.sigma2 > 0.0:
            raise PriorSpecificationError(msg=f"sigma2 must be positive, got {self.sigma2}")
        gamma = np.eye(self.d) if self.Gamma is None else np.atleast_2d(np.asarray(self.Gamma, dtype=float))
        if gamma.shape != (self.d, self.d) or not np.allclose(gamma, gamma.T):
            raise PriorSpecificationError(msg="Gamma must be a symmetric d x d matrix")
        try:
            np.linalg.cholesky(gamma)
        except np.linalg.LinAlgError as err:
            raise PriorSpecificationError(msg="Gamma is not positive definite") from err
        object.__setattr__(self, "Gamma", gamma)

    @property
    def dim(self) -> int:
        return (self.q + 1) * self.d

    def with_sigma2(self, sigma2: float) -> IwpSpec:
        return IwpSpec(q=self.q, d=self.d, Gamma=self.Gamma, sigma2=sigma2)


@dataclass(frozen=True, eq=False)
class LtiSdePrior:
    """ Linear time-invariant SDE prior dX = (F X + u) dt + L dB """

    F: np.ndarray
    u: np.ndarray
    L: np.ndarray
    d: int
    q: int

    def __post_init__(self):
        m = (self.q + 1) * self.d
        F = np.atleast_2d(np.asarray(self.F, dtype=float))
        u = np.asarray(self.u, dtype=float).reshape(-1)
        L = np.asarray(self.L, dtype=float).reshape(m, -1)
        if F.shape != (m, m) or u.shape != (m,):
            raise PriorSpecificationError(
                msg=f"expected F of shape {(m, m)} and u of length {m}, got {F.shape} and {u.shape}"
            )
        if self.q >= 1:
            derivative_rows = block_projection(1, self.d, self.q)
            if not np.array_equal(F[:self.d], derivative_rows):
                raise PriorSpecificationError(msg="first block row of F must read dX1 = X2 dt")
            if np.any(L[:self.d] != 0.0):
                raise PriorSpecificationError(msg="first block row of L must be zero")
            if np.any(u[:self.d] != 0.0):
                raise PriorSpecificationError(msg="first block of u must be zero")
        object.__setattr__(self, "F", F)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "L", L)

    @property
    def dim(self) -> int:
        return (self.q + 1) * self.d

    @classmethod
    def from_iwp(cls, spec: IwpSpec) -> LtiSdePrior:
        shift = np.eye(spec.q + 1, k=1)
        last = np.zeros((spec.q + 1, 1))
        last[-1, 0] = 1.0
        gain = math.sqrt(spec.sigma2) * np.linalg.cholesky(spec.Gamma)
        return cls(
            F=np.kron(shift, np.eye(spec.d)),
            u=np.zeros(spec.dim),
            L=np.kron(last, gain),
            d=spec.d,
            q=spec.q,
        )


@dataclass(frozen=True, eq=False)
class DiscretePrior:
    """ Transition parameters A(h), xi(h), Q(h) of a prior on a uniform grid """

    A: np.ndarray
    xi: np.ndarray
    Q: np.ndarray
    h: float
    d: int
    q: int
    sigma2: float = 1.0

    @property
    def dim(self) -> int:
        return (self.q + 1) * self.d

    @cached_property
    def C(self) -> np.ndarray:
        return block_projection(0, self.d, self.q)

    @cached_property
    def Cdot(self) -> np.ndarray:
        return block_projection(1, self.d, self.q)

    def scaled(self, sigma2: float) -> DiscretePrior:
        """ Same transition with the diffusion rescaled by sigma2 """
        return DiscretePrior(
            A=self.A, xi=self.xi, Q=sigma2 * self.Q, h=self.h,
            d=self.d, q=self.q, sigma2=self.sigma2 * sigma2
        )


def _check_step(h: float) -> None:
    if not (np.isfinite(h) and h > 0.0):
        raise PriorSpecificationError(msg=f"step size must be positive and finite, got {h}")


def discretize_general(prior: LtiSdePrior, h: float) -> DiscretePrior:
    """
    Exact discretization of an LTI SDE prior with one matrix exponential

    The augmented matrix [[F, L L^T, u], [0, -F^T, 0], [0, 0, 0]] h has the
    exponential [[A, G, xi], [0, A^-T, 0], [0, 0, 1]] and Q = G A^T.

    Raises:
        NumericalOverflowError: if the exponential is not finite
    """
    _check_step(h)
    m = prior.dim
    block = np.zeros((2 * m + 1, 2 * m + 1))
    block[:m, :m] = prior.F
    block[:m, m:2 * m] = prior.L @ prior.L.T
    block[:m, 2 * m] = prior.u
    block[m:2 * m, m:2 * m] = -prior.F.T

    try:
        with np.errstate(over="ignore", invalid="ignore"):
            phi = scipy.linalg.expm(block * h)
    except (ValueError, OverflowError, np.linalg.LinAlgError):
        raise NumericalOverflowError(h=h) from None
    if not np.all(np.isfinite(phi)):
        raise NumericalOverflowError(h=h)

    A = phi[:m, :m]
    Q = clip_psd(phi[:m, m:2 * m] @ A.T)
    return DiscretePrior(A=A, xi=phi[:m, 2 * m].copy(), Q=Q, h=h, d=prior.d, q=prior.q)


def iwp_transition(q: int, h: float) -> tuple[np.ndarray, np.ndarray]:
    """
    Closed-form one-dimensional IWP(q) transition and process noise

    Returns:
        (A1, Q1), both (q+1) x (q+1)
    """
    idx = np.arange(q + 1)
    i, j = np.meshgrid(idx, idx, indexing="ij")
    fact = np.array([math.factorial(k) for k in range(2 * q + 2)], dtype=float)

    lag = j - i
    A1 = np.where(lag >= 0, h ** np.clip(lag, 0, None) / fact[np.clip(lag, 0, None)], 0.0)

    power = 2 * q + 1 - i - j
    Q1 = h ** power / (power * fact[q - i] * fact[q - j])
    return A1, Q1


def discretize_iwp(spec: IwpSpec, h: float) -> DiscretePrior:
    """ Closed-form discretization of IWP(q): A = A1 kron I, Q = sigma2 Q1 kron Gamma """
    _check_step(h)
    A1, Q1 = iwp_transition(spec.q, h)
    return DiscretePrior(
        A=np.kron(A1, np.eye(spec.d)),
        xi=np.zeros(spec.dim),
        Q=symmetrize(spec.sigma2 * np.kron(Q1, spec.Gamma)),
        h=h,
        d=spec.d,
        q=spec.q,
        sigma2=spec.sigma2,
    )


def initial_belief(
        spec: IwpSpec,
        problem: OdeProblem,
        mode: InitMode | str = InitMode.EXACT_2
) -> GaussBelief:
    """
    Initial state belief from the problem's initial value

    Exactly known blocks get zero variance; the remaining derivative blocks
    get zero mean and unit variance. The whole covariance is scaled by sigma2.

    Args:
        spec: IWP prior specification
        problem: ODE problem providing y0, f and (for exact-3) the Jacobian
        mode: exact-2 sets y0 and f(y0); exact-3 adds J_f f; affine sets every
            block from the affine field

    Raises:
        UnsupportedInitError: if the mode needs a Jacobian or affine field the problem lacks
    """
    mode = InitMode(mode)
    d, q = spec.d, spec.q
    if problem.d != d:
        raise UnsupportedInitError(msg=f"prior dimension {d} does not match problem dimension {problem.d}")

    t0 = problem.t0
    mean = np.zeros((q + 1, d))
    var = np.ones(q + 1)
    mean[0], var[0] = problem.y0, 0.0
    if q >= 1:
        mean[1], var[1] = problem.f(problem.y0, t0), 0.0

    match mode:
        case InitMode.EXACT_2:
            pass
        case InitMode.EXACT_3:
            if problem.jacobian is None:
                raise UnsupportedInitError(msg=f"exact-3 initialization needs the Jacobian of '{problem.name}'")
            if q >= 2:
                mean[2], var[2] = problem.jacobian(problem.y0, t0) @ mean[1], 0.0
        case InitMode.AFFINE:
            if problem.affine is None:
                raise UnsupportedInitError(msg=f"affine initialization needs an affine field for '{problem.name}'")
            Lam = problem.affine.Lambda(t0)
            for j in range(2, q + 1):
                mean[j] = Lam @ mean[j - 1]
            var[:] = 0.0

    cov = spec.sigma2 * np.kron(np.diag(var), np.eye(d))
    return GaussBelief(mean=mean.reshape(-1), cov=cov)
