"""
ODE initial value problems with reference solutions

Vector fields and Jacobians act on the last axis, so `f(y, t)` accepts a single
state of shape (d,) or a stack of states of shape (..., d).
"""
from __future__ import annotations

import math
from collections.abc import Callable
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.interpolate
import scipy.linalg
from numba import njit

from .exceptions import ProblemDefinitionError

VectorField = Callable[[np.ndarray, float], np.ndarray]

FD_STEP = 1e-6
FD_RTOL = 1e-5


@dataclass(frozen=True, eq=False)
class AffineField:
    """ f(y, t) = Lambda(t) y + zeta(t) """

    Lambda: Callable[[float], np.ndarray]
    zeta: Callable[[float], np.ndarray]

    def __call__(self, y: np.ndarray, t: float) -> np.ndarray:
        return np.asarray(y) @ self.Lambda(t).T + self.zeta(t)

    @classmethod
    def constant(cls, Lambda: np.ndarray, zeta: np.ndarray | None = None) -> AffineField:
        Lambda = np.atleast_2d(np.asarray(Lambda, dtype=float))
        zeta = np.zeros(Lambda.shape[0]) if zeta is None else np.asarray(zeta, dtype=float)
        return cls(Lambda=lambda t: Lambda, zeta=lambda t: zeta)


@dataclass(frozen=True, eq=False)
class OdeProblem:
    """
    Initial value problem y' = f(y, t), y(t0) = y0 on [t0, T]

    Args:
        name: registry name
        f: vector field
        y0: initial value
        t_span: (t0, T)
        jacobian: optional Jacobian of y -> f(y, t)
        reference: optional reference solution t -> y(t)
        affine: optional affine representation of f
    """

    name: str
    f: VectorField
    y0: np.ndarray
    t_span: tuple[float, float]
    jacobian: Callable[[np.ndarray, float], np.ndarray] | None = None
    reference: Callable[[float], np.ndarray] | None = None
    affine: AffineField | None = None
    d: int = field(init=False)

    def __post_init__(self):
        y0 = np.atleast_1d(np.asarray(self.y0, dtype=float))
        object.__setattr__(self, "y0", y0)
        object.__setattr__(self, "d", y0.size)
        object.__setattr__(self, "t_span", (float(self.t_span[0]), float(self.t_span[1])))

        if not np.all(np.isfinite(self.f(y0, self.t0))):
            raise ProblemDefinitionError(msg=f"f(y0, t0) is not finite for '{self.name}'")
        if self.jacobian is not None and not self.jacobian_matches(y0, self.t0):
            raise ProblemDefinitionError(
                msg=f"Jacobian of '{self.name}' disagrees with central differences at y0"
            )

    @property
    def t0(self) -> float:
        return self.t_span[0]

    @property
    def t_end(self) -> float:
        return self.t_span[1]

    def finite_difference_jacobian(self, y: np.ndarray, t: float, step: float = FD_STEP) -> np.ndarray:
        y = np.asarray(y, dtype=float)
        cols = []
        for j in range(self.d):
            e = np.zeros(self.d)
            e[j] = step
            cols.append((self.f(y + e, t) - self.f(y - e, t)) / (2.0 * step))
        return np.stack(cols, axis=-1)

    def jacobian_matches(self, y: np.ndarray, t: float) -> bool:
        if self.jacobian is None:
            return False
        jac = np.asarray(self.jacobian(y, t))
        fd = self.finite_difference_jacobian(y, t)
        return bool(np.linalg.norm(jac - fd) <= FD_RTOL * (1.0 + np.linalg.norm(jac)))


def oscillator_matrix(lambda1: float, lambda2: float) -> np.ndarray:
    """ Real 2 x 2 embedding of the complex test equation y' = (lambda1 + i lambda2) y """
    return np.array([[lambda1, -lambda2], [lambda2, lambda1]], dtype=float)


def make_linear_oscillator(
        lambda1: float = 0.0,
        lambda2: float = math.pi,
        t_end: float = 10.0
) -> OdeProblem:
    Lam = oscillator_matrix(lambda1, lambda2)
    y0 = np.array([1.0, 0.0])

    def jacobian(y, t):
        return np.broadcast_to(Lam, np.shape(y)[:-1] + (2, 2))

    def reference(t):
        return scipy.linalg.expm(Lam * t) @ y0

    affine = AffineField.constant(Lam)
    return OdeProblem(
        name="linear",
        f=affine,
        y0=y0,
        t_span=(0.0, t_end),
        jacobian=jacobian,
        reference=reference,
        affine=affine,
    )


def make_logistic(r: float = 3.0, y0: float = 0.1, t_end: float = 2.5) -> OdeProblem:
    if not 0.0 < y0 < 1.0:
        raise ProblemDefinitionError(msg=f"logistic initial value must lie in (0, 1), got {y0}")

    def f(y, t):
        return r * y * (1.0 - y)

    def jacobian(y, t):
        return (r * (1.0 - 2.0 * np.asarray(y)))[..., None]

    def reference(t):
        growth = np.exp(r * t)
        return np.atleast_1d(growth / (1.0 / y0 - 1.0 + growth))

    return OdeProblem(
        name="logistic",
        f=f,
        y0=np.array([y0]),
        t_span=(0.0, t_end),
        jacobian=jacobian,
        reference=reference,
    )


@njit(cache=True)
def _fitzhugh_field(y1, y2, a, b, c):
    return c * (y1 - y1 ** 3 / 3.0 + y2), -(y1 - a + b * y2) / c


@njit(cache=True)
def _fitzhugh_rk4(y1, y2, a, b, c, h, n_steps, stride):
    out = np.empty((n_steps // stride + 1, 2))
    out[0, 0], out[0, 1] = y1, y2
    for n in range(n_steps):
        k1a, k1b = _fitzhugh_field(y1, y2, a, b, c)
        k2a, k2b = _fitzhugh_field(y1 + 0.5 * h * k1a, y2 + 0.5 * h * k1b, a, b, c)
        k3a, k3b = _fitzhugh_field(y1 + 0.5 * h * k2a, y2 + 0.5 * h * k2b, a, b, c)
        k4a, k4b = _fitzhugh_field(y1 + h * k3a, y2 + h * k3b, a, b, c)
        y1 += h * (k1a + 2.0 * k2a + 2.0 * k3a + k4a) / 6.0
        y2 += h * (k1b + 2.0 * k2b + 2.0 * k3b + k4b) / 6.0
        if (n + 1) % stride == 0:
            out[(n + 1) // stride, 0] = y1
            out[(n + 1) // stride, 1] = y2
    return out


@lru_cache(maxsize=8)
def fitzhugh_baseline(
        a: float,
        b: float,
        c: float,
        t_end: float,
        h: float = 1e-5,
        stride: int = 100
) -> scipy.interpolate.CubicHermiteSpline:
    """
    Dense fixed-step RK4 baseline for FitzHugh-Nagumo from y(0) = [-1, 1]

    Every `stride`-th RK4 state is kept and joined by a cubic Hermite spline
    whose slopes are the vector field at the stored states.
    """
    n_steps = int(round(t_end / h))
    states = _fitzhugh_rk4(-1.0, 1.0, a, b, c, h, n_steps, stride)
    times = np.arange(states.shape[0]) * (h * stride)
    slopes = np.column_stack(_fitzhugh_field(states[:, 0], states[:, 1], a, b, c))
    return scipy.interpolate.CubicHermiteSpline(times, states, slopes, axis=0)


def make_fitzhugh_nagumo(
        a: float = 0.2,
        b: float = 0.2,
        c: float = 3.0,
        t_end: float = 20.0
) -> OdeProblem:
    if c == 0.0:
        raise ProblemDefinitionError(msg="FitzHugh-Nagumo needs c != 0")

    def f(y, t):
        y1, y2 = y[..., 0], y[..., 1]
        return np.stack([c * (y1 - y1 ** 3 / 3.0 + y2), -(y1 - a + b * y2) / c], axis=-1)

    def jacobian(y, t):
        y1 = np.asarray(y)[..., 0]
        jac = np.empty(y1.shape + (2, 2))
        jac[..., 0, 0] = c * (1.0 - y1 ** 2)
        jac[..., 0, 1] = c
        jac[..., 1, 0] = -1.0 / c
        jac[..., 1, 1] = -b / c
        return jac

    def reference(t):
        return fitzhugh_baseline(float(a), float(b), float(c), float(t_end))(t)

    return OdeProblem(
        name="fitzhugh",
        f=f,
        y0=np.array([-1.0, 1.0]),
        t_span=(0.0, t_end),
        jacobian=jacobian,
        reference=reference,
    )


def make_bernoulli(r: float = 2.0, t_end: float = 5.0) -> OdeProblem:
    """
    Square-root transform eta = sqrt(y) of the logistic equation

    eta' = (r / 2) eta (1 - eta^2), started on the unstable equilibrium eta(0) = 0,
    so the reference solution is identically zero.
    """

    def f(y, t):
        return 0.5 * r * y * (1.0 - y ** 2)

    def jacobian(y, t):
        return (0.5 * r * (1.0 - 3.0 * np.asarray(y) ** 2))[..., None]

    def reference(t):
        return np.zeros(1)

    return OdeProblem(
        name="bernoulli",
        f=f,
        y0=np.zeros(1),
        t_span=(0.0, t_end),
        jacobian=jacobian,
        reference=reference,
    )


PROBLEMS: dict[str, Callable[..., OdeProblem]] = {
    "linear": make_linear_oscillator,
    "logistic": make_logistic,
    "fitzhugh": make_fitzhugh_nagumo,
    "bernoulli": make_bernoulli,
}


def get_problem(name: str, **kwargs) -> OdeProblem:
    try:
        factory = PROBLEMS[name]
    except KeyError:
        raise ProblemDefinitionError(
            msg=f"unknown problem '{name}', expected one of {sorted(PROBLEMS)}"
        ) from None
    return factory(**kwargs)


def evaluate_batch(f: VectorField, states: np.ndarray, t: float) -> np.ndarray:
    """ Evaluate a vector field on a stack of states, looping if f is not vectorized """
    try:
        values = np.asarray(f(states, t), dtype=float)
        if values.shape == states.shape:
            return values
    except (ValueError, TypeError, IndexError):
        pass
    return np.stack([np.asarray(f(state, t), dtype=float) for state in states])
