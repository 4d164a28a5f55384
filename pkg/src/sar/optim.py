"""Deterministic batch optimizer shared by the two view models.

L-BFGS-B from scipy: quasi-Newton with line search, monotone in the accepted
iterates and bit-reproducible for identical inputs, which is what the
training contract requires. "Gradient norm" throughout this package means
the max-abs (infinity) norm.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np
from scipy.optimize import minimize

from .errors import NumericalError

__all__ = ["OptConfig", "OptResult", "minimize_deterministic"]


@dataclass(frozen=True)
class OptConfig:
    grad_tol: float = 1e-5
    max_iters: int = 500

    def __post_init__(self):
        if self.grad_tol <= 0 or self.max_iters < 1:
            raise ValueError("grad_tol must be positive and max_iters >= 1")


@dataclass(frozen=True)
class OptResult:
    x: np.ndarray
    value: float
    grad_norm: float
    iterations: int
    converged: bool  # False means the iteration budget ran out first


def minimize_deterministic(
    fun: Callable[[np.ndarray], tuple[float, np.ndarray]],
    x0: np.ndarray,
    config: OptConfig,
) -> OptResult:
    """Minimize a smooth objective given a fused value-and-gradient callable.

    Raises NumericalError when the objective or gradient goes non-finite,
    which for the log-linear losses here means the feature scaling is off.
    """

    def wrapped(x):
        value, grad = fun(x)
        if not np.isfinite(value) or not np.all(np.isfinite(grad)):
            raise NumericalError("divergence; check feature scaling")
        return value, grad

    value0, grad0 = wrapped(x0)
    if np.max(np.abs(grad0), initial=0.0) <= config.grad_tol:
        return OptResult(np.array(x0, copy=True), value0,
                         float(np.max(np.abs(grad0), initial=0.0)), 0, True)

    result = minimize(
        wrapped,
        x0,
        jac=True,
        method="L-BFGS-B",
        options={
            "maxiter": config.max_iters,
            "gtol": config.grad_tol,
            # ftol would stop on stalled objective before the gradient test;
            # keep it effectively off so the contract is gradient-or-budget.
            "ftol": 1e-18,
            "maxls": 100,
        },
    )
    x = np.asarray(result.x, dtype=np.float64)
    value, grad = wrapped(x)
    grad_norm = float(np.max(np.abs(grad), initial=0.0))
    return OptResult(x, value, grad_norm, int(result.nit),
                     grad_norm <= config.grad_tol)
