"""Nelder-Mead with restarts on a log scale for positive parameters."""
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize

from .rng import make_rng


@dataclass
class OptimResult:
    x: np.ndarray
    fun: float
    success: bool
    nfev: int


class Reparam:
    """Map between natural parameters and the unconstrained optimizer scale."""

    def __init__(self, positive):
        self.positive = np.asarray(positive, dtype=bool)

    def to_free(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(self.positive, np.log(np.where(self.positive, x, 1.0)), x)

    def from_free(self, y):
        y = np.asarray(y, dtype=float)
        return np.where(self.positive, np.exp(np.clip(y, -700, 700)), y)


def minimize_restarts(fun, x0, positive=None, tol=1e-6, maxfev=500, restarts=2, perturb=0.1, seed=0):
    """Minimize ``fun`` from ``x0`` then restart twice from the perturbed best point.

    Positive coordinates are optimized on a log scale. Non-finite function
    values are treated as ``+inf`` so the simplex steps away from them.
    """
    x0 = np.asarray(x0, dtype=float)
    rep = Reparam(np.zeros(x0.size, bool) if positive is None else positive)
    rng = make_rng(seed)

    def f(y):
        try:
            val = fun(rep.from_free(y))
        except (ArithmeticError, ValueError, np.linalg.LinAlgError):
            return np.inf
        return val if np.isfinite(val) else np.inf

    opts = {"xatol": tol, "fatol": tol, "maxfev": maxfev, "adaptive": x0.size > 3}
    best_y = rep.to_free(x0)
    best_f = f(best_y)
    nfev = 1
    success = False
    for k in range(restarts + 1):
        start = best_y if k == 0 else best_y + perturb * rng.standard_normal(best_y.size)
        res = minimize(f, start, method="Nelder-Mead", options=opts)
        nfev += res.nfev
        if res.fun <= best_f:
            best_y, best_f = res.x, res.fun
            success = bool(res.success)
        elif k == 0:
            success = bool(res.success)
    return OptimResult(x=rep.from_free(best_y), fun=float(best_f), success=success and np.isfinite(best_f),
                       nfev=nfev)
