"""Gaussian pseudo-transition of the strong order 1.5 scheme.

One step of the scheme reads ``X_{i+1} = X_i + dB(X_i) + e_i`` with
``e_i ~ N(0, Sigma(X_i))``. This module evaluates the mean increment
``dB`` and covariance ``Sigma`` (generic formulas and per-model closed
forms), the exact transition of the harmonic oscillator, and the scheme's
Gaussian log-density.
"""
import csv
from dataclasses import dataclass

import numpy as np

from .errors import DegeneracyError, InvalidArgumentError
from .models import as_state_array


@dataclass(frozen=True)
class SchemeMoments:
    mean_increment: np.ndarray
    cov: np.ndarray


@dataclass(frozen=True)
class GaussianMoments:
    mean: np.ndarray
    cov: np.ndarray


def generic_mean_increment(model, x, params, delta):
    """``delta b + delta^2/2 (d_x b) b + delta^2/4 lap_Gamma b``, vectorized."""
    x = as_state_array(x, model.p)
    b = model.drift(x, params)
    g2 = model.gamma_diag(x, params) ** 2
    out = np.empty(b.shape)
    dxa = model.dx_a(x, params)
    out[..., 0] = np.einsum("...k,...k->...", dxa, b) * (delta**2 / 2) + np.sum(
        g2 * model.d2u_a(x, params), axis=-1
    ) * (delta**2 / 4)
    dxA = model.dx_A(x, params)
    out[..., 1:] = np.einsum("...jk,...k->...j", dxA, b) * (delta**2 / 2) + np.einsum(
        "...ij,...j->...i", model.d2u_A(x, params), g2
    ) * (delta**2 / 4)
    out += delta * b
    return out


def generic_cov(model, x, params, delta):
    """Leading-order block covariance of the scheme."""
    x = as_state_array(x, model.p)
    g2 = model.gamma_diag(x, params) ** 2
    dua = model.du_a(x, params)
    p = model.p
    out = np.zeros(x.shape[:-1] + (p + 1, p + 1))
    cross = dua * g2
    out[..., 0, 0] = np.sum(dua * cross, axis=-1) * delta**3 / 3
    out[..., 0, 1:] = cross * delta**2 / 2
    out[..., 1:, 0] = cross * delta**2 / 2
    idx = np.arange(1, p + 1)
    out[..., idx, idx] = g2 * delta
    return out


def mean_and_cov(model, x, params, delta, closed_form=True):
    """Raw vectorized moments, no validation. Used by the hot loops."""
    mean = model.mean_increment(x, params, delta) if closed_form else None
    if mean is None:
        mean = generic_mean_increment(model, x, params, delta)
    cov = model.scheme_cov(x, params, delta) if closed_form else None
    if cov is None:
        cov = generic_cov(model, x, params, delta)
    return mean, cov


def robust_cholesky(cov, where=None):
    """Cholesky factor of a symmetrized covariance.

    On failure the matrix is jittered once by ``1e-12 * trace``; a second
    failure raises :class:`DegeneracyError`.
    """
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    try:
        return np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    tr = np.trace(cov, axis1=-2, axis2=-1)[..., None, None]
    eye = np.eye(cov.shape[-1])
    try:
        return np.linalg.cholesky(cov + 1e-12 * tr * eye)
    except np.linalg.LinAlgError:
        raise DegeneracyError(
            f"scheme covariance is not positive definite at state {where}"
        ) from None


def scheme_moments(model, x, params, delta, closed_form=True):
    """Mean increment and covariance of one scheme step from ``x``.

    Raises :class:`DegeneracyError` when the covariance is not positive
    definite after symmetrization.
    """
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta}")
    x = model.check_domain(as_state_array(x, model.p))
    mean, cov = mean_and_cov(model, x, params, delta, closed_form)
    cov = 0.5 * (cov + np.swapaxes(cov, -1, -2))
    robust_cholesky(cov, where=x)
    return SchemeMoments(mean_increment=mean, cov=cov)


# -- exact harmonic oscillator -------------------------------------------


def _even_odd(z, t):
    """Return ``cosh(r t)``, ``sinh(r t)/r`` and ``(cosh(r t) - 1)/r^2`` for ``r^2 = z``.

    All three are entire in ``z``; negative ``z`` switches to trigonometric
    functions and tiny ``|z| t^2`` to a truncated series.
    """
    zt2 = z * t * t
    if abs(zt2) < 1e-6:
        c = 1 + zt2 / 2 + zt2**2 / 24 + zt2**3 / 720
        s = t * (1 + zt2 / 6 + zt2**2 / 120 + zt2**3 / 5040)
        k = t * t * (0.5 + zt2 / 24 + zt2**2 / 720 + zt2**3 / 40320)
    elif z > 0:
        r = np.sqrt(z)
        c = np.cosh(r * t)
        s = np.sinh(r * t) / r
        k = 2 * np.sinh(r * t / 2) ** 2 / z
    else:
        r = np.sqrt(-z)
        c = np.cos(r * t)
        s = np.sin(r * t) / r
        k = -2 * np.sin(r * t / 2) ** 2 / z
    return c, s, k


def ho_transition_matrix(D, gamma, delta):
    """``exp(delta M)`` for the oscillator drift matrix ``[[0, 1], [-D, -gamma]]``."""
    z = gamma**2 / 4 - D
    c, s, _ = _even_odd(z, delta)
    e = np.exp(-gamma * delta / 2)
    return e * np.array([[c + gamma / 2 * s, s], [-D * s, c - gamma / 2 * s]])


def ho_transition_cov(D, gamma, sigma, delta):
    z = gamma**2 / 4 - D
    _, s2, k2 = _even_odd(z, 2 * delta)
    e = np.exp(-gamma * delta)
    sig2 = sigma**2
    c11 = sig2 / (2 * gamma * D) + sig2 * e * (-1 / (2 * gamma * D) - gamma * k2 / (8 * D) - s2 / (4 * D))
    c12 = sig2 * e * k2 / 4
    c22 = sig2 / (2 * gamma) + sig2 * e * (-1 / (2 * gamma) - gamma * k2 / 8 + s2 / 4)
    return np.array([[c11, c12], [c12, c22]])


def exact_ho_moments(params, x, delta):
    """Exact Gaussian transition of the oscillator over a step ``delta``."""
    if delta < 0:
        raise InvalidArgumentError("delta must be non-negative")
    D, gamma = params.phi
    sigma = params.sigma[0]
    x = as_state_array(x, 1)
    if delta == 0:
        return GaussianMoments(mean=x.copy(), cov=np.zeros((2, 2)))
    F = ho_transition_matrix(D, gamma, delta)
    return GaussianMoments(mean=x @ F.T, cov=ho_transition_cov(D, gamma, sigma, delta))


# -- densities -----------------------------------------------------------


def gaussian_logpdf(r, cov):
    """Log-density of residuals ``r`` (..., d) under ``N(0, cov)``."""
    L = robust_cholesky(cov)
    L = np.broadcast_to(L, r.shape[:-1] + L.shape[-2:])
    z = np.linalg.solve(L, r[..., None])[..., 0]
    d = r.shape[-1]
    logdet = 2 * np.sum(np.log(np.diagonal(L, axis1=-2, axis2=-1)), axis=-1)
    return -0.5 * (d * np.log(2 * np.pi) + logdet + np.sum(z * z, axis=-1))


def log_density_scheme(model, x_from, x_to, params, delta, closed_form=True):
    """Gaussian log-density of ``x_to`` under one scheme step from ``x_from``.

    Both arguments may be stacks of states; the result then has the stack
    shape.
    """
    x_from = as_state_array(x_from, model.p)
    x_to = as_state_array(x_to, model.p)
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta}")
    mean, cov = mean_and_cov(model, x_from, params, delta, closed_form)
    r = x_to - x_from - mean
    return gaussian_logpdf(r, cov)


def path_log_density(model, states, params, delta, closed_form=True):
    """Sum of scheme log-densities along a complete path ``(n + 1, p + 1)``."""
    states = as_state_array(states, model.p)
    return float(np.sum(log_density_scheme(model, states[:-1], states[1:], params, delta, closed_form)))


# -- order check ---------------------------------------------------------


def euler_mc_moments(model, params, x, delta, n_paths=200_000, substeps=100, rng=None, floor=1e-8):
    """Monte-Carlo mean and variance of ``X_delta`` by fine Euler-Maruyama."""
    rng = np.random.default_rng(rng)
    x = as_state_array(x, model.p)
    X = np.tile(x, (n_paths, 1))
    h = delta / substeps
    positive = np.isfinite(model.state_lower()[1:])
    for _ in range(substeps):
        b = model.drift(X, params)
        g = model.gamma_diag(X, params)
        X = X + h * b
        X[:, 1:] += g * rng.normal(0.0, np.sqrt(h), size=(n_paths, model.p))
        if np.any(positive):
            X[:, 1:][:, positive] = np.maximum(X[:, 1:][:, positive], floor)
    mean = X.mean(axis=0)
    var = X.var(axis=0, ddof=1)
    return mean, var, var / n_paths


def order_check(model, params, x, delta_grid, oracle=None, **mc_kwargs):
    """Errors of the scheme's first two moments against an oracle.

    Returns one row per ``(delta, coordinate)``: absolute mean error
    ``|E[X_delta] - (x + dB)|`` and variance error ``|Var[X_delta] - Sigma_kk|``.
    The oracle defaults to the exact transition for the oscillator and to
    fine-grid Euler Monte Carlo otherwise. ``oracle(delta)`` may be supplied
    and must return ``(mean, var)``.
    """
    x = as_state_array(x, model.p)
    if oracle is None:
        if model.name == "ho":
            def oracle(d):
                m = exact_ho_moments(params, x, d)
                return m.mean, np.diag(m.cov)
        else:
            def oracle(d):
                m, v, _ = euler_mc_moments(model, params, x, d, **mc_kwargs)
                return m, v
    rows = []
    for d in delta_grid:
        if d == 0:
            mean_s = x
            var_s = np.zeros(model.p + 1)
            mean_o, var_o = x, np.zeros(model.p + 1)
        else:
            inc, cov = mean_and_cov(model, x, params, d)
            mean_s, var_s = x + inc, np.diag(cov)
            mean_o, var_o = oracle(d)
        for k in range(model.p + 1):
            rows.append({
                "delta": float(d),
                "coord": k,
                "mean_err": float(abs(mean_o[k] - mean_s[k])),
                "var_err": float(abs(var_o[k] - var_s[k])),
            })
    return rows


def loglog_slope(deltas, errors):
    """Least-squares slope of ``log(error)`` against ``log(delta)``."""
    return float(np.polyfit(np.log(deltas), np.log(errors), 1)[0])


def write_order_csv(rows, path):
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["delta", "coord", "mean_err", "var_err"])
        w.writeheader()
        for r in rows:
            w.writerow({k: (repr(v) if isinstance(v, float) else v) for k, v in r.items()})
