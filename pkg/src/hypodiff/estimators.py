"""Complete-observation contrast estimators.

The smooth-coordinate contrast uses the ``3 / delta^3`` scaled residuals of
``V`` and estimates the parameters of ``a``; the rough-coordinate contrast
uses the ``U`` residuals with their variance simplified to
``delta Gamma Gamma^T`` and estimates the drift and diffusion parameters of
``U``. The two are minimized in alternation.
"""
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DegeneracyError, InvalidArgumentError, NotApplicableError
from .models import ParamSet
from .moments import mean_and_cov
from .optim import minimize_restarts


@dataclass
class ContrastOptions:
    max_outer_iters: int = 5
    simplex_tol: float = 1e-6
    init: ParamSet = None
    fixed: tuple = ()
    maxfev: int = 500
    restarts: int = 2
    seed: int = 0

    def __post_init__(self):
        if self.max_outer_iters < 1:
            raise InvalidArgumentError("max_outer_iters must be at least 1")
        if not self.simplex_tol > 0:
            raise InvalidArgumentError("simplex_tol must be positive")


@dataclass
class EstimationResult:
    model: str
    params: ParamSet
    param_names: tuple
    contrast_values: tuple = (math.nan, math.nan)
    iterations: int = 0
    converged: bool = False
    seed: int = None
    extra: dict = field(default_factory=dict)

    def param_dict(self):
        return dict(zip(self.param_names, self.params.psi + self.params.phi + self.params.sigma))

    def to_dict(self):
        def clean(x):
            return None if x is None or (isinstance(x, float) and not math.isfinite(x)) else float(x)

        return {
            "model": self.model,
            "params": {k: float(v) for k, v in self.param_dict().items()},
            "contrasts": {"psi": clean(self.contrast_values[0]), "phi_sigma": clean(self.contrast_values[1])},
            "converged": bool(self.converged),
            "iterations": int(self.iterations),
            "seed": self.seed,
        }

    def to_json(self, path=None):
        text = json.dumps(self.to_dict(), indent=2)
        if path is not None:
            with open(path, "w") as fh:
                fh.write(text + "\n")
        return text


def _states(data, model):
    states = getattr(data, "states", data)
    states = np.asarray(states, dtype=float)
    if states.ndim != 2 or states.shape[1] != model.p + 1:
        raise InvalidArgumentError(f"complete data with {model.p + 1} columns required")
    return states


def _delta(data, delta):
    d = getattr(data, "dt", None) if delta is None else delta
    if d is None or not d > 0:
        raise InvalidArgumentError("a positive time step is required")
    return float(d)


def contrast_psi(data, model, psi, params_fixed, delta=None, return_parts=False):
    """Smooth-coordinate contrast at ``psi`` with the other blocks from ``params_fixed``."""
    if len(model.psi_names) == 0:
        raise NotApplicableError(f"model {model.name} has no unknown parameter in the smooth drift")
    states = _states(data, model)
    d = _delta(data, delta)
    params = params_fixed.replace(psi=psi)
    x = states[:-1]
    m, _ = mean_and_cov(model, x, params, d)
    resid = states[1:, 0] - x[:, 0] - m[:, 0]
    den = np.sum((model.du_a(x, params) * model.gamma_diag(x, params)) ** 2, axis=-1)
    if np.any(~(den > 0)):
        raise DegeneracyError("noise does not reach the smooth coordinate on the data")
    quad = 3.0 / d**3 * np.sum(resid**2 / den)
    logs = np.sum(np.log(den))
    if return_parts:
        return quad, logs
    return quad + logs


def contrast_phi_sigma(data, model, phi, sigma, params_fixed, delta=None, return_parts=False):
    """Rough-coordinate contrast at ``(phi, sigma)`` with ``psi`` from ``params_fixed``."""
    states = _states(data, model)
    d = _delta(data, delta)
    params = params_fixed.replace(phi=phi, sigma=sigma)
    x = states[:-1]
    m, _ = mean_and_cov(model, x, params, d)
    r = states[1:, 1:] - x[:, 1:] - m[:, 1:]
    g2 = model.gamma_diag(x, params) ** 2
    if np.any(~(g2 > 0)):
        raise DegeneracyError("singular diffusion matrix on the data")
    quad = np.sum(r**2 / (d * g2))
    logs = np.sum(np.log(g2))
    if return_parts:
        return quad, logs
    return quad + logs


def alternate_minimize(model, init, psi_fun, phi_sigma_fun, options):
    """Alternate derivative-free minimization of two contrast functions.

    ``psi_fun(params)`` is minimized over the free smooth-drift parameters
    and ``phi_sigma_fun(params)`` over the free rough-drift and diffusion
    parameters; each receives a full :class:`ParamSet`. Returns
    ``(params, iterations, converged)``.
    """
    names = model.param_names
    npsi = len(model.psi_names)
    fixed = set(options.fixed)
    unknown = fixed - set(names)
    if unknown:
        raise InvalidArgumentError(f"unknown fixed parameters {sorted(unknown)}")
    positive = np.array([k in model.log_scale for k in names])
    psi_idx = [i for i in range(npsi) if names[i] not in fixed]
    rest_idx = [i for i in range(npsi, len(names)) if names[i] not in fixed]
    vec = model.encode(init)
    blocks = [(idx, fun) for idx, fun in ((psi_idx, psi_fun), (rest_idx, phi_sigma_fun))
              if idx and fun is not None]
    converged = True
    it = 0
    for it in range(1, options.max_outer_iters + 1):
        old = vec.copy()
        ok_round = True
        for idx, fun in blocks:
            def f(sub, idx=idx, fun=fun):
                full = vec.copy()
                full[idx] = sub
                return fun(model.decode(full))

            res = minimize_restarts(f, vec[idx], positive=positive[idx], tol=options.simplex_tol,
                                    maxfev=options.maxfev, restarts=options.restarts,
                                    seed=options.seed * 1000 + it * 10 + idx[0])
            vec[idx] = res.x
            ok_round = ok_round and res.success
        converged = ok_round and bool(np.all(np.isfinite(vec)))
        if len(blocks) < 2:
            break
        change = np.max(np.abs(vec - old) / np.maximum(np.abs(old), 1e-12))
        if change < options.simplex_tol:
            break
    return model.decode(vec), it, converged


def estimate_complete(data, model, options=None, delta=None):
    """Alternating contrast estimation from a fully observed path."""
    options = options or ContrastOptions()
    states = _states(data, model)
    d = _delta(data, delta)
    if options.init is None:
        raise InvalidArgumentError("options.init is required")
    model.validate_params(options.init)
    n_free = len(model.param_names) - len(options.fixed)
    if states.shape[0] - 1 < max(2, n_free):
        raise InvalidArgumentError(f"insufficient data: {states.shape[0] - 1} transitions")
    has_psi = len(model.psi_names) > 0

    def psi_fun(p):
        return contrast_psi(states, model, p.psi, p, delta=d)

    def rest_fun(p):
        return contrast_phi_sigma(states, model, p.phi, p.sigma, p, delta=d)

    params, iters, converged = alternate_minimize(model, options.init, psi_fun if has_psi else None,
                                                  rest_fun, options)
    c_psi = psi_fun(params) if has_psi else math.nan
    c_rest = rest_fun(params)
    converged = converged and np.isfinite(c_rest) and (not has_psi or np.isfinite(c_psi))
    return EstimationResult(model=model.name, params=params, param_names=model.param_names,
                            contrast_values=(c_psi, c_rest), iterations=iters,
                            converged=bool(converged), seed=getattr(data, "seed", None))


def euler_contrast_baseline(data, model, options=None, delta=None):
    """Explicit minimizers of the Euler contrast on the rough coordinate.

    With ``dU_i = U_{i+1} - U_i`` and Euler residuals
    ``dU_i - delta * A(X_i)``, the drift parameters solve a linear least
    squares problem and ``sigma^2 = RSS / (n delta)``.

    * oscillator: ``A = -D V - gamma U``; regress ``dU / delta`` on ``(-V, -U)``.
    * FitzHugh-Nagumo: ``A = gamma V - U + alpha``; regress ``dU / delta + U`` on
      ``(V, 1)``. ``epsilon`` is not estimated and is copied from
      ``options.init`` (0.1 when no init is given).
    """
    states = _states(data, model)
    d = _delta(data, delta)
    v, u = states[:-1, 0], states[:-1, 1]
    du = np.diff(states[:, 1])
    n = du.size
    if model.name == "ho":
        X = -np.column_stack([v, u])
        y = du / d
    elif model.name == "fhn":
        X = np.column_stack([v, np.ones(n)])
        y = du / d + u
    else:
        raise NotApplicableError(f"no Euler baseline for model {model.name}")
    coef, *_ = np.linalg.lstsq(X, y, rcond=None)
    resid = du - d * (X @ coef - (u if model.name == "fhn" else 0.0))
    sigma = math.sqrt(float(np.sum(resid**2)) / (n * d))
    if model.name == "ho":
        params = ParamSet(phi=coef, sigma=[sigma])
    else:
        eps = options.init.psi[0] if options is not None and options.init is not None else 0.1
        params = ParamSet(psi=[eps], phi=coef, sigma=[sigma])
    return EstimationResult(model=model.name, params=params, param_names=model.param_names,
                            iterations=1, converged=bool(np.all(np.isfinite(coef)) and sigma >= 0),
                            seed=getattr(data, "seed", None))
