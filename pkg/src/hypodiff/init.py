"""Starting values computed from the observed coordinate alone.

For the oscillator and FitzHugh-Nagumo the hidden coordinate is replaced by
a proxy built from increments of ``V`` and the rough-coordinate contrast is
minimized on ``(V, proxy)``. The synaptic model starts from fixed values of
the right order of magnitude.
"""
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .errors import HypoDiffError, InvalidArgumentError
from .estimators import ContrastOptions, estimate_complete, euler_contrast_baseline
from .models import FitzHughNagumo, HarmonicOscillator, ParamSet, SynapticConductance

SIGMA_CORRECTION = math.sqrt(1.5)


@dataclass
class InitReport:
    params0: ParamSet
    method: str
    proxy_path: np.ndarray = None
    fallback: bool = False
    raw_sigma: float = None


def _v(v_obs, min_len=3):
    v = np.asarray(v_obs, dtype=float).ravel()
    if v.size < min_len:
        raise InvalidArgumentError(f"need at least {min_len} observations")
    if not np.all(np.isfinite(v)):
        raise InvalidArgumentError("observations must be finite")
    return v


def _fit(states, model, delta, start):
    """Refine explicit Euler estimates by minimizing the rough contrast."""
    res = estimate_complete(states, model, ContrastOptions(init=start, max_outer_iters=1), delta=delta)
    vec = model.encode(res.params)
    if not (res.converged and np.all(np.isfinite(vec)) and res.params.sigma[0] > 1e-12):
        raise HypoDiffError("contrast minimization on the proxy path failed")
    return res.params


def init_ho(v_obs, delta):
    """Oscillator start from ``U_i ~ (V_{i+1} - V_i) / delta`` with the ``sqrt(3/2)`` correction of sigma."""
    v = _v(v_obs)
    model = HarmonicOscillator()
    u = np.diff(v) / delta
    states = np.column_stack([v[:-1], u])
    try:
        euler = euler_contrast_baseline(states, model, delta=delta).params
        if not np.all(np.isfinite(model.encode(euler))) or euler.sigma[0] <= 0:
            raise HypoDiffError("degenerate proxy path")
        start = ParamSet(phi=euler.phi, sigma=euler.sigma)
        fitted = _fit(states, model, delta, start)
        D, gamma = fitted.phi
        raw = fitted.sigma[0]
        if D <= 0 or gamma <= 0:
            raise HypoDiffError("non-positive drift estimate on the proxy path")
        params = ParamSet(phi=(D, gamma), sigma=(SIGMA_CORRECTION * raw,))
        return InitReport(params0=params, method="ho_increments", proxy_path=u, raw_sigma=raw)
    except (HypoDiffError, ArithmeticError, np.linalg.LinAlgError) as err:
        warnings.warn(f"oscillator initialization fell back to moment matching: {err}", stacklevel=2)
        return InitReport(params0=_ho_moment_guess(v, u), method="ho_increments", proxy_path=u, fallback=True)


def _ho_moment_guess(v, u):
    """Stationary-moment guesses: ``Var V = s^2/(2 g D)``, ``Var U = s^2/(2 g)``, with ``g = 1``."""
    vv, vu = np.var(v), np.var(u)
    if vv > 0 and vu > 0:
        D = vu / vv
        sigma = math.sqrt(2 * vu)
    else:
        D, sigma = 1.0, 1.0
    return ParamSet(phi=(D, 1.0), sigma=(sigma,))


def init_fhn(v_obs, delta, eps0=0.12, s=0.0):
    """FitzHugh-Nagumo start with ``epsilon`` fixed at ``eps0``.

    The proxy ``U_i = V_i - V_i^3 + s - eps0 (V_{i+1} - V_i) / delta`` inverts
    the smooth drift; ``(gamma, alpha, sigma)`` then minimize the rough
    contrast on ``(V, proxy)``.
    """
    if not eps0 > 0:
        raise InvalidArgumentError(f"eps0 must be positive, got {eps0}")
    v = _v(v_obs)
    model = FitzHughNagumo(s=s)
    u = model.invert_increments(v, delta, eps0)
    states = np.column_stack([v[:-1], u])
    try:
        euler = euler_contrast_baseline(states, model, delta=delta).params
        start = ParamSet(psi=(eps0,), phi=euler.phi, sigma=euler.sigma)
        if not np.all(np.isfinite(model.encode(start))) or start.sigma[0] <= 0:
            raise HypoDiffError("degenerate proxy path")
        res = estimate_complete(states, model,
                                ContrastOptions(init=start, fixed=("epsilon",), max_outer_iters=1), delta=delta)
        if not (res.converged and res.params.sigma[0] > 1e-12):
            raise HypoDiffError("contrast minimization on the proxy path failed")
        return InitReport(params0=res.params, method="fhn_increments", proxy_path=u)
    except (HypoDiffError, ArithmeticError, np.linalg.LinAlgError) as err:
        warnings.warn(f"FitzHugh-Nagumo initialization fell back to defaults: {err}", stacklevel=2)
        sd = float(np.std(u)) if np.std(u) > 0 else 1.0
        params = ParamSet(psi=(eps0,), phi=(1.0, 0.0), sigma=(sd,))
        return InitReport(params0=params, method="fhn_increments", proxy_path=u, fallback=True)


def init_sie():
    """Time constants 1, mean conductances 10, noise scales 0.1."""
    params = ParamSet(phi=(1.0, 1.0, 10.0, 10.0), sigma=(0.1, 0.1))
    SynapticConductance().validate_params(params)
    return InitReport(params0=params, method="sie_fixed")


def auto_init(model, v_obs, delta, eps0=0.12):
    if model.name == "ho":
        return init_ho(v_obs, delta)
    if model.name == "fhn":
        return init_fhn(v_obs, delta, eps0=eps0, s=model.s)
    if model.name == "sie":
        return init_sie()
    raise InvalidArgumentError(f"no automatic initialization for {model.name}")
