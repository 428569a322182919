"""Backend selection for the hot loops.

The compiled extension is used when it imports and the model is one of the
shipped ones; otherwise the numpy versions run. Setting the environment
variable ``HYPODIFF_PURE_PYTHON=1`` forces numpy at import time.
"""
import os

import numpy as np

from . import _pykernels
from .models import FitzHughNagumo, HarmonicOscillator, SynapticConductance

try:
    if os.environ.get("HYPODIFF_PURE_PYTHON", "") not in ("", "0"):
        raise ImportError("pure python requested")
    from . import _kernels
except ImportError:
    _kernels = None

BACKEND = "compiled" if _kernels is not None else "python"

_MODEL_CODES = {HarmonicOscillator: 0, FitzHughNagumo: 1, SynapticConductance: 2}
_CONSTANT_ORDER = {
    0: (),
    1: ("s",),
    2: ("C", "G_L", "V_L", "V_E", "V_I", "I_inj"),
}


def available_backends():
    return ["compiled", "python"] if _kernels is not None else ["python"]


def _resolve(model, backend):
    backend = backend or BACKEND
    if backend not in ("compiled", "python"):
        raise ValueError(f"unknown backend {backend!r}")
    code = _MODEL_CODES.get(type(model))
    if backend == "compiled" and (_kernels is None or code is None):
        backend = "python"
    return backend, code


def _flat(model, params, code):
    theta = np.ascontiguousarray(model.encode(params), dtype=float)
    consts = np.array([model.constants[k] for k in _CONSTANT_ORDER[code]], dtype=float)
    return theta, consts


def euler_path(model, params, x0, h, z, floor=1e-8, bound=1e8, backend=None):
    """Euler-Maruyama path driven by the standard normals ``z`` (steps, p)."""
    z = np.ascontiguousarray(z, dtype=float)
    backend, code = _resolve(model, backend)
    if backend == "compiled":
        theta, consts = _flat(model, params, code)
        return _kernels.euler_path(code, theta, consts, np.ascontiguousarray(x0, dtype=float),
                                   float(h), z, float(floor), float(bound))
    return _pykernels.euler_path(model, params, x0, h, z, floor, bound)


def smc_sweep(model, params, v_obs, delta, u0, normals, uniforms, conditional=True,
              floor=1e-8, backend=None):
    """One particle-filter pass; see :func:`hypodiff.smc.smc_filter`."""
    v_obs = np.ascontiguousarray(v_obs, dtype=float)
    u0 = np.ascontiguousarray(u0, dtype=float)
    normals = np.ascontiguousarray(normals, dtype=float)
    uniforms = np.ascontiguousarray(uniforms, dtype=float)
    backend, code = _resolve(model, backend)
    if backend == "compiled":
        theta, consts = _flat(model, params, code)
        return _kernels.smc_sweep(code, theta, consts, v_obs, float(delta), u0, normals,
                                  uniforms, bool(conditional), float(floor))
    return _pykernels.smc_sweep(model, params, v_obs, delta, u0, normals, uniforms,
                                conditional, floor)
