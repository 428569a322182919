"""Hypoelliptic model contract and the three shipped models.

A model describes an Ito SDE with one smooth coordinate ``v`` and ``p``
rough coordinates ``u``::

    dV = a(V, U; psi) dt
    dU = A(V, U; phi) dt + diag(sigma_1(V, U), ..., sigma_p(V, U)) dB

All coefficient methods are vectorized: ``x`` has shape ``(..., p + 1)`` with
the smooth coordinate first, and results carry the same leading shape.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError, InvalidArgumentError, ModelViolationError, NumericError

HYPO_TOL = 1e-12


@dataclass(frozen=True)
class ParamSet:
    """Parameters split into smooth-drift, rough-drift and diffusion blocks."""

    psi: tuple = ()
    phi: tuple = ()
    sigma: tuple = ()

    def __post_init__(self):
        for name in ("psi", "phi", "sigma"):
            vals = tuple(float(x) for x in np.atleast_1d(getattr(self, name)))
            object.__setattr__(self, name, vals)

    def replace(self, **blocks):
        d = {"psi": self.psi, "phi": self.phi, "sigma": self.sigma}
        d.update(blocks)
        return ParamSet(**d)


@dataclass(frozen=True)
class StateVector:
    v: float
    u: tuple = field(default=())

    def __post_init__(self):
        u = tuple(float(x) for x in np.atleast_1d(self.u))
        if len(u) < 1:
            raise InvalidArgumentError("a state needs at least one rough coordinate")
        if not (np.isfinite(self.v) and np.all(np.isfinite(u))):
            raise InvalidArgumentError("state entries must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "v", float(self.v))

    @property
    def p(self):
        return len(self.u)

    def as_array(self):
        return np.array((self.v,) + self.u)


def as_state_array(x, p=None):
    """Coerce a StateVector or array-like to a float array ``(..., p + 1)``."""
    if isinstance(x, StateVector):
        arr = x.as_array()
    else:
        arr = np.asarray(x, dtype=float)
    if p is not None and arr.shape[-1] != p + 1:
        raise InvalidArgumentError(f"expected states of length {p + 1}, got {arr.shape[-1]}")
    return arr


class HypoellipticModel:
    """Base class for models of the form above.

    Subclasses fill in the drift, diffusion and partial-derivative methods.
    Second derivatives in ``u`` default to zero, which is exact for drifts
    that are linear in the rough coordinates.
    """

    name = "generic"
    p = 1
    psi_names = ()
    phi_names = ()
    sigma_names = ()
    # Parameters that must be strictly positive.
    positive = frozenset()
    # Subset optimized on a log scale: diffusion scales and time constants.
    log_scale = frozenset()
    constant_names = ()

    def __init__(self, **constants):
        unknown = set(constants) - set(self.constant_names)
        if unknown:
            raise InvalidArgumentError(f"unknown constants for {self.name}: {sorted(unknown)}")
        self.constants = {**self.default_constants(), **{k: float(v) for k, v in constants.items()}}
        for k, v in self.constants.items():
            setattr(self, k, v)

    def default_constants(self):
        return {}

    def __repr__(self):
        consts = ", ".join(f"{k}={v:g}" for k, v in self.constants.items())
        return f"{type(self).__name__}({consts})"

    # -- parameter layout ------------------------------------------------

    @property
    def param_names(self):
        return self.psi_names + self.phi_names + self.sigma_names

    def make_params(self, **values):
        missing = set(self.param_names) - set(values)
        extra = set(values) - set(self.param_names)
        if missing or extra:
            raise InvalidArgumentError(
                f"{self.name} needs {self.param_names}; missing {sorted(missing)}, unexpected {sorted(extra)}"
            )
        params = ParamSet(
            psi=[values[k] for k in self.psi_names],
            phi=[values[k] for k in self.phi_names],
            sigma=[values[k] for k in self.sigma_names],
        )
        self.validate_params(params)
        return params

    def param_dict(self, params):
        return dict(zip(self.param_names, params.psi + params.phi + params.sigma))

    def encode(self, params):
        """Flatten to the vector layout used by optimizers."""
        return np.array(params.psi + params.phi + params.sigma, dtype=float)

    def decode(self, vec):
        vec = np.asarray(vec, dtype=float)
        if vec.shape != (len(self.param_names),):
            raise InvalidArgumentError(f"expected {len(self.param_names)} parameters, got {vec.shape}")
        a, b = len(self.psi_names), len(self.psi_names) + len(self.phi_names)
        return ParamSet(psi=vec[:a], phi=vec[a:b], sigma=vec[b:])

    def validate_params(self, params):
        if (len(params.psi), len(params.phi), len(params.sigma)) != (
            len(self.psi_names), len(self.phi_names), len(self.sigma_names)):
            raise InvalidArgumentError(f"parameter layout does not match {self.name}")
        for k, val in self.param_dict(params).items():
            if not np.isfinite(val):
                raise InvalidArgumentError(f"parameter {k} is not finite")
            if k in self.positive and val <= 0:
                raise InvalidArgumentError(f"parameter {k} must be positive, got {val}")

    # -- state domain ----------------------------------------------------

    def state_lower(self):
        return np.full(self.p + 1, -np.inf)

    def state_upper(self):
        return np.full(self.p + 1, np.inf)

    def check_domain(self, x):
        x = as_state_array(x, self.p)
        lo, hi = self.state_lower(), self.state_upper()
        inside = np.all((x > lo) & (x < hi), axis=-1)
        if not np.all(inside) or not np.all(np.isfinite(x)):
            raise DomainError(f"state outside the domain of {self.name}: {x}")
        return x

    # -- coefficients (override) ------------------------------------------

    def drift_a(self, x, params):
        raise NotImplementedError

    def drift_A(self, x, params):
        raise NotImplementedError

    def gamma_diag(self, x, params):
        raise NotImplementedError

    def du_a(self, x, params):
        """Row vector of partials of ``a`` with respect to ``u``; shape ``(..., p)``."""
        return self.dx_a(x, params)[..., 1:]

    def dx_a(self, x, params):
        raise NotImplementedError

    def dx_A(self, x, params):
        """Jacobian of ``A``; shape ``(..., p, p + 1)``."""
        raise NotImplementedError

    def d2u_a(self, x, params):
        """Second partials of ``a`` in each ``u_j``; shape ``(..., p)``."""
        return np.zeros(np.shape(x)[:-1] + (self.p,))

    def d2u_A(self, x, params):
        """Entry ``[i, j]`` is the second partial of ``A_i`` in ``u_j``."""
        return np.zeros(np.shape(x)[:-1] + (self.p, self.p))

    def du_gamma(self, x, params):
        """Partial of ``sigma_j`` with respect to ``u_j``; shape ``(..., p)``."""
        return np.zeros(np.shape(x)[:-1] + (self.p,))

    def d2u_gamma(self, x, params):
        return np.zeros(np.shape(x)[:-1] + (self.p,))

    def d2u_gamma_sq(self, x, params):
        """Second partial of ``sigma_j ** 2`` with respect to ``u_j``."""
        g = self.gamma_diag(x, params)
        dg = self.du_gamma(x, params)
        return 2.0 * dg**2 + 2.0 * g * self.d2u_gamma(x, params)

    def additive_noise(self):
        return True

    # Closed forms of the scheme moments; None means "use the generic formula".
    def mean_increment(self, x, params, delta):
        return None

    def scheme_cov(self, x, params, delta):
        return None

    def sample_u0(self, v_obs, params, delta, size, rng):
        """Default initial law for the hidden coordinates, shape ``(size, p)``."""
        raise NotImplementedError

    # -- public evaluation helpers ----------------------------------------

    def drift(self, x, params):
        a = self.drift_a(x, params)
        A = self.drift_A(x, params)
        return np.concatenate([np.asarray(a)[..., None], A], axis=-1)


class HarmonicOscillator(HypoellipticModel):
    """Damped oscillator ``dV = U dt, dU = (-D V - gamma U) dt + sigma dB``."""

    name = "ho"
    p = 1
    phi_names = ("D", "gamma")
    sigma_names = ("sigma",)
    positive = frozenset({"D", "gamma", "sigma"})
    log_scale = frozenset({"sigma"})

    def drift_a(self, x, params):
        return np.asarray(x)[..., 1] * 1.0

    def drift_A(self, x, params):
        D, gamma = params.phi
        x = np.asarray(x)
        return (-D * x[..., 0] - gamma * x[..., 1])[..., None]

    def gamma_diag(self, x, params):
        return np.full(np.shape(x)[:-1] + (1,), params.sigma[0])

    def dx_a(self, x, params):
        out = np.zeros(np.shape(x))
        out[..., 1] = 1.0
        return out

    def dx_A(self, x, params):
        D, gamma = params.phi
        out = np.empty(np.shape(x)[:-1] + (1, 2))
        out[..., 0, 0] = -D
        out[..., 0, 1] = -gamma
        return out

    def mean_increment(self, x, params, delta):
        D, gamma = params.phi
        x = np.asarray(x, dtype=float)
        v, u = x[..., 0], x[..., 1]
        w = D * v + gamma * u
        out = np.empty(x.shape)
        out[..., 0] = delta * (u - w * delta / 2)
        out[..., 1] = delta * (-w + (gamma * w - D * u) * delta / 2)
        return out

    def scheme_cov(self, x, params, delta):
        gamma = params.phi[1]
        s2 = params.sigma[0] ** 2
        d = delta
        c01 = d**2 / 2 - d**3 * gamma / 3
        cov = s2 * np.array([[d**3 / 3, c01], [c01, d - d**2 * gamma + d**3 * gamma**2 / 3]])
        return np.broadcast_to(cov, np.shape(x)[:-1] + (2, 2)).copy()

    def sample_u0(self, v_obs, params, delta, size, rng):
        gamma = params.phi[1]
        sd = params.sigma[0] / np.sqrt(2 * gamma)
        return rng.normal(0.0, sd, size=(size, 1))


class FitzHughNagumo(HypoellipticModel):
    """Stochastic FitzHugh-Nagumo neuron with noise on the recovery variable.

    ``dV = (V - V^3 - U + s) / eps dt``, ``dU = (gamma V - U + alpha) dt + sigma dB``.
    The stimulus ``s`` is a known constant.
    """

    name = "fhn"
    p = 1
    psi_names = ("epsilon",)
    phi_names = ("gamma", "alpha")
    sigma_names = ("sigma",)
    positive = frozenset({"epsilon", "sigma"})
    log_scale = frozenset({"epsilon", "sigma"})
    constant_names = ("s",)

    def default_constants(self):
        return {"s": 0.0}

    def _a0(self, x):
        x = np.asarray(x)
        v = x[..., 0]
        return v - v**3 - x[..., 1] + self.s

    def drift_a(self, x, params):
        return self._a0(x) / params.psi[0]

    def drift_A(self, x, params):
        gamma, alpha = params.phi
        x = np.asarray(x)
        return (gamma * x[..., 0] - x[..., 1] + alpha)[..., None]

    def gamma_diag(self, x, params):
        return np.full(np.shape(x)[:-1] + (1,), params.sigma[0])

    def dx_a(self, x, params):
        eps = params.psi[0]
        x = np.asarray(x)
        out = np.empty(x.shape)
        out[..., 0] = (1 - 3 * x[..., 0] ** 2) / eps
        out[..., 1] = -1.0 / eps
        return out

    def dx_A(self, x, params):
        gamma = params.phi[0]
        out = np.empty(np.shape(x)[:-1] + (1, 2))
        out[..., 0, 0] = gamma
        out[..., 0, 1] = -1.0
        return out

    def mean_increment(self, x, params, delta):
        eps = params.psi[0]
        gamma, alpha = params.phi
        x = np.asarray(x, dtype=float)
        v = x[..., 0]
        a0 = self._a0(x)
        A = gamma * v - x[..., 1] + alpha
        out = np.empty(x.shape)
        # The sign of alpha in the second-order V term follows the generic
        # expansion (d_x a) b, where b_2 = gamma v - u + alpha.
        out[..., 0] = delta * (a0 / eps + delta / 2 / eps * ((1 - 3 * v**2) * a0 / eps - A))
        out[..., 1] = delta * (A + delta / 2 * (gamma * a0 / eps - A))
        return out

    def scheme_cov(self, x, params, delta):
        eps = params.psi[0]
        s2 = params.sigma[0] ** 2
        d = delta
        c01 = (-d**2 / 2 + d**3 / 3) / eps
        cov = s2 * np.array([[d**3 / 3 / eps**2, c01], [c01, d - d**2 + d**3 / 3]])
        return np.broadcast_to(cov, np.shape(x)[:-1] + (2, 2)).copy()

    def invert_increments(self, v_obs, delta, eps):
        """Hidden-coordinate proxy from increments of ``V`` (length ``n``)."""
        v = np.asarray(v_obs, dtype=float)
        return v[:-1] - v[:-1] ** 3 + self.s - eps * np.diff(v) / delta

    def sample_u0(self, v_obs, params, delta, size, rng):
        u0 = self.invert_increments(np.asarray(v_obs)[:2], delta, params.psi[0])[0]
        return np.full((size, 1), u0)


class SynapticConductance(HypoellipticModel):
    """Single-compartment neuron driven by excitatory and inhibitory conductances.

    The conductances are independent square-root (CIR) processes::

        C dV   = (-G_L (V - V_L) - G_E (V - V_E) - G_I (V - V_I) + I_inj) dt
        dG_E   = -(G_E - gbar_E) / tau_E dt + sigma_E sqrt(G_E) dB_E
        dG_I   = -(G_I - gbar_I) / tau_I dt + sigma_I sqrt(G_I) dB_I

    Capacitance, leak and reversal potentials and the injected current are
    known constants.
    """

    name = "sie"
    p = 2
    phi_names = ("tau_E", "tau_I", "gbar_E", "gbar_I")
    sigma_names = ("sigma_E", "sigma_I")
    positive = frozenset({"tau_E", "tau_I", "gbar_E", "gbar_I", "sigma_E", "sigma_I"})
    log_scale = frozenset({"tau_E", "tau_I", "sigma_E", "sigma_I"})
    constant_names = ("C", "G_L", "V_L", "V_E", "V_I", "I_inj")

    def default_constants(self):
        return {"C": 1.0, "G_L": 50.0, "V_L": -70.0, "V_E": 0.0, "V_I": -80.0, "I_inj": -60.0}

    def additive_noise(self):
        return False

    def state_lower(self):
        return np.array([-np.inf, 0.0, 0.0])

    def check_domain(self, x):
        x = as_state_array(x, self.p)
        if not np.all(np.isfinite(x)) or np.any(x[..., 1:] <= 0):
            raise DomainError(f"conductances must be positive and finite: {x}")
        return x

    def drift_a(self, x, params):
        x = np.asarray(x)
        v, ge, gi = x[..., 0], x[..., 1], x[..., 2]
        return (-self.G_L * (v - self.V_L) - ge * (v - self.V_E) - gi * (v - self.V_I) + self.I_inj) / self.C

    def drift_A(self, x, params):
        tau_e, tau_i, gbar_e, gbar_i = params.phi
        x = np.asarray(x)
        out = np.empty(x.shape[:-1] + (2,))
        out[..., 0] = -(x[..., 1] - gbar_e) / tau_e
        out[..., 1] = -(x[..., 2] - gbar_i) / tau_i
        return out

    def gamma_diag(self, x, params):
        x = np.asarray(x)
        g = x[..., 1:]
        if np.any(g <= 0):
            raise ModelViolationError("square-root diffusion needs positive conductances")
        return np.asarray(params.sigma) * np.sqrt(g)

    def dx_a(self, x, params):
        x = np.asarray(x)
        v = x[..., 0]
        out = np.empty(x.shape)
        out[..., 0] = -(self.G_L + x[..., 1] + x[..., 2]) / self.C
        out[..., 1] = -(v - self.V_E) / self.C
        out[..., 2] = -(v - self.V_I) / self.C
        return out

    def dx_A(self, x, params):
        tau_e, tau_i = params.phi[:2]
        out = np.zeros(np.shape(x)[:-1] + (2, 3))
        out[..., 0, 1] = -1.0 / tau_e
        out[..., 1, 2] = -1.0 / tau_i
        return out

    def du_gamma(self, x, params):
        g = np.asarray(x)[..., 1:]
        return np.asarray(params.sigma) / (2 * np.sqrt(g))

    def d2u_gamma(self, x, params):
        g = np.asarray(x)[..., 1:]
        return -np.asarray(params.sigma) / (4 * g**1.5)

    def mean_increment(self, x, params, delta):
        tau_e, tau_i = params.phi[:2]
        x = np.asarray(x, dtype=float)
        v, ge, gi = x[..., 0], x[..., 1], x[..., 2]
        b1 = self.drift_a(x, params)
        A = self.drift_A(x, params)
        b2, b3 = A[..., 0], A[..., 1]
        out = np.empty(x.shape)
        out[..., 0] = delta * (
            b1 - delta / (2 * self.C) * (b1 * (self.G_L + ge + gi) + b2 * (v - self.V_E) + b3 * (v - self.V_I))
        )
        out[..., 1] = delta * (b2 - delta / 2 * b2 / tau_e)
        out[..., 2] = delta * (b3 - delta / 2 * b3 / tau_i)
        return out

    def scheme_cov(self, x, params, delta):
        tau_e, tau_i = params.phi[:2]
        se2, si2 = params.sigma[0] ** 2, params.sigma[1] ** 2
        x = np.asarray(x, dtype=float)
        v, ge, gi = x[..., 0], x[..., 1], x[..., 2]
        d, C = delta, self.C
        qe = se2 * ge
        qi = si2 * gi
        out = np.zeros(x.shape[:-1] + (3, 3))
        out[..., 0, 0] = d**3 / (3 * C**2) * ((v - self.V_E) ** 2 * qe + (v - self.V_I) ** 2 * qi)
        out[..., 0, 1] = out[..., 1, 0] = -qe * (v - self.V_E) / C * (d**2 / 2 + d**3 / (6 * tau_e))
        out[..., 0, 2] = out[..., 2, 0] = -qi * (v - self.V_I) / C * (d**2 / 2 + d**3 / (6 * tau_i))
        out[..., 1, 1] = qe * (d - d**2 / (2 * tau_e) + d**3 / (12 * tau_e**2))
        out[..., 2, 2] = qi * (d - d**2 / (2 * tau_i) + d**3 / (12 * tau_i**2))
        return out

    def stationary_shape(self, params):
        """Gamma shape ``2 gbar / (tau sigma^2)`` of each conductance's stationary law."""
        tau = np.asarray(params.phi[:2])
        gbar = np.asarray(params.phi[2:])
        return 2 * gbar / (tau * np.asarray(params.sigma) ** 2)

    # Cap on the Gamma shape of the initial sampler; the stationary law is far
    # too concentrated to cover paths started away from equilibrium.
    u0_max_shape = 4.0

    def sample_u0(self, v_obs, params, delta, size, rng):
        gbar = np.asarray(params.phi[2:])
        shape = np.minimum(self.stationary_shape(params), self.u0_max_shape)
        return rng.gamma(shape, gbar / shape, size=(size, 2))


MODELS = {
    "ho": HarmonicOscillator,
    "fhn": FitzHughNagumo,
    "sie": SynapticConductance,
}


def get_model(model_id, **constants):
    try:
        cls = MODELS[model_id.lower()]
    except KeyError:
        raise InvalidArgumentError(f"unknown model id {model_id!r}; choose from {sorted(MODELS)}") from None
    return cls(**constants)


def eval_drift(model, x, params):
    """Full drift ``(a, A)`` at a single state, with finiteness checks."""
    x = model.check_domain(as_state_array(x, model.p))
    b = model.drift(x, params)
    bad = ~np.isfinite(b)
    if np.any(bad):
        raise NumericError(f"non-finite drift in coordinate {int(np.flatnonzero(bad.ravel())[0])} at {x}")
    return b


def eval_diffusion_diag(model, x, params):
    x = as_state_array(x, model.p)
    if not np.all(np.isfinite(x)):
        raise DomainError(f"non-finite state {x}")
    g = model.gamma_diag(x, params)
    if np.any(~(g > 0)):
        raise ModelViolationError(f"non-positive diffusion coefficient {g} at {x}")
    return g


def hypoellipticity_margin(model, params, states):
    """Max over ``j`` of ``|d_u a * sigma_j|`` for each state."""
    states = as_state_array(states, model.p)
    prod = model.du_a(states, params) * model.gamma_diag(states, params)
    return np.max(np.abs(prod), axis=-1)


def check_hypoellipticity(model, params, probe_states, tol=HYPO_TOL, return_fraction=False):
    """Sampled check that noise reaches the smooth coordinate.

    At every probe state at least one ``d_{u_j} a * sigma_j`` must exceed
    ``tol`` in magnitude. This is a necessary check on a finite grid, not a
    proof. With ``return_fraction`` the fraction of failing probes is
    returned alongside the verdict.
    """
    states = as_state_array(probe_states, model.p)
    if states.ndim == 1:
        states = states[None, :]
    if states.shape[0] == 0:
        raise InvalidArgumentError("probe set is empty")
    model.check_domain(states)
    ok = hypoellipticity_margin(model, params, states) > tol
    verdict = bool(np.all(ok))
    if return_fraction:
        return verdict, float(np.mean(~ok))
    return verdict


def default_probe_states(model, lower, upper, n=64, seed=0):
    """Quasi-random probe states (scrambled Sobol) in a bounding box."""
    from scipy.stats import qmc

    sampler = qmc.Sobol(d=model.p + 1, scramble=True, seed=seed)
    pts = sampler.random(n)
    return qmc.scale(pts, np.asarray(lower, float), np.asarray(upper, float))
