"""Particle filter for the hidden rough coordinates given observations of V.

Each step resamples ancestors multinomially, proposes new hidden states
from the scheme Gaussian and weights them. Two proposals are available:

* ``"conditional"``: ``U_i | V_i`` under the joint scheme Gaussian from the
  resampled ancestor. The weight then reduces to the V-marginal density.
* ``"transition"``: the U-marginal of the scheme Gaussian, weighted by the
  conditional density of ``V_i`` given the proposed ``U_i``.
"""
import csv
from dataclasses import dataclass

import numpy as np

from . import _pykernels, kernels
from .errors import DegeneracyError, FilterCollapseError, InvalidArgumentError
from .moments import gaussian_logpdf, mean_and_cov
from .rng import make_rng

PROPOSALS = ("conditional", "transition")


@dataclass
class ParticleSystem:
    """Output of one filtering pass.

    Arrays are time-major: ``particles`` has shape ``(n + 1, K, p)`` and
    ``ancestors[i - 1, k]`` is the index at time ``i - 1`` of the parent of
    particle ``k`` at time ``i``.
    """

    particles: np.ndarray
    log_weights: np.ndarray
    ancestors: np.ndarray
    log_likelihood_increments: np.ndarray
    v_obs: np.ndarray
    delta: float

    @property
    def n(self):
        return self.particles.shape[0] - 1

    @property
    def K(self):
        return self.particles.shape[1]

    @property
    def weights(self):
        lw = self.log_weights
        w = np.exp(lw - lw.max(axis=1, keepdims=True))
        return w / w.sum(axis=1, keepdims=True)

    @property
    def log_likelihood(self):
        return float(np.sum(self.log_likelihood_increments))

    def filtered_mean(self):
        return np.einsum("ik,ikj->ij", self.weights, self.particles)

    def filtered_sd(self):
        W = self.weights
        m = np.einsum("ik,ikj->ij", W, self.particles)
        var = np.einsum("ik,ikj->ij", W, (self.particles - m[:, None, :]) ** 2)
        return np.sqrt(np.maximum(var, 0.0))

    def ess(self):
        return 1.0 / np.sum(self.weights**2, axis=1)

    def to_csv(self, path, t0=0.0):
        m, sd, ess = self.filtered_mean(), self.filtered_sd(), self.ess()
        p = m.shape[1]
        header = (["t"] + [f"filtered_mean_U{j + 1}" for j in range(p)]
                  + [f"filtered_sd_U{j + 1}" for j in range(p)] + ["ess"])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for i in range(self.n + 1):
                w.writerow([f"{t0 + i * self.delta:.17g}"] + [f"{x:.17g}" for x in m[i]]
                           + [f"{x:.17g}" for x in sd[i]] + [f"{ess[i]:.17g}"])


def _stack(u_prev, p):
    u = np.asarray(u_prev, dtype=float)
    single = u.ndim == 1
    return np.atleast_2d(u).reshape(-1, p), single


def conditional_moments(model, params, v_prev, v_cur, u_prev, delta):
    """Mean and covariance of ``U_i`` given ``V_i = v_cur`` under the scheme Gaussian."""
    U, _ = _stack(u_prev, model.p)
    muV, muU, sVV, sUV, sUU = _pykernels.split_moments(model, params, v_prev, U, delta)
    if np.any(~(sVV > 0)):
        raise DegeneracyError(f"scheme variance of V is not positive from v={v_prev}")
    mean = muU + sUV / sVV[:, None] * (v_cur - muV)[:, None]
    cov = sUU - sUV[:, :, None] * sUV[:, None, :] / sVV[:, None, None]
    return mean, cov


def propose_conditional(model, params, v_prev, v_cur, u_prev, delta, rng):
    """Draw ``U_i`` from its conditional law given both ends of ``V``.

    ``u_prev`` may be a single hidden state ``(p,)`` or a stack ``(K, p)``.
    Returns the sample(s) and the conditional log-density of each.
    """
    U, single = _stack(u_prev, model.p)
    rng = make_rng(rng)
    mean, cov = conditional_moments(model, params, v_prev, v_cur, U, delta)
    L = _pykernels.chol_clipped(cov)
    u = mean + np.einsum("kij,kj->ki", L, rng.standard_normal(mean.shape))
    log_q = gaussian_logpdf(u - mean, cov)
    return (u[0], float(log_q[0])) if single else (u, log_q)


def propose_transition(model, params, v_prev, u_prev, delta, rng):
    """Draw ``U_i`` from the U-marginal of the scheme Gaussian."""
    U, single = _stack(u_prev, model.p)
    rng = make_rng(rng)
    _, muU, sVV, _, sUU = _pykernels.split_moments(model, params, v_prev, U, delta)
    if np.any(~(sVV > 0)):
        raise DegeneracyError(f"scheme variance of V is not positive from v={v_prev}")
    L = np.linalg.cholesky(sUU)
    u = muU + np.einsum("kij,kj->ki", L, rng.standard_normal(muU.shape))
    log_q = gaussian_logpdf(u - muU, sUU)
    return (u[0], float(log_q[0])) if single else (u, log_q)


def log_weight(model, params, v_prev, v_cur, u_prev, u_new, delta, kind="conditional", literal=False):
    """Unnormalized log-weight of proposed particles.

    With ``literal=True`` the weight is computed as the joint scheme density
    of ``(v_cur, u_new)`` divided by the proposal density; otherwise the
    simplified form used by the filter.
    """
    U, _ = _stack(u_prev, model.p)
    Un, _ = _stack(u_new, model.p)
    x = np.column_stack([np.full(U.shape[0], v_prev), U])
    if literal:
        m, c = mean_and_cov(model, x, params, delta)
        xt = np.column_stack([np.full(Un.shape[0], v_cur), Un])
        joint = gaussian_logpdf(xt - x - m, c)
        if kind == "conditional":
            mean, cov = conditional_moments(model, params, v_prev, v_cur, U, delta)
            return joint - gaussian_logpdf(Un - mean, cov)
        return joint - gaussian_logpdf(Un - x[:, 1:] - m[:, 1:], c[:, 1:, 1:])
    muV, muU, sVV, sUV, sUU = _pykernels.split_moments(model, params, v_prev, U, delta)
    if kind == "conditional":
        return _pykernels.normal_logpdf(v_cur - muV, sVV)
    g = np.linalg.solve(sUU, sUV[..., None])[..., 0]
    mean = muV + np.sum(g * (Un - muU), axis=-1)
    var = sVV - np.sum(g * sUV, axis=-1)
    return _pykernels.normal_logpdf(v_cur - mean, var)


def resample_multinomial(weights, rng, size=None):
    """I.i.d. categorical draws of indices with probabilities ``weights``."""
    w = np.asarray(weights, dtype=float)
    if w.ndim != 1 or w.size == 0 or np.any(w < 0) or not np.all(np.isfinite(w)):
        raise InvalidArgumentError("weights must be a finite non-negative vector")
    if abs(w.sum() - 1.0) > 1e-9:
        raise InvalidArgumentError(f"weights must sum to 1, got {w.sum()}")
    rng = make_rng(rng)
    size = w.size if size is None else size
    cum = np.cumsum(w)
    cum /= cum[-1]
    return np.minimum(np.searchsorted(cum, rng.random(size), side="right"), w.size - 1)


def point_u0_sampler(u0):
    """Initial sampler that puts every particle at the known hidden state ``u0``."""
    u0 = np.atleast_1d(np.asarray(u0, dtype=float))
    if not np.all(np.isfinite(u0)):
        raise InvalidArgumentError("u0 must be finite")

    def sampler(v_obs, params, delta, size, rng):
        return np.tile(u0, (size, 1))

    return sampler


def smc_filter(model, params, v_obs, u0_sampler=None, K=100, proposal_kind="conditional", delta=None,
               seed=None, floor=1e-8, backend=None):
    """Filter the hidden coordinates of ``model`` from the observed ``v_obs``.

    ``u0_sampler(v_obs, params, delta, K, rng)`` returns initial hidden states
    ``(K, p)``; by default the model's own initial law is used. The initial
    particles all get weight one. Raises :class:`FilterCollapseError` when
    every weight at some step is zero or non-finite.
    """
    v_obs = np.asarray(v_obs, dtype=float)
    if K < 1:
        raise InvalidArgumentError("K must be at least 1")
    if v_obs.ndim != 1 or v_obs.size < 2:
        raise InvalidArgumentError("need at least two observations")
    if proposal_kind not in PROPOSALS:
        raise InvalidArgumentError(f"proposal_kind must be one of {PROPOSALS}")
    if delta is None or not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    rng = make_rng(seed)
    sampler = u0_sampler or model.sample_u0
    u0 = np.asarray(sampler(v_obs, params, delta, K, rng), dtype=float).reshape(K, model.p)
    n = v_obs.size - 1
    uniforms = rng.random((n, K))
    normals = rng.standard_normal((n, K, model.p))
    part, logw, anc, ll = kernels.smc_sweep(model, params, v_obs, delta, u0, normals, uniforms,
                                            conditional=proposal_kind == "conditional", floor=floor,
                                            backend=backend)
    bad = np.flatnonzero(~np.isfinite(ll))
    if bad.size:
        i = int(bad[0]) + 1
        raise FilterCollapseError(f"all particle weights vanished at time index {i}", time_index=i)
    return ParticleSystem(particles=part, log_weights=logw, ancestors=anc,
                          log_likelihood_increments=ll, v_obs=v_obs, delta=float(delta))


def sample_smoothing_path(ps, rng):
    """Pick a terminal particle by its weight and trace its ancestry back to time 0."""
    rng = make_rng(rng)
    k = int(resample_multinomial(ps.weights[-1], rng, size=1)[0])
    path = np.empty((ps.n + 1, ps.particles.shape[2]))
    path[ps.n] = ps.particles[ps.n, k]
    for i in range(ps.n - 1, -1, -1):
        k = ps.ancestors[i, k]
        path[i] = ps.particles[i, k]
    return path
