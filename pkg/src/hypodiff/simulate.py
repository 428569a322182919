"""Synthetic data: exact oscillator sampling, fine Euler paths and the 1.5 scheme."""
import csv
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ExplosionError, InvalidArgumentError
from .models import as_state_array
from .moments import ho_transition_cov, ho_transition_matrix
from .rng import make_rng

FLOOR = 1e-8
BOUND = 1e8


@dataclass(frozen=True)
class NoisePair:
    eta: np.ndarray
    xi: np.ndarray


@dataclass
class Trajectory:
    """Equidistant observations; ``states`` has shape ``(n + 1, p + 1)``, V first."""

    t0: float
    dt: float
    states: np.ndarray
    seed: int = None

    def __post_init__(self):
        if self.seed is not None and not isinstance(self.seed, (int, np.integer)):
            self.seed = None
        self.states = np.atleast_2d(np.asarray(self.states, dtype=float))
        if self.states.shape[0] == 0:
            raise InvalidArgumentError("a trajectory needs at least one state")
        if not self.dt > 0:
            raise InvalidArgumentError(f"dt must be positive, got {self.dt}")

    @property
    def n(self):
        """Number of transitions."""
        return self.states.shape[0] - 1

    @property
    def p(self):
        return self.states.shape[1] - 1

    @property
    def times(self):
        return self.t0 + self.dt * np.arange(self.states.shape[0])

    @property
    def v(self):
        return self.states[:, 0]

    @property
    def u(self):
        return self.states[:, 1:]

    def to_csv(self, path):
        header = ["t", "V"] + [f"U{j + 1}" for j in range(self.p)]
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, row in zip(self.times, self.states):
                w.writerow([f"{t:.17g}"] + [f"{x:.17g}" for x in row])

    @classmethod
    def from_csv(cls, path, seed=None):
        """Read a trajectory CSV; a file with only ``t,V`` gives a (n+1, 1) array."""
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        t = data[:, 0]
        dt = float(t[1] - t[0]) if len(t) > 1 else 1.0
        return cls(t0=float(t[0]), dt=dt, states=data[:, 1:], seed=seed)


def draw_noise_pair(delta, p, rng):
    """Correlated pair with per-component covariance ``[[d, d^2/2], [d^2/2, d^3/3]]``."""
    if not delta > 0:
        raise InvalidArgumentError(f"delta must be positive, got {delta}")
    rng = make_rng(rng)
    z = rng.standard_normal((2, p))
    return noise_from_normals(delta, z[0], z[1])


def noise_from_normals(delta, z1, z2):
    # Cholesky factor of the 2x2 covariance: rows (sqrt d, 0), (d^1.5/2, d^1.5/(2 sqrt 3)).
    sd = np.sqrt(delta)
    eta = sd * z1
    xi = delta * sd * (0.5 * z1 + z2 / (2 * np.sqrt(3.0)))
    return NoisePair(eta=eta, xi=xi)


def simulate_exact_ho(params, x0, delta, n, seed=None):
    """Exact Gaussian transitions of the oscillator; returns ``n + 1`` states."""
    D, gamma = params.phi
    sigma = params.sigma[0]
    rng = make_rng(seed)
    out = np.empty((n + 1, 2))
    out[0] = as_state_array(x0, 1)
    if n > 0:
        F = ho_transition_matrix(D, gamma, delta)
        L = np.linalg.cholesky(ho_transition_cov(D, gamma, sigma, delta))
        eps = rng.standard_normal((n, 2)) @ L.T
        for i in range(n):
            out[i + 1] = F @ out[i] + eps[i]
    return Trajectory(t0=0.0, dt=delta, states=out, seed=seed)


def simulate_euler_fine(model, params, x0, delta_fine, steps, seed=None, floor=FLOOR, backend=None):
    """Euler-Maruyama with noise on the rough coordinates only.

    Coordinates with a positive domain are clamped at ``floor`` after each
    step. Raises :class:`ExplosionError` if a coordinate leaves ``[-1e8, 1e8]``.
    """
    if not delta_fine > 0:
        raise InvalidArgumentError("delta_fine must be positive")
    rng = make_rng(seed)
    z = rng.standard_normal((steps, model.p))
    states, failed = kernels.euler_path(model, params, as_state_array(x0, model.p), delta_fine, z,
                                        floor=floor, bound=BOUND, backend=backend)
    if failed >= 0:
        raise ExplosionError(f"Euler path exploded at step {failed}", step=failed, state=states[failed])
    return Trajectory(t0=0.0, dt=delta_fine, states=states, seed=seed)


def subsample(traj, factor):
    """Keep every ``factor``-th state."""
    if int(factor) != factor or factor < 1:
        raise InvalidArgumentError(f"factor must be a positive integer, got {factor}")
    factor = int(factor)
    return Trajectory(t0=traj.t0, dt=traj.dt * factor, states=traj.states[::factor], seed=traj.seed)


def scheme15_step(model, params, x, delta, noise):
    """One step of the strong order 1.5 scheme from a single state ``x``."""
    x = np.asarray(x, dtype=float)
    b = model.drift(x, params)
    g = model.gamma_diag(x, params)
    g2 = g * g
    eta, xi = noise.eta, noise.xi
    out = x.copy()
    out[0] += (delta * b[0] + delta**2 / 2 * model.dx_a(x, params) @ b
               + delta**2 / 4 * np.sum(g2 * model.d2u_a(x, params))
               + np.sum(model.du_a(x, params) * g * xi))
    dxA = model.dx_A(x, params)
    out[1:] += (delta * b[1:] + delta**2 / 2 * dxA @ b
                + delta**2 / 4 * model.d2u_A(x, params) @ g2
                + g * eta + dxA[:, 1:] @ (g * xi))
    if not model.additive_noise():
        dg = model.du_gamma(x, params)
        d2g = model.d2u_gamma(x, params)
        A = b[1:]
        out[1:] += (0.5 * dg * g * (eta**2 - delta)
                    + (dg * A + 0.5 * g2 * d2g) * (delta * eta - xi)
                    + 0.5 * (dg**2 * g + g2 * d2g) * (eta**2 / 3 - delta) * eta)
    return out


def simulate_scheme15(model, params, x0, delta, n, seed=None, floor=FLOOR):
    """Path of ``n`` steps of the strong order 1.5 scheme."""
    rng = make_rng(seed)
    z = rng.standard_normal((n, 2, model.p))
    out = np.empty((n + 1, model.p + 1))
    out[0] = as_state_array(x0, model.p)
    pos = np.isfinite(model.state_lower()[1:])
    for i in range(n):
        noise = noise_from_normals(delta, z[i, 0], z[i, 1])
        x = scheme15_step(model, params, out[i], delta, noise)
        if np.any(pos):
            x[1:][pos] = np.maximum(x[1:][pos], floor)
        if not np.all(np.abs(x) <= BOUND):
            raise ExplosionError(f"scheme path exploded at step {i + 1}", step=i + 1, state=x)
        out[i + 1] = x
    return Trajectory(t0=0.0, dt=delta, states=out, seed=seed)
