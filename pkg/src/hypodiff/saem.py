"""SAEM with particle smoothing for partially observed hypoelliptic models.

Each iteration samples one hidden path from a particle filter run at the
current parameters, folds its complete-data statistics into a running
stochastic-approximation average and maximizes the resulting surrogate.
The oscillator has a closed-form M-step. FitzHugh-Nagumo maximizes its
complete scheme likelihood and the synaptic model minimizes its rough
contrast, both written as functions of averaged cross-product statistics.
"""
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import FilterCollapseError, InvalidArgumentError, MStepSingularError
from .estimators import ContrastOptions, EstimationResult, alternate_minimize
from .models import ParamSet
from .optim import minimize_restarts
from .rng import make_rng
from .smc import sample_smoothing_path, smc_filter

# -- schedule ---------------------------------------------------------------


@dataclass
class SaemSchedule:
    total_iters: int = 80
    burn_in: int = 30
    exponent: float = 0.9
    particles: int = 100
    growing_particles: bool = False

    def __post_init__(self):
        if self.total_iters < 1 or self.burn_in < 0:
            raise InvalidArgumentError("total_iters must be >= 1 and burn_in >= 0")
        if not 0.5 < self.exponent <= 1:
            raise InvalidArgumentError("exponent must lie in (0.5, 1]")
        if self.particles < 1:
            raise InvalidArgumentError("particles must be >= 1")

    def particles_at(self, m):
        if not self.growing_particles:
            return self.particles
        return max(self.particles, int(math.ceil(m * math.log(max(m, 1)))))


def step_size(m, schedule):
    """``1`` during burn-in, then ``(m - burn_in) ** -exponent``."""
    if m < 1:
        raise InvalidArgumentError("iteration index starts at 1")
    if m <= schedule.burn_in:
        return 1.0
    return float((m - schedule.burn_in) ** (-schedule.exponent))


def sa_update(s_prev, s_new, a):
    """Stochastic approximation step ``s + a (S - s)``."""
    return s_prev + a * (s_new - s_prev)


# -- oscillator ----------------------------------------------------------------


@dataclass(frozen=True)
class HOSufficientStats:
    S1: float
    S2: float
    S3: float
    S4: float
    S5: float
    S6: float

    def as_array(self):
        return np.array([self.S1, self.S2, self.S3, self.S4, self.S5, self.S6])

    @classmethod
    def from_array(cls, a):
        return cls(*(float(x) for x in a))


def _pair(V, U):
    V = np.asarray(V, dtype=float).ravel()
    U = np.asarray(U, dtype=float).ravel()
    if V.shape != U.shape:
        raise InvalidArgumentError(f"V and U lengths differ: {V.size} vs {U.size}")
    if V.size < 2:
        raise InvalidArgumentError("need at least two time points")
    return V, U


def ho_sufficient_stats(V, U, delta, current_params):
    """Statistics of the oscillator's U-regression.

    With ``dU_i = U_{i+1} - U_i``::

        S1 = sum V_i dU_i        S2 = sum U_i dU_i
        S3 = delta sum V_i^2     S4 = delta sum U_i^2     S5 = delta sum U_i V_i
        S6 = sum (dU_i + delta (D V_i + gamma U_i))^2 / (1 - gamma delta + gamma^2 delta^2 / 3)

    ``S6`` uses the current ``(D, gamma)``; its denominator is the scheme's
    U-variance divided by ``delta sigma^2``, so ``S6 / (n delta)``
    estimates ``sigma^2``.
    """
    V, U = _pair(V, U)
    D, gamma = current_params.phi
    v, u = V[:-1], U[:-1]
    du = np.diff(U)
    r = du + delta * (D * v + gamma * u)
    k = 1 - gamma * delta + gamma**2 * delta**2 / 3
    return HOSufficientStats(
        S1=float(np.sum(v * du)),
        S2=float(np.sum(u * du)),
        S3=float(delta * np.sum(v * v)),
        S4=float(delta * np.sum(u * u)),
        S5=float(delta * np.sum(u * v)),
        S6=float(np.sum(r * r) / k),
    )


def ho_mstep(stats, n, delta):
    """Closed-form maximizer ``(D, gamma, sigma^2)``."""
    S1, S2, S3, S4, S5, S6 = stats.as_array()
    den = S3 * S4 - S5**2
    if abs(den) < 1e-14:
        raise MStepSingularError(f"S3*S4 - S5^2 = {den:.3g} is numerically zero")
    D = (S2 * S5 - S1 * S4) / den
    gamma = (S1 * S5 - S2 * S3) / den
    sigma2 = S6 / (n * delta)
    return D, gamma, sigma2


def ho_exact_stats(V, U):
    """Ten statistics that determine the oscillator's scheme likelihood.

    Returns ``(n, sum dX dX^T, sum X dX^T, sum X X^T)`` over transitions, with
    ``X_i = (V_i, U_i)`` and ``dX_i = X_{i+1} - X_i``.
    """
    V, U = _pair(V, U)
    X = np.column_stack([V, U])
    x, dx = X[:-1], np.diff(X, axis=0)
    return x.shape[0], dx.T @ dx, x.T @ dx, x.T @ x


def ho_loglik_from_stats(stats, params, delta):
    """Scheme log-likelihood of a complete oscillator path from :func:`ho_exact_stats`.

    The scheme step is ``dX = A X + e`` with ``A = delta M + delta^2 M^2 / 2``
    and constant ``Cov(e) = Q``, so the log-likelihood is
    ``-n/2 log det(2 pi Q) - tr(Q^-1 R) / 2`` with
    ``R = sum dX dX^T - A sum X dX^T - (A sum X dX^T)^T + A sum X X^T A^T``.
    """
    n, dxdx, xdx, xx = stats
    D, gamma = params.phi
    s2 = params.sigma[0] ** 2
    M = np.array([[0.0, 1.0], [-D, -gamma]])
    A = delta * M + delta**2 / 2 * M @ M
    d = delta
    c01 = d**2 / 2 - d**3 * gamma / 3
    Q = s2 * np.array([[d**3 / 3, c01], [c01, d - d**2 * gamma + d**3 * gamma**2 / 3]])
    R = dxdx - A @ xdx - (A @ xdx).T + A @ xx @ A.T
    _, logdet = np.linalg.slogdet(2 * np.pi * Q)
    return float(-0.5 * n * logdet - 0.5 * np.trace(np.linalg.solve(Q, R)))


# -- cross-product statistics for the numeric M-step ---------------------------


class FHNStats:
    """Averaged cross products that make both FitzHugh-Nagumo contrasts quadratic forms.

    With ``a0 = v - v^3 - u + s`` the scheme's V increment is ``c . g`` for
    features ``g = (a0, (1 - 3 v^2) a0, v, u, 1)`` and coefficients
    ``c = (d/eps, d^2/(2 eps^2), -d^2 gamma/(2 eps), d^2/(2 eps), -d^2 alpha/(2 eps))``;
    the U increment is ``k . h`` for ``h = (v, u, 1, a0)`` and
    ``k = (d(1 - d/2) gamma, -d(1 - d/2), d(1 - d/2) alpha, d^2 gamma / (2 eps))``.
    """

    def __init__(self, model):
        self.model = model
        self.s = model.s

    def compute(self, V, U, delta):
        V, U = _pair(V, U)
        v, u = V[:-1], U[:-1]
        a0 = v - v**3 - u + self.s
        g = np.column_stack([a0, (1 - 3 * v * v) * a0, v, u, np.ones_like(v)])
        h = np.column_stack([v, u, np.ones_like(v), a0])
        dv, du = np.diff(V), np.diff(U)
        return np.concatenate([[v.size, dv @ dv], g.T @ dv, (g.T @ g).ravel(),
                               [du @ du], h.T @ du, (h.T @ h).ravel(),
                               [dv @ du], g.T @ du, h.T @ dv, (g.T @ h).ravel()])

    @staticmethod
    def _unpack(s):
        n, dvdv = s[0], s[1]
        gdv = s[2:7]
        gg = s[7:32].reshape(5, 5)
        dudu = s[32]
        hdu = s[33:37]
        hh = s[37:53].reshape(4, 4)
        return n, dvdv, gdv, gg, dudu, hdu, hh

    @staticmethod
    def _coefficients(params, delta):
        eps = params.psi[0]
        gamma, alpha = params.phi
        d = delta
        c = np.array([d / eps, d**2 / (2 * eps**2), -d**2 * gamma / (2 * eps), d**2 / (2 * eps),
                      -d**2 * alpha / (2 * eps)])
        e = d * (1 - d / 2)
        k = np.array([e * gamma, -e, e * alpha, d**2 * gamma / (2 * eps)])
        return c, k

    def joint_neg2loglik(self, s, params, delta):
        """Minus twice the complete scheme log-likelihood, whose covariance is state free."""
        n, dvdv, gdv, gg, dudu, hdu, hh = self._unpack(s)
        dvdu = s[53]
        gdu = s[54:59]
        hdv = s[59:63]
        gh = s[63:83].reshape(5, 4)
        c, k = self._coefficients(params, delta)
        rvv = dvdv - 2 * c @ gdv + c @ gg @ c
        ruu = dudu - 2 * k @ hdu + k @ hh @ k
        ruv = dvdu - c @ gdu - k @ hdv + c @ gh @ k
        cov = self.model.scheme_cov(np.zeros(2), params, delta)
        det = cov[0, 0] * cov[1, 1] - cov[0, 1] ** 2
        if not det > 0:
            return math.inf
        quad = (cov[1, 1] * rvv - 2 * cov[0, 1] * ruv + cov[0, 0] * ruu) / det
        return n * math.log((2 * math.pi) ** 2 * det) + quad

    def contrast_psi(self, s, params, delta):
        n, dvdv, gdv, gg, *_ = self._unpack(s)
        eps = params.psi[0]
        sigma = params.sigma[0]
        d = delta
        c, _ = self._coefficients(params, d)
        quad = dvdv - 2 * c @ gdv + c @ gg @ c
        ratio = (sigma / eps) ** 2
        return 3.0 / d**3 * quad / ratio + n * math.log(ratio)

    def contrast_phi_sigma(self, s, params, delta):
        n, _, _, _, dudu, hdu, hh = self._unpack(s)
        s2 = params.sigma[0] ** 2
        d = delta
        _, k = self._coefficients(params, d)
        quad = dudu - 2 * k @ hdu + k @ hh @ k
        return n * math.log(s2) + quad / (d * s2)


class SIEStats:
    """Per-conductance sums that make the rough-coordinate contrast explicit.

    For conductance ``G`` with residual ``r = dG + c (G - gbar)``,
    ``c = (d / tau)(1 - d / (2 tau))``, the contrast is
    ``n log sigma^2 + sum log G + sum r^2 / G / (d sigma^2)`` and ``sum r^2 / G``
    expands in the seven sums ``n, dG^2/G, dG, dG/G, G, 1/G, log G``.
    """

    def __init__(self, model):
        self.model = model

    def compute(self, V, U, delta):
        U = np.asarray(U, dtype=float)
        out = []
        for j in range(2):
            G = U[:-1, j]
            dG = np.diff(U[:, j])
            out.extend([G.size, np.sum(dG * dG / G), np.sum(dG), np.sum(dG / G), np.sum(G),
                        np.sum(1 / G), np.sum(np.log(G))])
        return np.array(out, dtype=float)

    def contrast_psi(self, s, params, delta):
        raise InvalidArgumentError("the synaptic model has no smooth-drift parameter")

    def contrast_phi_sigma(self, s, params, delta):
        total = 0.0
        for j in range(2):
            n, dg2_g, dg, dg_g, g, inv_g, log_g = s[7 * j:7 * j + 7]
            tau, gbar, sig = params.phi[j], params.phi[2 + j], params.sigma[j]
            c = delta / tau * (1 - delta / (2 * tau))
            r2 = (dg2_g + 2 * c * (dg - gbar * dg_g)
                  + c * c * (g - 2 * n * gbar + gbar * gbar * inv_g))
            total += n * math.log(sig * sig) + log_g + r2 / (delta * sig * sig)
        return total


class SIEPathAverage:
    """Stochastic average of the synaptic model's complete scheme log-likelihood.

    The scheme covariance depends on the state through a sum of two terms,
    so the complete log-likelihood has no finite set of sufficient
    statistics. The average is kept instead as a weighted set of imputed
    paths: each update multiplies the stored weights by ``1 - a`` and adds
    the new path with weight ``a``. Paths whose weight drops below
    ``prune`` are discarded.

    The density of a step factors into the Gaussian law of the conductance
    increments and the conditional law of the V increment given them, both
    diagonal, which keeps evaluation elementwise.
    """

    def __init__(self, model, prune=1e-4):
        self.model = model
        self.prune = prune
        self.paths = []
        self.weights = []
        self._cache = None

    def update(self, V, U, a):
        V, U = np.asarray(V, dtype=float), np.asarray(U, dtype=float)
        X = np.column_stack([V, U])
        self.weights = [w * (1 - a) for w in self.weights]
        keep = [i for i, w in enumerate(self.weights) if w >= self.prune]
        self.paths = [self.paths[i] for i in keep] + [X]
        self.weights = [self.weights[i] for i in keep] + [a]
        self._cache = None

    def _arrays(self):
        if self._cache is None:
            x = np.concatenate([X[:-1] for X in self.paths])
            dx = np.concatenate([np.diff(X, axis=0) for X in self.paths])
            w = np.concatenate([np.full(X.shape[0] - 1, wt) for X, wt in zip(self.paths, self.weights)])
            m = self.model
            v, ge, gi = x[:, 0], x[:, 1], x[:, 2]
            self._cache = dict(v=v, ge=ge, gi=gi, dv=dx[:, 0], dge=dx[:, 1], dgi=dx[:, 2], w=w,
                               b1=m.drift_a(x, None), tot=m.G_L + ge + gi,
                               we=(v - m.V_E) / m.C, wi=(v - m.V_I) / m.C,
                               logge=np.log(ge), loggi=np.log(gi))
        return self._cache

    def loglik(self, params, delta):
        """Weighted complete scheme log-likelihood at ``params``."""
        c = self._arrays()
        tau_e, tau_i, gbar_e, gbar_i = params.phi
        se2, si2 = params.sigma[0] ** 2, params.sigma[1] ** 2
        d, C = delta, self.model.C
        if min(tau_e, tau_i, *params.sigma) <= 0:
            return -math.inf
        b2 = -(c["ge"] - gbar_e) / tau_e
        b3 = -(c["gi"] - gbar_i) / tau_i
        mu_v = d * (c["b1"] - d / (2 * C) * (c["b1"] * c["tot"] + b2 * (c["we"] * C) + b3 * (c["wi"] * C)))
        re = c["dge"] - d * b2 * (1 - d / (2 * tau_e))
        ri = c["dgi"] - d * b3 * (1 - d / (2 * tau_i))
        c1e, c1i = d**2 / 2 + d**3 / (6 * tau_e), d**2 / 2 + d**3 / (6 * tau_i)
        c2e = d - d**2 / (2 * tau_e) + d**3 / (12 * tau_e**2)
        c2i = d - d**2 / (2 * tau_i) + d**3 / (12 * tau_i**2)
        ke, ki = d**3 / 3 - c1e**2 / c2e, d**3 / 3 - c1i**2 / c2i
        if min(c2e, c2i, ke, ki) <= 0:
            return -math.inf
        rv = c["dv"] - mu_v + c["we"] * (c1e / c2e) * re + c["wi"] * (c1i / c2i) * ri
        var_v = se2 * c["ge"] * c["we"] ** 2 * ke + si2 * c["gi"] * c["wi"] ** 2 * ki
        var_e = se2 * c2e * c["ge"]
        var_i = si2 * c2i * c["gi"]
        terms = (np.log(var_v) + rv * rv / var_v + np.log(var_e) + re * re / var_e
                 + np.log(var_i) + ri * ri / var_i)
        return float(-0.5 * np.sum(c["w"] * (terms + 3 * math.log(2 * math.pi))))


def stats_for(model):
    if model.name == "fhn":
        return FHNStats(model)
    if model.name == "sie":
        return SIEStats(model)
    raise InvalidArgumentError(f"no cross-product statistics for model {model.name}")


# -- main loop -------------------------------------------------------------------


@dataclass
class SaemTrace:
    a: list = field(default_factory=list)
    theta: list = field(default_factory=list)
    stats: list = field(default_factory=list)
    loglik: list = field(default_factory=list)
    particles: list = field(default_factory=list)
    path_mean: list = field(default_factory=list)
    result: EstimationResult = None

    def __len__(self):
        return len(self.theta)

    def write_csv(self, path, model):
        import csv

        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            nstat = len(self.stats[0]) if self.stats else 0
            w.writerow(["m", "a_m"] + list(model.param_names) + [f"s{j + 1}" for j in range(nstat)]
                       + ["loglik", "particles"])
            for m in range(len(self.theta)):
                w.writerow([m + 1, f"{self.a[m]:.17g}"] + [f"{x:.17g}" for x in self.theta[m]]
                           + [f"{x:.17g}" for x in self.stats[m]]
                           + [f"{self.loglik[m]:.17g}", self.particles[m]])


def _admissible(model, vec):
    try:
        model.validate_params(model.decode(vec))
    except InvalidArgumentError:
        return False
    return True


def _joint_mstep(model, objective, params, fixed, opts):
    """Minimize ``objective(params)`` jointly over the free parameters."""
    names = model.param_names
    idx = [i for i, k in enumerate(names) if k not in fixed]
    positive = np.array([names[i] in model.log_scale for i in idx])
    vec = model.encode(params)

    def f(sub):
        full = vec.copy()
        full[idx] = sub
        return objective(model.decode(full))

    res = minimize_restarts(f, vec[idx], positive=positive, tol=opts.simplex_tol,
                            maxfev=opts.maxfev * len(idx), restarts=opts.restarts, seed=opts.seed)
    vec[idx] = res.x
    return vec


MSTEPS = ("joint", "split")


def saem_run(model, v_obs, init, schedule=None, seed=None, delta=None, proposal_kind="conditional",
             u0_sampler=None, fixed=(), mstep_options=None, backend=None, mstep="joint"):
    """Run SAEM-SMC on the observed smooth coordinate ``v_obs``.

    ``fixed`` names parameters held at their initial value. With
    ``mstep="joint"`` the non-oscillator models maximize the averaged
    complete scheme log-likelihood, V-U noise correlation included;
    ``"split"`` minimizes the averaged contrasts instead. The split version
    has a biased fixed point: the imputed hidden path is tied to the V
    increments at the current parameters, and the contrasts drop the part
    of the likelihood that would correct for it. Returns a
    :class:`SaemTrace` whose ``result`` holds the final estimate. A filter
    collapse is retried once with fresh randomness; a second collapse
    raises :class:`FilterCollapseError` with the partial trace attached as
    ``err.trace``. An M-step that is singular or leaves the parameter space
    keeps the previous parameters.
    """
    schedule = schedule or SaemSchedule()
    v_obs = np.asarray(v_obs, dtype=float)
    if delta is None or not delta > 0:
        raise InvalidArgumentError("delta must be positive")
    model.validate_params(init)
    if mstep not in MSTEPS:
        raise InvalidArgumentError(f"mstep must be one of {MSTEPS}")
    rng = make_rng(seed)
    n = v_obs.size - 1
    is_ho = model.name == "ho"
    if is_ho and fixed:
        raise InvalidArgumentError("the closed-form oscillator M-step estimates all parameters")
    calc = None if is_ho else stats_for(model)
    paths = SIEPathAverage(model) if model.name == "sie" and mstep == "joint" else None
    opts = mstep_options or ContrastOptions(max_outer_iters=3, restarts=0, maxfev=400, simplex_tol=1e-7)
    opts = ContrastOptions(max_outer_iters=opts.max_outer_iters, simplex_tol=opts.simplex_tol,
                           init=init, fixed=tuple(fixed), maxfev=opts.maxfev, restarts=opts.restarts,
                           seed=opts.seed)
    has_psi = len(model.psi_names) > 0
    theta = model.encode(init)
    s = None
    trace = SaemTrace()
    n_singular = 0
    for m in range(1, schedule.total_iters + 1):
        params = model.decode(theta)
        K = schedule.particles_at(m)
        ps = None
        for attempt in range(2):
            try:
                ps = smc_filter(model, params, v_obs, u0_sampler=u0_sampler, K=K,
                                proposal_kind=proposal_kind, delta=delta, seed=rng, backend=backend)
                break
            except FilterCollapseError as err:
                if attempt == 1:
                    err.trace = trace
                    raise
        path = sample_smoothing_path(ps, rng)
        if is_ho:
            S = ho_sufficient_stats(v_obs, path[:, 0], delta, params).as_array()
        else:
            S = calc.compute(v_obs, path, delta)
        a = step_size(m, schedule)
        s = S.copy() if s is None else sa_update(s, S, a)
        if paths is not None:
            paths.update(v_obs, path, 1.0 if m == 1 else a)
        if is_ho:
            try:
                D, gamma, sigma2 = ho_mstep(HOSufficientStats.from_array(s), n, delta)
                new = np.array([D, gamma, math.sqrt(sigma2) if sigma2 > 0 else float("nan")])
                if not _admissible(model, new):
                    raise MStepSingularError("M-step left the parameter space")
                theta = new
            except MStepSingularError:
                n_singular += 1
        elif mstep == "joint":
            if paths is not None:
                def objective(p):
                    return -2 * paths.loglik(p, delta)
            else:
                def objective(p, s_now=s):
                    return calc.joint_neg2loglik(s_now, p, delta)
            new = _joint_mstep(model, objective, params, set(fixed), opts)
            if _admissible(model, new) and np.all(np.isfinite(new)):
                theta = new
            else:
                n_singular += 1
        else:
            s_now = s

            def psi_fun(p, s_now=s_now):
                return calc.contrast_psi(s_now, p, delta)

            def rest_fun(p, s_now=s_now):
                return calc.contrast_phi_sigma(s_now, p, delta)

            opts.init = params
            new_params, _, _ = alternate_minimize(model, params, psi_fun if has_psi else None, rest_fun, opts)
            new = model.encode(new_params)
            if _admissible(model, new):
                theta = new
            else:
                n_singular += 1
        trace.a.append(a)
        trace.theta.append(theta.copy())
        trace.stats.append(s.copy())
        trace.loglik.append(ps.log_likelihood)
        trace.particles.append(K)
        trace.path_mean.append(path.mean(axis=0))
    final = model.decode(theta)
    contrasts = (math.nan, math.nan)
    if not is_ho:
        contrasts = (calc.contrast_psi(s, final, delta) if has_psi else math.nan,
                     calc.contrast_phi_sigma(s, final, delta))
    trace.result = EstimationResult(model=model.name, params=final, param_names=model.param_names,
                                    contrast_values=contrasts, iterations=schedule.total_iters,
                                    converged=bool(np.all(np.isfinite(theta))),
                                    seed=seed if isinstance(seed, (int, np.integer)) else None,
                                    extra={"singular_msteps": n_singular})
    return trace
