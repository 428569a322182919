"""Numpy implementations of the compiled inner loops.

These mirror ``_kernels.pyx`` step for step and consume the same pre-drawn
random numbers, so both backends return the same arrays up to rounding.
They also work for any model implementing the contract, not only the
shipped ones.
"""
import numpy as np

from .moments import mean_and_cov

LOG2PI = np.log(2 * np.pi)


def chol_clipped(C):
    """Cholesky factor of a stack of small matrices, clipping negative pivots to 0."""
    p = C.shape[-1]
    L = np.zeros(C.shape)
    for j in range(p):
        d = C[..., j, j] - np.sum(L[..., j, :j] ** 2, axis=-1)
        L[..., j, j] = np.sqrt(np.maximum(d, 0.0))
        ljj = L[..., j, j]
        safe = np.where(ljj > 0, ljj, 1.0)
        for i in range(j + 1, p):
            off = C[..., i, j] - np.sum(L[..., i, :j] * L[..., j, :j], axis=-1)
            L[..., i, j] = np.where(ljj > 0, off / safe, 0.0)
    return L


def normal_logpdf(r, var):
    with np.errstate(divide="ignore", invalid="ignore"):
        out = -0.5 * (LOG2PI + np.log(var) + r * r / var)
    return np.where(var > 0, out, -np.inf)


def split_moments(model, params, v_prev, U_prev, delta):
    """Scheme moments from states ``(v_prev, U_prev[k])`` split into V and U blocks."""
    K, p = U_prev.shape
    x = np.empty((K, p + 1))
    x[:, 0] = v_prev
    x[:, 1:] = U_prev
    m, c = mean_and_cov(model, x, params, delta)
    c = 0.5 * (c + np.swapaxes(c, -1, -2))
    mu = x + m
    return mu[:, 0], mu[:, 1:], c[:, 0, 0], c[:, 1:, 0], c[:, 1:, 1:]


def conditional_step(model, params, v_prev, v_cur, U_prev, delta, z):
    """Propose from ``U_i | V_i = v_cur`` and weight by the V-marginal density.

    Returns ``(U, logw, cond_mean, cond_cov)``.
    """
    muV, muU, sVV, sUV, sUU = split_moments(model, params, v_prev, U_prev, delta)
    ok = sVV > 0
    safe = np.where(ok, sVV, 1.0)
    r = v_cur - muV
    mean = np.where(ok[:, None], muU + sUV / safe[:, None] * r[:, None], muU)
    cov = sUU - sUV[:, :, None] * sUV[:, None, :] / safe[:, None, None]
    L = chol_clipped(cov)
    U = np.where(ok[:, None], mean + np.einsum("kij,kj->ki", L, z), muU)
    logw = normal_logpdf(r, sVV)
    return U, logw, mean, cov


def transition_step(model, params, v_prev, v_cur, U_prev, delta, z):
    """Propose from the U-marginal of the scheme and weight by ``p(V_i | U_i)``."""
    muV, muU, sVV, sUV, sUU = split_moments(model, params, v_prev, U_prev, delta)
    p = muU.shape[1]
    L = chol_clipped(sUU)
    diag = np.diagonal(L, axis1=-2, axis2=-1)
    ok = np.all(diag > 0, axis=-1)
    U = np.where(ok[:, None], muU + np.einsum("kij,kj->ki", L, z), muU)
    eye = np.eye(p)
    S = np.where(ok[:, None, None], sUU, eye)
    g = np.linalg.solve(S, sUV[..., None])[..., 0]
    mean = muV + np.sum(g * (U - muU), axis=-1)
    var = sVV - np.sum(g * sUV, axis=-1)
    logw = np.where(ok, normal_logpdf(v_cur - mean, var), -np.inf)
    return U, logw


def positive_mask(model):
    return np.isfinite(model.state_lower()[1:])


def smc_sweep(model, params, v_obs, delta, u0, normals, uniforms, conditional, floor):
    v_obs = np.asarray(v_obs, dtype=float)
    n = v_obs.shape[0] - 1
    K, p = u0.shape
    part = np.zeros((n + 1, K, p))
    logw = np.full((n + 1, K), -np.inf)
    anc = np.zeros((n, K), dtype=np.intp)
    ll = np.full(n, -np.inf)
    part[0] = u0
    logw[0] = 0.0
    pos = positive_mask(model)
    step = conditional_step if conditional else transition_step
    for i in range(1, n + 1):
        lw = logw[i - 1]
        w = np.exp(lw - lw.max())
        cum = np.cumsum(w) / np.sum(w)
        a = np.minimum(np.searchsorted(cum, uniforms[i - 1], side="right"), K - 1)
        anc[i - 1] = a
        res = step(model, params, v_obs[i - 1], v_obs[i], part[i - 1, a], delta, normals[i - 1])
        U, lw_i = res[0], res[1]
        if np.any(pos):
            U[:, pos] = np.maximum(U[:, pos], floor)
        part[i] = U
        logw[i] = lw_i
        mx = lw_i.max()
        if not np.isfinite(mx):
            break
        ll[i - 1] = mx + np.log(np.mean(np.exp(lw_i - mx)))
    return part, logw, anc, ll


def euler_path(model, params, x0, h, z, floor, bound):
    steps, p = z.shape
    out = np.empty((steps + 1, p + 1))
    x = np.array(x0, dtype=float)
    out[0] = x
    pos = positive_mask(model)
    sh = np.sqrt(h)
    failed = -1
    for k in range(steps):
        b = model.drift(x, params)
        g = model.gamma_diag(x, params)
        x = x + h * b
        x[1:] += g * sh * z[k]
        if np.any(pos):
            x[1:][pos] = np.maximum(x[1:][pos], floor)
        out[k + 1] = x
        if not np.all(np.abs(x) <= bound):
            failed = k + 1
            break
    return out, failed
