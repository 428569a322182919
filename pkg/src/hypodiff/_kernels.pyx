# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled inner loops for the shipped models.

Model ids: 0 harmonic oscillator, 1 FitzHugh-Nagumo, 2 synaptic conductance.
``theta`` is the flat parameter vector (psi, phi, sigma) and ``consts`` the
model's known constants in declaration order. All random numbers are drawn
by the caller so that this module and the numpy fallback consume identical
streams.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt, log, exp, fabs, INFINITY, isfinite

cnp.import_array()

cdef double LOG2PI = 1.8378770664093453


cdef inline int model_p(int model_id) noexcept nogil:
    return 2 if model_id == 2 else 1


cdef inline void drift_diff(int mid, const double* th, const double* cs, const double* x,
                            double* b, double* g) noexcept nogil:
    cdef double v = x[0]
    if mid == 0:
        b[0] = x[1]
        b[1] = -th[0] * v - th[1] * x[1]
        g[0] = th[2]
    elif mid == 1:
        b[0] = (v - v * v * v - x[1] + cs[0]) / th[0]
        b[1] = th[1] * v - x[1] + th[2]
        g[0] = th[3]
    else:
        b[0] = (-cs[1] * (v - cs[2]) - x[1] * (v - cs[3]) - x[2] * (v - cs[4]) + cs[5]) / cs[0]
        b[1] = -(x[1] - th[2]) / th[0]
        b[2] = -(x[2] - th[3]) / th[1]
        g[0] = th[4] * sqrt(x[1])
        g[1] = th[5] * sqrt(x[2])


cdef inline void scheme(int mid, const double* th, const double* cs, const double* x, double d,
                        double* m, double* c) noexcept nogil:
    """Mean increment ``m`` (p+1) and row-major covariance ``c`` ((p+1)^2)."""
    cdef double v = x[0], u, w, a0, A, s2, eps, c01, ge, gi, b1, b2, b3, qe, qi, C
    if mid == 0:
        u = x[1]
        w = th[0] * v + th[1] * u
        m[0] = d * (u - w * d / 2)
        m[1] = d * (-w + (th[1] * w - th[0] * u) * d / 2)
        s2 = th[2] * th[2]
        c01 = s2 * (d * d / 2 - d * d * d * th[1] / 3)
        c[0] = s2 * d * d * d / 3
        c[1] = c01
        c[2] = c01
        c[3] = s2 * (d - d * d * th[1] + d * d * d * th[1] * th[1] / 3)
    elif mid == 1:
        eps = th[0]
        u = x[1]
        a0 = v - v * v * v - u + cs[0]
        A = th[1] * v - u + th[2]
        m[0] = d * (a0 / eps + d / 2 / eps * ((1 - 3 * v * v) * a0 / eps - A))
        m[1] = d * (A + d / 2 * (th[1] * a0 / eps - A))
        s2 = th[3] * th[3]
        c01 = s2 * (-d * d / 2 + d * d * d / 3) / eps
        c[0] = s2 * d * d * d / 3 / (eps * eps)
        c[1] = c01
        c[2] = c01
        c[3] = s2 * (d - d * d + d * d * d / 3)
    else:
        C = cs[0]
        ge = x[1]
        gi = x[2]
        b1 = (-cs[1] * (v - cs[2]) - ge * (v - cs[3]) - gi * (v - cs[4]) + cs[5]) / C
        b2 = -(ge - th[2]) / th[0]
        b3 = -(gi - th[3]) / th[1]
        m[0] = d * (b1 - d / (2 * C) * (b1 * (cs[1] + ge + gi) + b2 * (v - cs[3]) + b3 * (v - cs[4])))
        m[1] = d * (b2 - d / 2 * b2 / th[0])
        m[2] = d * (b3 - d / 2 * b3 / th[1])
        qe = th[4] * th[4] * ge
        qi = th[5] * th[5] * gi
        c[0] = d * d * d / (3 * C * C) * ((v - cs[3]) * (v - cs[3]) * qe + (v - cs[4]) * (v - cs[4]) * qi)
        c[1] = -qe * (v - cs[3]) / C * (d * d / 2 + d * d * d / (6 * th[0]))
        c[2] = -qi * (v - cs[4]) / C * (d * d / 2 + d * d * d / (6 * th[1]))
        c[3] = c[1]
        c[4] = qe * (d - d * d / (2 * th[0]) + d * d * d / (12 * th[0] * th[0]))
        c[5] = 0.0
        c[6] = c[2]
        c[7] = 0.0
        c[8] = qi * (d - d * d / (2 * th[1]) + d * d * d / (12 * th[1] * th[1]))


def euler_path(int model_id, double[::1] theta, double[::1] consts, double[::1] x0,
               double h, double[:, ::1] z, double floor, double bound):
    """Euler-Maruyama path on a fine grid.

    ``z`` holds standard normals, one row per step. Conductances of model 2
    are clamped at ``floor`` after every step (full truncation). Returns
    ``(states, failed_step)`` with ``failed_step = -1`` when no coordinate
    exceeded ``bound``.
    """
    cdef int p = model_p(model_id)
    cdef Py_ssize_t steps = z.shape[0], k, j
    out_arr = np.empty((steps + 1, p + 1))
    cdef double[:, ::1] out = out_arr
    cdef double x[3]
    cdef double b[3]
    cdef double g[2]
    cdef double sh = sqrt(h)
    cdef Py_ssize_t failed = -1
    for j in range(p + 1):
        x[j] = x0[j]
        out[0, j] = x[j]
    with nogil:
        for k in range(steps):
            drift_diff(model_id, &theta[0], &consts[0] if consts.shape[0] > 0 else NULL, x, b, g)
            x[0] = x[0] + h * b[0]
            for j in range(p):
                x[j + 1] = x[j + 1] + h * b[j + 1] + g[j] * sh * z[k, j]
            if model_id == 2:
                for j in range(1, 3):
                    if x[j] < floor:
                        x[j] = floor
            for j in range(p + 1):
                out[k + 1, j] = x[j]
                if not (fabs(x[j]) <= bound):
                    failed = k + 1
            if failed >= 0:
                break
    return out_arr, failed


def smc_sweep(int model_id, double[::1] theta, double[::1] consts, double[::1] v_obs, double delta,
              double[:, ::1] u0, double[:, :, ::1] normals, double[:, ::1] uniforms,
              bint conditional, double floor):
    """Bootstrap-structured particle filter with multinomial resampling every step.

    Returns ``(particles (n+1, K, p), logw (n+1, K), ancestors (n, K), loglik (n,))``
    where ``logw`` are unnormalized log-weights and ``loglik[i-1]`` is the
    log of their mean at step ``i``. A step at which every weight is zero
    is reported by a ``-inf`` log-likelihood increment and stops the sweep.
    """
    cdef int p = model_p(model_id)
    cdef Py_ssize_t n = v_obs.shape[0] - 1
    cdef Py_ssize_t K = u0.shape[0]
    cdef Py_ssize_t i, k, j, lo, hi, mid
    part_arr = np.zeros((n + 1, K, p))
    logw_arr = np.full((n + 1, K), -INFINITY)
    anc_arr = np.zeros((n, K), dtype=np.intp)
    ll_arr = np.full(n, -INFINITY)
    cumw_arr = np.empty(K)
    cdef double[:, :, ::1] part = part_arr
    cdef double[:, ::1] logw = logw_arr
    cdef Py_ssize_t[:, ::1] anc = anc_arr
    cdef double[::1] ll = ll_arr
    cdef double[::1] cumw = cumw_arr
    cdef double x[3]
    cdef double m[3]
    cdef double c[9]
    cdef double muV, sVV, mu1, mu2, s1, s2v, c11, c12, c22, l11, l21, l22, var, mean, r
    cdef double mx, tot, uu, det, i11, i12, i22, d1, d2, q, z1, z2
    cdef const double* cs = &consts[0] if consts.shape[0] > 0 else NULL
    cdef Py_ssize_t a
    for k in range(K):
        for j in range(p):
            part[0, k, j] = u0[k, j]
        logw[0, k] = 0.0
    with nogil:
        for i in range(1, n + 1):
            # normalized cumulative weights of step i-1
            mx = -INFINITY
            for k in range(K):
                if logw[i - 1, k] > mx:
                    mx = logw[i - 1, k]
            tot = 0.0
            for k in range(K):
                tot = tot + exp(logw[i - 1, k] - mx)
                cumw[k] = tot
            for k in range(K):
                cumw[k] = cumw[k] / tot
            for k in range(K):
                uu = uniforms[i - 1, k]
                lo = 0
                hi = K - 1
                while lo < hi:
                    mid = (lo + hi) // 2
                    if cumw[mid] > uu:
                        hi = mid
                    else:
                        lo = mid + 1
                a = lo
                anc[i - 1, k] = a
                x[0] = v_obs[i - 1]
                for j in range(p):
                    x[j + 1] = part[i - 1, a, j]
                scheme(model_id, &theta[0], cs, x, delta, m, c)
                muV = x[0] + m[0]
                sVV = c[0]
                if p == 1:
                    mu1 = x[1] + m[1]
                    s1 = c[1]
                    c11 = c[3]
                    if conditional:
                        if sVV <= 0:
                            part[i, k, 0] = mu1
                            continue
                        var = c11 - s1 * s1 / sVV
                        if var < 0:
                            var = 0.0
                        part[i, k, 0] = mu1 + s1 / sVV * (v_obs[i] - muV) + sqrt(var) * normals[i - 1, k, 0]
                        r = v_obs[i] - muV
                        logw[i, k] = -0.5 * (LOG2PI + log(sVV) + r * r / sVV)
                    else:
                        if c11 <= 0:
                            part[i, k, 0] = mu1
                            continue
                        part[i, k, 0] = mu1 + sqrt(c11) * normals[i - 1, k, 0]
                        mean = muV + s1 / c11 * (part[i, k, 0] - mu1)
                        var = sVV - s1 * s1 / c11
                        if var <= 0:
                            continue
                        r = v_obs[i] - mean
                        logw[i, k] = -0.5 * (LOG2PI + log(var) + r * r / var)
                else:
                    mu1 = x[1] + m[1]
                    mu2 = x[2] + m[2]
                    s1 = c[1]
                    s2v = c[2]
                    c11 = c[4]
                    c12 = c[5]
                    c22 = c[8]
                    z1 = normals[i - 1, k, 0]
                    z2 = normals[i - 1, k, 1]
                    if conditional:
                        if sVV <= 0:
                            part[i, k, 0] = mu1
                            part[i, k, 1] = mu2
                            continue
                        r = v_obs[i] - muV
                        mu1 = mu1 + s1 / sVV * r
                        mu2 = mu2 + s2v / sVV * r
                        c11 = c11 - s1 * s1 / sVV
                        c12 = c12 - s1 * s2v / sVV
                        c22 = c22 - s2v * s2v / sVV
                        l11 = sqrt(c11) if c11 > 0 else 0.0
                        l21 = c12 / l11 if l11 > 0 else 0.0
                        l22 = c22 - l21 * l21
                        l22 = sqrt(l22) if l22 > 0 else 0.0
                        part[i, k, 0] = mu1 + l11 * z1
                        part[i, k, 1] = mu2 + l21 * z1 + l22 * z2
                        logw[i, k] = -0.5 * (LOG2PI + log(sVV) + r * r / sVV)
                    else:
                        det = c11 * c22 - c12 * c12
                        if c11 <= 0 or det <= 0:
                            part[i, k, 0] = mu1
                            part[i, k, 1] = mu2
                            continue
                        l11 = sqrt(c11)
                        l21 = c12 / l11
                        l22 = sqrt(det / c11)
                        part[i, k, 0] = mu1 + l11 * z1
                        part[i, k, 1] = mu2 + l21 * z1 + l22 * z2
                        i11 = c22 / det
                        i12 = -c12 / det
                        i22 = c11 / det
                        d1 = part[i, k, 0] - mu1
                        d2 = part[i, k, 1] - mu2
                        mean = muV + (s1 * i11 + s2v * i12) * d1 + (s1 * i12 + s2v * i22) * d2
                        q = s1 * (i11 * s1 + i12 * s2v) + s2v * (i12 * s1 + i22 * s2v)
                        var = sVV - q
                        if var <= 0:
                            continue
                        r = v_obs[i] - mean
                        logw[i, k] = -0.5 * (LOG2PI + log(var) + r * r / var)
                    if model_id == 2:
                        if part[i, k, 0] < floor:
                            part[i, k, 0] = floor
                        if part[i, k, 1] < floor:
                            part[i, k, 1] = floor
            mx = -INFINITY
            for k in range(K):
                if logw[i, k] > mx:
                    mx = logw[i, k]
            if not isfinite(mx):
                break
            tot = 0.0
            for k in range(K):
                tot = tot + exp(logw[i, k] - mx)
            ll[i - 1] = mx + log(tot / K)
    return part_arr, logw_arr, anc_arr, ll_arr
