"""Independent reference computations used by the tests.

Nothing here imports the package's moment code: the oscillator scheme is
rebuilt from its drift matrix, and exact quantities come from scipy.
"""
import numpy as np
from scipy.linalg import expm
from scipy.integrate import quad_vec


def ho_drift_matrix(D, gamma):
    return np.array([[0.0, 1.0], [-D, -gamma]])


def ho_scheme_matrices(D, gamma, sigma, delta):
    """Transition matrix and noise covariance of the linear 1.5 scheme.

    The mean map is the second-order Taylor polynomial of ``exp(delta M)``.
    The covariance is the variance of ``(int_0^d (d - s) dB, B_d)`` mapped
    through the scheme's noise terms, computed by quadrature.
    """
    M = ho_drift_matrix(D, gamma)
    F = np.eye(2) + delta * M + delta**2 / 2 * M @ M

    # V noise: sigma * xi with xi = int (d - s) dB; U noise: sigma * eta - gamma * sigma * xi.
    def integrand(s):
        k = np.array([delta - s, 1.0 - gamma * (delta - s)]) * sigma
        return np.outer(k, k)

    Q, _ = quad_vec(integrand, 0.0, delta, epsabs=1e-16, epsrel=1e-13)
    return F, Q


def exact_ou(D, gamma, sigma, delta):
    M = ho_drift_matrix(D, gamma)
    F = expm(delta * M)
    G = np.array([[0.0], [sigma]])

    def integrand(s):
        E = expm(s * M) @ G
        return E @ E.T

    Q, _ = quad_vec(integrand, 0.0, delta, epsabs=1e-16, epsrel=1e-13)
    return F, Q


def kalman_v_observed(F, Q, v_obs, u0_mean, u0_var):
    """Kalman filter and RTS smoother for a 2-d linear Gaussian chain whose first coordinate is observed exactly.

    Returns the filtered means and variances of U, the log-likelihood
    ``log p(V_1..V_n | V_0)`` and the smoothed means of U.
    """
    n = len(v_obs) - 1
    H = np.array([1.0, 0.0])
    m = np.array([v_obs[0], u0_mean])
    P = np.diag([0.0, u0_var])
    ms, Ps, mp, Pp = [m], [P], [], []
    ll = 0.0
    for i in range(1, n + 1):
        mpred = F @ m
        Ppred = F @ P @ F.T + Q
        S = H @ Ppred @ H
        r = v_obs[i] - mpred[0]
        ll += -0.5 * (np.log(2 * np.pi * S) + r * r / S)
        Kg = Ppred @ H / S
        m = mpred + Kg * r
        P = Ppred - np.outer(Kg, Kg) * S
        P = 0.5 * (P + P.T)
        P[0, :] = P[:, 0] = 0.0
        mp.append(mpred)
        Pp.append(Ppred)
        ms.append(m)
        Ps.append(P)
    ms, Ps = np.array(ms), np.array(Ps)
    sm = ms.copy()
    for i in range(n - 1, -1, -1):
        G = Ps[i] @ F.T @ np.linalg.pinv(Pp[i])
        sm[i] = ms[i] + G @ (sm[i + 1] - mp[i])
    return ms[:, 1], Ps[:, 1, 1], ll, sm[:, 1]


def mvn_logpdf(x, mean, cov):
    """Multivariate normal log-density by explicit inverse and determinant."""
    r = np.asarray(x, float) - np.asarray(mean, float)
    cov = np.asarray(cov, float)
    sign, logdet = np.linalg.slogdet(2 * np.pi * cov)
    return -0.5 * (logdet + r @ np.linalg.inv(cov) @ r)
