import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import TRUE
from hypodiff.errors import InvalidArgumentError, NotApplicableError
from hypodiff.estimators import (ContrastOptions, alternate_minimize, contrast_phi_sigma, contrast_psi,
                                 estimate_complete, euler_contrast_baseline)
from hypodiff.models import ParamSet, get_model
from hypodiff.simulate import simulate_euler_fine, simulate_exact_ho, simulate_scheme15, subsample


@pytest.fixture(scope="module")
def fhn_data():
    m = get_model("fhn")
    p = m.make_params(**TRUE["fhn"])
    return m, p, simulate_scheme15(m, p, [0, 0], 0.01, 5000, seed=21)


@pytest.fixture(scope="module")
def ho_data():
    m = get_model("ho")
    p = m.make_params(**TRUE["ho"])
    return m, p, simulate_exact_ho(p, [0, 0], 0.02, 5000, seed=22)


def test_scaled_residuals_have_unit_mean_square(fhn_data):
    m, p, tr = fhn_data
    n = tr.n
    q_psi, _ = contrast_psi(tr, m, p.psi, p, return_parts=True)
    q_rest, _ = contrast_phi_sigma(tr, m, p.phi, p.sigma, p, return_parts=True)
    # chi-square(n) / n has standard deviation sqrt(2 / n)
    for q in (q_psi, q_rest):
        assert abs(q / n - 1) < 5 * np.sqrt(2 / n)


def test_ho_contrast_psi_not_applicable(ho_data):
    m, p, tr = ho_data
    with pytest.raises(NotApplicableError):
        contrast_psi(tr, m, [], p)


def test_sie_euler_baseline_not_applicable(sie):
    m, p = sie
    tr = simulate_scheme15(m, p, [-60, 10, 1], 0.02, 20, seed=0)
    with pytest.raises(NotApplicableError):
        euler_contrast_baseline(tr, m)


def test_insufficient_data(ho_data):
    m, p, tr = ho_data
    with pytest.raises(InvalidArgumentError):
        estimate_complete(tr.states[:2], m, ContrastOptions(init=p), delta=0.02)
    with pytest.raises(InvalidArgumentError):
        estimate_complete(tr, m, ContrastOptions())
    with pytest.raises(InvalidArgumentError):
        estimate_complete(tr.states[:, :1], m, ContrastOptions(init=p), delta=0.02)


def test_options_validation():
    with pytest.raises(InvalidArgumentError):
        ContrastOptions(max_outer_iters=0)
    with pytest.raises(InvalidArgumentError):
        ContrastOptions(simplex_tol=0.0)


def test_unknown_fixed_name(ho_data):
    m, p, tr = ho_data
    with pytest.raises(InvalidArgumentError):
        estimate_complete(tr, m, ContrastOptions(init=p, fixed=("nope",)))


def test_fhn_epsilon_recovered_from_bad_start(fhn_data):
    m, p, tr = fhn_data
    init = m.make_params(epsilon=0.2, gamma=1.0, alpha=0.5, sigma=0.5)
    res = estimate_complete(tr, m, ContrastOptions(init=init))
    est = res.param_dict()
    assert res.converged
    assert abs(est["epsilon"] - 0.1) < 0.01
    assert abs(est["sigma"] - 0.3) < 0.03
    assert np.isfinite(res.contrast_values).all()


def test_fixed_parameters_stay_put(fhn_data):
    m, p, tr = fhn_data
    init = m.make_params(epsilon=0.1, gamma=1.0, alpha=0.5, sigma=0.5)
    res = estimate_complete(tr, m, ContrastOptions(init=init, fixed=("epsilon",)))
    assert res.param_dict()["epsilon"] == 0.1


def test_ho_complete_estimates(ho_data):
    m, p, tr = ho_data
    res = estimate_complete(tr, m, ContrastOptions(init=m.make_params(D=1.0, gamma=3.0, sigma=1.0)))
    est = res.param_dict()
    assert abs(est["D"] - 4.0) < 0.8
    assert abs(est["sigma"] - 0.5) < 0.05
    out = json.loads(res.to_json())
    assert set(out["params"]) == {"D", "gamma", "sigma"}


def test_euler_baseline_matches_normal_equations(ho_data):
    m, p, tr = ho_data
    res = euler_contrast_baseline(tr, m)
    v, u = tr.states[:-1, 0], tr.states[:-1, 1]
    du = np.diff(tr.states[:, 1])
    d, n = tr.dt, du.size
    # minimize sum (du + d D v + d g u)^2 by hand
    A = np.array([[v @ v, v @ u], [u @ v, u @ u]])
    b = -np.array([v @ du, u @ du]) / d
    D, g = np.linalg.solve(A, b)
    s2 = np.sum((du + d * (D * v + g * u)) ** 2) / (n * d)
    est = res.param_dict()
    assert est["D"] == pytest.approx(D, rel=1e-9)
    assert est["gamma"] == pytest.approx(g, rel=1e-9)
    assert est["sigma"] == pytest.approx(np.sqrt(s2), rel=1e-9)


def test_euler_baseline_fhn_keeps_epsilon(fhn_data):
    m, p, tr = fhn_data
    res = euler_contrast_baseline(tr, m, ContrastOptions(init=p.replace(psi=[0.13])))
    assert res.param_dict()["epsilon"] == 0.13
    assert abs(res.param_dict()["alpha"] - 0.8) < 0.3


def test_euler_sigma_biased_on_subsampled_fine_path():
    """Euler sigma on the rough coordinate ignores smooth-coordinate drift; still close at small steps."""
    m = get_model("ho")
    p = m.make_params(**TRUE["ho"])
    tr = subsample(simulate_euler_fine(m, p, [0, 0], 0.001, 100_000, seed=23), 10)
    res = euler_contrast_baseline(tr, m)
    assert abs(res.param_dict()["sigma"] - 0.5) < 0.05


def test_constant_offset_leaves_minimizer_unchanged(ho_data):
    m, p, tr = ho_data
    tr = tr.states[:800]
    opts = ContrastOptions(init=m.make_params(D=2.0, gamma=1.0, sigma=0.8), max_outer_iters=1)

    def f(q):
        return contrast_phi_sigma(tr, m, q.phi, q.sigma, q, delta=0.02)

    a, _, _ = alternate_minimize(m, opts.init, None, f, opts)
    b, _, _ = alternate_minimize(m, opts.init, None, lambda q: f(q) + 1234.5, opts)
    assert np.allclose(m.encode(a), m.encode(b), rtol=1e-6)


@settings(max_examples=20)
@given(st.floats(-1, 1), st.floats(-1, 1), st.floats(-1, 1))
def test_ho_contrast_convex_near_truth(a, b, c):
    m = get_model("ho")
    p = m.make_params(**TRUE["ho"])
    tr = simulate_exact_ho(p, [0, 0], 0.02, 500, seed=24)
    direction = np.array([a, b, c])
    if np.linalg.norm(direction) < 1e-3:
        return
    direction = 0.05 * direction / np.linalg.norm(direction)
    base = m.encode(p)

    def f(t):
        q = m.decode(base * (1 + t * direction))
        return contrast_phi_sigma(tr, m, q.phi, q.sigma, q)

    assert f(-1) + f(1) - 2 * f(0) > 0


def test_rough_contrast_ignores_other_blocks_of_fixed_params(fhn_data):
    m, p, tr = fhn_data
    other = p.replace(phi=[2.0, 0.1], sigma=[0.9])
    q = contrast_phi_sigma(tr, m, p.phi, p.sigma, p)
    assert q == contrast_phi_sigma(tr, m, p.phi, p.sigma, other)
