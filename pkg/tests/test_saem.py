import csv

import numpy as np
import pytest
from hypothesis import given, strategies as st

from conftest import TRUE
from oracles import ho_scheme_matrices, mvn_logpdf
from hypodiff.errors import InvalidArgumentError, MStepSingularError
from hypodiff.estimators import contrast_phi_sigma, contrast_psi
from hypodiff.models import get_model
from hypodiff.moments import path_log_density
from hypodiff.saem import (FHNStats, HOSufficientStats, SaemSchedule, SIEPathAverage, SIEStats, ho_exact_stats,
                           ho_loglik_from_stats, ho_mstep, ho_sufficient_stats, sa_update, saem_run, stats_for,
                           step_size)
from hypodiff.simulate import simulate_exact_ho, simulate_scheme15
from hypodiff.smc import point_u0_sampler


def test_step_size_examples():
    sch = SaemSchedule(total_iters=200, burn_in=30, exponent=0.9)
    assert step_size(1, sch) == 1.0
    assert step_size(30, sch) == 1.0
    assert step_size(130, sch) == pytest.approx(0.01585, abs=1e-5)
    with pytest.raises(InvalidArgumentError):
        step_size(0, sch)


def test_schedule_validation_and_growth():
    for kw in (dict(total_iters=0), dict(burn_in=-1), dict(exponent=0.5), dict(exponent=1.2), dict(particles=0)):
        with pytest.raises(InvalidArgumentError):
            SaemSchedule(**kw)
    sch = SaemSchedule(particles=10, growing_particles=True)
    assert sch.particles_at(1) == 10
    assert sch.particles_at(50) == int(np.ceil(50 * np.log(50)))


@given(st.lists(st.floats(-1e3, 1e3), min_size=1, max_size=6), st.floats(0, 1))
def test_sa_fixed_point_and_zero_step(vals, a):
    s = np.array(vals)
    assert np.allclose(sa_update(s, s, a), s)
    assert np.array_equal(sa_update(s, s + 1.0, 0.0), s)
    assert np.allclose(sa_update(s, s + 1.0, 1.0), s + 1.0)


def test_ho_stats_zero_path(ho):
    _, p = ho
    st_ = ho_sufficient_stats(np.zeros(5), np.zeros(5), 0.02, p)
    assert np.array_equal(st_.as_array(), np.zeros(6))


def test_ho_stats_small_instance_by_loop(ho):
    _, p = ho
    V = [0.1, -0.2, 0.05, 0.3]
    U = [1.0, 0.5, -0.4, 0.2]
    d, D, g = 0.1, 4.0, 0.5
    S = np.zeros(6)
    for i in range(3):
        du = U[i + 1] - U[i]
        S[0] += V[i] * du
        S[1] += U[i] * du
        S[2] += d * V[i] ** 2
        S[3] += d * U[i] ** 2
        S[4] += d * U[i] * V[i]
        S[5] += (du + d * (D * V[i] + g * U[i])) ** 2
    S[5] /= 1 - g * d + g * g * d * d / 3
    assert np.allclose(ho_sufficient_stats(V, U, d, p).as_array(), S, rtol=1e-13)
    with pytest.raises(InvalidArgumentError):
        ho_sufficient_stats(V, U[:3], d, p)


def test_ho_mstep_examples():
    st_ = HOSufficientStats(0.0, 0.0, 2.0, 3.0, 0.5, 5.0)
    D, g, s2 = ho_mstep(st_, 1000, 0.02)
    assert D == 0.0 and g == 0.0 and s2 == pytest.approx(0.25)
    with pytest.raises(MStepSingularError):
        ho_mstep(HOSufficientStats(1.0, 1.0, 1.0, 1.0, 1.0, 1.0), 10, 0.1)


def test_ho_mstep_is_least_squares(ho):
    _, p = ho
    tr = simulate_exact_ho(p, [0, 0], 0.02, 3000, seed=41)
    D, g, _ = ho_mstep(ho_sufficient_stats(tr.v, tr.u[:, 0], 0.02, p), tr.n, 0.02)
    v, u = tr.v[:-1], tr.u[:-1, 0]
    coef, *_ = np.linalg.lstsq(-0.02 * np.column_stack([v, u]), np.diff(tr.u[:, 0]), rcond=None)
    assert np.allclose([D, g], coef, rtol=1e-9)


def test_ho_loglik_from_stats_matches_oracle(ho):
    m, p = ho
    tr = simulate_exact_ho(p, [0.1, 0.0], 0.02, 200, seed=42)
    F, Q = ho_scheme_matrices(4.0, 0.5, 0.5, 0.02)
    ref = sum(mvn_logpdf(tr.states[i + 1], F @ tr.states[i], Q) for i in range(tr.n))
    val = ho_loglik_from_stats(ho_exact_stats(tr.v, tr.u[:, 0]), p, 0.02)
    assert val == pytest.approx(ref, abs=1e-8, rel=1e-10)
    assert val == pytest.approx(path_log_density(m, tr.states, p, 0.02), abs=1e-6)


@pytest.fixture(scope="module")
def fhn_path():
    m = get_model("fhn")
    p = m.make_params(**TRUE["fhn"])
    return m, p, simulate_scheme15(m, p, [0, 0], 0.02, 400, seed=43)


def test_fhn_joint_likelihood_matches_path_density(fhn_path):
    m, p, tr = fhn_path
    calc = FHNStats(m)
    s = calc.compute(tr.v, tr.u, 0.02)
    for q in (p, p.replace(psi=[0.13], phi=[1.2, 0.6], sigma=[0.4])):
        assert -0.5 * calc.joint_neg2loglik(s, q, 0.02) == pytest.approx(path_log_density(m, tr.states, q, 0.02),
                                                                         rel=1e-9)


def test_fhn_stat_contrasts_match_direct(fhn_path):
    m, p, tr = fhn_path
    calc = stats_for(m)
    s = calc.compute(tr.v, tr.u, 0.02)
    q = p.replace(psi=[0.12], phi=[1.3, 0.7], sigma=[0.35])
    assert calc.contrast_psi(s, q, 0.02) == pytest.approx(contrast_psi(tr, m, q.psi, q), rel=1e-9)
    assert calc.contrast_phi_sigma(s, q, 0.02) == pytest.approx(contrast_phi_sigma(tr, m, q.phi, q.sigma, q),
                                                                rel=1e-9)


def test_fhn_stats_are_additive_over_paths(fhn_path):
    m, p, tr = fhn_path
    calc = FHNStats(m)
    a = calc.compute(tr.v[:201], tr.u[:201], 0.02)
    b = calc.compute(tr.v[200:], tr.u[200:], 0.02)
    assert np.allclose(a + b, calc.compute(tr.v, tr.u, 0.02))


@pytest.fixture(scope="module")
def sie_paths():
    m = get_model("sie")
    p = m.make_params(**TRUE["sie"])
    return m, p, [simulate_scheme15(m, p, [-60, 10, 1], 0.02, 300, seed=s) for s in (44, 45)]


def test_sie_stat_contrast_matches_direct(sie_paths):
    m, p, (tr, _) = sie_paths
    calc = SIEStats(m)
    s = calc.compute(tr.v, tr.u, 0.02)
    q = p.replace(phi=[0.6, 1.2, 16.0, 10.0], sigma=[0.15, 0.08])
    assert calc.contrast_phi_sigma(s, q, 0.02) == pytest.approx(contrast_phi_sigma(tr, m, q.phi, q.sigma, q),
                                                                rel=1e-9)
    with pytest.raises(InvalidArgumentError):
        calc.contrast_psi(s, q, 0.02)


def test_sie_path_average_matches_path_density(sie_paths):
    m, p, (t1, t2) = sie_paths
    avg = SIEPathAverage(m)
    avg.update(t1.v, t1.u, 1.0)
    q = p.replace(phi=[0.6, 1.2, 16.0, 10.0], sigma=[0.15, 0.08])
    assert avg.loglik(q, 0.02) == pytest.approx(path_log_density(m, t1.states, q, 0.02), rel=1e-9)
    avg.update(t2.v, t2.u, 0.3)
    ref = 0.7 * path_log_density(m, t1.states, q, 0.02) + 0.3 * path_log_density(m, t2.states, q, 0.02)
    assert avg.loglik(q, 0.02) == pytest.approx(ref, rel=1e-9)
    assert avg.loglik(q.replace(sigma=[-0.1, 0.1]), 0.02) == -np.inf


def test_sie_path_average_prunes(sie_paths):
    m, p, (t1, t2) = sie_paths
    avg = SIEPathAverage(m, prune=0.05)
    avg.update(t1.v, t1.u, 1.0)
    for _ in range(3):
        avg.update(t2.v, t2.u, 0.9)
    assert len(avg.paths) == 2 and avg.weights[0] == pytest.approx(0.9 * 0.1)


def test_stats_for_unknown_model(ho):
    with pytest.raises(InvalidArgumentError):
        stats_for(ho[0])


@pytest.fixture(scope="module")
def ho_run():
    m = get_model("ho")
    p = m.make_params(**TRUE["ho"])
    tr = simulate_exact_ho(p, [0, 0], 0.02, 1000, seed=46)
    init = m.make_params(D=2.0, gamma=1.0, sigma=1.0)
    trace = saem_run(m, tr.v, init, SaemSchedule(total_iters=60, burn_in=20, particles=50), seed=3,
                     delta=0.02, u0_sampler=point_u0_sampler([0.0]))
    return m, tr, trace


def test_ho_saem_converges_and_stabilizes(ho_run):
    m, tr, trace = ho_run
    est = trace.result.param_dict()
    assert trace.result.converged and len(trace) == 60
    assert abs(est["D"] - 4.0) < 1.0 and abs(est["sigma"] - 0.5) < 0.1
    late = np.array(trace.theta[-10:])
    assert np.all(np.ptp(late, axis=0) < 0.05 * np.abs(late).mean(axis=0))
    assert trace.a[:20] == [1.0] * 20 and trace.a[-1] < 0.05


def test_saem_is_deterministic(ho_run):
    m, tr, trace = ho_run
    again = saem_run(m, tr.v, m.make_params(D=2.0, gamma=1.0, sigma=1.0),
                     SaemSchedule(total_iters=60, burn_in=20, particles=50), seed=3, delta=0.02,
                     u0_sampler=point_u0_sampler([0.0]))
    assert np.array_equal(np.array(again.theta), np.array(trace.theta))


def test_trace_csv(ho_run, tmp_path):
    m, tr, trace = ho_run
    path = tmp_path / "trace.csv"
    trace.write_csv(path, m)
    with open(path) as fh:
        rows = list(csv.reader(fh))
    assert rows[0][:5] == ["m", "a_m", "D", "gamma", "sigma"] and rows[0][-2:] == ["loglik", "particles"]
    assert len(rows) == 61 and float(rows[-1][2]) == trace.theta[-1][0]


def test_saem_argument_errors(ho_run):
    m, tr, _ = ho_run
    init = m.make_params(**TRUE["ho"])
    with pytest.raises(InvalidArgumentError):
        saem_run(m, tr.v, init, delta=None)
    with pytest.raises(InvalidArgumentError):
        saem_run(m, tr.v, init, delta=0.02, fixed=("D",))
    with pytest.raises(InvalidArgumentError):
        saem_run(m, tr.v, init, delta=0.02, mstep="newton")


@pytest.mark.parametrize("mstep", ["joint", "split"])
def test_fhn_saem_short_run(fhn_path, mstep):
    m, p, tr = fhn_path
    trace = saem_run(m, tr.v, p.replace(sigma=[0.5]), SaemSchedule(total_iters=8, burn_in=4, particles=30),
                     seed=4, delta=0.02, u0_sampler=point_u0_sampler([0.0]), mstep=mstep)
    assert trace.result.converged and trace.result.extra["singular_msteps"] == 0
    assert np.all(np.isfinite(trace.result.contrast_values))


def test_fhn_saem_fixed_epsilon(fhn_path):
    m, p, tr = fhn_path
    trace = saem_run(m, tr.v, p.replace(sigma=[0.5]), SaemSchedule(total_iters=5, burn_in=2, particles=30),
                     seed=5, delta=0.02, u0_sampler=point_u0_sampler([0.0]), fixed=("epsilon",))
    assert all(th[0] == 0.1 for th in trace.theta)
