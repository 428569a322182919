import math
import warnings

import numpy as np
import pytest

from conftest import TRUE
from hypodiff.errors import InvalidArgumentError
from hypodiff.init import SIGMA_CORRECTION, auto_init, init_fhn, init_ho, init_sie
from hypodiff.models import FitzHughNagumo, get_model
from hypodiff.simulate import simulate_exact_ho, simulate_scheme15


def test_correction_factor():
    assert SIGMA_CORRECTION == pytest.approx(math.sqrt(1.5))


def test_ho_init_applies_correction(ho):
    _, p = ho
    tr = simulate_exact_ho(p, [0, 0], 0.02, 5000, seed=51)
    rep = init_ho(tr.v, 0.02)
    assert not rep.fallback and rep.method == "ho_increments"
    assert rep.params0.sigma[0] == pytest.approx(SIGMA_CORRECTION * rep.raw_sigma)
    # the proxy path understates the rough noise; the correction brings it back near the truth
    assert abs(rep.params0.sigma[0] - 0.5) < 0.1
    assert 2.0 < rep.params0.phi[0] < 6.0 and rep.params0.phi[1] > 0
    assert np.allclose(rep.proxy_path, np.diff(tr.v) / 0.02)


def test_ho_init_falls_back_on_constant_path():
    with pytest.warns(UserWarning):
        rep = init_ho(np.ones(50), 0.02)
    assert rep.fallback
    assert rep.params0.phi == (1.0, 1.0) and rep.params0.sigma == (1.0,)


def test_fhn_init_fixes_epsilon(fhn):
    m, p = fhn
    tr = simulate_scheme15(m, p, [0, 0], 0.02, 3000, seed=52)
    rep = init_fhn(tr.v, 0.02, eps0=0.12)
    assert rep.params0.psi == (0.12,) and not rep.fallback
    gamma, alpha = rep.params0.phi
    assert 0.5 < gamma < 3.0 and 0.0 < alpha < 2.0 and 0.1 < rep.params0.sigma[0] < 1.0


def test_fhn_proxy_uses_shift():
    v = np.linspace(-1, 1, 20)
    a = init_fhn(v, 0.02, s=0.0).proxy_path
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        b = init_fhn(v, 0.02, s=0.5).proxy_path
    assert np.allclose(b - a, 0.5)
    ref = v[:-1] - v[:-1] ** 3 - 0.12 * np.diff(v) / 0.02
    assert np.allclose(a, ref)


def test_fhn_eps0_must_be_positive():
    for bad in (0.0, -0.1):
        with pytest.raises(InvalidArgumentError):
            init_fhn(np.zeros(10), 0.02, eps0=bad)


def test_sie_constants():
    rep = init_sie()
    assert rep.params0.phi == (1.0, 1.0, 10.0, 10.0) and rep.params0.sigma == (0.1, 0.1)
    assert auto_init(get_model("sie"), np.zeros(10), 0.02).method == "sie_fixed"


def test_input_validation():
    with pytest.raises(InvalidArgumentError):
        init_ho([0.0, 1.0], 0.02)
    with pytest.raises(InvalidArgumentError):
        init_ho([0.0, np.nan, 1.0, 2.0], 0.02)


@pytest.mark.parametrize("seed", range(5))
def test_ho_init_within_range_over_seeds(seed):
    m = get_model("ho")
    p = m.make_params(**TRUE["ho"])
    tr = simulate_exact_ho(p, [0, 0], 0.02, 2000, seed=100 + seed)
    rep = auto_init(m, tr.v, 0.02)
    assert np.all(np.isfinite(m.encode(rep.params0)))
    assert 0.25 < rep.params0.sigma[0] < 1.0


def test_auto_init_dispatch_uses_model_shift():
    m = FitzHughNagumo(s=0.3)
    v = np.sin(np.linspace(0, 6, 200))
    rep = auto_init(m, v, 0.02, eps0=0.1)
    assert rep.params0.psi == (0.1,)
    assert np.allclose(rep.proxy_path, v[:-1] - v[:-1] ** 3 + 0.3 - 0.1 * np.diff(v) / 0.02)
