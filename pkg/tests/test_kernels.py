import os
import subprocess
import sys

import numpy as np
import pytest

from conftest import TRUE
from hypodiff import kernels
from hypodiff.models import get_model

X0 = {"ho": [0.0, 0.0], "fhn": [0.0, 0.0], "sie": [-60.0, 10.0, 1.0]}
needs_compiled = pytest.mark.skipif("compiled" not in kernels.available_backends(),
                                    reason="compiled extension not built")


def test_backend_selection():
    assert kernels.BACKEND in kernels.available_backends()
    assert "python" in kernels.available_backends()
    with pytest.raises(ValueError):
        kernels.euler_path(get_model("ho"), get_model("ho").make_params(**TRUE["ho"]), [0, 0], 0.01,
                           np.zeros((2, 1)), backend="fortran")


def test_env_var_forces_python():
    env = dict(os.environ, HYPODIFF_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", "from hypodiff import kernels; print(kernels.BACKEND)"],
                         env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"


@needs_compiled
@pytest.mark.parametrize("model_id", ["ho", "fhn", "sie"])
def test_euler_backends_agree(model_id):
    m = get_model(model_id)
    p = m.make_params(**TRUE[model_id])
    z = np.random.default_rng(0).standard_normal((3000, m.p))
    a, fa = kernels.euler_path(m, p, X0[model_id], 0.002, z, backend="compiled")
    b, fb = kernels.euler_path(m, p, X0[model_id], 0.002, z, backend="python")
    assert fa == fb == -1
    assert np.allclose(a, b, rtol=1e-10, atol=1e-10)


@needs_compiled
@pytest.mark.parametrize("model_id", ["ho", "fhn", "sie"])
@pytest.mark.parametrize("conditional", [True, False])
def test_smc_sweep_backends_agree(model_id, conditional):
    m = get_model(model_id)
    p = m.make_params(**TRUE[model_id])
    rng = np.random.default_rng(1)
    path, _ = kernels.euler_path(m, p, X0[model_id], 0.002, rng.standard_normal((2000, m.p)), backend="python")
    v = path[::10, 0]
    n, K = len(v) - 1, 50
    u0 = np.tile(np.asarray(X0[model_id][1:]), (K, 1))
    normals = rng.standard_normal((n, K, m.p))
    uniforms = rng.random((n, K))
    a = kernels.smc_sweep(m, p, v, 0.02, u0, normals, uniforms, conditional, backend="compiled")
    b = kernels.smc_sweep(m, p, v, 0.02, u0, normals, uniforms, conditional, backend="python")
    for x, y in zip(a, b):
        assert np.allclose(x, y, rtol=1e-8, atol=1e-8, equal_nan=True)
    assert np.all(np.isfinite(a[3]))


@needs_compiled
def test_euler_explosion_reported_identically():
    m = get_model("ho")
    p = m.make_params(D=1e6, gamma=1.0, sigma=1.0)
    z = np.random.default_rng(2).standard_normal((500, 1))
    a = kernels.euler_path(m, p, [1.0, 1.0], 0.1, z, backend="compiled")
    b = kernels.euler_path(m, p, [1.0, 1.0], 0.1, z, backend="python")
    assert a[1] == b[1] > 0
