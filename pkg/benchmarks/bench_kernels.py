"""Compare the compiled and pure-Python kernels.

Usage: python3 benchmarks/bench_kernels.py [--repeat 5] [--csv out.csv]

Times the fine Euler simulator and one particle-filter sweep for each model
and checks that both backends return the same numbers.
"""
import argparse
import csv
import sys
import timeit

import numpy as np

from hypodiff import kernels
from hypodiff.models import get_model

SETTINGS = {
    "ho": (dict(D=4.0, gamma=0.5, sigma=0.5), [0.0, 0.0]),
    "fhn": (dict(epsilon=0.1, gamma=1.5, alpha=0.8, sigma=0.3), [0.0, 0.0]),
    "sie": (dict(tau_E=0.5, tau_I=1.0, gbar_E=17.8, gbar_I=9.4, sigma_E=0.1, sigma_I=0.1), [-60.0, 10.0, 1.0]),
}


def cases(model_id, steps=100_000, n=1000, K=100, seed=0):
    model = get_model(model_id)
    values, x0 = SETTINGS[model_id]
    params = model.make_params(**values)
    rng = np.random.default_rng(seed)
    z = rng.standard_normal((steps, model.p))
    path, _ = kernels.euler_path(model, params, x0, 0.002, z, backend="python")
    v = path[::10, 0][: n + 1]
    u0 = np.tile(np.asarray(x0[1:]), (K, 1))
    normals = rng.standard_normal((n, K, model.p))
    uniforms = rng.random((n, K))

    def euler(backend):
        return kernels.euler_path(model, params, x0, 0.002, z, backend=backend)

    def sweep(backend):
        return kernels.smc_sweep(model, params, v, 0.02, u0, normals, uniforms, backend=backend)

    return {"euler_path": euler, "smc_sweep": sweep}


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--csv")
    args = ap.parse_args(argv)
    backends = kernels.available_backends()
    if "compiled" not in backends:
        print("compiled extension not built; timing the Python backend only", file=sys.stderr)
    rows = []
    for model_id in SETTINGS:
        for name, fn in cases(model_id).items():
            times = {b: min(timeit.repeat(lambda: fn(b), number=1, repeat=args.repeat)) for b in backends}
            if len(backends) == 2:
                a, b = fn("compiled"), fn("python")
                agree = all(np.allclose(x, y, rtol=1e-9, atol=1e-9, equal_nan=True) for x, y in zip(a, b))
                speedup = times["python"] / times["compiled"]
            else:
                agree, speedup = None, float("nan")
            row = {"model": model_id, "kernel": name, **{f"{b}_s": t for b, t in times.items()},
                   "speedup": speedup, "agree": agree}
            rows.append(row)
            print(f"{model_id:4s} {name:11s} " + "  ".join(f"{b} {t * 1e3:8.2f} ms" for b, t in times.items())
                  + f"  speedup {speedup:6.1f}x  agree {agree}")
    if args.csv:
        with open(args.csv, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]))
            w.writeheader()
            w.writerows(rows)


if __name__ == "__main__":
    main()
