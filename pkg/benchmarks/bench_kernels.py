"""Time each kernel's numba build against its numpy twin and check they agree.

    python benchmarks/bench_kernels.py [--repeat 20]
"""

import argparse
import time

import numpy as np

from dflis import kernels
from dflis._jit import USE_NUMBA
from dflis.problems.pet import pet_geometry


def _inputs(rng):
    n = 32
    kappa = np.exp(0.3 * rng.standard_normal(n * n))
    p = rng.standard_normal(n * n)
    lam = rng.standard_normal((25, n * n))
    _, src, dst = pet_geometry(n=64, n_src=5, n_ray=30)
    rho = np.exp(-np.arange(5000) / 40.0)
    labels = rng.integers(0, 3, 10**6)
    return {
        "ray_matrix": (src, dst, -10.0, 20.0 / 64, 64),
        "fv_band": (kappa, n),
        "fv_adjoint": (kappa, p, lam, n),
        "transition_counts": (labels, 3),
        "sokal_window": (rho, 5.0),
    }


def _time(fn, args, repeat):
    fn(*args)  # warm-up / compile
    best = np.inf
    for _ in range(repeat):
        t = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t)
    return best


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    if not USE_NUMBA:
        print("numba disabled; the first column times the uncompiled loops")
    inputs = _inputs(np.random.default_rng(0))
    print(f"{'kernel':<18} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}  max|diff|")
    for name, (nb, vec) in kernels.IMPLEMENTATIONS.items():
        a = inputs[name]
        t_nb = _time(nb, a, args.repeat)
        t_np = _time(vec, a, args.repeat)
        diff = np.max(np.abs(np.asarray(nb(*a), dtype=float) - np.asarray(vec(*a), dtype=float)))
        print(f"{name:<18} {1e3 * t_nb:10.3f} {1e3 * t_np:10.3f} {t_np / t_nb:8.1f}  {diff:.2e}")


if __name__ == "__main__":
    main()
