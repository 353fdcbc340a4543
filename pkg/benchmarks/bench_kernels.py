#!/usr/bin/env python3
"""Benchmark the tap-accumulation kernels: numba backend vs numpy fallback.

The backend is fixed at import time by ISACSIM_BACKEND, so this script
re-executes itself once per backend and also times a full simulation drop
plus discretization through each.

    python benchmarks/bench_kernels.py
"""

import os
import subprocess
import sys
import time

import numpy as np


def time_call(fn, *args, repeat=5, **kwargs):
    fn(*args, **kwargs)          # warm-up (JIT compile on the numba path)
    best = np.inf
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args, **kwargs)
        best = min(best, time.perf_counter() - t0)
    return best


def run_single_backend():
    from isacsim import kernels
    from isacsim.config import default_config
    from isacsim.simulate import simulate_drop

    rng = np.random.default_rng(0)
    sizes = [(2_000, 4, 4), (20_000, 4, 4), (100_000, 4, 4)]
    print(f"backend: {kernels.BACKEND}")
    for p, s, u in sizes:
        weights = rng.normal(size=p) + 1j * rng.normal(size=p)
        etx = np.exp(1j * rng.uniform(-np.pi, np.pi, (p, s)))
        erx = np.exp(1j * rng.uniform(-np.pi, np.pi, (p, u)))
        frac = rng.uniform(0, 250.0, p)
        t_near = time_call(kernels.accumulate_taps, weights, etx, erx, frac,
                           256, "nearest_bin")
        t_sinc = time_call(kernels.accumulate_taps, weights, etx, erx, frac,
                           256, "sinc_windowed")
        print(f"  paths {p:>7}: nearest {t_near * 1e3:8.2f} ms   "
              f"sinc {t_sinc * 1e3:8.2f} ms")

    cfg = default_config()
    t_drop = time_call(lambda: simulate_drop(cfg, 1), repeat=10)
    _, _, isac = simulate_drop(cfg, 1)
    lo, _ = isac.delay_span()
    t_disc = time_call(isac.discretize, cfg.ofdm.sample_rate_hz, 256,
                       mode="nearest_bin", delay_origin=lo, repeat=10)
    print(f"  full drop {t_drop * 1e3:8.2f} ms   "
          f"discretize {t_disc * 1e3:8.2f} ms")


def main():
    if os.environ.get("_BENCH_CHILD"):
        run_single_backend()
        return
    for backend in ("numba", "numpy"):
        env = dict(os.environ, ISACSIM_BACKEND=backend, _BENCH_CHILD="1")
        subprocess.run([sys.executable, os.path.abspath(__file__)], env=env,
                       check=True)


if __name__ == "__main__":
    main()
