"""Compare the numba and numpy kernel backends.

Times each hot kernel at particle-filter sizes, then a short end-to-end
particle online EM run, under both backends.  Usage::

    python3 benchmarks/bench_kernels.py [--particles 1000] [--repeat 20]
"""

import argparse
import timeit

import numpy as np

from onlinenmf import kernels
from onlinenmf.engine import OnlineConfig, run_online
from onlinenmf.params import ThetaParams
from onlinenmf.processes import RelaxedParams, RelaxedProcess
from onlinenmf.simulate import random_basis, simulate


def kernel_cases(N, M, K, rng):
    B = rng.uniform(0.5, 5, (M, K))
    X = rng.uniform(0, 1, (N, K))
    y = rng.poisson(10, M).astype(float)
    w = rng.dirichlet(np.ones(N))
    C = rng.uniform(0, 1, (N, M, K))
    A = rng.uniform(0, 1, (32, M, K))
    idx = rng.integers(0, 32, N)
    u1, u2 = rng.uniform(size=(N, K)), 1 - rng.uniform(size=(N, K))
    return {
        "poisson_loglik_rows": lambda: kernels.poisson_loglik_rows(B, X, y),
        "allocation_tensor": lambda: kernels.allocation_tensor(B, X, y),
        "weighted_allocation_sum": lambda: kernels.weighted_allocation_sum(w, B, X, y),
        "c_update": lambda: kernels.c_update(C, B, X, y, 0.9, 0.1),
        "gather_axpy": lambda: kernels.gather_axpy(C, A, idx, 0.9, 0.1),
        "systematic_resample": lambda: kernels.systematic_resample(w, 0.3),
        "relaxed_step": lambda: kernels.relaxed_step(X, 0.95, u1, u2),
    }


def best_of(fn, repeat):
    fn()  # warm-up (triggers compilation on the numba backend)
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def end_to_end(N, T):
    rng = np.random.default_rng(0)
    proc = RelaxedProcess(5)
    theta = ThetaParams(random_basis(8, 5, rng), RelaxedParams(0.95))
    _, Y = simulate(proc, theta, T, rng)
    cfg = OnlineConfig(engine="smc", n_particles=N, seed=0, trace_every=T)
    return lambda: run_online(Y, proc, cfg)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--particles", type=int, default=1000)
    ap.add_argument("--m", type=int, default=8)
    ap.add_argument("--k", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--steps", type=int, default=500, help="stream length of the end-to-end run")
    args = ap.parse_args()

    backends = ["numpy"] + (["numba"] if kernels.JIT_ENABLED else [])
    if len(backends) == 1:
        print("numba backend unavailable; timing numpy only")
    cases = kernel_cases(args.particles, args.m, args.k, np.random.default_rng(0))
    cases[f"smc run (T={args.steps})"] = end_to_end(args.particles, args.steps)

    prev = kernels.backend()
    rows = []
    try:
        for name, fn in cases.items():
            times = {}
            for b in backends:
                kernels.set_backend(b)
                reps = 3 if name.startswith("smc") else args.repeat
                times[b] = best_of(fn, reps)
            rows.append((name, times))
    finally:
        kernels.set_backend(prev)

    print(f"N={args.particles} M={args.m} K={args.k}; best of {args.repeat} (ms)")
    print(f"{'kernel':<28}" + "".join(f"{b:>12}" for b in backends)
          + ("    speedup" if len(backends) > 1 else ""))
    for name, times in rows:
        line = f"{name:<28}" + "".join(f"{1e3 * times[b]:>12.3f}" for b in backends)
        if len(backends) > 1:
            line += f"{times['numpy'] / times['numba']:>10.1f}x"
        print(line)


if __name__ == "__main__":
    main()
