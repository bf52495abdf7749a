"""Time the compiled and numpy stepping kernels on identical inputs.

    python3 benchmarks/bench_kernels.py --modes 16 64 128 --batch 1 32 --steps 2000

Reports seconds per step per trajectory and the speedup of the compiled
backend, and checks that both produce the same states.
"""
import argparse
import time

import numpy as np

from stochks import _expo, kernels
from stochks.spectral import DomainSpec, grid_size


def make_inputs(K, M, steps, seed=0):
    spec = DomainSpec(L=50.0)
    rates = spec.linear_rates(K)
    dt = 1e-3
    rng = np.random.default_rng(seed)
    u0 = rng.standard_normal((M, 2 * K)) * 0.1
    noise = rng.standard_normal((steps, M, 2 * K)) * np.sqrt(dt) * 0.1
    return spec, _expo.decay(rates, dt), _expo.phi1(rates, dt), u0, noise


def run(backend, K, M, steps, repeats):
    spec, E, Phi, u0, noise = make_inputs(K, M, steps)
    kern = kernels.get(backend)
    best = np.inf
    for _ in range(repeats):
        u = u0.copy()
        rec = np.empty((steps, M, 2 * K))
        status = np.full(M, -1, dtype=np.int64)
        t0 = time.perf_counter()
        kern.advance_u(u, E, Phi, noise, spec.L, grid_size(K), np.inf, True, 1, rec, status, 0)
        best = min(best, time.perf_counter() - t0)
    return best, u


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    p.add_argument("--modes", type=int, nargs="+", default=[16, 64, 128])
    p.add_argument("--batch", type=int, nargs="+", default=[1, 32])
    p.add_argument("--steps", type=int, default=2000)
    p.add_argument("--repeats", type=int, default=3)
    args = p.parse_args(argv)

    if "compiled" not in kernels.BACKENDS:
        print("compiled backend not built; timing the numpy kernels only")
    names = sorted(kernels.BACKENDS)
    print(f"{'K':>5} {'M':>4} " + " ".join(f"{n + ' us/step':>18}" for n in names) + f" {'speedup':>8} {'max diff':>9}")
    for K in args.modes:
        for M in args.batch:
            times, states = {}, {}
            for name in names:
                sec, u = run(name, K, M, args.steps, args.repeats)
                times[name] = sec / (args.steps * M) * 1e6
                states[name] = u
            speedup = times["python"] / times["compiled"] if "compiled" in times else float("nan")
            diff = np.max(np.abs(states["python"] - states.get("compiled", states["python"])))
            print(f"{K:>5} {M:>4} " + " ".join(f"{times[n]:>18.2f}" for n in names) + f" {speedup:>8.1f} {diff:>9.1e}")


if __name__ == "__main__":
    main()
