"""Time the numba kernels against the numpy fallback.

Usage::

    python benchmarks/bench_kernels.py [--sizes 1000 10000 100000] [--repeat 20]

Each kernel runs on identical inputs under both backends; the numba functions
are called once before timing so that compilation is excluded. The last block
times a complete two-tilt fit on a simulated SAR sample.
"""

import argparse
import time

import numpy as np

from pudetm import kernels
from pudetm.estimation import DETM, FitOptions, fit
from pudetm.simulate import ScenarioConfig, generate_pu


def best_of(fn, repeat):
    fn()
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return min(times)


def kernel_cases(N, rng):
    p = 15
    Q = np.column_stack([np.ones(N), rng.normal(size=(N, p))])
    b1, b2 = rng.normal(0, 0.3, p + 1), rng.normal(0, 0.3, p + 1)
    w1, w2 = rng.uniform(0, 0.5, N), rng.uniform(0, 0.5, N)
    u1, u2 = rng.normal(size=N), rng.normal(size=N)
    s = rng.uniform(1.0, 2.0, N)
    g1, g2 = rng.normal(size=N), rng.normal(size=N)
    return {
        "lagrange_terms": lambda: kernels.lagrange_terms(u1, u2, s, 0.05, -0.05),
        "multinomial_terms": lambda: kernels.multinomial_terms(Q, b1, b2, w1, w2, True),
        "mixture_terms": lambda: kernels.mixture_terms(g1, g2, np.log(0.7), np.log(0.3)),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", type=int, nargs="+", default=[1000, 10000, 100000])
    ap.add_argument("--repeat", type=int, default=20)
    ap.add_argument("--fit-n", type=int, default=2000)
    args = ap.parse_args(argv)

    backends = kernels.available_backends()
    before = kernels.get_backend()
    print(f"backends: {', '.join(backends)}")
    print(f"{'kernel':<20}{'N':>8}" + "".join(f"{b + ' ms':>12}" for b in backends) + f"{'speedup':>10}")
    try:
        for N in args.sizes:
            cases = kernel_cases(N, np.random.default_rng(N))
            for name, fn in cases.items():
                t = {}
                for b in backends:
                    kernels.set_backend(b)
                    t[b] = best_of(fn, args.repeat)
                ratio = t["numpy"] / t["numba"] if "numba" in t else float("nan")
                print(f"{name:<20}{N:>8}" + "".join(f"{1e3 * t[b]:>12.3f}" for b in backends)
                      + f"{ratio:>10.2f}")

        ds, _ = generate_pu(ScenarioConfig.sar(args.fit_n, 0.7, validation_size=0),
                            np.random.default_rng(0))
        opts = FitOptions(n_starts=2, seed=0)
        for b in backends:
            kernels.set_backend(b)
            fit(ds, DETM, opts)
            t0 = time.perf_counter()
            fr = fit(ds, DETM, opts)
            dt = time.perf_counter() - t0
            print(f"full fit n=m={args.fit_n} p=15, backend {b}: {dt:.2f}s "
                  f"(pi_hat {fr.pi:.6f}, {fr.n_iterations} EM iterations)")
    finally:
        kernels.set_backend(before)


if __name__ == "__main__":
    main()
