"""Finite-sample calibration of the SCAR test statistic under the null.

Usage::

    python scripts/null_calibration.py --n 1000 5000 20000 --replicates 200 --workers 4

For each sample size the SCAR null scenario (p = 15, pi = 0.75, n = m) is
simulated and the statistic compared with its chi-square(p) limit: mean and
variance ratios, rejection rate at 5% and a KS p-value. A common ratio for
mean and sqrt(variance) points to a scale inflation of order 1/N.
"""

import argparse

import numpy as np
from scipy import stats

from pudetm.simulate import Cell, ScenarioConfig, run_experiment


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[1000, 5000])
    ap.add_argument("--p", type=int, default=15)
    ap.add_argument("--replicates", type=int, default=200)
    ap.add_argument("--workers", type=int, default=1)
    ap.add_argument("--seed", type=int, default=7)
    args = ap.parse_args(argv)
    df = args.p
    print(f"{'n':>7}{'reps':>6}{'mean/df':>9}{'sqrt(var/2df)':>15}{'reject 5%':>11}{'KS p':>9}")
    for n in args.n:
        cell = Cell(ScenarioConfig.scar(n, 0.75, p=args.p, validation_size=0), "gof",
                    replicates=args.replicates)
        s = run_experiment([cell], seed=args.seed + n, workers=args.workers).cells[0]
        r = np.array([v["statistic"] for v in s.values if v is not None])
        ks = stats.kstest(r, stats.chi2(df).cdf).pvalue
        rej = float(np.mean(stats.chi2(df).sf(r) < 0.05))
        print(f"{n:>7}{r.size:>6}{r.mean() / df:>9.3f}{np.sqrt(r.var(ddof=1) / (2 * df)):>15.3f}"
              f"{rej:>11.3f}{ks:>9.3g}", flush=True)


if __name__ == "__main__":
    main()
