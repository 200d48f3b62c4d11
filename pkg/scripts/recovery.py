"""Parameter recovery on synthetic panels.

Generates panels from the default generator, fits the generating model and
reports, per effect, the mean estimate, mean standard error and how often
the truth lies within 3 standard errors.

    python3 scripts/recovery.py --reps 20 --out recovery.tsv
"""
import argparse
import logging
import time

import numpy as np

from osaom.estimation import EstimationOptions, estimate
from osaom.synthetic import Generator


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--reps", type=int, default=20)
    ap.add_argument("--n", type=int, default=40)
    ap.add_argument("--waves", type=int, default=3)
    ap.add_argument("--seed", type=int, default=1, help="first panel seed")
    ap.add_argument("--threads", type=int, default=1)
    ap.add_argument("--out", default="recovery.tsv")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(message)s")

    gen = Generator(n=args.n, n_waves=args.waves)
    truth = np.array(list(gen.effects.values()))
    rows = []
    t0 = time.perf_counter()
    for rep in range(args.reps):
        seed = args.seed + rep
        panel = gen.generate(seed)
        res = estimate(panel, gen.specs, EstimationOptions(seed=seed, threads=args.threads),
                       constants=gen.constants)
        se = res.se[res.n_rates:]
        rows.append((seed, res.theta, se, res.converged, res.max_ratio))
        logging.info("rep %d: converged=%s max ratio %.3f (%.0f s elapsed)", rep + 1,
                     res.converged, res.max_ratio, time.perf_counter() - t0)

    est = np.array([r[1] for r in rows])
    se = np.array([r[2] for r in rows])
    cover = (np.abs(est - truth) <= 3 * se).mean(axis=0)
    with open(args.out, "w") as fh:
        fh.write("effect\ttruth\tmean_estimate\tsd_estimate\tmean_se\tcoverage_3se\n")
        for k, name in enumerate(gen.effects):
            fh.write(f"{name}\t{truth[k]:.3f}\t{est[:, k].mean():.4f}\t{est[:, k].std(ddof=1):.4f}"
                     f"\t{se[:, k].mean():.4f}\t{cover[k]:.2f}\n")
    conv = np.mean([r[3] for r in rows])
    print(open(args.out).read())
    print(f"converged in {conv:.0%} of runs; {time.perf_counter() - t0:.0f} s total")


if __name__ == "__main__":
    main()
