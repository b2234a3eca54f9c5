"""Fraction of 1-reconstructible words versus eta, against a Poisson prediction.

The prediction is 1 - exp(-E) with E the expected number of surviving pairs
(depth 0 included).  For short words the curve crosses 1/2 well below
eta = 1/2; the crossing moves right as the word length grows.

    python3 scripts/reconstruction_threshold.py --word-lens 4,8 --J-max 22 --seeds 16
"""
import argparse
import math

import numpy as np

from sparsegibbs.reconstruction import crossing, expected_pair_count, fraction_experiment, mean_fractions


def poisson_fraction(eta, word_len, J_max, d=1):
    e = expected_pair_count(d, eta, word_len, J_max) + 2.0 ** (-d * word_len * (1 - eta))
    return 1 - math.exp(-e)


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--word-lens", default="4")
    p.add_argument("--J-max", type=int, default=22)
    p.add_argument("--seeds", type=int, default=16)
    p.add_argument("--step", type=float, default=0.05)
    args = p.parse_args()

    etas = np.round(np.arange(1, round(1 / args.step)) * args.step, 10)
    for ell in (int(x) for x in args.word_lens.split(",")):
        if ell + args.J_max > 64:
            raise SystemExit(f"word length {ell} + J_max exceeds 64-bit codes")
        rows = fraction_experiment(1, etas, ell, args.J_max, range(args.seeds))
        e, m = mean_fractions(rows)
        pred = np.array([poisson_fraction(x, ell, args.J_max) for x in e])
        print(f"# word_len={ell}: crossing {crossing(e, m):.3f}, predicted {crossing(e, pred):.3f}")
        print("eta,mean_fraction,poisson_prediction")
        for x, y, z in zip(e, m, pred):
            print(f"{x:g},{y:.4f},{z:.4f}")


if __name__ == "__main__":
    main()
