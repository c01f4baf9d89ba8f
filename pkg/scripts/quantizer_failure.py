"""Empirical quantizer failure rate under the uniform box vs the ramp width delta."""

import argparse
from fractions import Fraction

from boundnet.harness import DistributionSpec, quantizer_failure_rate
from boundnet.lowering import GridSpec
from boundnet.pipeline import QuantizerSpec, build_quantizer, input_word_bits


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--R", type=Fraction, default=Fraction(1))
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--d", type=int, default=2)
    ap.add_argument("--n", type=int, default=20000)
    ap.add_argument("--seed", type=int, default=0)
    a = ap.parse_args()
    grid = GridSpec(a.R, a.p)
    C = input_word_bits(grid)
    print(f"{'delta':>10} {'rate':>10} {'se':>10} {'budget d*delta':>15}")
    for den in (4, 8, 16, 32, 64):
        delta = Fraction(1, den * a.p) if den * a.p > 2 else Fraction(1, 4)
        spec = QuantizerSpec(grid, C, delta, a.d * delta)
        qn = build_quantizer(spec, a.d)
        rate, se = quantizer_failure_rate(qn, grid, C, DistributionSpec.uniform_box(a.R, a.d), a.n, a.seed)
        print(f"{str(delta):>10} {rate:10.5f} {se:10.5f} {float(spec.failure_budget):15.5f}")


if __name__ == "__main__":
    main()
