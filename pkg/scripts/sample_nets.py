"""Write the sample networks used by the README and the CLI examples."""

import argparse
from fractions import Fraction
from pathlib import Path

from boundnet.netir import dense_net
from boundnet.serialize import save_net


def sample_nets():
    F = Fraction
    return {
        # k = 1: a single linear map
        "k1_linear.json": dense_net(1, [([[F(3, 4)]], [0], "linear")], "k1-linear"),
        # k = 2: hat function scaled past B
        "k2_hat.json": dense_net(
            1, [([[1], [2], [1]], [0, -1, -2], "relu"), ([[3, -6, 3]], [0], "linear")], "k2-hat"
        ),
        # k = 2 in two dimensions, with an irrational-looking weight
        "k2_plane.json": dense_net(
            2,
            [([[1, 2], [3, -1], [F(-1, 2), 1]], [F(1, 3), 0, F(1, 7)], "relu"), ([[F(10**9 + 7, 10**9), -2, 1]], [0], "linear")],
            "k2-plane",
        ),
        # k = 3 sawtooth
        "k3_saw.json": dense_net(
            1,
            [
                ([[2], [4]], [0, -2], "relu"),
                ([[1, -1], [1, -1]], [0, F(-1, 2)], "relu"),
                ([[1, -2]], [0], "linear"),
            ],
            "k3-saw",
        ),
        # large-weight net x -> 10^6 relu(x)
        "big_weight.json": dense_net(1, [([[1]], [0], "relu"), ([[10**6]], [0], "linear")], "big-weight"),
    }


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="sample_nets")
    a = ap.parse_args()
    out = Path(a.out)
    out.mkdir(parents=True, exist_ok=True)
    for name, net in sample_nets().items():
        save_net(net, out / name)
        print(out / name)


if __name__ == "__main__":
    main()
