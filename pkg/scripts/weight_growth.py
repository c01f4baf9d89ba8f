"""Compile x -> s*relu(x) for growing s and print source vs compiled max |weight|.

Shows where the compiled weight stops tracking the source weight for each gadget mode.
"""

import argparse
import json

from boundnet import CompileOptions, GridSpec, compile_bounded_weights
from boundnet.netir import dense_net


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--max-exp", type=int, default=8)
    ap.add_argument("--p", type=int, default=4)
    ap.add_argument("--B", type=int, default=1)
    a = ap.parse_args()
    grid = GridSpec(1, a.p)
    rows = []
    for e in range(0, a.max_exp + 1, 2):
        s = 10**e
        net = dense_net(1, [([[1]], [0], "relu"), ([[s]], [0], "linear")])
        for mode in ("compact", "poly-weight"):
            comp = compile_bounded_weights(net, grid, a.B, 100, CompileOptions(gadget=mode))
            m = comp.metrics
            rows.append({"source_weight": s, "mode": mode, "C": comp.fmt.C,
                         "compiled_max": str(max(m.max_abs_weight, m.max_abs_bias)), "bound": str(comp.weight_bound)})
    for r in rows:
        print(json.dumps(r))


if __name__ == "__main__":
    main()
