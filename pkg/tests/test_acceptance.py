"""Acceptance suite: one pass/fail line per criterion (shown in the terminal summary)."""

import itertools
import random
from fractions import Fraction

import numpy as np

from boundnet.circuit import ThresholdCircuit, ThresholdGate, all_inputs, circuit_metrics, eval_circuit_batch
from boundnet.gadgets import (
    FixedPointFormat,
    clip_flag_stage,
    decode_word,
    encode_word,
    iterated_addition_gadget,
    multiplication_gadget,
    poly_weight_bound,
    relu_gadget,
    signed_sum_gadget,
)
from boundnet.lowering import GridSpec, add_clip_layer, clamp, expand_fanout_one, push_weights_first_layer
from boundnet.netir import dense_net, eval_net_exact_batch, merge_linear_layers
from boundnet.pipeline import (
    CompileOptions,
    SubstitutionError,
    compile_bounded_weights,
    minimized_equivalent,
    substitute_circuit_block,
    tc_to_relu,
)
from boundnet.univariate import collapse_to_depth2, eval_pwl, extract_pwl
from conftest import random_net, record

F = Fraction


def _grid_residual(comp, net, grid, B):
    pts = grid.points(net.input_dim)
    out = eval_net_exact_batch(comp.net, pts)
    ref = eval_net_exact_batch(net, pts)
    return max(abs(o[0] - clamp(r[0], B)) for o, r in zip(out, ref))


# 1 -------------------------------------------------------------------------


def test_depth_law():
    rng = random.Random(1)
    seen = []
    ok = True
    for mode in ("compact", "poly-weight"):
        for d in (1, 2):
            for k in (1, 2, 3):
                net = random_net(rng, d, k, max_width=3)
                comp = compile_bounded_weights(net, GridSpec(1, 2), 1, 100, CompileOptions(gadget=mode))
                good = comp.net.depth == 3 * k + 3 and comp.circuit.depth == 3 * k + 1
                ok &= good
                seen.append(f"{mode[0]}:d{d}k{k}->{comp.net.depth}/{comp.circuit.depth}")
    record(1, ok, "compiled depth 3k+3, circuit depth 3k+1 for k in 1..3, d in 1..2 (" + " ".join(seen) + ")")
    assert ok


# 2 -------------------------------------------------------------------------


def _criterion2_nets(rng):
    nets = [
        dense_net(1, [([[1]], [0], "relu"), ([[10**6]], [0], "linear")], "big"),
        dense_net(1, [([[1], [-1]], [0, F(1, 3)], "relu"), ([[F(10**40 + 7, 10**40), F(-5, 3)]], [0], "linear")], "fine"),
    ]
    nets += [random_net(rng, 1, k, max_width=3) for k in (1, 2, 3)]
    return nets


def test_grid_approximation():
    rng = random.Random(2)
    nets = _criterion2_nets(rng)
    worst = F(0)
    count = 0
    for p in (2, 4, 8):
        for B in (1, 2):
            grid = GridSpec(1, p)
            for net in nets:
                comp = compile_bounded_weights(net, grid, B, 100)
                worst = max(worst, _grid_residual(comp, net, grid, B))
                count += 1
    ok = worst <= F(1, 100)
    record(2, ok, f"{count} compiles (p in 2,4,8; B in 1,2), worst grid residual {worst} <= 1/100")
    assert ok


# 3 -------------------------------------------------------------------------


def test_weight_decoupling():
    lines, ok = [], True
    base = [([[1], [-2]], [0, 1], "relu"), ([[3, -1]], [0], "linear")]
    scaled = [([[1], [-2]], [0, 1], "relu"), ([[3 * 10**6, -1]], [0], "linear")]
    grid = GridSpec(1, 4)
    for mode in ("compact", "poly-weight"):
        a = compile_bounded_weights(dense_net(1, base), grid, 1, 100, CompileOptions(gadget=mode))
        b = compile_bounded_weights(dense_net(1, scaled), grid, 1, 100, CompileOptions(gadget=mode))
        wa = max(a.metrics.max_abs_weight, a.metrics.max_abs_bias)
        wb = max(b.metrics.max_abs_weight, b.metrics.max_abs_bias)
        bound = max(a.weight_bound, b.weight_bound)
        good = wa <= a.weight_bound and wb <= b.weight_bound and abs(wa - wb) <= bound
        if mode == "poly-weight":
            # circuit gates obey P(n) = n with n <= 2*C*width adder inputs
            for comp in (a, b):
                cm = circuit_metrics(comp.circuit)
                good &= max(cm.max_abs_weight, cm.max_abs_bias) <= poly_weight_bound(2 * comp.fmt.C * cm.width)
        ok &= good
        lines.append(f"{mode}: {wa} vs {wb} (source {a.source_metrics.max_abs_weight} vs {b.source_metrics.max_abs_weight}), bounds {a.weight_bound}/{b.weight_bound}")
    record(3, ok, "; ".join(lines))
    assert ok


# 4 -------------------------------------------------------------------------


def _words(vals, C):
    return [b for v in vals for b in encode_word(v, C)]


def test_gadget_exactness():
    C = 6
    mism = 0
    checked = 0
    half = 2 ** (C - 1)
    for m in (1, 2, 3, 4):
        lim = half // m  # per-addend bound keeping every sum inside C bits
        vals = range(-lim, lim)
        tuples = list(itertools.product(vals, repeat=m))
        X = np.array([_words(t, C) for t in tuples], dtype=np.int64)
        for mode in ("compact",) + (("poly-weight",) if m <= 2 else ()):
            g = iterated_addition_gadget(m, C, mode)
            Y = eval_circuit_batch(g, X)
            got = [decode_word(r) for r in Y.tolist()]
            mism += sum(a != sum(t) for a, t in zip(got, tuples))
            checked += len(tuples)
    # multiplication: all 4096 pairs against the signed product mod 2**C
    mul = multiplication_gadget(C)
    pairs = list(itertools.product(range(-half, half), repeat=2))
    Y = eval_circuit_batch(mul, np.array([_words(p, C) for p in pairs], dtype=np.int64))
    for (x, y), r in zip(pairs, Y.tolist()):
        want = ((x * y + half) % 2**C) - half
        mism += decode_word(r) != want
        checked += 1
    # relu, one and two rails
    for c in range(2, C + 1):
        for v in range(-(2 ** (c - 1)), 2 ** (c - 1)):
            r1 = eval_circuit_batch(relu_gadget(c, 1), np.array([encode_word(v, c)]))[0].tolist()
            mism += decode_word(r1) != max(v, 0)
            if -v < 2 ** (c - 1):
                r2 = eval_circuit_batch(relu_gadget(c, 2), np.array([encode_word(v, c) + encode_word(-v, c)]))[0].tolist()
                mism += decode_word(r2[:c]) != max(v, 0) or decode_word(r2[c:]) != -max(v, 0)
            checked += 1
    ok = mism == 0
    record(4, ok, f"{checked} gadget cases (addition m<=4 C=6, multiplication C=6, relu C<=6), {mism} mismatches")
    assert ok


# 5 -------------------------------------------------------------------------


def _circuit_corpus():
    out = [
        ("and", ThresholdCircuit(2, ((ThresholdGate((0, 1), (1, 1), -1),),), (0,))),
        ("add m2 C4", iterated_addition_gadget(2, 4)),
        ("add m2 C6", iterated_addition_gadget(2, 6)),
        ("add m3 C4 poly", iterated_addition_gadget(3, 4, "poly-weight")),
        ("mul C4", multiplication_gadget(4)),
        ("mul C6", multiplication_gadget(6)),
        ("relu C6 x2", relu_gadget(6, 2)),
        ("signed-sum C3", signed_sum_gadget([1, -1], (2, -2), FixedPointFormat(3))),
        ("clip C5", clip_flag_stage(1, FixedPointFormat(5, 4))),
    ]
    rng = random.Random(5)
    for k in (1, 2):
        net = random_net(rng, 1, k, max_width=2)
        for mode in ("compact", "poly-weight"):
            comp = compile_bounded_weights(net, GridSpec(1, 4), 1, 100, CompileOptions(gadget=mode))
            out.append((f"compiled k{k} {mode}", comp.circuit))
    for i in range(5):
        n = rng.randint(2, 8)
        layers, width = [], n
        for _ in range(rng.randint(1, 3)):
            gl = []
            for _ in range(rng.randint(1, 5)):
                ins = tuple(sorted(rng.sample(range(width), rng.randint(0, width))))
                gl.append(ThresholdGate(ins, tuple(rng.randint(-5, 5) for _ in ins), rng.randint(-4, 4)))
            layers.append(tuple(gl))
            width = len(gl)
        out.append((f"random {i}", ThresholdCircuit(n, tuple(layers), tuple(range(width)))))
    return out


def test_circuit_relu_equivalence():
    corpus = _circuit_corpus()
    rng = np.random.default_rng(7)
    bad, n_checked, out_of_range = 0, 0, 0
    for name, c in corpus:
        assert c.input_bits <= 12, name
        X = all_inputs(c.input_bits)
        net = tc_to_relu(c)
        assert net.depth == c.depth + 1
        got = np.array([[int(v) for v in row] for row in eval_net_exact_batch(net, X.tolist())])
        bad += int(np.sum(np.any(got != eval_circuit_batch(c, X), axis=1)))
        n_checked += 1
        reals = [[Fraction(float(v)).limit_denominator(1000) for v in row] for row in rng.uniform(-0.5, 1.5, size=(100, c.input_bits))]
        for row in eval_net_exact_batch(net, reals):
            out_of_range += sum(not 0 <= v <= 1 for v in row)
    ok = bad == 0 and out_of_range == 0
    record(5, ok, f"{n_checked} circuits exhaustive (<=12 bits): {bad} disagreements; 100 real inputs each: {out_of_range} outputs outside [0,1]")
    assert ok


# 6 -------------------------------------------------------------------------


def test_exact_pass_preservation():
    rng = random.Random(6)
    residual = 0
    for i in range(100):
        d = rng.randint(1, 3)
        k = rng.randint(1, 4)
        net = random_net(rng, d, k, max_width=4, hidden_act=["relu", "relu", "linear"])
        pts = [tuple(F(rng.randint(-40, 40), rng.randint(1, 9)) for _ in range(d)) for _ in range(50)]
        ref = [v[0] for v in eval_net_exact_batch(net, pts)]
        merged = merge_linear_layers(net)
        relu_only = random_net(rng, d, k, max_width=4)
        expanded = expand_fanout_one(relu_only)
        pushed = push_weights_first_layer(expanded)
        B = F(rng.randint(1, 20), rng.randint(1, 3))
        clipped = add_clip_layer(net, B)
        r2 = [v[0] for v in eval_net_exact_batch(relu_only, pts)]
        residual += sum(abs(a[0] - b) for a, b in zip(eval_net_exact_batch(merged, pts), ref))
        residual += sum(abs(a[0] - b) for a, b in zip(eval_net_exact_batch(expanded, pts), r2))
        residual += sum(abs(a[0] - b) for a, b in zip(eval_net_exact_batch(pushed, pts), r2))
        residual += sum(abs(a[0] - clamp(b, B)) for a, b in zip(eval_net_exact_batch(clipped, pts), ref))
    ok = residual == 0
    record(6, ok, f"100 random nets x 50 rational points x 4 passes, total exact residual {residual}")
    assert ok


# 7 -------------------------------------------------------------------------


def test_univariate_round_trip():
    rng = random.Random(7)
    bad, total = 0, 0
    for i in range(200):
        net = random_net(rng, 1, rng.randint(1, 4), max_width=6)
        pwl = extract_pwl(net)
        col = collapse_to_depth2(pwl)
        assert col.depth == 2
        a = list(pwl.breakpoints)
        M = max((abs(x) for x in a), default=F(0)) + 1
        pts = a + [(x + y) / 2 for x, y in zip(a, a[1:])] + [M, -M]
        ref = eval_net_exact_batch(net, [(t,) for t in pts])
        got = eval_net_exact_batch(col, [(t,) for t in pts])
        bad += sum(r != g for r, g in zip(ref, got))
        bad += sum(r[0] != eval_pwl(pwl, t) for r, t in zip(ref, pts))
        total += len(pts)
    ok = bad == 0
    record(7, ok, f"200 univariate nets, {total} points (breakpoints, midpoints, +-(max|a|+1)), {bad} mismatches")
    assert ok


# 8 -------------------------------------------------------------------------


def _adversarial_inputs(grid, n, rng):
    p, h = grid.p, grid.half_count
    pts = []
    delta = F(1, 8 * p)
    for l in range(-h, h + 2):
        mid = (l - F(1, 2)) / p
        pts += [mid, mid + delta / (4 * p), mid + delta / (2 * p), mid + delta / p - F(1, 10**6)]
    pts += [grid.R + F(1, 2 * p), -grid.R - F(1, 2 * p), grid.R + 1, -grid.R - 3, F(10**6), F(-10**6)]
    while len(pts) < n:
        pts.append(F(rng.randint(-4000, 4000), rng.randint(1, 997)))
    return pts[:n]


def test_range_safety():
    rng = random.Random(8)
    lo, hi, bad, total = None, None, 0, 0
    for B, mode in ((1, "compact"), (2, "poly-weight")):
        grid = GridSpec(1, 4)
        for k in (1, 2, 3):
            net = random_net(rng, 1, k, max_width=3, num=20)
            comp = compile_bounded_weights(net, grid, B, 100, CompileOptions(gadget=mode))
            xs = _adversarial_inputs(grid, 1000, rng)
            out = [v[0] for v in eval_net_exact_batch(comp.net, [(x,) for x in xs])]
            bad += sum(not -B <= v <= 5 * B for v in out)
            total += len(out)
            lo = min(out) / B if lo is None else min(lo, min(out) / B)
            hi = max(out) / B if hi is None else max(hi, max(out) / B)
    ok = bad == 0
    record(8, ok, f"{total} adversarial inputs over 6 compiles, {bad} outside [-B,5B]; observed range [{float(lo):.3f}B, {float(hi):.3f}B]")
    assert ok


# 9 -------------------------------------------------------------------------


def test_substitution():
    rng = random.Random(9)
    grid = GridSpec(1, 4)
    net = random_net(rng, 1, 2, max_width=3)
    comp = compile_bounded_weights(net, grid, 1, 100)
    pts = grid.points(1)
    before = eval_net_exact_batch(comp.net, pts)
    alt = minimized_equivalent(comp.circuit)
    sub = substitute_circuit_block(comp, alt, check=True)
    same = eval_net_exact_batch(sub.net, pts) == before
    shallower = sub.net.depth == alt.depth + 2 < comp.net.depth
    # flip one output bit on one input pattern
    X = all_inputs(alt.input_bits)
    Y = eval_circuit_batch(comp.circuit, X)
    table = {tuple(x): tuple(y) for x, y in zip(X.tolist(), Y.tolist())}
    target = tuple(X[5].tolist())
    flipped = list(table[target])
    flipped[0] ^= 1
    table[target] = tuple(flipped)
    from boundnet.circuit import truth_table_circuit

    wrong = truth_table_circuit(table, alt.input_bits, alt.n_outputs)
    try:
        substitute_circuit_block(comp, wrong, check=True)
        rejected, witness = False, None
    except SubstitutionError as e:
        rejected, witness = True, e.witness
    ok = same and shallower and rejected and witness == list(target)
    record(9, ok, f"equivalent depth-{alt.depth} block: grid outputs unchanged={same}, depth {comp.net.depth}->{sub.net.depth}; inequivalent block rejected={rejected} witness={witness}")
    assert ok
