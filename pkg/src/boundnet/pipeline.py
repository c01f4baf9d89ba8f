"""End-to-end assembly: quantizer, net-to-circuit compilation, circuit-to-ReLU
conversion, decoder, and the bounded-weight compile driver."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from fractions import Fraction

import numpy as np

from .circuit import (
    ThresholdCircuit,
    ThresholdGate,
    all_inputs,
    circuit_metrics,
    circuits_equivalent,
    eval_circuit_batch,
    stack_circuits,
)
from .gadgets import (
    MODES,
    FixedPointFormat,
    GadgetError,
    clip_gates,
    clip_offset,
    encode_word,
    relu_gates,
    weighted_sum_gadget,
)
from .lowering import (
    GridSpec,
    RationalizedNet,
    expand_fanout_one,
    push_weights_first_layer,
    rationalize,
    rescale_denominator,
)
from .netir import (
    NetError,
    NetLayer,
    NetMetrics,
    ReluNet,
    check_net,
    concat_nets,
    merge_linear_layers,
    net_metrics,
    q,
)


class CompileError(RuntimeError):
    pass


class SubstitutionError(RuntimeError):
    def __init__(self, msg: str, witness=None):
        super().__init__(msg)
        self.witness = witness


def input_word_bits(grid: GridSpec) -> int:
    """Bits for p*x in [-Rp, Rp]: ceil(log2(2Rp+1)) + 1."""
    return (2 * grid.half_count).bit_length() + 1


# ---------------------------------------------------------------- quantizer


@dataclass(frozen=True)
class QuantizerSpec:
    grid: GridSpec
    C: int
    delta: Fraction
    failure_budget: Fraction = Fraction(0)

    def __post_init__(self):
        object.__setattr__(self, "delta", q(self.delta))
        object.__setattr__(self, "failure_budget", q(self.failure_budget))
        if not 0 < self.delta < Fraction(1, 2):
            raise ValueError("ramp width must lie in (0, 1/2)")
        if self.C < input_word_bits(self.grid):
            raise ValueError(f"C = {self.C} cannot hold p*x for grid {self.grid}")


def default_quantizer_spec(grid: GridSpec, d: int = 1, discrete: bool = False) -> QuantizerSpec:
    """Continuous inputs: ramp width 1/(8p), failure budget d*delta under the uniform box.
    Discrete inputs: width 1/4, no grid point is ever in a ramp."""
    C = input_word_bits(grid)
    if discrete:
        return QuantizerSpec(grid, C, Fraction(1, 4), Fraction(0))
    delta = Fraction(1, 8 * grid.p)
    return QuantizerSpec(grid, C, delta, d * delta)


def quantizer_failure_set(spec: QuantizerSpec) -> list[tuple[Fraction, Fraction]]:
    """Half-open x-intervals [lo, hi) per coordinate where the ramps are partial."""
    n, p, D = spec.grid.half_count, spec.grid.p, spec.delta
    return [((l - Fraction(1, 2)) / p, (l - Fraction(1, 2) + D) / p) for l in range(-n, n + 2)]


def build_quantizer(spec: QuantizerSpec, d: int) -> ReluNet:
    """Depth-2 net: x in R^d -> C bits per coordinate encoding p*round(x).

    g_l ramps from 0 to 1 on [l - 1/2, l - 1/2 + delta] (in units of p*x); output
    bit j is sum_l (bit_j(l) - bit_j(l-1)) g_l over the grid's integer range.
    """
    n, p, D, C = spec.grid.half_count, spec.grid.p, spec.delta, spec.C
    ls = list(range(-n, n + 2))
    rows, biases = [], []
    for i in range(d):
        for l in ls:
            shift = Fraction(1, 2) - l
            rows.append({i: p / D})
            biases.append(shift / D)
            rows.append({i: p / D})
            biases.append((shift - D) / D)
    hidden = NetLayer.sparse(rows, biases, "relu", d)

    def bits(l):
        return encode_word(l, C) if -n <= l <= n else (0,) * C

    out_rows = []
    for i in range(d):
        base = i * 2 * len(ls)
        for j in range(C):
            row = {}
            for li, l in enumerate(ls):
                c = bits(l)[j] - bits(l - 1)[j]
                if c:
                    row[base + 2 * li] = c
                    row[base + 2 * li + 1] = -c
            out_rows.append(row)
    out = NetLayer.sparse(out_rows, [0] * len(out_rows), "linear", hidden.n_out)
    return ReluNet(d, (hidden, out), "quantizer")


def build_quantizer_discrete(spec: QuantizerSpec, d: int) -> ReluNet:
    """Quantizer for inputs promised on the grid: every ramp lies strictly between grid values."""
    if spec.delta >= Fraction(1, 2):
        raise ValueError("discrete quantizer needs delta < 1/2")
    net = build_quantizer(spec, d)
    return ReluNet(net.input_dim, net.layers, "quantizer-discrete")


def encode_grid_point(x, grid: GridSpec, c_in: int) -> list[int]:
    """Circuit input bits for a point: the c_in-bit words of p*round(x_i)."""
    out = []
    for v in x:
        out.extend(encode_word(int(grid.round(v) * grid.p), c_in))
    return out


# --------------------------------------------------------- net -> circuit


def _first_layer_ints(rn: RationalizedNet, grid: GridSpec):
    t, p = rn.t, grid.p
    first = rn.net.layers[0]
    W, beta = [], []
    for row, b in zip(first.rows, first.biases):
        r = {}
        for c, w in row:
            s = w * t
            if s.denominator != 1 or s.numerator % p:
                raise CompileError(f"first-layer numerator {s} is not an integer multiple of p = {p}")
            r[c] = s.numerator // p
        bb = b * t
        if bb.denominator != 1:
            raise CompileError(f"bias numerator {bb} is not an integer")
        W.append(r)
        beta.append(int(bb))
    return W, beta


def _biases_int(layer: NetLayer, t: int) -> list[int]:
    out = []
    for b in layer.biases:
        bb = b * t
        if bb.denominator != 1:
            raise CompileError(f"bias numerator {bb} is not an integer")
        out.append(int(bb))
    return out


def value_bounds(rn: RationalizedNet, grid: GridSpec) -> list[list[int]]:
    """Worst-case |numerator| of every pre-activation over the grid box (interval propagation)."""
    W, beta = _first_layer_ints(rn, grid)
    n = grid.half_count
    cur = [sum(abs(w) for w in r.values()) * n + abs(b) for r, b in zip(W, beta)]
    out = [cur]
    for layer in rn.net.layers[1:]:
        bi = _biases_int(layer, rn.t)
        cur = [sum(cur[c] for c, _ in row) + abs(b) for row, b in zip(layer.rows, bi)]
        out.append(cur)
    return out


def choose_word_length(rn: RationalizedNet, grid: GridSpec, B) -> int:
    bt = clip_offset(q(B), rn.t)
    bounds = value_bounds(rn, grid)
    top = max(max(v, default=0) for v in bounds)
    top = max(top, max(bounds[-1], default=0) + bt)
    return max(top.bit_length() + 1, input_word_bits(grid))


def _patterns(wires, used):
    if wires is None:
        return None
    return {tuple(r) for r in wires[:, used].tolist()}


def _advance(wires, width, new_layers):
    if wires is None:
        return None
    tmp = ThresholdCircuit(width, tuple(tuple(l) for l in new_layers), tuple(range(len(new_layers[-1]))))
    return eval_circuit_batch(tmp, wires)


def compile_net_to_circuit(
    rn: RationalizedNet,
    grid: GridSpec,
    B,
    fmt: FixedPointFormat,
    mode: str = "compact",
    domain_cap: int = 10**5,
) -> ThresholdCircuit:
    """Threshold circuit simulating N'' on quantized inputs; depth 3k+1.

    Inputs: one c_in-bit word of p*x~ per coordinate.  Outputs: the C-bit word of
    v' = v + Bt (or 0 out of range) followed by the flag c.  Every hidden neuron is
    carried dual rail (z, -z); the ReLU layer clears both rails when z < 0.
    """
    if mode not in MODES:
        raise GadgetError(f"unknown gadget mode {mode!r}")
    net = rn.net
    if fmt.t != rn.t:
        raise CompileError(f"format denominator {fmt.t} differs from net denominator {rn.t}")
    C, B = fmt.C, q(B)
    mod = 2**C
    bt = clip_offset(B, fmt.t)
    d, k = net.input_dim, net.depth
    c_in = input_word_bits(grid)
    if C < c_in:
        raise CompileError(f"C = {C} is shorter than the input words ({c_in} bits)")
    bounds = value_bounds(rn, grid)
    worst = max(max(max(v, default=0) for v in bounds), max(bounds[-1], default=0) + bt)
    if worst > fmt.hi:
        raise CompileError(f"values up to {worst} overflow {C}-bit words")
    for li, layer in enumerate(net.layers[:-1], start=1):
        if layer.activation != "relu":
            raise CompileError(f"hidden layer {li} must be relu")

    wires = None
    if mode == "poly-weight":
        if grid.size(d) > domain_cap:
            raise CompileError(f"grid has {grid.size(d)} points; poly-weight domains are capped at {domain_cap}")
        wires = np.array([encode_grid_point(x, grid, c_in) for x in grid.points(d)], dtype=np.int64)

    n_in = d * c_in
    # layer 1: the partial products of x~ with the hardwired weight bits reduce to forwarding x~
    fwd = [ThresholdGate.identity(i) for i in range(n_in)]
    layers = [fwd]
    width = n_in
    # wires unchanged by forwarding

    def sign_ext(b):
        return 2**b if b < c_in - 1 else -(2 ** (c_in - 1))

    def finish(parts, final, n_words):
        nonlocal wires, width
        add_layers, outs = stack_circuits(parts, width)
        if final:
            last = clip_gates(outs[0], outs[1])
        else:
            last = []
            for j in range(n_words):
                last.extend(relu_gates(outs[2 * j], outs[2 * j + 1]))
        block = add_layers + [last]
        wires = _advance(wires, width, block)
        layers.extend(block)
        width = len(last)

    # first N'' layer
    W, beta = _first_layer_ints(rn, grid)
    final = k == 1
    parts = []
    for r, b in zip(W, beta):
        cf = [0] * n_in
        for i, w in r.items():
            for bit in range(c_in):
                cf[i * c_in + bit] = w * sign_ext(bit)
        consts = (b + bt, -b + bt) if final else (b, -b)
        for sgn, k0 in zip((1, -1), consts):
            used = [l for l in range(n_in) if (sgn * cf[l]) % mod]
            g = weighted_sum_gadget([sgn * cf[l] for l in used], C, k0, mode, _patterns(wires, used))
            parts.append((g, used))
    finish(parts, final, len(W))

    # later layers: +-1 combinations of dual-rail words
    for li in range(1, k):
        layer = net.layers[li]
        final = li == k - 1
        bi = _biases_int(layer, fmt.t)
        parts = []
        for row, b in zip(layer.rows, bi):
            plus, minus = [], []
            for c, a in row:
                zp = list(range(2 * c * C, 2 * c * C + C))
                zn = list(range(2 * c * C + C, 2 * c * C + 2 * C))
                if a == 1:
                    plus += zp
                    minus += zn
                elif a == -1:
                    plus += zn
                    minus += zp
                else:
                    raise CompileError(f"layer {li + 1} weight {a} is not +-1")
            consts = (b + bt, -b + bt) if final else (b, -b)
            for used, k0 in zip((plus, minus), consts):
                cf = [2 ** (u % C) for u in used]
                g = weighted_sum_gadget(cf, C, k0, mode, _patterns(wires, used))
                parts.append((g, used))
        finish(parts, final, layer.n_out)

    return ThresholdCircuit(
        n_in,
        tuple(tuple(l) for l in layers),
        tuple(range(C + 1)),
        {"C": C, "t": fmt.t, "Bt": bt, "c_in": c_in, "mode": mode, "k": k},
    )


# ------------------------------------------------------- circuit -> ReLU


def tc_to_relu(c: ThresholdCircuit, add_constant: bool = False) -> ReluNet:
    """Each gate sign(wy+b) becomes relu(wy+b) - relu(wy+b-1); exact on binary inputs.

    With ``add_constant`` the last ReLU layer gains a fan-in-0 bias-1 neuron that
    is exported as an extra final output.
    """
    layers = []
    n_prev = c.input_bits
    for li, gl in enumerate(c.layers):
        rows, biases = [], []
        for g in gl:
            if li == 0:
                r = list(zip(g.inputs, (Fraction(int(w)) for w in g.weights)))
            else:
                r = []
                for s, w in zip(g.inputs, g.weights):
                    r += [(2 * s, int(w)), (2 * s + 1, -int(w))]
            rows += [r, r]
            biases += [int(g.bias), int(g.bias) - 1]
        if add_constant and li == len(c.layers) - 1:
            rows.append(())
            biases.append(1)
        layers.append(NetLayer.sparse(rows, biases, "relu", n_prev))
        n_prev = len(rows)
    outs = [{2 * o: 1, 2 * o + 1: -1} for o in c.output_indices]
    if add_constant:
        outs.append({n_prev - 1: 1})
    layers.append(NetLayer.sparse(outs, [0] * len(outs), "linear", n_prev))
    return ReluNet(c.input_bits, tuple(layers), "tc-relu")


def build_decoder(fmt: FixedPointFormat, B) -> NetLayer:
    """Linear layer over (C word bits, flag c, constant 1): v'/t + 2Bc - B.

    Bits above log2(2Bt) are always 0 on in-range words and are dropped.
    """
    B = q(B)
    C, t = fmt.C, fmt.t
    two_bt = 2 * clip_offset(B, t)
    row = {i: Fraction(2**i, t) for i in range(C - 1) if 2**i <= two_bt}
    row[C] = 2 * B
    row[C + 1] = -B
    return NetLayer.sparse([row], [0], "linear", C + 2)


# ------------------------------------------------------------ the driver


@dataclass(frozen=True)
class CompileOptions:
    gadget: str = "compact"
    discrete: bool = False
    delta: Fraction | None = None
    grid_cap: int = 10**5
    sample_size: int = 4096
    seed: int = 0
    domain_cap: int = 10**5

    def __post_init__(self):
        if self.gadget not in MODES:
            raise ValueError(f"gadget must be one of {MODES}")


@dataclass(frozen=True)
class CompiledNet:
    net: ReluNet
    circuit: ThresholdCircuit
    quantizer: ReluNet
    decoder: NetLayer
    grid: GridSpec
    B: Fraction
    p_prime: int
    fmt: FixedPointFormat
    options: CompileOptions
    rationalized: RationalizedNet
    source_depth: int
    metrics: NetMetrics
    source_metrics: NetMetrics
    weight_bound: Fraction
    quantizer_spec: QuantizerSpec = field(default=None)

    def options_record(self) -> dict:
        o = asdict(self.options)
        o["delta"] = str(self.quantizer_spec.delta)
        return {
            "R": str(self.grid.R),
            "p": self.grid.p,
            "B": str(self.B),
            "p_prime": self.p_prime,
            "C": self.fmt.C,
            "t": str(self.fmt.t),
            "c_in": input_word_bits(self.grid),
            "failure_budget": str(self.quantizer_spec.failure_budget),
            "rationalize_method": self.rationalized.method,
            **o,
        }


def declared_weight_bound(mode: str, C: int, width: int, grid: GridSpec, delta: Fraction, B) -> Fraction:
    """Upper bound on every |weight| and |bias| of a compiled net.

    poly-weight: the adders contribute at most (#adder inputs) + 1 <= 2*C*width + 1
    after the gate-to-neuron-pair conversion; the quantizer contributes p/delta and
    (Rp + 3/2)/delta; the decoder 2B.  compact: adder weights are below 2**C and
    thresholds below (2*C*width + 1) * 2**C.
    """
    B = q(B)
    quant = max(grid.p / delta, (grid.half_count + Fraction(3, 2)) / delta)
    adders = 2 * C * width + 1
    if mode == "compact":
        adders = adders * 2**C
    return max(Fraction(adders), quant, 2 * B, Fraction(1))


def _assemble(quant: ReluNet, circuit: ThresholdCircuit, fmt: FixedPointFormat, B) -> ReluNet:
    body = tc_to_relu(circuit, add_constant=True)
    dec = ReluNet(body.output_dim, (build_decoder(fmt, B),), "decoder")
    return merge_linear_layers(concat_nets(concat_nets(quant, body), dec, "compiled"))


def compile_bounded_weights(net: ReluNet, grid: GridSpec, B, p_prime: int, opts: CompileOptions | None = None) -> CompiledNet:
    """Compile a depth-k scalar ReLU net into a depth 3k+3 net with bounded weights."""
    opts = opts or CompileOptions()
    check_net(net)
    if net.output_dim != 1:
        raise NetError("only scalar-output networks can be compiled")
    for li, layer in enumerate(net.layers[:-1], start=1):
        if layer.activation != "relu":
            raise NetError(f"hidden layer {li} must be relu, got {layer.activation}")
    B = q(B)
    if B <= 0:
        raise ValueError("B must be positive")
    k, d = net.depth, net.input_dim

    pushed = push_weights_first_layer(expand_fanout_one(net))
    rn = rationalize(
        pushed, grid, B, p_prime, grid_cap=opts.grid_cap, sample_size=opts.sample_size, seed=opts.seed
    )
    # make p | t, p | first-layer numerators, and B*t integral
    rn = rescale_denominator(rn, grid.p * B.denominator)
    fmt = FixedPointFormat(choose_word_length(rn, grid, B), rn.t)
    circuit = compile_net_to_circuit(rn, grid, B, fmt, opts.gadget, opts.domain_cap)

    qspec = default_quantizer_spec(grid, d, opts.discrete)
    if opts.delta is not None:
        qspec = QuantizerSpec(grid, qspec.C, q(opts.delta), Fraction(0) if opts.discrete else d * q(opts.delta))
    quant = (build_quantizer_discrete if opts.discrete else build_quantizer)(qspec, d)
    full = _assemble(quant, circuit, fmt, B)

    cm = circuit_metrics(circuit)
    if cm.depth != 3 * k + 1:
        raise CompileError(f"circuit depth {cm.depth} != 3k+1 = {3 * k + 1}")
    if full.depth != 3 * k + 3:
        raise CompileError(f"compiled depth {full.depth} != 3k+3 = {3 * k + 3}")
    metrics = net_metrics(full)
    bound = declared_weight_bound(opts.gadget, fmt.C, cm.width, grid, qspec.delta, B)
    if max(metrics.max_abs_weight, metrics.max_abs_bias) > bound:
        raise CompileError(
            f"compiled weights reach {max(metrics.max_abs_weight, metrics.max_abs_bias)}, above the declared bound {bound}"
        )
    return CompiledNet(
        net=ReluNet(full.input_dim, full.layers, (net.label or "net") + ":compiled"),
        circuit=circuit,
        quantizer=quant,
        decoder=build_decoder(fmt, B),
        grid=grid,
        B=B,
        p_prime=p_prime,
        fmt=fmt,
        options=opts,
        rationalized=rn,
        source_depth=k,
        metrics=metrics,
        source_metrics=net_metrics(net),
        weight_bound=bound,
        quantizer_spec=qspec,
    )


def check_compiled(comp: CompiledNet) -> list[str]:
    """Structural invariants of a compiled net (depth laws, weight bound)."""
    diags = []
    k = comp.source_depth
    if comp.net.depth != 3 * k + 3:
        diags.append(f"compiled depth {comp.net.depth} != {3 * k + 3}")
    if comp.circuit.depth != 3 * k + 1:
        diags.append(f"circuit depth {comp.circuit.depth} != {3 * k + 1}")
    m = net_metrics(comp.net)
    if max(m.max_abs_weight, m.max_abs_bias) > comp.weight_bound:
        diags.append("weights exceed the declared bound")
    return diags


def substitute_circuit_block(comp: CompiledNet, alt: ThresholdCircuit, check: bool = True, max_bits: int = 16) -> CompiledNet:
    """Swap the embedded circuit for ``alt``; the quantizer and decoder stay."""
    if alt.input_bits != comp.circuit.input_bits or alt.n_outputs != comp.circuit.n_outputs:
        raise SubstitutionError(
            f"interface mismatch: circuit has {comp.circuit.input_bits} -> {comp.circuit.n_outputs} bits, "
            f"replacement has {alt.input_bits} -> {alt.n_outputs}"
        )
    if check:
        witness = circuits_equivalent(comp.circuit, alt, max_bits)
        if witness is not None:
            raise SubstitutionError(f"replacement circuit differs on input {witness}", witness)
    full = _assemble(comp.quantizer, alt, comp.fmt, comp.B)
    if full.depth != alt.depth + 2:
        raise CompileError(f"substituted depth {full.depth} != depth(alt) + 2 = {alt.depth + 2}")
    return CompiledNet(
        net=ReluNet(full.input_dim, full.layers, comp.net.label + ":substituted"),
        circuit=alt,
        quantizer=comp.quantizer,
        decoder=comp.decoder,
        grid=comp.grid,
        B=comp.B,
        p_prime=comp.p_prime,
        fmt=comp.fmt,
        options=comp.options,
        rationalized=comp.rationalized,
        source_depth=comp.source_depth,
        metrics=net_metrics(full),
        source_metrics=comp.source_metrics,
        weight_bound=comp.weight_bound,
        quantizer_spec=comp.quantizer_spec,
    )


def minimized_equivalent(c: ThresholdCircuit, max_bits: int = 16) -> ThresholdCircuit:
    """Depth-2 circuit with the same truth table as ``c`` (exhaustive)."""
    from .circuit import truth_table_circuit

    if c.input_bits > max_bits:
        raise CompileError(f"{c.input_bits} input bits exceed the enumeration cap {max_bits}")
    X = all_inputs(c.input_bits)
    Y = eval_circuit_batch(c, X)
    table = {tuple(x): tuple(y) for x, y in zip(X.tolist(), Y.tolist())}
    out = truth_table_circuit(table, c.input_bits, c.n_outputs)
    return ThresholdCircuit(out.input_bits, out.layers, out.output_indices, {"gadget": "truth-table", "from": "minimized"})


def compiled_from_parts(
    source: ReluNet,
    rationalized: ReluNet,
    circuit: ThresholdCircuit,
    grid: GridSpec,
    B,
    p_prime: int,
    fmt: FixedPointFormat,
    opts: CompileOptions,
    delta,
    net: ReluNet | None = None,
) -> CompiledNet:
    """Rebuild a CompiledNet from stored pieces (the quantizer and decoder are regenerated)."""
    from .lowering import Certificate, numerator_bound

    B, d = q(B), source.input_dim
    qspec = default_quantizer_spec(grid, d, opts.discrete)
    qspec = QuantizerSpec(grid, qspec.C, q(delta), qspec.failure_budget)
    quant = (build_quantizer_discrete if opts.discrete else build_quantizer)(qspec, d)
    full = net if net is not None else _assemble(quant, circuit, fmt, B)
    cert = Certificate("stored", (), (), Fraction(0), None, ())
    rn = RationalizedNet(rationalized, fmt.t, numerator_bound(rationalized, fmt.t), cert, "stored")
    return CompiledNet(
        net=full,
        circuit=circuit,
        quantizer=quant,
        decoder=build_decoder(fmt, B),
        grid=grid,
        B=B,
        p_prime=p_prime,
        fmt=fmt,
        options=opts,
        rationalized=rn,
        source_depth=source.depth,
        metrics=net_metrics(full),
        source_metrics=net_metrics(source),
        weight_bound=declared_weight_bound(opts.gadget, fmt.C, circuit_metrics(circuit).width, grid, qspec.delta, B),
        quantizer_spec=qspec,
    )
