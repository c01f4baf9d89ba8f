"""Threshold-circuit generators for two's-complement fixed-point arithmetic.

Words are LSB first: bit index 0 has weight 2**0 and bit C-1 is the sign bit
with weight -2**(C-1).  Every adder works modulo 2**C, which coincides with
signed two's-complement arithmetic whenever the true result fits in C bits;
callers choose C so that it does.

Two adder constructions are available:

``compact``
    For output bit i, layer 1 compares the low part of the sum (all terms
    reduced mod 2**(i+1)) against every multiple of 2**i; layer 2 takes the
    alternating sum of those comparisons, which is the parity of
    floor(low / 2**i), i.e. bit i.  Weights reach 2**(C-1).
``poly-weight``
    A depth-2 lookup circuit over a declared input domain: one exact-match
    detector per domain pattern, ORed per output bit.  Every weight is +-1 and
    every bias is at most the input count n, so the weight bound is P(n) = n.
    Width equals the domain size, so callers pass the reachable patterns.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Sequence

from .circuit import ThresholdCircuit, ThresholdGate, all_inputs, stack_circuits, truth_table_circuit

MODES = ("compact", "poly-weight")
# full-cube domains are enumerated only up to this many input bits
DOMAIN_ENUM_CAP = 20


class GadgetError(ValueError):
    pass


@dataclass(frozen=True)
class FixedPointFormat:
    C: int
    t: int = 1

    def __post_init__(self):
        if self.C < 1 or self.t < 1:
            raise GadgetError("word length C and denominator t must be positive")

    @property
    def lo(self) -> int:
        return -(2 ** (self.C - 1))

    @property
    def hi(self) -> int:
        return 2 ** (self.C - 1) - 1

    def fits(self, v: int) -> bool:
        return self.lo <= v <= self.hi


def _C(fmt) -> int:
    return fmt.C if isinstance(fmt, FixedPointFormat) else int(fmt)


def encode_word(v: int, fmt) -> tuple:
    C = _C(fmt)
    if not -(2 ** (C - 1)) <= v < 2 ** (C - 1):
        raise GadgetError(f"{v} does not fit in {C}-bit two's complement")
    u = v % (2**C)
    return tuple((u >> i) & 1 for i in range(C))


def decode_word(bits: Sequence[int]) -> int:
    C = len(bits)
    u = sum(int(b) << i for i, b in enumerate(bits))
    return u - (1 << C) if C and bits[-1] else u


def const_block(word: Sequence[int], input_bits: int = 0) -> ThresholdCircuit:
    """Depth-1 block of fan-in-0 gates reproducing ``word`` on any input."""
    gates = tuple(ThresholdGate.const(b) for b in word)
    return ThresholdCircuit(input_bits, (gates,), tuple(range(len(word))), {"gadget": "const", "word": list(word)})


def poly_weight_bound(n: int) -> int:
    """Declared weight/bias polynomial of the ``poly-weight`` adder on n inputs."""
    return max(n, 1)


def _check_mode(mode: str):
    if mode not in MODES:
        raise GadgetError(f"unknown gadget mode {mode!r}; expected one of {MODES}")


def weighted_sum_gadget(
    coeffs: Sequence[int],
    C: int,
    constant: int = 0,
    mode: str = "compact",
    domain: Iterable[Sequence[int]] | None = None,
) -> ThresholdCircuit:
    """Depth-2 circuit: n input bits -> C-bit word of (constant + sum coeffs[l]*x[l]) mod 2**C."""
    _check_mode(mode)
    n = len(coeffs)
    mod = 2**C
    coeffs = [int(c) % mod for c in coeffs]
    constant = int(constant) % mod
    meta = {"gadget": "weighted-sum", "mode": mode, "C": C, "n": n}
    if mode == "poly-weight":
        if domain is None:
            if n > DOMAIN_ENUM_CAP:
                raise GadgetError(f"poly-weight adder over {n} free bits needs an explicit input domain")
            domain = (tuple(r) for r in all_inputs(n).tolist())
        table = {}
        for pat in domain:
            pat = tuple(int(b) for b in pat)
            s = (constant + sum(c for c, b in zip(coeffs, pat) if b)) % mod
            table[pat] = tuple((s >> i) & 1 for i in range(C))
        c = truth_table_circuit(table, n, C)
        return ThresholdCircuit(n, c.layers, c.output_indices, meta)

    layer1, layer2 = [], []
    for i in range(C):
        m = 2 ** (i + 1)
        step = 2**i
        a = [c % m for c in coeffs]
        k = constant % m
        total = sum(a) + k
        # comparisons with j*2^i <= k hold for every input
        j0 = k // step
        terms = []
        for j in range(j0 + 1, total // step + 1):
            idx = [l for l in range(n) if a[l]]
            layer1.append(ThresholdGate(tuple(idx), tuple(a[l] for l in idx), k - j * step + 1))
            terms.append((len(layer1) - 1, 1 if j % 2 else -1))
        layer2.append(
            ThresholdGate(tuple(s for s, _ in terms), tuple(w for _, w in terms), 1 if j0 % 2 else 0)
        )
    return ThresholdCircuit(n, (tuple(layer1), tuple(layer2)), tuple(range(C)), meta)


def iterated_addition_gadget(
    m: int,
    fmt,
    mode: str = "compact",
    addend_bound: int | None = None,
    domain=None,
) -> ThresholdCircuit:
    """m C-bit words in (word j occupies inputs j*C .. j*C+C-1), their sum out."""
    C = _C(fmt)
    if m < 1:
        raise GadgetError("need at least one addend")
    if addend_bound is not None and m * addend_bound > 2 ** (C - 1) - 1:
        raise GadgetError(f"{m} addends bounded by {addend_bound} can overflow {C} bits")
    coeffs = [2**i for _ in range(m) for i in range(C)]
    c = weighted_sum_gadget(coeffs, C, 0, mode, domain)
    return ThresholdCircuit(c.input_bits, c.layers, c.output_indices, {"gadget": "iterated-addition", "m": m, "C": C, "mode": mode})


def multiplication_gadget(fmt, mode: str = "compact", operand_bound: int | None = None) -> ThresholdCircuit:
    """2C inputs (x then y), C outputs: x*y.  Partial products, then a depth-2 sum."""
    C = _C(fmt)
    if operand_bound is not None and operand_bound**2 > 2 ** (C - 1) - 1:
        raise GadgetError(f"product of operands bounded by {operand_bound} can overflow {C} bits")
    pairs = [(j, k) for j in range(C) for k in range(C) if j + k < C]
    pp = tuple(ThresholdGate((j, C + k), (1, 1), -1) for j, k in pairs)
    domain = None
    if mode == "poly-weight":
        xs = all_inputs(2 * C)
        domain = {tuple(int(r[j] & r[C + k]) for j, k in pairs) for r in xs.tolist()}
    add = weighted_sum_gadget([2 ** (j + k) for j, k in pairs], C, 0, mode, domain)
    layers = (pp,) + add.layers
    return ThresholdCircuit(2 * C, layers, add.output_indices, {"gadget": "multiplication", "C": C, "mode": mode})


def relu_gates(word: Sequence[int], neg: Sequence[int] | None = None) -> list:
    """One layer: bit_i <- sign(bit_i - msb).  ``word``/``neg`` are wire indices.

    The sign bit output is a constant 0.  With a negation rail, every bit of the
    rail (its sign bit included) is cleared by the primary word's sign bit.
    """
    msb = word[-1]
    gates = [ThresholdGate((w, msb), (1, -1), 0) for w in word[:-1]] + [ThresholdGate.const(0)]
    if neg is not None:
        gates += [ThresholdGate((w, msb), (1, -1), 0) for w in neg]
    return gates


def relu_gadget(fmt, rails: int = 1) -> ThresholdCircuit:
    C = _C(fmt)
    if rails not in (1, 2):
        raise GadgetError("rails must be 1 or 2")
    word = list(range(C))
    neg = list(range(C, 2 * C)) if rails == 2 else None
    gates = tuple(relu_gates(word, neg))
    return ThresholdCircuit(rails * C, (gates,), tuple(range(rails * C)), {"gadget": "relu", "C": C, "rails": rails})


def clip_gates(vp: Sequence[int], vpp: Sequence[int]) -> list:
    """One layer: word bits sign(v'_i - msb(v') - msb(v'')), sign bit 0, then flag msb(v'')."""
    mp, mpp = vp[-1], vpp[-1]
    gates = [ThresholdGate((w, mp, mpp), (1, -1, -1), 0) for w in vp[:-1]]
    gates.append(ThresholdGate.const(0))
    gates.append(ThresholdGate.identity(mpp))
    return gates


def _pair_value(b) -> int:
    return decode_word(b) if isinstance(b, (tuple, list)) else int(b)


def signed_sum_gadget(
    coeffs: Sequence[int],
    hardwired_bias,
    fmt,
    mode: str = "compact",
    domain=None,
) -> ThresholdCircuit:
    """Dual-rail b' + sum a_i z_i with a_i in {-1, 0, +1}.

    Input word i arrives as two C-bit rails: z_i at bits 2iC.., -z_i at 2iC+C...
    ``hardwired_bias`` is the pair (b', -b') as ints or words; the constants are
    folded into the adder thresholds.  Output: z' (C bits) then -z' (C bits).
    """
    C = _C(fmt)
    if any(a not in (-1, 0, 1) for a in coeffs):
        raise GadgetError("signed-sum coefficients must lie in {-1, 0, 1}")
    bp, bn = (_pair_value(b) for b in hardwired_bias)
    if bp != -bn:
        raise GadgetError("hardwired bias pair must be (b, -b)")
    n = len(coeffs)
    pos, neg = [0] * (2 * n * C), [0] * (2 * n * C)
    for i, a in enumerate(coeffs):
        for b in range(C):
            if a == 1:
                pos[2 * i * C + b] = 2**b
                neg[2 * i * C + C + b] = 2**b
            elif a == -1:
                pos[2 * i * C + C + b] = 2**b
                neg[2 * i * C + b] = 2**b
    dom = list(domain) if domain is not None else None
    parts = []
    for cf, k in ((pos, bp), (neg, bn)):
        used = [l for l, c in enumerate(cf) if c]
        sub_dom = None if dom is None else {tuple(p[l] for l in used) for p in dom}
        parts.append((weighted_sum_gadget([cf[l] for l in used], C, k, mode, sub_dom), used))
    layers, outs = stack_circuits(parts, 2 * n * C)
    return ThresholdCircuit(
        2 * n * C,
        tuple(tuple(l) for l in layers),
        tuple(outs[0] + outs[1]),
        {"gadget": "signed-sum", "C": C, "mode": mode, "coeffs": list(coeffs), "bias": bp},
    )


def clip_offset(B, t: int) -> int:
    bt = Fraction(B) * t
    if bt.denominator != 1:
        raise GadgetError(f"B*t = {bt} is not an integer")
    return int(bt)


def clip_flag_stage(B, fmt: FixedPointFormat, mode: str = "compact", domain=None) -> ThresholdCircuit:
    """Inputs (v, -v) as 2C bits.  Outputs a C-bit word and the flag c.

    Word = v + Bt when -Bt <= v <= Bt, else 0; c = 1 iff v > Bt.
    """
    C, bt = fmt.C, clip_offset(B, fmt.t)
    if bt <= 0:
        raise GadgetError("B must be positive")
    if bt > fmt.hi:
        raise GadgetError(f"Bt = {bt} overflows {C} bits")
    rails = list(range(2 * C))
    dom = list(domain) if domain is not None else None
    parts = []
    for cf_src in (rails[:C], rails[C:]):
        sub_dom = None if dom is None else {tuple(p[l] for l in cf_src) for p in dom}
        parts.append((weighted_sum_gadget([2**b for b in range(C)], C, bt, mode, sub_dom), cf_src))
    layers, outs = stack_circuits(parts, 2 * C)
    layers.append(clip_gates(outs[0], outs[1]))
    return ThresholdCircuit(
        2 * C,
        tuple(tuple(l) for l in layers),
        tuple(range(C + 1)),
        {"gadget": "clip-flag", "C": C, "B": str(Fraction(B)), "t": fmt.t, "mode": mode},
    )
