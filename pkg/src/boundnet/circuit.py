"""Layered threshold circuits: sign gates with integer weights on bit vectors."""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property
from typing import Mapping, Sequence

import numpy as np
import scipy.sparse as sp

_I64_LIMIT = 2**62


class CircuitError(ValueError):
    pass


@dataclass(frozen=True)
class ThresholdGate:
    """sign(sum_k weights[k] * in[inputs[k]] + bias), with sign(z) = 1 iff z > 0."""

    inputs: tuple = ()
    weights: tuple = ()
    bias: int = 0

    def __post_init__(self):
        if len(self.inputs) != len(self.weights):
            raise CircuitError("gate inputs and weights differ in length")
        if not all(isinstance(w, (int, np.integer)) for w in self.weights) or not isinstance(
            self.bias, (int, np.integer)
        ):
            raise CircuitError("threshold gate weights and bias must be integers")

    @classmethod
    def const(cls, bit: int) -> "ThresholdGate":
        return cls((), (), 1 if bit else 0)

    @classmethod
    def identity(cls, src: int) -> "ThresholdGate":
        return cls((src,), (1,), 0)

    @property
    def fan_in(self) -> int:
        return sum(1 for w in self.weights if w)


@dataclass(frozen=True)
class ThresholdCircuit:
    input_bits: int
    layers: tuple  # tuple[tuple[ThresholdGate, ...], ...]
    output_indices: tuple
    meta: dict = field(default_factory=dict, compare=False)

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def n_outputs(self) -> int:
        return len(self.output_indices)

    @cached_property
    def _matrices(self):
        mats = []
        width = self.input_bits
        for layer in self.layers:
            data, idx, ptr = [], [], [0]
            rowsum = 0
            for g in layer:
                data.extend(int(w) for w in g.weights)
                idx.extend(g.inputs)
                ptr.append(len(data))
                rowsum = max(rowsum, sum(abs(int(w)) for w in g.weights) + abs(int(g.bias)))
            bias = [int(g.bias) for g in layer]
            if rowsum < _I64_LIMIT:
                m = sp.csr_matrix(
                    (np.array(data, dtype=np.int64), np.array(idx, dtype=np.int64), np.array(ptr)),
                    shape=(len(layer), width),
                )
                mats.append((m, np.array(bias, dtype=np.int64)))
            else:
                mats.append((None, (data, idx, ptr, bias)))
            width = len(layer)
        return mats


@dataclass(frozen=True)
class CircuitMetrics:
    depth: int
    width: int
    size: int
    max_abs_weight: int
    max_abs_bias: int = 0
    max_fan_in: int = 0


def validate_circuit(c: ThresholdCircuit) -> list[str]:
    diags = []
    width = c.input_bits
    for i, layer in enumerate(c.layers, start=1):
        for j, g in enumerate(layer):
            if any(s < 0 or s >= width for s in g.inputs):
                diags.append(f"layer {i}: gate {j} reads a wire outside [0, {width})")
        width = len(layer)
    last = len(c.layers[-1]) if c.layers else c.input_bits
    if any(o < 0 or o >= last for o in c.output_indices):
        diags.append("output index outside the last layer")
    return diags


def eval_circuit_batch(c: ThresholdCircuit, X) -> np.ndarray:
    """Evaluate on a (P, input_bits) 0/1 array; returns (P, n_outputs) 0/1 int array."""
    X = np.asarray(X)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != c.input_bits:
        raise CircuitError(f"input has {X.shape[1]} bits, circuit expects {c.input_bits}")
    if not np.all((X == 0) | (X == 1)):
        raise CircuitError("circuit inputs must be binary")
    v = X.T.astype(np.int64)
    for m, b in c._matrices:
        if m is not None:
            z = np.asarray(m @ v) + b[:, None]
        else:
            data, idx, ptr, bias = b
            z = np.empty((len(bias), v.shape[1]), dtype=object)
            for j in range(len(bias)):
                acc = np.full(v.shape[1], bias[j], dtype=object)
                for k in range(ptr[j], ptr[j + 1]):
                    acc = acc + data[k] * v[idx[k]].astype(object)
                z[j] = acc
        v = (z > 0).astype(np.int64)
    return v[list(c.output_indices)].T


def eval_circuit(c: ThresholdCircuit, x: Sequence[int]) -> list[int]:
    return eval_circuit_batch(c, np.asarray(x, dtype=np.int64)[None, :])[0].tolist()


def circuit_metrics(c: ThresholdCircuit) -> CircuitMetrics:
    gates = [g for layer in c.layers for g in layer]
    return CircuitMetrics(
        depth=len(c.layers),
        width=max((len(layer) for layer in c.layers), default=0),
        size=len(gates),
        max_abs_weight=max((abs(int(w)) for g in gates for w in g.weights), default=0),
        max_abs_bias=max((abs(int(g.bias)) for g in gates), default=0),
        max_fan_in=max((g.fan_in for g in gates), default=0),
    )


def all_inputs(n: int) -> np.ndarray:
    """Every bit vector of length n, index 0 varying fastest."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    k = np.arange(2**n, dtype=np.int64)
    return ((k[:, None] >> np.arange(n)) & 1).astype(np.int64)


def _shift(g: ThresholdGate, remap) -> ThresholdGate:
    return ThresholdGate(tuple(remap(s) for s in g.inputs), g.weights, g.bias)


def concat_circuits(a: ThresholdCircuit, b: ThresholdCircuit, wiring: Mapping | Sequence) -> ThresholdCircuit:
    """Feed b from a.  ``wiring[j]`` names b's input j as ``("out", i)`` (a's i-th
    output) or ``("in", i)`` (a's i-th input, forwarded through a by identity gates).
    A bare int means ``("out", i)``."""
    if isinstance(wiring, Mapping):
        wiring = [wiring[j] for j in range(b.input_bits)]
    if len(wiring) != b.input_bits:
        raise CircuitError(f"wiring covers {len(wiring)} inputs, b has {b.input_bits}")
    wires = [("out", w) if isinstance(w, (int, np.integer)) else tuple(w) for w in wiring]
    for kind, i in wires:
        limit = a.n_outputs if kind == "out" else a.input_bits
        if kind not in ("out", "in") or not 0 <= i < limit:
            raise CircuitError(f"wiring refers to nonexistent {kind} index {i}")
    passthrough = sorted({i for kind, i in wires if kind == "in"})
    layers = [list(layer) for layer in a.layers]
    slot = {}
    for i in passthrough:
        col = i
        for li in range(len(layers)):
            layers[li].append(ThresholdGate.identity(col))
            col = len(layers[li]) - 1
        slot[i] = col
    if not layers:
        src = {("in", i): i for i in range(a.input_bits)}
    else:
        src = {("in", i): slot[i] for i in passthrough}
    for o, gi in enumerate(a.output_indices):
        src[("out", o)] = gi
    b_map = [src[w] for w in wires]
    for layer in b.layers:
        layers.append([_shift(g, lambda s: b_map[s]) for g in layer])
        b_map = list(range(len(layer)))
    return ThresholdCircuit(a.input_bits, tuple(tuple(l) for l in layers), b.output_indices, {"composed": True})


def stack_circuits(parts: Sequence, input_bits: int) -> tuple:
    """Place equal-depth circuits side by side over a shared input space.

    ``parts`` holds ``(circuit, input_map)`` pairs where input_map[j] is the shared
    wire feeding the circuit's input j.  Returns the stacked layers and, for each
    part, the positions of its outputs in the final layer.
    """
    depth = {c.depth for c, _ in parts}
    if len(depth) != 1:
        raise CircuitError(f"stacked circuits must share a depth, got {sorted(depth)}")
    (d,) = depth
    layers = [[] for _ in range(d)]
    out_pos = []
    for c, imap in parts:
        if len(imap) != c.input_bits:
            raise CircuitError("input map length differs from circuit input width")
        offsets = []
        for li, layer in enumerate(c.layers):
            offsets.append(len(layers[li]))
            if li == 0:
                remap = lambda s, m=imap: m[s]
            else:
                remap = lambda s, off=offsets[li - 1]: s + off
            layers[li].extend(_shift(g, remap) for g in layer)
        out_pos.append([offsets[-1] + o for o in c.output_indices])
    return layers, out_pos


def circuits_equivalent(a: ThresholdCircuit, b: ThresholdCircuit, max_bits: int = 16):
    """Exhaustive equivalence check.  Returns None or the first differing input."""
    if a.input_bits != b.input_bits or a.n_outputs != b.n_outputs:
        raise CircuitError("circuits have different input/output interfaces")
    if a.input_bits > max_bits:
        raise CircuitError(f"{a.input_bits} input bits exceed the exhaustive-check cap {max_bits}")
    X = all_inputs(a.input_bits)
    ya, yb = eval_circuit_batch(a, X), eval_circuit_batch(b, X)
    bad = np.nonzero(np.any(ya != yb, axis=1))[0]
    return None if bad.size == 0 else X[bad[0]].tolist()


def truth_table_circuit(table: Mapping, input_bits: int, n_outputs: int) -> ThresholdCircuit:
    """Depth-2 circuit from an explicit table {input tuple: output tuple}.

    Layer 1 holds one exact-match detector per listed input with a 1 somewhere in
    its output; layer 2 ORs the detectors (they are mutually exclusive).  Inputs
    missing from the table map to all-zero outputs.  Weights are +-1 and biases
    at most ``input_bits`` in magnitude.
    """
    detectors, hits = [], [[] for _ in range(n_outputs)]
    for pattern, out in sorted(table.items()):
        if not any(out):
            continue
        ones = sum(pattern)
        detectors.append(
            ThresholdGate(tuple(range(input_bits)), tuple(1 if b else -1 for b in pattern), 1 - ones)
        )
        for o, bit in enumerate(out):
            if bit:
                hits[o].append(len(detectors) - 1)
    outs = tuple(ThresholdGate(tuple(h), (1,) * len(h), 0) for h in hits)
    return ThresholdCircuit(input_bits, (tuple(detectors), outs), tuple(range(n_outputs)), {"gadget": "truth-table"})

