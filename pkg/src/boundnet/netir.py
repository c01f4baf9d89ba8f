"""Exact-arithmetic IR for layered feedforward ReLU networks.

Weights are stored as sparse rows of ``Fraction`` so that circuit-derived
networks (thousands of neurons, small fan-in) stay cheap.  All passes in
:mod:`boundnet.lowering` produce and consume :class:`ReluNet` values.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property, reduce
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

Rational = Fraction
ACTIVATIONS = ("relu", "sign", "linear")

# int64 headroom kept by the fast evaluation path
_I64_LIMIT = 2**62


class NetError(ValueError):
    """Raised on malformed networks or mismatched inputs."""


def q(x) -> Fraction:
    """Coerce ints, strings like ``"3/4"`` and Fractions to ``Fraction``."""
    if isinstance(x, Fraction):
        return x
    if isinstance(x, (int, np.integer)):
        return Fraction(int(x))
    if isinstance(x, str):
        return Fraction(x.strip())
    if isinstance(x, (float, np.floating)):
        return Fraction(float(x))
    raise TypeError(f"cannot convert {x!r} to a rational")


Row = tuple  # tuple of (column, Fraction) pairs, sorted by column, no zeros


def make_row(entries) -> Row:
    """Normalize a dict / iterable of (col, value) pairs into a sparse row."""
    if isinstance(entries, dict):
        entries = entries.items()
    acc: dict[int, Fraction] = {}
    for c, w in entries:
        w = q(w)
        if w:
            acc[int(c)] = acc.get(int(c), Fraction(0)) + w
    return tuple(sorted((c, w) for c, w in acc.items() if w))


@dataclass(frozen=True)
class NetLayer:
    rows: tuple  # tuple[Row, ...]
    biases: tuple  # tuple[Fraction, ...]
    activation: str
    n_in: int

    @classmethod
    def from_dense(cls, weights, biases, activation: str) -> "NetLayer":
        weights = [list(r) for r in weights]
        n_in = len(weights[0]) if weights else 0
        rows = tuple(make_row(enumerate(r)) for r in weights)
        return cls(rows, tuple(q(b) for b in biases), activation, n_in)

    @classmethod
    def sparse(cls, rows, biases, activation: str, n_in: int) -> "NetLayer":
        return cls(tuple(make_row(r) for r in rows), tuple(q(b) for b in biases), activation, n_in)

    @property
    def n_out(self) -> int:
        return len(self.rows)

    def dense(self) -> list[list[Fraction]]:
        out = []
        for r in self.rows:
            line = [Fraction(0)] * self.n_in
            for c, w in r:
                line[c] = w
            out.append(line)
        return out

    @cached_property
    def _int_form(self):
        # weights and biases over common denominators, for the batched engine
        wden = reduce(math.lcm, (w.denominator for r in self.rows for _, w in r), 1)
        bden = reduce(math.lcm, (b.denominator for b in self.biases), 1)
        data, indices, indptr = [], [], [0]
        rowsum = 0
        for r in self.rows:
            s = 0
            for c, w in r:
                v = w.numerator * (wden // w.denominator)
                data.append(v)
                indices.append(c)
                s += abs(v)
            rowsum = max(rowsum, s)
            indptr.append(len(data))
        bnum = [b.numerator * (bden // b.denominator) for b in self.biases]
        return wden, bden, data, indices, indptr, rowsum, bnum

    @cached_property
    def _csr(self):
        wden, bden, data, indices, indptr, rowsum, bnum = self._int_form
        if rowsum >= _I64_LIMIT or any(abs(b) >= _I64_LIMIT for b in bnum):
            return None
        return sp.csr_matrix(
            (np.array(data, dtype=np.int64), np.array(indices, dtype=np.int64), np.array(indptr)),
            shape=(self.n_out, self.n_in),
        )


@dataclass(frozen=True)
class ReluNet:
    input_dim: int
    layers: tuple  # tuple[NetLayer, ...]
    label: str = ""

    @property
    def depth(self) -> int:
        return len(self.layers)

    @property
    def output_dim(self) -> int:
        return self.layers[-1].n_out if self.layers else self.input_dim


@dataclass(frozen=True)
class NetMetrics:
    depth: int
    width: int
    size: int
    max_abs_weight: Fraction
    max_abs_bias: Fraction
    layer_sizes: tuple = field(default=())


def validate_net(net: ReluNet) -> list[str]:
    diags = []
    if net.input_dim < 1:
        diags.append("input_dim must be positive")
    if not net.layers:
        diags.append("network has no layers")
        return diags
    width = net.input_dim
    for i, layer in enumerate(net.layers, start=1):
        if layer.activation not in ACTIVATIONS:
            diags.append(f"layer {i}: unknown activation {layer.activation!r}")
        if len(layer.biases) != len(layer.rows):
            diags.append(f"layer {i}: {len(layer.rows)} weight rows but {len(layer.biases)} biases")
        if layer.n_in != width:
            diags.append(f"layer {i}: dimension-chain violation (expects {layer.n_in} inputs, gets {width})")
        for j, r in enumerate(layer.rows):
            if any(c < 0 or c >= layer.n_in for c, _ in r):
                diags.append(f"layer {i}: row {j} references a column outside [0, {layer.n_in})")
                break
        width = layer.n_out
    last = net.layers[-1]
    if last.activation != "linear":
        diags.append(f"layer {len(net.layers)}: final-layer activation must be linear")
    if any(b != 0 for b in last.biases):
        diags.append(f"layer {len(net.layers)}: final-layer-bias violation (nonzero output bias)")
    return diags


def check_net(net: ReluNet) -> None:
    diags = validate_net(net)
    if diags:
        raise NetError("; ".join(diags))


def _activate(num, act: str):
    if act == "relu":
        return np.where(num > 0, num, 0) if num.dtype == object else np.maximum(num, 0)
    if act == "sign":
        return (num > 0).astype(num.dtype)
    return num


def _apply_layer(layer: NetLayer, num, den: int):
    """Apply one layer to values ``num / den`` (num shape (n_in, P)).  Returns (num, den)."""
    wden, bden, data, indices, indptr, rowsum, bnum = layer._int_form
    pre_den = wden * den
    out_den = math.lcm(pre_den, bden)
    ms, mb = out_den // pre_den, out_den // bden
    npts = num.shape[1]
    csr = layer._csr
    bias = [b * mb for b in bnum]
    fast = (
        csr is not None
        and num.dtype != object
        and ms < _I64_LIMIT
        and (rowsum * (int(np.abs(num).max()) if num.size else 0) + 1) * ms + max(map(abs, bias), default=0)
        < _I64_LIMIT
    )
    if fast:
        z = np.asarray(csr @ num) * ms + np.array(bias, dtype=np.int64)[:, None]
    else:
        src = num.astype(object)
        z = np.empty((layer.n_out, npts), dtype=object)
        for j in range(layer.n_out):
            acc = np.full(npts, bias[j], dtype=object)
            for k in range(indptr[j], indptr[j + 1]):
                acc = acc + data[k] * ms * src[indices[k]]
            z[j] = acc
    if layer.activation == "sign":
        return _shrink(_activate(z, "sign")), 1
    z = _activate(z, layer.activation)
    return _reduce(z, out_den)


def _reduce(num, den: int):
    if num.size == 0 or den == 1:
        return _shrink(num), den
    if num.dtype == object:
        g = reduce(math.gcd, (int(v) for v in num.flat), den)
    else:
        g = math.gcd(int(np.gcd.reduce(num.ravel())), den)
    if g > 1:
        num = num // g
        den //= g
    return _shrink(num), den


def _shrink(num):
    # move object arrays back to int64 when they fit
    if num.dtype == object and num.size:
        m = max(abs(int(v)) for v in num.flat)
        if m < _I64_LIMIT:
            return num.astype(np.int64)
    return num


def _to_common(points: Sequence[Sequence], dim: int):
    vals = [[q(v) for v in p] for p in points]
    for p in vals:
        if len(p) != dim:
            raise NetError(f"input has {len(p)} coordinates, network expects {dim}")
    den = reduce(math.lcm, (v.denominator for p in vals for v in p), 1)
    nums = [[v.numerator * (den // v.denominator) for v in p] for p in vals]
    big = any(abs(v) >= _I64_LIMIT for p in nums for v in p)
    arr = np.array(nums, dtype=object if big else np.int64).reshape(len(vals), dim).T
    return arr, den


def run_layers(layers: Sequence[NetLayer], num, den: int):
    for layer in layers:
        num, den = _apply_layer(layer, num, den)
    return num, den


def eval_net_exact_batch(net: ReluNet, points: Sequence[Sequence]) -> list[list[Fraction]]:
    """Exact forward pass at many points; returns one output vector per point."""
    if not points:
        return []
    num, den = _to_common(points, net.input_dim)
    num, den = run_layers(net.layers, num, den)
    return [[Fraction(int(v), den) for v in num[:, j]] for j in range(num.shape[1])]


def eval_net_exact(net: ReluNet, x: Sequence) -> list[Fraction]:
    return eval_net_exact_batch(net, [x])[0]


def eval_net_float(net: ReluNet, x: Sequence[float]) -> list[float]:
    """binary64 forward pass.  Approximate; raises on non-finite values."""
    v = np.asarray(x, dtype=np.float64)
    if v.shape != (net.input_dim,):
        raise NetError(f"input has shape {v.shape}, network expects ({net.input_dim},)")
    with np.errstate(over="ignore", invalid="ignore"):
        for i, layer in enumerate(net.layers, start=1):
            z = np.array([float(b) for b in layer.biases])
            for j, r in enumerate(layer.rows):
                for c, w in r:
                    z[j] += float(w) * v[c]
            if layer.activation == "relu":
                z = np.maximum(z, 0.0)
            elif layer.activation == "sign":
                z = (z > 0).astype(np.float64)
            if not np.all(np.isfinite(z)):
                raise NetError(f"non-finite value in layer {i}")
            v = z
    return v.tolist()


def net_metrics(net: ReluNet) -> NetMetrics:
    sizes = tuple(layer.n_out for layer in net.layers)
    mw = max((abs(w) for layer in net.layers for r in layer.rows for _, w in r), default=Fraction(0))
    mb = max((abs(b) for layer in net.layers for b in layer.biases), default=Fraction(0))
    return NetMetrics(
        depth=len(net.layers),
        width=max(sizes, default=0),
        size=sum(sizes),
        max_abs_weight=mw,
        max_abs_bias=mb,
        layer_sizes=sizes,
    )


def compose_layers(first: NetLayer, second: NetLayer) -> NetLayer:
    """Fuse a linear layer into the layer after it: W2·W1, W2·b1 + b2."""
    if first.activation != "linear":
        raise NetError("only a linear layer can be fused into its successor")
    rows, biases = [], []
    for r, b2 in zip(second.rows, second.biases):
        acc: dict[int, Fraction] = {}
        b = b2
        for c, w in r:
            b += w * first.biases[c]
            for c1, w1 in first.rows[c]:
                acc[c1] = acc.get(c1, Fraction(0)) + w * w1
        rows.append(make_row(acc))
        biases.append(b)
    return NetLayer(tuple(rows), tuple(biases), second.activation, first.n_in)


def merge_linear_layers(net: ReluNet) -> ReluNet:
    layers = list(net.layers)
    out: list[NetLayer] = []
    for layer in layers:
        if out and out[-1].activation == "linear":
            layer = compose_layers(out.pop(), layer)
        out.append(layer)
    return ReluNet(net.input_dim, tuple(out), net.label)


def concat_nets(first: ReluNet, second: ReluNet, label: str | None = None) -> ReluNet:
    if first.output_dim != second.input_dim:
        raise NetError(f"width mismatch: first emits {first.output_dim}, second expects {second.input_dim}")
    return ReluNet(first.input_dim, first.layers + second.layers, label if label is not None else second.label)


def identity_net(d: int, label: str = "identity") -> ReluNet:
    return ReluNet(d, (NetLayer.sparse([{i: 1} for i in range(d)], [0] * d, "linear", d),), label)


def dense_net(input_dim: int, spec: Iterable, label: str = "") -> ReluNet:
    """Build a net from ``[(W, b, activation), ...]`` with dense nested lists."""
    return ReluNet(input_dim, tuple(NetLayer.from_dense(W, b, a) for W, b, a in spec), label)
