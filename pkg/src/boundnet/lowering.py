"""Network-level passes: clipping, fan-out-1 expansion, weight pushing, and
rationalization of weights onto a common denominator."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Sequence

import numpy as np

from .netir import (
    NetError,
    NetLayer,
    ReluNet,
    _apply_layer,
    _to_common,
    check_net,
    make_row,
    q,
)


class RationalizeError(RuntimeError):
    def __init__(self, msg: str, witness=None):
        super().__init__(msg)
        self.witness = witness


@dataclass(frozen=True)
class GridSpec:
    """The grid {j/p : -Rp <= j <= Rp} in each coordinate."""

    R: Fraction
    p: int

    def __post_init__(self):
        object.__setattr__(self, "R", q(self.R))
        if self.R <= 0 or self.p < 1:
            raise ValueError("grid needs R > 0 and p >= 1")
        if (self.R * self.p).denominator != 1:
            raise ValueError(f"R*p = {self.R * self.p} must be an integer")

    @property
    def half_count(self) -> int:
        return int(self.R * self.p)

    def values(self) -> list[Fraction]:
        n = self.half_count
        return [Fraction(j, self.p) for j in range(-n, n + 1)]

    def size(self, d: int) -> int:
        return (2 * self.half_count + 1) ** d

    def points(self, d: int) -> list[tuple]:
        return list(itertools.product(self.values(), repeat=d))

    def round(self, x) -> Fraction:
        """Nearest grid value; midpoints go toward +inf; outside the box -> 0."""
        x = q(x)
        edge = self.R + Fraction(1, 2 * self.p)
        if not -edge <= x <= edge:
            return Fraction(0)
        j = math.floor(x * self.p + Fraction(1, 2))
        n = self.half_count
        return Fraction(max(-n, min(n, j)), self.p)


def clamp(v: Fraction, B: Fraction) -> Fraction:
    return max(-B, min(B, v))


def _scalar(net: ReluNet):
    check_net(net)
    if net.output_dim != 1:
        raise NetError(f"pass requires a scalar-output network, got {net.output_dim} outputs")


def add_clip_layer(net: ReluNet, B) -> ReluNet:
    """N'(x) = [N(x)+B]_+ - [N(x)-B]_+ - B, the -B through a fan-in-0 bias-1 neuron."""
    _scalar(net)
    B = q(B)
    if B <= 0:
        raise ValueError("B must be positive")
    last = net.layers[-1]
    (row,) = last.rows
    hidden = NetLayer((row, row, ()), (B, -B, Fraction(1)), "relu", last.n_in)
    out = NetLayer(((( 0, Fraction(1)), (1, Fraction(-1)), (2, -B)),), (Fraction(0),), "linear", 3)
    return ReluNet(net.input_dim, net.layers[:-1] + (hidden, out), net.label + "+clip")


def fan_outs(net: ReluNet) -> list[list[int]]:
    """Fan-out of every hidden neuron, per hidden layer."""
    res = []
    for i in range(len(net.layers) - 1):
        counts = [0] * net.layers[i].n_out
        for r in net.layers[i + 1].rows:
            for c, _ in r:
                counts[c] += 1
        res.append(counts)
    return res


def expand_fanout_one(net: ReluNet) -> ReluNet:
    """Duplicate each hidden neuron once per consumer, working from the output back.

    Neurons with no consumer are dropped.
    """
    check_net(net)
    layers = list(net.layers)
    for li in range(len(layers) - 2, -1, -1):
        src, dst = layers[li], layers[li + 1]
        new_rows, new_bias, new_dst = [], [], []
        for r in dst.rows:
            row = []
            for c, w in r:
                new_rows.append(src.rows[c])
                new_bias.append(src.biases[c])
                row.append((len(new_rows) - 1, w))
            new_dst.append(tuple(row))
        layers[li] = NetLayer(tuple(new_rows), tuple(new_bias), src.activation, src.n_in)
        layers[li + 1] = NetLayer(tuple(new_dst), dst.biases, dst.activation, len(new_rows))
    return ReluNet(net.input_dim, tuple(layers), net.label)


def push_weights_first_layer(net: ReluNet) -> ReluNet:
    """Move every |weight| behind layer 1 onto its source neuron, leaving +-1 edges.

    Exact because relu(c z) = c relu(z) for c > 0; requires fan-out <= 1.
    """
    check_net(net)
    for li, counts in enumerate(fan_outs(net), start=1):
        if any(c > 1 for c in counts):
            raise NetError(f"layer {li} has a neuron with fan-out > 1; run expand_fanout_one first")
    layers = list(net.layers)
    for li in range(len(layers) - 1, 0, -1):
        dst, src = layers[li], layers[li - 1]
        scale = [Fraction(1)] * src.n_out
        new_dst = []
        for r in dst.rows:
            row = []
            for c, w in r:
                scale[c] = abs(w)
                row.append((c, Fraction(1 if w > 0 else -1)))
            new_dst.append(tuple(row))
        layers[li] = NetLayer(tuple(new_dst), dst.biases, dst.activation, dst.n_in)
        layers[li - 1] = NetLayer(
            tuple(tuple((c, w * s) for c, w in r) for r, s in zip(src.rows, scale)),
            tuple(b * s for b, s in zip(src.biases, scale)),
            src.activation,
            src.n_in,
        )
    return ReluNet(net.input_dim, tuple(layers), net.label)


def trace_preactivations(net: ReluNet, points: Sequence[Sequence]):
    """Per-layer pre-activation values at each point, as Fraction arrays (n_out, P)."""
    num, den = _to_common(points, net.input_dim)
    out = []
    for layer in net.layers:
        lin = NetLayer(layer.rows, layer.biases, "linear", layer.n_in)
        znum, zden = _apply_layer(lin, num, den)
        out.append((znum, zden))
        if layer.activation == "relu":
            num, den = (np.where(znum > 0, znum, 0) if znum.dtype == object else np.maximum(znum, 0)), zden
        elif layer.activation == "sign":
            num, den = (znum > 0).astype(np.int64), 1
        else:
            num, den = znum, zden
    return out


@dataclass(frozen=True)
class Certificate:
    mode: str  # "exhaustive" or "sampled"
    points: tuple  # grid points checked, canonical order
    residuals: tuple  # per point: |N'' - N| in band, else 0 when the side clause holds
    worst_residual: Fraction
    worst_point: tuple
    near_boundary: tuple  # points with N just outside [-B, B] (within 1/p')
    refinements: int = 0


@dataclass(frozen=True)
class RationalizedNet:
    net: ReluNet
    t: int
    numerator_bound: int
    certificate: Certificate
    method: str = "rounding"


def _check_pushed(net: ReluNet):
    for li, layer in enumerate(net.layers[1:], start=2):
        for r in layer.rows:
            if any(w not in (1, -1) for _, w in r):
                raise NetError(f"layer {li} has a weight outside {{-1, 0, 1}}; push weights first")


def _snap(net: ReluNet, t: int) -> ReluNet:
    def r(v: Fraction) -> Fraction:
        return Fraction(round(v * t), t)

    layers = []
    for li, layer in enumerate(net.layers):
        rows = layer.rows if li else tuple(make_row((c, r(w)) for c, w in row) for row in layer.rows)
        layers.append(NetLayer(rows, tuple(r(b) for b in layer.biases), layer.activation, layer.n_in))
    return ReluNet(net.input_dim, tuple(layers), net.label + "''")


def numerator_bound(net: ReluNet, t: int) -> int:
    vals = [w for layer in net.layers for row in layer.rows for _, w in row] + [
        b for layer in net.layers for b in layer.biases
    ]
    return max((abs(v * t) for v in vals), default=Fraction(0)).__ceil__()


def check_points(grid: GridSpec, d: int, cap: int, sample: int, seed: int):
    if grid.size(d) <= cap:
        return grid.points(d), "exhaustive"
    rng = np.random.Generator(np.random.Philox(seed))
    n = grid.half_count
    idx = rng.integers(-n, n + 1, size=(sample, d))
    pts = sorted({tuple(Fraction(int(j), grid.p) for j in row) for row in idx})
    return pts, "sampled"


def verify_rationalized(net: ReluNet, cand: ReluNet, points, B: Fraction, p_prime: int, mode="exhaustive"):
    """Check the three grid clauses and activation-pattern agreement.

    Returns (certificate, None) or (None, witness point).
    """
    tol = Fraction(1, p_prime)
    za, zb = trace_preactivations(net, points), trace_preactivations(cand, points)
    for (an, ad), (bn, bd) in zip(za[:-1], zb[:-1]):
        # a neuron active (inactive) in N must not be strictly inactive (active) in N''
        sa, sb = np.sign(an.astype(object)), np.sign(bn.astype(object))
        bad = np.nonzero(np.any((sa * sb) < 0, axis=0))[0]
        if bad.size:
            return None, points[int(bad[0])]
    (an, ad), (bn, bd) = za[-1], zb[-1]
    residuals, near = [], []
    worst, worst_pt = Fraction(-1), None
    for j, pt in enumerate(points):
        n_val, c_val = Fraction(int(an[0, j]), ad), Fraction(int(bn[0, j]), bd)
        if -B <= n_val <= B:
            res = abs(c_val - n_val)
            if res > tol:
                return None, pt
        elif n_val > B:
            if c_val < B:
                return None, pt
            res = Fraction(0)
            if n_val - B <= tol:
                near.append(pt)
        else:
            if c_val > -B:
                return None, pt
            res = Fraction(0)
            if -B - n_val <= tol:
                near.append(pt)
        residuals.append(res)
        if res > worst:
            worst, worst_pt = res, pt
    cert = Certificate(mode, tuple(points), tuple(residuals), max(worst, Fraction(0)), worst_pt, tuple(near))
    return cert, None


def rationalize(
    net: ReluNet,
    grid: GridSpec,
    B,
    p_prime: int,
    *,
    grid_cap: int = 10**5,
    sample_size: int = 4096,
    seed: int = 0,
    exact_denominator_cap: int = 2**24,
    max_refinements: int = 64,
) -> RationalizedNet:
    """Snap first-layer weights and all biases onto a common denominator t.

    Nets whose denominators already share a small lcm are kept exactly.  Otherwise
    t = 2**m with m doubling until the grid check passes, then the smallest passing
    m in the last doubling interval is taken.
    """
    check_net(net)
    _check_pushed(net)
    B = q(B)
    points, mode = check_points(grid, net.input_dim, grid_cap, sample_size, seed)

    dens = [w.denominator for w in (v for row in net.layers[0].rows for _, v in row)]
    dens += [b.denominator for layer in net.layers for b in layer.biases]
    lcm = math.lcm(*dens) if dens else 1
    if lcm <= exact_denominator_cap:
        cert, wit = verify_rationalized(net, net, points, B, p_prime, mode)
        assert wit is None
        return RationalizedNet(net, lcm, numerator_bound(net, lcm), cert, "exact")

    def attempt(m: int):
        cand = _snap(net, 2**m)
        return cand, verify_rationalized(net, cand, points, B, p_prime, mode)

    m, last_fail, witness = 1, 0, None
    for step in range(max_refinements):
        cand, (cert, witness) = attempt(m)
        if cert is not None:
            break
        last_fail, m = m, m * 2
    else:
        raise RationalizeError(
            f"grid check still fails after {max_refinements} precision doublings", witness
        )
    best = (m, cand, cert)
    lo, hi = last_fail, m  # lo fails (or 0), hi passes
    while hi - lo > 1:
        mid = (lo + hi) // 2
        c2, (cert2, _) = attempt(mid)
        if cert2 is not None:
            hi, best = mid, (mid, c2, cert2)
        else:
            lo = mid
    m, cand, cert = best
    cert = Certificate(cert.mode, cert.points, cert.residuals, cert.worst_residual, cert.worst_point, cert.near_boundary, step)
    return RationalizedNet(cand, 2**m, numerator_bound(cand, 2**m), cert, "rounding")


def rescale_denominator(rn: RationalizedNet, factor: int) -> RationalizedNet:
    """Same network over denominator t*factor (numerators scale with it)."""
    t = rn.t * factor
    return RationalizedNet(rn.net, t, numerator_bound(rn.net, t), rn.certificate, rn.method)


def lp_rationalize(net: ReluNet, grid: GridSpec, B, p_prime: int, denom_bits: int = 40) -> RationalizedNet:
    """Solve the grid-indexed inequality system over first-layer weights and biases.

    Only for d = 1 and at most 16 grid points: a cross-check on the rounding path.
    The system fixes every neuron's activation side at every grid point and pins the
    output into the same 1/p' cell as N (or beyond +-B).  A slack variable is
    maximized over constraints that N itself satisfies strictly; the float optimum is
    snapped to denominator 2**denom_bits and then verified exactly.
    """
    from scipy.optimize import linprog

    check_net(net)
    _check_pushed(net)
    B = q(B)
    if net.input_dim != 1 or grid.size(1) > 16:
        raise ValueError("LP oracle is limited to d = 1 and |I| <= 16")
    points = grid.points(1)
    d = 1
    first = net.layers[0]
    # variable layout: first-layer weights (n1*d), then biases of every non-output neuron
    n1 = first.n_out
    var_w = {(j, i): j * d + i for j in range(n1) for i in range(d)}
    off = n1 * d
    var_b = {}
    for li, layer in enumerate(net.layers[:-1]):
        for j in range(layer.n_out):
            var_b[(li, j)] = off
            off += 1
    nv = off
    z0 = np.zeros(nv)
    for (j, i), k in var_w.items():
        z0[k] = float(dict(first.rows[j]).get(i, 0))
    for (li, j), k in var_b.items():
        z0[k] = float(net.layers[li].biases[j])

    pre = trace_preactivations(net, points)
    A, c, strict = [], [], []

    def add(row_vec, const, sense, slack_ok):
        # row·z + const (sense) 0 with sense in {">=", "<="}
        if sense == ">=":
            A.append(-row_vec)
            c.append(const)
        else:
            A.append(row_vec)
            c.append(-const)
        strict.append(slack_ok)

    for pi, pt in enumerate(points):
        x = [float(v) for v in pt]
        exprs = []  # linear expression (vector, const) for each neuron output of the previous layer
        for li, layer in enumerate(net.layers):
            zn, zd = pre[li]
            new = []
            for j, row in enumerate(layer.rows):
                vec = np.zeros(nv)
                const = 0.0
                if li == 0:
                    for i in range(d):
                        vec[var_w[(j, i)]] = x[i]
                else:
                    for cc, w in row:
                        pv, pc = exprs[cc]
                        vec += float(w) * pv
                        const += float(w) * pc
                if li < len(net.layers) - 1:
                    vec[var_b[(li, j)]] += 1.0
                val = Fraction(int(zn[j, pi]), zd)
                if li < len(net.layers) - 1:
                    if val >= 0:
                        add(vec, const, ">=", val > 0)
                        new.append((vec, const))
                    else:
                        add(vec, const, "<=", True)
                        new.append((np.zeros(nv), 0.0))
                else:
                    if -B <= val <= B:
                        jj = math.floor(val * p_prime)
                        jj = min(max(jj, int(-B * p_prime)), int(B * p_prime) - 1)
                        lo, hi = Fraction(jj, p_prime), Fraction(jj + 1, p_prime)
                        add(vec, const - float(lo), ">=", val > lo)
                        add(vec, const - float(hi), "<=", val < hi)
                    elif val > B:
                        add(vec, const - float(B), ">=", True)
                    else:
                        add(vec, const + float(B), "<=", True)
            exprs = new
    A = np.array(A)
    c = np.array(c)
    s_col = np.array([1.0 if s else 0.0 for s in strict])[:, None]
    res = linprog(
        np.r_[np.zeros(nv), -1.0],
        A_ub=np.hstack([A, s_col]),
        b_ub=c,
        bounds=[(None, None)] * nv + [(0, 1)],
        method="highs",
    )
    if res.status != 0:
        raise RationalizeError(f"LP failed: {res.message}")
    t = 2**denom_bits
    z = [Fraction(round(v * t), t) for v in res.x[:nv]]
    layers = []
    for li, layer in enumerate(net.layers):
        if li == 0:
            rows = tuple(make_row((i, z[var_w[(j, i)]]) for i in range(d)) for j in range(layer.n_out))
        else:
            rows = layer.rows
        if li < len(net.layers) - 1:
            biases = tuple(z[var_b[(li, j)]] for j in range(layer.n_out))
        else:
            biases = layer.biases
        layers.append(NetLayer(rows, biases, layer.activation, layer.n_in))
    cand = ReluNet(net.input_dim, tuple(layers), net.label + "''lp")
    cert, wit = verify_rationalized(net, cand, points, B, p_prime)
    if cert is None:
        raise RationalizeError("LP solution failed exact verification", wit)
    return RationalizedNet(cand, t, numerator_bound(cand, t), cert, "lp")
