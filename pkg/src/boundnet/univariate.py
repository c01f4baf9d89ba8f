"""Univariate ReLU nets: exact breakpoint extraction and the depth-2 rewrite."""

from __future__ import annotations

import bisect
from dataclasses import dataclass
from fractions import Fraction
from typing import Sequence

from .netir import NetError, NetLayer, ReluNet, check_net, make_row, q


@dataclass(frozen=True)
class PiecewiseLinear:
    """Continuous piecewise-linear f: R -> R.

    ``slopes[0]`` holds left of ``breakpoints[0]``, ``slopes[i]`` on
    (breakpoints[i-1], breakpoints[i]).  ``anchor_value`` is f(breakpoints[0]),
    or f(0) when there are no breakpoints.
    """

    breakpoints: tuple
    slopes: tuple
    anchor_value: Fraction

    def __post_init__(self):
        object.__setattr__(self, "breakpoints", tuple(q(a) for a in self.breakpoints))
        object.__setattr__(self, "slopes", tuple(q(a) for a in self.slopes))
        object.__setattr__(self, "anchor_value", q(self.anchor_value))
        if len(self.slopes) != len(self.breakpoints) + 1:
            raise ValueError("need exactly one more slope than breakpoints")
        if any(a >= b for a, b in zip(self.breakpoints, self.breakpoints[1:])):
            raise ValueError("breakpoints must be strictly increasing")

    @property
    def pieces(self) -> int:
        return len(self.slopes)


def eval_pwl(pwl: PiecewiseLinear, t) -> Fraction:
    t = q(t)
    a, s = pwl.breakpoints, pwl.slopes
    if not a:
        return pwl.anchor_value + s[0] * t
    if t <= a[0]:
        return pwl.anchor_value + s[0] * (t - a[0])
    v = pwl.anchor_value
    for i in range(1, len(a)):
        if t <= a[i]:
            return v + s[i] * (t - a[i - 1])
        v += s[i] * (a[i] - a[i - 1])
    return v + s[-1] * (t - a[-1])


def restrict_to_coordinate(net: ReluNet, i: int, context: Sequence) -> ReluNet:
    """Univariate net t -> net(x) with x_i = t and the other coordinates hardwired.

    ``i`` is 1-based; ``context`` lists the remaining d-1 coordinates in order.
    """
    check_net(net)
    d = net.input_dim
    if not 1 <= i <= d:
        raise IndexError(f"coordinate {i} outside 1..{d}")
    if len(context) != d - 1:
        raise ValueError(f"context has {len(context)} values, expected {d - 1}")
    ctx = [q(v) for v in context]
    full = ctx[: i - 1] + [None] + ctx[i - 1 :]
    first = net.layers[0]
    rows, biases = [], []
    for row, b in zip(first.rows, first.biases):
        w_i = Fraction(0)
        for c, w in row:
            if c == i - 1:
                w_i = w
            else:
                b += w * full[c]
        rows.append(make_row([(0, w_i)]))
        biases.append(b)
    layer = NetLayer(tuple(rows), tuple(biases), first.activation, 1)
    return ReluNet(1, (layer,) + net.layers[1:], f"{net.label}|x{i}")


class _Pieces:
    """Functions on a shared partition: values at the points plus the two ray slopes."""

    def __init__(self, pts, vals, left, right):
        self.pts = pts  # sorted list of Fractions, never empty
        self.vals = vals  # per function: list of values at pts
        self.left = left  # per function: slope left of pts[0]
        self.right = right

    def refine(self, new_pts):
        add = sorted(set(new_pts) - set(self.pts))
        if not add:
            return
        pts = sorted(self.pts + add)
        vals = []
        for f in range(len(self.vals)):
            vals.append([self.value(f, x) for x in pts])
        self.pts, self.vals = pts, vals

    def value(self, f, x):
        pts, v = self.pts, self.vals[f]
        if x <= pts[0]:
            return v[0] + self.left[f] * (x - pts[0])
        if x >= pts[-1]:
            return v[-1] + self.right[f] * (x - pts[-1])
        j = bisect.bisect_left(pts, x)
        if pts[j] == x:
            return v[j]
        a, b = pts[j - 1], pts[j]
        return v[j - 1] + (v[j] - v[j - 1]) * (x - a) / (b - a)


def _affine(pieces: _Pieces, layer: NetLayer) -> _Pieces:
    vals, left, right = [], [], []
    npts = len(pieces.pts)
    for row, b in zip(layer.rows, layer.biases):
        v = [b] * npts
        lft = rgt = Fraction(0)
        for c, w in row:
            src = pieces.vals[c]
            v = [a + w * s for a, s in zip(v, src)]
            lft += w * pieces.left[c]
            rgt += w * pieces.right[c]
        vals.append(v)
        left.append(lft)
        right.append(rgt)
    return _Pieces(list(pieces.pts), vals, left, right)


def _roots(pieces: _Pieces, f: int) -> list:
    pts, v = pieces.pts, pieces.vals[f]
    out = []
    for j in range(len(pts) - 1):
        if (v[j] < 0 < v[j + 1]) or (v[j] > 0 > v[j + 1]):
            out.append(pts[j] - v[j] * (pts[j + 1] - pts[j]) / (v[j + 1] - v[j]))
    sl, sr = pieces.left[f], pieces.right[f]
    if sl and v[0] and (v[0] > 0) == (sl > 0):
        out.append(pts[0] - v[0] / sl)
    if sr and v[-1] and (v[-1] > 0) != (sr > 0):
        out.append(pts[-1] - v[-1] / sr)
    return out


def _relu(pieces: _Pieces) -> _Pieces:
    roots = [r for f in range(len(pieces.vals)) for r in _roots(pieces, f)]
    pieces.refine(roots)
    vals, left, right = [], [], []
    for f, v in enumerate(pieces.vals):
        vals.append([max(x, Fraction(0)) for x in v])
        sl, sr = pieces.left[f], pieces.right[f]
        # after refinement each ray keeps one sign
        left.append(sl if (v[0] > 0 or (v[0] == 0 and sl < 0)) else Fraction(0))
        right.append(sr if (v[-1] > 0 or (v[-1] == 0 and sr > 0)) else Fraction(0))
    return _Pieces(pieces.pts, vals, left, right)


def piece_bound(net: ReluNet) -> int:
    """Upper bound on linear pieces: product of (width + 1) over the ReLU layers."""
    out = 1
    for layer in net.layers:
        if layer.activation == "relu":
            out *= layer.n_out + 1
    return out


def extract_pwl(net: ReluNet) -> PiecewiseLinear:
    """Exact piecewise-linear form of a scalar univariate net, collinear pieces merged."""
    check_net(net)
    if net.input_dim != 1 or net.output_dim != 1:
        raise NetError("extract_pwl needs a univariate scalar network")
    pieces = _Pieces([Fraction(0)], [[Fraction(0)]], [Fraction(1)], [Fraction(1)])
    for layer in net.layers:
        if layer.activation == "sign":
            raise NetError("sign layers are not piecewise linear")
        pieces = _affine(pieces, layer)
        if layer.activation == "relu":
            pieces = _relu(pieces)
    pts, v = pieces.pts, pieces.vals[0]
    slopes = [pieces.left[0]]
    slopes += [(v[j + 1] - v[j]) / (pts[j + 1] - pts[j]) for j in range(len(pts) - 1)]
    slopes.append(pieces.right[0])
    keep_pts, keep_slopes = [], [slopes[0]]
    for j, a in enumerate(pts):
        if slopes[j + 1] != keep_slopes[-1]:
            keep_pts.append(a)
            keep_slopes.append(slopes[j + 1])
    if keep_pts:
        anchor = pieces.value(0, keep_pts[0])
    else:
        anchor = pieces.value(0, Fraction(0))
    return PiecewiseLinear(tuple(keep_pts), tuple(keep_slopes), anchor)


def collapse_to_depth2(pwl: PiecewiseLinear) -> ReluNet:
    """Depth-2 net for f(a1) - s1[a1-t]+ + sum_i (s_i[t-a_{i-1}]+ - s_i[t-a_i]+) + s_m[t-a_{m-1}]+.

    The constant is a fan-in-0 bias-1 neuron.  Without breakpoints the linear part
    s*t is written s[t]+ - s[-t]+.
    """
    a, s = pwl.breakpoints, pwl.slopes
    m = len(s)
    rows, biases, out = [], [], []

    def hidden(w, b, coef):
        rows.append({0: w} if w else {})
        biases.append(b)
        out.append((len(rows) - 1, coef))

    hidden(0, 1, pwl.anchor_value)
    if m == 1:
        hidden(1, 0, s[0])
        hidden(-1, 0, -s[0])
    else:
        hidden(-1, a[0], -s[0])
        for i in range(2, m):
            hidden(1, -a[i - 2], s[i - 1])
            hidden(1, -a[i - 1], -s[i - 1])
        hidden(1, -a[m - 2], s[m - 1])
    h = NetLayer.sparse(rows, biases, "relu", 1)
    o = NetLayer.sparse([out], [0], "linear", len(rows))
    return ReluNet(1, (h, o), "collapsed")
