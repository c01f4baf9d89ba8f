"""Input distributions and L2 error measurement between evaluables."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np
import scipy.sparse as sp

from .lowering import GridSpec
from .netir import NetError, ReluNet, eval_net_exact_batch, q

RNG_NAME = "numpy.Philox"
KINDS = ("uniform_grid", "uniform_box", "gaussian", "mixture")


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(int(seed) & (2**64 - 1)))


@dataclass(frozen=True)
class DistributionSpec:
    kind: str
    d: int
    grid: GridSpec | None = None
    R: Fraction | None = None
    mean: tuple = ()
    var: tuple = ()
    components: tuple = ()  # ((weight, DistributionSpec), ...)

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown distribution kind {self.kind!r}")
        if self.d < 1:
            raise ValueError("dimension must be positive")
        if self.kind == "uniform_grid" and self.grid is None:
            raise ValueError("uniform_grid needs a grid")
        if self.kind == "uniform_box" and (self.R is None or q(self.R) <= 0):
            raise ValueError("uniform_box needs R > 0")
        if self.kind == "gaussian":
            if len(self.mean) != self.d or len(self.var) != self.d or any(v <= 0 for v in self.var):
                raise ValueError("gaussian needs d means and d positive variances")
        if self.kind == "mixture":
            ws = [q(w) for w, _ in self.components]
            if not ws or any(w <= 0 for w in ws) or sum(ws) != 1:
                raise ValueError("mixture weights must be positive and sum to 1")
            if any(c.d != self.d for _, c in self.components):
                raise ValueError("mixture components must share the dimension")

    @classmethod
    def uniform_grid(cls, grid: GridSpec, d: int):
        return cls("uniform_grid", d, grid=grid)

    @classmethod
    def uniform_box(cls, R, d: int):
        return cls("uniform_box", d, R=q(R))

    @classmethod
    def gaussian(cls, mean: Sequence[float], var: Sequence[float]):
        return cls("gaussian", len(mean), mean=tuple(float(m) for m in mean), var=tuple(float(v) for v in var))

    @classmethod
    def mixture(cls, parts: Sequence):
        parts = tuple((q(w), c) for w, c in parts)
        return cls("mixture", parts[0][1].d, components=parts)

    @property
    def discrete(self) -> bool:
        return self.kind == "uniform_grid"


def _draw(dist: DistributionSpec, n: int, rng: np.random.Generator) -> np.ndarray:
    if dist.kind == "uniform_grid":
        h = dist.grid.half_count
        return rng.integers(-h, h + 1, size=(n, dist.d)) / dist.grid.p
    if dist.kind == "uniform_box":
        R = float(dist.R)
        return rng.uniform(-R, R, size=(n, dist.d))
    if dist.kind == "gaussian":
        return np.asarray(dist.mean) + rng.standard_normal((n, dist.d)) * np.sqrt(dist.var)
    w = np.array([float(w) for w, _ in dist.components])
    which = rng.choice(len(w), size=n, p=w / w.sum())
    out = np.empty((n, dist.d))
    for k, (_, comp) in enumerate(dist.components):
        idx = np.nonzero(which == k)[0]
        if idx.size:
            out[idx] = _draw(comp, idx.size, rng)
    return out


def sample(dist: DistributionSpec, n: int, seed: int) -> np.ndarray:
    """n points as an (n, d) float array; deterministic in (dist, n, seed)."""
    if n < 1:
        raise ValueError("sample count must be positive")
    return _draw(dist, n, make_rng(seed))


def sample_grid_exact(dist: DistributionSpec, n: int, seed: int) -> list[tuple]:
    """Same draws as :func:`sample` for a grid distribution, as exact rationals."""
    if dist.kind != "uniform_grid":
        raise ValueError("exact sampling needs a uniform_grid distribution")
    h, p = dist.grid.half_count, dist.grid.p
    idx = make_rng(seed).integers(-h, h + 1, size=(n, dist.d))
    return [tuple(Fraction(int(j), p) for j in row) for row in idx]


def eval_net_float_batch(net: ReluNet, X: np.ndarray) -> np.ndarray:
    """binary64 forward pass on an (n, d) array; returns (n, out)."""
    v = np.asarray(X, dtype=np.float64).T
    for i, layer in enumerate(net.layers, start=1):
        data = [float(w) for r in layer.rows for _, w in r]
        idx = [c for r in layer.rows for c, _ in r]
        ptr = np.cumsum([0] + [len(r) for r in layer.rows])
        m = sp.csr_matrix((data, idx, ptr), shape=(layer.n_out, layer.n_in))
        z = np.asarray(m @ v) + np.array([float(b) for b in layer.biases])[:, None]
        if layer.activation == "relu":
            z = np.maximum(z, 0.0)
        elif layer.activation == "sign":
            z = (z > 0).astype(np.float64)
        if not np.all(np.isfinite(z)):
            raise NetError(f"non-finite value in layer {i}")
        v = z
    return v.T


def _eval_float(f, X: np.ndarray) -> np.ndarray:
    if isinstance(f, ReluNet):
        return eval_net_float_batch(f, X)[:, 0]
    out = np.empty(len(X))
    for i, x in enumerate(X):
        try:
            out[i] = float(f(x))
        except Exception as e:
            raise EvaluationError(f"evaluation failed at {x.tolist()}: {e}", x.tolist()) from e
    return out


def _eval_exact(f, points) -> list[Fraction]:
    if isinstance(f, ReluNet):
        return [v[0] for v in eval_net_exact_batch(f, points)]
    out = []
    for x in points:
        try:
            out.append(q(f(x)))
        except Exception as e:
            raise EvaluationError(f"evaluation failed at {list(x)}: {e}", list(x)) from e
    return out


class EvaluationError(RuntimeError):
    def __init__(self, msg, point=None):
        super().__init__(msg)
        self.point = point


@dataclass(frozen=True)
class ErrorReport:
    l2_estimate: float
    standard_error: float
    sample_count: int
    seed: int | None
    mode: str  # "monte_carlo" or "exhaustive"
    worst_point: tuple | None = None
    worst_residual: float = 0.0
    mean_square: str = ""  # exact rational for exhaustive mode
    rng: str = RNG_NAME

    def as_dict(self) -> dict:
        return {
            "mode": self.mode,
            "l2_estimate": self.l2_estimate,
            "standard_error": self.standard_error,
            "sample_count": self.sample_count,
            "seed": self.seed,
            "rng": self.rng if self.mode == "monte_carlo" else None,
            "worst_point": None if self.worst_point is None else [str(v) for v in self.worst_point],
            "worst_residual": self.worst_residual,
            "mean_square": self.mean_square,
        }


def jackknife_rms(sq: np.ndarray) -> tuple[float, float]:
    """sqrt(mean(sq)) and its jackknife standard error."""
    n = sq.size
    total = float(np.sum(sq))
    est = math.sqrt(max(total / n, 0.0))
    if n < 2:
        return est, float("nan")
    loo = np.sqrt(np.maximum((total - sq) / (n - 1), 0.0))
    se = math.sqrt((n - 1) / n * float(np.sum((loo - loo.mean()) ** 2)))
    return est, se


def estimate_l2_diff(f, g, dist: DistributionSpec, n: int, seed: int) -> ErrorReport:
    """Monte Carlo sqrt(E (f-g)^2) with a jackknife standard error."""
    X = sample(dist, n, seed)
    diff = _eval_float(f, X) - _eval_float(g, X)
    sq = diff * diff
    est, se = jackknife_rms(sq)
    j = int(np.argmax(np.abs(diff)))
    return ErrorReport(est, se, n, seed, "monte_carlo", tuple(X[j].tolist()), float(abs(diff[j])))


def exhaustive_grid_l2(f, g, grid: GridSpec, d: int, weights=None, cap: int = 10**6) -> ErrorReport:
    """Exact E (f-g)^2 over every grid point (uniform or weighted), rendered to binary64."""
    size = grid.size(d)
    if size > cap:
        raise ValueError(f"grid has {size} points, above the cap {cap}")
    points = grid.points(d)
    if weights is None:
        w = [Fraction(1)] * len(points)
    elif isinstance(weights, dict):
        w = [q(weights.get(p, 0)) for p in points]
    else:
        w = [q(v) for v in weights]
    if len(w) != len(points) or any(v < 0 for v in w) or sum(w) == 0:
        raise ValueError("weights must be nonnegative, one per grid point, not all zero")
    fa, ga = _eval_exact(f, points), _eval_exact(g, points)
    res = [abs(a - b) for a, b in zip(fa, ga)]
    ms = sum(wi * r * r for wi, r in zip(w, res)) / sum(w)
    j = max(range(len(points)), key=lambda i: (res[i] if w[i] else -1, -i))
    return ErrorReport(
        math.sqrt(ms), 0.0, len(points), None, "exhaustive", points[j], float(res[j]), str(ms)
    )


def quantizer_failure_rate(quantizer: ReluNet, grid: GridSpec, c_in: int, dist: DistributionSpec, n: int, seed: int):
    """Fraction of sampled inputs whose quantizer bits differ from the rounding oracle."""
    from .pipeline import encode_grid_point

    X = sample(dist, n, seed)
    got = eval_net_float_batch(quantizer, X)
    want = np.array([encode_grid_point([Fraction(float(v)) for v in x], grid, c_in) for x in X], dtype=float)
    bad = np.any(np.abs(got - want) > 1e-9, axis=1)
    rate = float(np.mean(bad))
    return rate, math.sqrt(rate * (1 - rate) / n) if n > 1 else float("nan")
