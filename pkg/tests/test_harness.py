import math
from fractions import Fraction as F

import numpy as np
import pytest

from boundnet.harness import (
    DistributionSpec,
    estimate_l2_diff,
    exhaustive_grid_l2,
    jackknife_rms,
    sample,
    sample_grid_exact,
)
from boundnet.lowering import GridSpec
from boundnet.netir import dense_net


def test_grid_frequencies():
    grid = GridSpec(1, 2)
    X = sample(DistributionSpec.uniform_grid(grid, 1), 50000, seed=1)
    vals, counts = np.unique(X, return_counts=True)
    assert vals.tolist() == [-1, -0.5, 0, 0.5, 1]
    p = 1 / 5
    sigma = math.sqrt(50000 * p * (1 - p))
    assert np.all(np.abs(counts - 50000 * p) <= 3 * sigma)


def test_sampling_is_deterministic():
    d = DistributionSpec.uniform_box(2, 3)
    assert np.array_equal(sample(d, 100, 7), sample(d, 100, 7))
    assert not np.array_equal(sample(d, 100, 7), sample(d, 100, 8))
    g = DistributionSpec.uniform_grid(GridSpec(1, 4), 2)
    assert [tuple(float(v) for v in r) for r in sample_grid_exact(g, 50, 3)] == [tuple(r) for r in sample(g, 50, 3).tolist()]


def test_gaussian_and_mixture_moments():
    X = sample(DistributionSpec.gaussian([1.0, -2.0], [4.0, 0.25]), 40000, seed=2)
    assert np.all(np.abs(X.mean(axis=0) - [1, -2]) <= 3 * np.sqrt(np.array([4, 0.25]) / 40000))
    mix = DistributionSpec.mixture([(F(1, 4), DistributionSpec.gaussian([10.0], [1.0])),
                                    (F(3, 4), DistributionSpec.gaussian([0.0], [1.0]))])
    Y = sample(mix, 40000, seed=3)
    frac = float(np.mean(Y > 5))
    assert abs(frac - 0.25) <= 3 * math.sqrt(0.25 * 0.75 / 40000)


def test_bad_specs():
    with pytest.raises(ValueError):
        DistributionSpec.uniform_box(0, 1)
    with pytest.raises(ValueError):
        DistributionSpec.mixture([(F(1, 2), DistributionSpec.uniform_box(1, 1))])
    with pytest.raises(ValueError):
        DistributionSpec("beta", 1)


def test_constant_difference():
    f = lambda x: 0.5
    g = lambda x: 0.0
    rep = estimate_l2_diff(f, g, DistributionSpec.uniform_box(1, 2), 1000, seed=0)
    assert rep.l2_estimate == 0.5
    assert rep.standard_error == 0.0
    ex = exhaustive_grid_l2(lambda x: F(1, 2), lambda x: 0, GridSpec(1, 2), 2)
    assert ex.mean_square == "1/4" and ex.sample_count == 25


def test_mc_agrees_with_exhaustive():
    grid = GridSpec(1, 4)
    f = dense_net(2, [([[1, -1], [1, 1]], [0, 0], "relu"), ([[1, -2]], [0], "linear")])
    g = dense_net(2, [([[1, 0]], [0], "linear")])
    exact = exhaustive_grid_l2(f, g, grid, 2)
    mc = estimate_l2_diff(f, g, DistributionSpec.uniform_grid(grid, 2), 20000, seed=11)
    assert abs(mc.l2_estimate - exact.l2_estimate) <= 3 * mc.standard_error


def test_weighted_point_mass():
    grid = GridSpec(1, 2)
    f = dense_net(1, [([[1]], [0], "linear")])
    g = dense_net(1, [([[0]], [0], "linear")])
    rep = exhaustive_grid_l2(f, g, grid, 1, weights={(F(1, 2),): 1})
    assert rep.mean_square == "1/4"
    assert rep.worst_point == (F(1, 2),)


def test_jackknife_matches_delta_method():
    rng = np.random.default_rng(0)
    sq = rng.exponential(size=5000)
    est, se = jackknife_rms(sq)
    delta = np.std(sq, ddof=1) / math.sqrt(sq.size) / (2 * est)
    assert abs(se - delta) / delta < 0.05
