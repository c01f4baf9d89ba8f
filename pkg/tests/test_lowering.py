import random
from fractions import Fraction as F

import pytest
from hypothesis import given, settings, strategies as st

from boundnet.lowering import (
    GridSpec,
    RationalizeError,
    add_clip_layer,
    clamp,
    expand_fanout_one,
    fan_outs,
    lp_rationalize,
    push_weights_first_layer,
    rationalize,
)
from boundnet.netir import NetError, dense_net, eval_net_exact, eval_net_exact_batch, net_metrics
from conftest import random_net


def test_grid_rounding():
    g = GridSpec(1, 2)
    assert g.values() == [-1, F(-1, 2), 0, F(1, 2), 1]
    assert g.round(F(3, 10)) == F(1, 2)
    assert g.round(F(1, 4)) == F(1, 2)  # midpoint goes up
    assert g.round(F(-1, 4)) == 0
    assert g.round(F(5, 4)) == 1
    assert g.round(F(13, 10)) == 0  # outside the box
    with pytest.raises(ValueError):
        GridSpec(F(1, 3), 2)


def test_clip_examples():
    net = dense_net(1, [([[5]], [0], "linear")])
    c = add_clip_layer(net, 3)
    assert c.depth == net.depth + 1
    assert [eval_net_exact(c, [x])[0] for x in (1, F(1, 5), -1)] == [3, 1, -3]
    with pytest.raises(NetError):
        add_clip_layer(dense_net(1, [([[1], [2]], [0, 0], "linear")]), 1)


@settings(max_examples=40, deadline=None)
@given(seed=st.integers(0, 10**6), B=st.fractions(min_value=F(1, 4), max_value=10, max_denominator=4))
def test_clip_matches_clamp(seed, B):
    r = random.Random(seed)
    net = random_net(r, 1, r.randint(1, 3))
    c = add_clip_layer(net, B)
    for x in [F(r.randint(-30, 30), r.randint(1, 4)) for _ in range(8)]:
        assert eval_net_exact(c, [x])[0] == clamp(eval_net_exact(net, [x])[0], B)


def test_expand_doubles_shared_neuron(rng):
    net = dense_net(1, [([[1]], [1], "relu"), ([[2], [-3]], [0, 1], "relu"), ([[1, 1]], [0], "linear")])
    e = expand_fanout_one(net)
    assert e.layers[0].n_out == 2
    assert all(c <= 1 for layer in fan_outs(e) for c in layer)
    for _ in range(10):
        x = [F(rng.randint(-9, 9), rng.randint(1, 5))]
        assert eval_net_exact(e, x) == eval_net_exact(net, x)


def test_expand_fanout_chain_growth():
    # fan-outs (2, 2): the first hidden layer grows x4
    net = dense_net(1, [([[1]], [0], "relu"), ([[1], [2]], [0, 0], "relu"), ([[1, 1], [1, -1]], [0, 0], "relu"), ([[1, 1]], [0], "linear")])
    e = expand_fanout_one(net)
    assert net_metrics(e).layer_sizes == (4, 4, 2, 1)


def test_expand_already_fanout_one():
    net = dense_net(1, [([[1], [2]], [0, 1], "relu"), ([[1, -1]], [0], "linear")])
    assert expand_fanout_one(net) == net


def test_push_example():
    net = dense_net(2, [([[2, -1]], [1], "relu"), ([[3]], [0], "linear")])
    p = push_weights_first_layer(net)
    assert p.layers[1].dense() == [[1]]
    assert p.layers[0].dense() == [[6, -3]]
    assert p.layers[0].biases == (3,)
    assert eval_net_exact(p, [1, 1]) == eval_net_exact(net, [1, 1]) == [6]
    neg = push_weights_first_layer(dense_net(1, [([[1]], [1], "relu"), ([[-2]], [0], "linear")]))
    assert neg.layers[1].dense() == [[-1]] and neg.layers[0].dense() == [[2]]


def test_push_requires_fanout_one():
    net = dense_net(1, [([[1]], [0], "relu"), ([[1], [1]], [0, 0], "relu"), ([[1, 1]], [0], "linear")])
    with pytest.raises(NetError, match="fan-out"):
        push_weights_first_layer(net)


def test_push_random(rng):
    for _ in range(10):
        net = expand_fanout_one(random_net(rng, 2, rng.randint(2, 4)))
        p = push_weights_first_layer(net)
        for layer in p.layers[1:]:
            assert all(w in (1, -1) for r in layer.rows for _, w in r)
        pts = [[F(rng.randint(-9, 9), rng.randint(1, 5)) for _ in range(2)] for _ in range(20)]
        assert eval_net_exact_batch(p, pts) == eval_net_exact_batch(net, pts)


def test_rationalize_exact_path():
    net = push_weights_first_layer(dense_net(1, [([[F(1, 3)]], [F(1, 5)], "relu"), ([[1]], [0], "linear")]))
    rn = rationalize(net, GridSpec(1, 4), 1, 100)
    assert rn.method == "exact" and rn.t == 15
    assert rn.certificate.worst_residual == 0


def test_rationalize_forty_digit_weight():
    w = F(10**40 + 7, 3 * 10**40 + 1)
    net = push_weights_first_layer(dense_net(1, [([[1]], [0], "relu"), ([[w]], [0], "linear")]))
    grid = GridSpec(1, 4)
    rn = rationalize(net, grid, 1, 100)
    assert rn.method == "rounding"
    assert rn.certificate.mode == "exhaustive"
    pts = grid.points(1)
    for a, b in zip(eval_net_exact_batch(rn.net, pts), eval_net_exact_batch(net, pts)):
        assert abs(a[0] - b[0]) <= F(1, 100)
    # every weight and bias of the result lies in Q_t
    for layer in rn.net.layers:
        assert all((w * rn.t).denominator == 1 for r in layer.rows for _, w in r)
        assert all((b * rn.t).denominator == 1 for b in layer.biases)


def test_rationalize_sign_clause_above_band():
    # N(1) = B + 1 exactly on the grid: N'' must stay >= B there
    w = F(2 * 10**30 + 1, 10**30)
    net = push_weights_first_layer(dense_net(1, [([[1]], [0], "relu"), ([[w]], [0], "linear")]))
    rn = rationalize(net, GridSpec(1, 2), 1, 100)
    assert eval_net_exact(rn.net, [1])[0] >= 1


def test_rationalize_flags_near_boundary():
    net = push_weights_first_layer(dense_net(1, [([[1]], [0], "relu"), ([[F(10**12 + 1, 10**12)]], [0], "linear")]))
    rn = rationalize(net, GridSpec(1, 2), 1, 100)
    assert (F(1),) in rn.certificate.near_boundary


def test_rationalize_needs_pushed_net():
    net = dense_net(1, [([[1]], [0], "relu"), ([[F(1, 3)]], [0], "relu"), ([[3]], [0], "linear")])
    with pytest.raises(NetError, match="push"):
        rationalize(net, GridSpec(1, 2), 1, 100)


def test_rationalize_reports_witness_when_capped():
    w = F(10**40 + 7, 10**40)
    net = push_weights_first_layer(dense_net(1, [([[1]], [0], "relu"), ([[w]], [0], "linear")]))
    with pytest.raises(RationalizeError) as e:
        # p' so large that no 2^1 denominator can pass, and only one doubling allowed
        rationalize(net, GridSpec(1, 4), 1, 10**60, max_refinements=1)
    assert e.value.witness is not None


def test_lp_oracle_agrees():
    w = F(10**40 + 7, 3 * 10**40 + 1)
    net = push_weights_first_layer(dense_net(1, [([[1], [-1]], [0, F(1, 3)], "relu"), ([[w, -2]], [0], "linear")]))
    grid = GridSpec(1, 4)
    lp = lp_rationalize(net, grid, 1, 100)
    rd = rationalize(net, grid, 1, 100)
    assert lp.certificate.worst_residual <= F(1, 100)
    assert rd.certificate.worst_residual <= F(1, 100)
