import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from flowcast.errors import ShapeError, UsageError
from flowcast.numcore import seeded_rng
from flowcast.recurrent import (
    GATES,
    LstmCellParams,
    LstmNetwork,
    LstmState,
    lstm_backward,
    lstm_cell_step,
    lstm_cell_trace,
    lstm_layer_forward,
    lstm_predict,
    stacked_forward,
    temporal_max_pool,
)
from flowcast.training import huber_grad, huber_loss
from oracles import central_difference, max_relative_error


def _biased_cell(hidden=3, n_in=2, **biases):
    p = LstmCellParams.zeros(n_in, hidden)
    for g, v in biases.items():
        getattr(p, f"b_{g}")[...] = v
    return p


def _random_cell(rng, hidden, n_in, scale=1.0):
    kw = {f"W_{g}": rng.normal(0, scale, (hidden, hidden + n_in)) for g in GATES}
    kw.update({f"b_{g}": rng.normal(0, scale, hidden) for g in GATES})
    return LstmCellParams(**kw)


def test_zero_cell_stays_zero():
    s = lstm_cell_step(LstmCellParams.zeros(2, 3), np.ones(2), LstmState.zeros(3))
    assert not s.c.any() and not s.h.any()


def test_forget_gate_closed_clears_memory():
    p = _biased_cell(i=10.0, f=-10.0, c=0.0, o=10.0)
    s = lstm_cell_step(p, np.ones(2), LstmState(np.full(3, 5.0), np.zeros(3)))
    assert np.all(np.abs(s.c) < 1e-3) and np.all(np.abs(s.h) < 1e-3)


def test_forget_gate_open_carries_memory():
    p = _biased_cell(i=-10.0, f=10.0)
    prev = LstmState(np.array([5.0, -2.0, 0.5]), np.zeros(3))
    s = lstm_cell_step(p, np.ones(2), prev)
    np.testing.assert_allclose(s.c, prev.c, atol=1e-3)


def test_cell_step_matches_equations():
    rng = seeded_rng(1)
    p = _random_cell(rng, 3, 2)
    x, h0, c0 = rng.normal(size=2), rng.normal(size=3), rng.normal(size=3)
    z = np.concatenate([h0, x])
    sig = lambda v: 1 / (1 + np.exp(-v))
    i, f, o = sig(p.W_i @ z + p.b_i), sig(p.W_f @ z + p.b_f), sig(p.W_o @ z + p.b_o)
    c = f * c0 + i * np.tanh(p.W_c @ z + p.b_c)
    s = lstm_cell_step(p, x, LstmState(c0, h0))
    np.testing.assert_allclose(s.c, c, rtol=1e-12)
    np.testing.assert_allclose(s.h, o * np.tanh(c), rtol=1e-12)


def test_cell_shape_errors():
    p = LstmCellParams.zeros(2, 3)
    with pytest.raises(ShapeError):
        lstm_cell_step(p, np.ones(3), LstmState.zeros(3))
    with pytest.raises(ShapeError):
        lstm_cell_step(p, np.ones(2), LstmState.zeros(4))
    with pytest.raises(ShapeError):
        LstmCellParams(np.zeros((3, 5)), np.zeros((3, 5)), np.zeros((3, 4)), np.zeros((3, 5)),
                       np.zeros(3), np.zeros(3), np.zeros(3), np.zeros(3))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32), st.floats(0.1, 1.5))
def test_gate_ranges_and_memory_bound(seed, scale):
    # scales keep pre-activations well inside the range where float64 sigmoid < 1
    rng = seeded_rng(seed)
    p = _random_cell(rng, 4, 3, scale)
    state = LstmState(rng.normal(0, 3, 4), np.tanh(rng.normal(size=4)))
    for _ in range(5):
        new, gates = lstm_cell_trace(p, rng.normal(0, scale, 3), state)
        for g in ("i", "f", "o"):
            assert np.all((gates[g] > 0) & (gates[g] < 1)), g
        assert np.all(np.abs(gates["c"]) <= 1)
        assert np.all(np.abs(new.h) < 1)
        assert np.all(np.abs(new.c) <= np.abs(state.c) + 1)
        state = new


def test_layer_length_one_is_one_step():
    rng = seeded_rng(2)
    p = _random_cell(rng, 3, 2)
    x = rng.normal(size=(1, 2))
    out = lstm_layer_forward(p, x)
    np.testing.assert_allclose(out[0], lstm_cell_step(p, x[0], LstmState.zeros(3)).h, rtol=1e-14)


def test_layer_zero_params():
    out = lstm_layer_forward(LstmCellParams.zeros(2, 3), np.ones((5, 2)))
    assert out.shape == (5, 3) and not out.any()


def test_backward_direction_is_reversed_forward():
    rng = seeded_rng(3)
    p = _random_cell(rng, 3, 2)
    x = rng.normal(size=(6, 2))
    back = lstm_layer_forward(p, x, "backward")
    fwd_rev = lstm_layer_forward(p, x[::-1], "forward")
    np.testing.assert_allclose(back, fwd_rev[::-1], rtol=1e-14)


def test_layer_rejects_empty_and_bad_direction():
    p = LstmCellParams.zeros(2, 3)
    with pytest.raises(ValueError):
        lstm_layer_forward(p, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        lstm_layer_forward(p, np.zeros((3, 2)), "sideways")


def test_single_layer_stack_equals_layer():
    net = LstmNetwork(3, hidden_size=4, bidirectional=False, seed=1)
    x = seeded_rng(4).normal(size=(7, 3))
    np.testing.assert_allclose(stacked_forward(net, x), lstm_layer_forward(net.cell_params(0), x), rtol=1e-14)


def test_bidirectional_stack_concatenates_directions():
    net = LstmNetwork(3, hidden_size=4, seed=1)
    x = seeded_rng(4).normal(size=(7, 3))
    out = stacked_forward(net, x)
    assert out.shape == (7, 8)
    np.testing.assert_allclose(out[:, :4], lstm_layer_forward(net.cell_params(0, "forward"), x), rtol=1e-14)
    np.testing.assert_allclose(out[:, 4:], lstm_layer_forward(net.cell_params(0, "backward"), x, "backward"),
                               rtol=1e-14)


def test_two_layers_zero_top_params_give_zero_output():
    net = LstmNetwork(3, hidden_size=4, n_layers=2, seed=1)
    for name in net.params:
        if name.startswith("l1."):
            net.params[name][...] = 0.0
    out = stacked_forward(net, seeded_rng(5).normal(size=(7, 3)))
    assert not out.any()


def test_transfer_matrix_shape():
    net = LstmNetwork(3, hidden_size=4, n_layers=3, seed=0)
    assert net.params["l1.transfer.weight"].shape == (8, 4)
    assert net.params["l2.transfer.weight"].shape == (8, 4)


def test_default_network_shapes():
    net = LstmNetwork(2)
    assert net.out_width == 300
    assert net.params["fc.weight"].shape == (1, 300)
    assert net.params["l0.fwd.W_i"].shape == (150, 152)
    np.testing.assert_array_equal(net.params["l0.fwd.b_f"], np.ones(150))


def test_bias_only_prediction():
    net = LstmNetwork(2, hidden_size=3, seed=0)
    for name in net.params:
        net.params[name][...] = 0.0
    net.params["fc.bias"][0] = 0.3
    for n in (1, 4, 9):
        y = lstm_predict(net, seeded_rng(n).normal(size=(n, 2)))
        assert np.ndim(y) == 0 and y == 0.3


def test_temporal_pool_is_order_free():
    seq = seeded_rng(6).normal(size=(9, 5))
    perm = seeded_rng(7).permutation(9)
    np.testing.assert_array_equal(temporal_max_pool(seq), temporal_max_pool(seq[perm]))


def test_input_width_error():
    net = LstmNetwork(3, hidden_size=2)
    with pytest.raises(ShapeError, match="layer 0"):
        stacked_forward(net, np.ones((5, 2)))


def _fd(net, x, target=0.2):
    pred = lstm_predict(net, x)
    grads = lstm_backward(net, x, float(huber_grad([pred], [target])[0]))
    numeric = central_difference(lambda: huber_loss([lstm_predict(net, x)], [target]), net.params)
    return max_relative_error(grads, numeric)


@pytest.mark.parametrize(
    "kwargs",
    [
        dict(hidden_size=5, n_layers=1, bidirectional=False),
        dict(hidden_size=3, n_layers=1, bidirectional=True),
        dict(hidden_size=3, n_layers=2, bidirectional=True),
    ],
    ids=["uni-h5", "bi-h3", "bi-2layer-h3"],
)
def test_bptt_matches_finite_differences(kwargs):
    net = LstmNetwork(4, seed=2, **kwargs)
    x = seeded_rng(8).normal(size=(7, 4))
    worst, where = _fd(net, x)
    assert worst < 1e-4, where


def test_zero_upstream_gives_zero_gradients():
    net = LstmNetwork(4, hidden_size=3, n_layers=2, seed=2)
    x = seeded_rng(8).normal(size=(7, 4))
    lstm_predict(net, x)
    assert all(not g.any() for g in lstm_backward(net, x, 0.0).values())


def test_backward_requires_trajectory():
    net = LstmNetwork(2, hidden_size=2)
    with pytest.raises(UsageError):
        lstm_backward(net, np.ones((3, 2)), 1.0)


def test_same_seed_same_network():
    a, b = LstmNetwork(2, hidden_size=4, seed=9), LstmNetwork(2, hidden_size=4, seed=9)
    x = seeded_rng(1).normal(size=(7, 2))
    assert all(np.array_equal(a.params[k], b.params[k]) for k in a.params)
    assert lstm_predict(a, x) == lstm_predict(b, x)


def test_batch_matches_single():
    net = LstmNetwork(2, hidden_size=4, n_layers=2, seed=3)
    X = seeded_rng(2).normal(size=(5, 7, 2))
    np.testing.assert_allclose(net.forward(X), [lstm_predict(net, x) for x in X], rtol=1e-12)


def test_records_round_trip():
    net = LstmNetwork(2, hidden_size=3, n_layers=2, seed=4)
    meta, tensors = net.to_records()
    net2 = LstmNetwork.from_records(meta, tensors)
    x = seeded_rng(1).normal(size=(7, 2))
    assert lstm_predict(net2, x) == lstm_predict(net, x)
