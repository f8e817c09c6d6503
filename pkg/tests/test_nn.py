"""Numerical substrate: LSTM cell, softmax losses, SGD, annealing, checker."""

import math

import numpy as np
import pytest

from cner.nn import (EpochRecord, Embedding, Linear, Lstm, Parameter,
                     SgdState, cross_entropy, grad_check, linear_softmax,
                     lstm_step, make_rng, maybe_anneal, sgd_step, sigmoid,
                     softmax, softmax_xent, uniform_init, zero_grads)


def reference_lstm_step(x, h_prev, c_prev, wx, wh, b):
    """Gate equations written out scalar-style, independent of the layer class."""
    d_h = h_prev.shape[1]
    z = x @ wx + h_prev @ wh + b
    i = 1.0 / (1.0 + np.exp(-z[:, 0 * d_h:1 * d_h]))
    f = 1.0 / (1.0 + np.exp(-z[:, 1 * d_h:2 * d_h]))
    g = np.tanh(z[:, 2 * d_h:3 * d_h])
    o = 1.0 / (1.0 + np.exp(-z[:, 3 * d_h:4 * d_h]))
    c = f * c_prev + i * g
    return o * np.tanh(c), c


def test_lstm_step_matches_reference():
    rng = make_rng(42)
    lstm = Lstm("l", 4, 4, rng, dtype=np.float64)
    x = rng.normal(size=(3, 4))
    h0 = rng.normal(size=(3, 4))
    c0 = rng.normal(size=(3, 4))
    h, c, _ = lstm.step(x, h0, c0)
    h_ref, c_ref = reference_lstm_step(x, h0, c0, lstm.wx.value,
                                       lstm.wh.value, lstm.b.value)
    np.testing.assert_allclose(h, h_ref, atol=1e-12)
    np.testing.assert_allclose(c, c_ref, atol=1e-12)


def test_lstm_step_function_matches_layer():
    rng = make_rng(1)
    lstm = Lstm("l", 3, 5, rng, dtype=np.float64)
    x = rng.normal(size=(2, 3))
    h0, c0 = lstm.initial_state(2)
    h_a, c_a, _ = lstm.step(x, h0, c0)
    h_b, c_b = lstm_step(x, h0, c0, lstm)
    np.testing.assert_allclose(h_a, h_b, atol=1e-12)
    np.testing.assert_allclose(c_a, c_b, atol=1e-12)


def test_lstm_forget_bias_starts_at_one():
    lstm = Lstm("l", 3, 4, make_rng(0))
    b = lstm.b.value
    assert (b[4:8] == 1.0).all()
    assert (b[:4] == 0.0).all() and (b[8:] == 0.0).all()


def test_lstm_dimension_errors_name_operands():
    lstm = Lstm("l", 3, 4, make_rng(0))
    with pytest.raises(ValueError, match="x"):
        lstm_step(np.zeros((2, 5)), *lstm.initial_state(2), lstm)
    with pytest.raises(ValueError, match="h_prev"):
        lstm_step(np.zeros((2, 3)), np.zeros((2, 9)), np.zeros((2, 4)), lstm)


def test_lstm_step_accepts_single_vectors():
    lstm = Lstm("l", 3, 4, make_rng(0))
    h, c = lstm_step(np.zeros(3), np.zeros(4), np.zeros(4), lstm)
    assert h.shape == (4,) and c.shape == (4,)


def test_sigmoid_stable_at_extremes():
    vals = sigmoid(np.array([-1e4, -50.0, 0.0, 50.0, 1e4]))
    assert np.all(np.isfinite(vals))
    assert vals[0] == 0.0 or vals[0] < 1e-300
    assert vals[2] == pytest.approx(0.5)
    assert vals[-1] == pytest.approx(1.0)


def test_softmax_closed_form():
    # logits ln1, ln2, ln3 with zero weights: probabilities 1/6, 2/6, 3/6
    b = np.log(np.array([1.0, 2.0, 3.0]))
    w = np.zeros((3, 2))
    probs = linear_softmax(np.zeros((1, 2)), w, b)
    np.testing.assert_allclose(probs[0], [1 / 6, 2 / 6, 3 / 6], atol=1e-12)


def test_softmax_rows_sum_to_one():
    rng = make_rng(2)
    probs = softmax(rng.normal(scale=30, size=(8, 11)))
    np.testing.assert_allclose(probs.sum(axis=1), np.ones(8), atol=1e-12)
    assert (probs > 0).all()


def test_cross_entropy_value():
    probs = np.array([0.1, 0.9])
    assert cross_entropy(probs, 0) == pytest.approx(2.302585, abs=1e-5)


def test_softmax_xent_agrees_with_composed_form():
    rng = make_rng(3)
    logits = rng.normal(size=(4, 6))
    targets = np.array([1, 5, 0, 2])
    loss, dlogits = softmax_xent(logits, targets)
    composed = sum(cross_entropy(softmax(logits[i:i + 1])[0], t)
                   for i, t in enumerate(targets))
    assert loss == pytest.approx(composed, abs=1e-10)
    # gradient of summed loss is softmax minus one-hot
    expected = softmax(logits)
    for i, t in enumerate(targets):
        expected[i, t] -= 1.0
    np.testing.assert_allclose(dlogits, expected, atol=1e-12)


def test_embedding_scatter_accumulates_repeated_ids():
    emb = Embedding("e", 5, 3, make_rng(4), dtype=np.float64)
    ids = np.array([2, 2, 4])
    dy = np.ones((3, 3))
    emb.backward(ids, dy)
    assert (emb.table.grad[2] == 2.0).all()
    assert (emb.table.grad[4] == 1.0).all()
    assert (emb.table.grad[0] == 0.0).all()
    with pytest.raises(ValueError):
        emb.forward(np.array([5]))


def test_sgd_scalar_update():
    p = Parameter("v", np.array([1.0]))
    p.grad[:] = 0.5
    sgd_step([p], lr=0.1)
    assert p.value[0] == pytest.approx(0.95)


def test_sgd_clip_halves_large_gradient():
    p = Parameter("v", np.zeros(4))
    p.grad[:] = 5.0  # norm 10
    norm = sgd_step([p], lr=1.0, clip_norm=5.0)
    assert norm == pytest.approx(10.0)
    np.testing.assert_allclose(p.value, -2.5 * np.ones(4), atol=1e-12)


def test_sgd_zero_gradient_is_identity():
    p = Parameter("v", np.array([3.0, -2.0]))
    sgd_step([p], lr=10.0, clip_norm=1.0)
    np.testing.assert_allclose(p.value, [3.0, -2.0])


def test_sgd_rejects_non_finite_gradient_by_name():
    p = Parameter("bad.weight", np.zeros(2))
    p.grad[:] = np.nan
    with pytest.raises(ValueError, match="bad.weight"):
        sgd_step([p], lr=0.1)


def test_anneal_sequence_twenty_to_five_to_one_and_a_quarter():
    state = SgdState(lr=20.0, anneal_factor=4.0, patience=1, mode="min")
    state = maybe_anneal(state, 5.0)   # first value is an improvement
    state = maybe_anneal(state, 6.0)   # plateau -> anneal
    assert state.lr == pytest.approx(5.0)
    state = maybe_anneal(state, 6.0)
    assert state.lr == pytest.approx(1.25)
    assert not state.stop


def test_anneal_requires_strict_improvement():
    state = SgdState(lr=1.0, anneal_factor=2.0, patience=1, mode="min")
    state = maybe_anneal(state, 5.0)
    state = maybe_anneal(state, 5.0)  # equal is not an improvement
    assert state.lr == pytest.approx(0.5)


def test_anneal_patience_counts_consecutive_epochs():
    state = SgdState(lr=8.0, anneal_factor=2.0, patience=2, mode="min")
    state = maybe_anneal(state, 5.0)
    state = maybe_anneal(state, 9.0)
    assert state.lr == pytest.approx(8.0)
    state = maybe_anneal(state, 4.0)  # improvement resets the counter
    state = maybe_anneal(state, 9.0)
    assert state.lr == pytest.approx(8.0)
    state = maybe_anneal(state, 9.0)
    assert state.lr == pytest.approx(4.0)


def test_anneal_stop_below_floor():
    state = SgdState(lr=2e-4, anneal_factor=4.0, patience=1, mode="min",
                     lr_floor=1e-4)
    state = maybe_anneal(state, 1.0)
    state = maybe_anneal(state, 2.0)
    assert state.lr == pytest.approx(5e-5)
    assert state.stop


def test_anneal_max_mode():
    state = SgdState(lr=1.0, anneal_factor=2.0, patience=1, mode="max")
    state = maybe_anneal(state, 0.8)
    state = maybe_anneal(state, 0.9)
    assert state.lr == pytest.approx(1.0)
    state = maybe_anneal(state, 0.85)
    assert state.lr == pytest.approx(0.5)


def test_lr_never_increases_across_a_run():
    state = SgdState(lr=4.0, anneal_factor=2.0, patience=1, mode="min")
    rng = make_rng(6)
    last = state.lr
    for value in rng.normal(size=50):
        state = maybe_anneal(state, float(value))
        assert state.lr <= last
        last = state.lr


def test_epoch_record_render():
    rec = EpochRecord(epoch=3, train_loss=1.25, dev_metric=0.5, lr=20.0)
    assert rec.render() == "epoch=3 train=1.250000 dev=0.500000 lr=20"


def test_grad_check_quadratic_closed_form():
    p = Parameter("theta", np.array([3.0]))

    def loss_fn():
        p.grad[:] += p.value
        return float(0.5 * p.value[0] ** 2)

    rel = grad_check(loss_fn, [p], eps=1e-4)
    assert rel < 1e-6
    assert p.value[0] == 3.0  # restored


def test_grad_check_flags_a_wrong_gradient():
    p = Parameter("theta", np.array([2.0]))

    def loss_fn():
        p.grad[:] += 2.0 * p.value  # deliberately doubled
        return float(0.5 * p.value[0] ** 2)

    assert grad_check(loss_fn, [p], eps=1e-4) > 0.4


def test_grad_check_eps_bounds():
    p = Parameter("theta", np.ones(1))
    with pytest.raises(ValueError):
        grad_check(lambda: 0.0, [p], eps=1e-6)
    with pytest.raises(ValueError):
        grad_check(lambda: 0.0, [p], eps=0.5)


def test_seeded_init_is_bit_reproducible():
    a = Lstm("l", 4, 6, make_rng(9))
    b = Lstm("l", 4, 6, make_rng(9))
    assert (a.wx.value == b.wx.value).all()
    assert (a.wh.value == b.wh.value).all()
    emb_a = Embedding("e", 10, 4, make_rng(9))
    emb_b = Embedding("e", 10, 4, make_rng(9))
    assert (emb_a.table.value == emb_b.table.value).all()


def test_uniform_init_bound():
    vals = uniform_init(make_rng(0), (200, 50), fan_in=50, dtype=np.float64)
    bound = math.sqrt(1.0 / 50)
    assert np.abs(vals).max() <= bound
    assert np.abs(vals).max() > 0.8 * bound  # actually fills the range


def test_lstm_sequence_gradients_f64():
    rng = make_rng(10)
    lstm = Lstm("l", 3, 4, rng, dtype=np.float64)
    out = Linear("out", 4, 3, rng, dtype=np.float64)
    xs = rng.normal(size=(6, 2, 3))
    targets = np.array([0, 2, 1, 1, 0, 2, 2, 0, 1, 0, 2, 1]).reshape(6, 2)
    params = lstm.parameters() + out.parameters()

    def loss_fn():
        hs, _, caches = lstm.forward(xs)
        logits = out.forward(hs.reshape(-1, 4))
        loss, dlogits = softmax_xent(logits, targets.reshape(-1))
        n = targets.size
        dh = out.backward(hs.reshape(-1, 4), dlogits / n).reshape(hs.shape)
        lstm.backward(caches, dh)
        return loss / n

    rel = grad_check(loss_fn, params, eps=1e-4, num_samples=80)
    assert rel < 1e-5
