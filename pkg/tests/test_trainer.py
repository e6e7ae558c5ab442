import json
import math

import numpy as np
import pytest

from conftest import blobs, small_model
from microquant.io import load_model
from microquant.netgraph import Dense, Flatten, ModelSpec, forward, init_weights
from microquant.trainer import (AdamState, PlateauScheduler, TrainConfig, adam_step, backward,
                                cross_entropy_loss, fit, one_hot, reduce_lr_on_plateau)


def numeric_gradients(spec, x, y, h=1e-4):
    """Central finite differences of the mean cross-entropy loss."""
    def loss_of(s):
        return cross_entropy_loss(forward(s, x), y)

    grads = []
    for li, w in enumerate(spec.weights):
        if w is None:
            grads.append(None)
            continue
        pair = []
        for ti in range(2):
            g = np.zeros_like(w[ti])
            for idx in np.ndindex(w[ti].shape):
                tensors = [w[0].copy(), w[1].copy()]
                orig = tensors[ti][idx]
                tensors[ti][idx] = orig + h
                plus = loss_of(_replace(spec, li, tensors))
                tensors[ti][idx] = orig - h
                minus = loss_of(_replace(spec, li, tensors))
                g[idx] = (plus - minus) / (2 * h)
            pair.append(g)
        grads.append(tuple(pair))
    return grads


def _replace(spec, li, pair):
    weights = list(spec.weights)
    weights[li] = tuple(pair)
    return spec.with_weights(weights)


def max_relative_error(analytic, numeric):
    worst = 0.0
    for a_pair, n_pair in zip(analytic, numeric):
        if a_pair is None:
            continue
        for a, n in zip(a_pair, n_pair):
            denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), 1e-8)
            worst = max(worst, float((np.abs(a - n) / denom).max()))
    return worst


def test_cross_entropy_examples():
    one = np.zeros(24)
    one[3] = 1.0
    assert cross_entropy_loss(one, one) == 0.0
    uniform = np.full(24, 1 / 24)
    assert cross_entropy_loss(uniform, one) == pytest.approx(math.log(24), abs=1e-9)
    assert math.log(24) == pytest.approx(3.17805, abs=1e-5)
    batch = cross_entropy_loss(np.stack([one, uniform]), np.stack([one, one]))
    assert batch == pytest.approx(1.58903, abs=1e-5)


def test_cross_entropy_floor_and_errors():
    p = np.array([[1.0, 0.0]])
    assert cross_entropy_loss(p, [[0.0, 1.0]]) == pytest.approx(-math.log(1e-12))
    with pytest.raises(ValueError):
        cross_entropy_loss(p, [[0.5, 0.5]])
    with pytest.raises(ValueError):
        cross_entropy_loss(p, [[1.0, 0.0, 0.0]])
    with pytest.raises(ValueError):
        cross_entropy_loss([[0.2, 0.2]], [[1.0, 0.0]])


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_gradients_match_finite_differences(seed):
    spec = small_model(seed)
    rng = np.random.default_rng(seed + 50)
    x = rng.random((4, 6, 6, 1))
    y = one_hot(rng.integers(0, 3, size=4), 3).astype(np.float64)
    _, analytic = backward(spec, x, y)
    assert max_relative_error(analytic, numeric_gradients(spec, x, y)) < 1e-3


def test_zero_weight_dense_softmax_gradient():
    spec = ModelSpec((2, 2, 1), [Flatten(), Dense(4, 5, "softmax")],
                     [None, (np.zeros((4, 5)), np.zeros(5))])
    x = np.random.default_rng(0).random((3, 2, 2, 1))
    labels = np.array([0, 4, 2])
    y = one_hot(labels, 5).astype(np.float64)
    _, grads = backward(spec, x, y)
    d_logits = (np.full((3, 5), 0.2) - y) / 3
    np.testing.assert_allclose(grads[1][1], d_logits.sum(axis=0), atol=1e-12)
    np.testing.assert_allclose(grads[1][0], x.reshape(3, -1).T @ d_logits, atol=1e-12)


def test_duplicated_sample_gradient():
    spec = small_model(4)
    x = np.random.default_rng(1).random((1, 6, 6, 1))
    y = one_hot([2], 3).astype(np.float64)
    _, single = backward(spec, x, y)
    _, double = backward(spec, np.concatenate([x, x]), np.concatenate([y, y]))
    for a, b in zip(single, double):
        if a is not None:
            np.testing.assert_allclose(a[0], b[0], atol=1e-12)
            np.testing.assert_allclose(a[1], b[1], atol=1e-12)


def test_backward_requires_softmax_head():
    spec = init_weights(ModelSpec((2, 2, 1), [Flatten(), Dense(4, 2)]))
    with pytest.raises(ValueError):
        backward(spec, np.zeros((1, 2, 2, 1)), [[1.0, 0.0]])


def test_adam_zero_gradient_is_noop():
    w = [np.array([1.5, -2.0])]
    new, state = adam_step(w, [np.zeros(2)], AdamState.zeros_like(w), TrainConfig())
    np.testing.assert_array_equal(new[0], w[0])
    assert state.t == 1


@pytest.mark.parametrize("g, delta", [(1.0, -0.001 / (1 + 1e-7)), (-0.5, 0.001 / (1 + 2e-7))])
def test_adam_first_step(g, delta):
    w = [np.array([0.0])]
    new, state = adam_step(w, [np.array([g])], AdamState.zeros_like(w), TrainConfig())
    # m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
    assert new[0][0] == pytest.approx(delta, rel=1e-9)
    assert state.t == 1
    np.testing.assert_allclose(state.m[0], [0.1 * g])
    np.testing.assert_allclose(state.v[0], [0.001 * g * g])


def test_adam_state_counts_steps():
    w = [np.zeros(3)]
    state = AdamState.zeros_like(w)
    for _ in range(4):
        w, state = adam_step(w, [np.ones(3)], state, TrainConfig())
    assert state.t == 4


@pytest.mark.parametrize("history, expected", [
    ([0.5, 0.6, 0.7], 0.001),
    ([0.7] * 6, 0.0002),
    ([0.7] * 11, 0.00004),
    ([0.7] * 5, 0.001),
    ([0.5] * 5 + [0.6] + [0.6] * 4, 0.001),
    ([0.5] * 5 + [0.6] + [0.6] * 5, 0.0002),
])
def test_reduce_lr_on_plateau(history, expected):
    assert reduce_lr_on_plateau(history, TrainConfig()) == pytest.approx(expected, rel=1e-12)


def test_plateau_counter_resets_on_improvement():
    sched = PlateauScheduler(1.0, 0.5, 2)
    rates = [sched.step(v) for v in [0.1, 0.1, 0.2, 0.2, 0.2]]
    assert rates == [1.0, 1.0, 1.0, 1.0, 0.5]


def test_train_config_validation():
    with pytest.raises(ValueError):
        TrainConfig(plateau_factor=1.0)
    with pytest.raises(ValueError):
        TrainConfig(plateau_patience=0)


def test_fit_zero_lr_leaves_weights():
    spec = small_model(0, classes=2, dtype=np.float32)
    x, y = blobs(10)
    res = fit(spec, (x, y), (x[:4], y[:4]), TrainConfig(learning_rate=0.0, epochs=1))
    assert len(res.history) == 1
    for a, b in zip(spec.tensors(), res.model.tensors()):
        np.testing.assert_array_equal(a, b)


def test_fit_separable_blobs():
    spec = small_model(1, classes=2, dtype=np.float32)
    x, y = blobs(40)
    res = fit(spec, (x, y), None, TrainConfig(epochs=20, batch_size=8, seed=3))
    assert res.history[-1].train_accuracy >= 0.99
    assert res.history[9].loss < res.history[0].loss
    # the returned weights are the best checkpoint
    assert res.best_val_accuracy == max(h.val_accuracy for h in res.history)


def test_fit_returns_best_checkpoint(tmp_path):
    spec = small_model(2, classes=2, dtype=np.float32)
    x, y = blobs(30, seed=1)
    vx, vy = blobs(10, seed=2)
    ckpt = tmp_path / "best.tqm"
    res = fit(spec, (x, y), (vx, vy), TrainConfig(epochs=6, batch_size=8, seed=1,
                                                   checkpoint_path=str(ckpt)))
    best = max(h.val_accuracy for h in res.history)
    acc = float(np.mean(np.argmax(forward(res.model, vx), axis=1) == vy))
    assert acc == pytest.approx(best)
    sidecar = json.loads((tmp_path / "best.tqm.json").read_text())
    assert sidecar["val_accuracy"] == pytest.approx(best)
    assert sidecar["epoch"] == res.best_epoch
    on_disk = load_model(ckpt)
    for a, b in zip(on_disk.tensors(), res.model.tensors()):
        np.testing.assert_array_equal(a, b)


def test_fit_empty_val_monitors_train():
    spec = small_model(3, classes=2, dtype=np.float32)
    x, y = blobs(10)
    res = fit(spec, (x, y), (x[:0], y[:0]), TrainConfig(epochs=3))
    assert all(math.isnan(h.val_accuracy) for h in res.history)
    assert res.best_val_accuracy == max(h.train_accuracy for h in res.history)


def test_fit_deterministic():
    x, y = blobs(20)
    runs = [fit(small_model(5, 2, np.float32), (x, y), None, TrainConfig(epochs=3, seed=9))
            for _ in range(2)]
    assert runs[0].history == runs[1].history
    for a, b in zip(runs[0].model.tensors(), runs[1].model.tensors()):
        np.testing.assert_array_equal(a, b)


def test_fit_rejects_empty_training_set():
    x, y = blobs(2)
    with pytest.raises(ValueError):
        fit(small_model(), (x[:0], y[:0]))
