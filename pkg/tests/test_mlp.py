import numpy as np
import pytest

from flexcodesign.errors import DataError, UsageError
from flexcodesign.gating import GateLayer, sample_gates
from flexcodesign.mlp import (AdamState, TrainConfig, adam_step, backward, evaluate, forward, init_model,
                              load_checkpoint, predict, quantize_input, quantize_weights, save_checkpoint,
                              total_loss, train)
from flexcodesign.signal import WindowSet, candidate_entries

from oracles import max_rel_fd_error, separable_data, small_problem


def test_init():
    a, b = init_model(4, 100, 2, seed=3), init_model(4, 100, 2, seed=3)
    for k in ("W1", "b1", "W2", "b2"):
        np.testing.assert_array_equal(getattr(a, k), getattr(b, k))
        np.testing.assert_array_equal(getattr(a, k), a.init_snapshot[k])
    assert sum(v.size for v in a.params().values()) == 702
    with pytest.raises(ValueError):
        a.init_snapshot["W1"][0, 0] = 1.0


def test_forward_uniform_and_normalized():
    m = init_model(5, 7, 3)
    m.W1[:] = 0
    m.W2[:] = 0
    probs, _ = forward(m, np.random.default_rng(0).uniform(size=(4, 5)))
    np.testing.assert_allclose(probs, 1 / 3)
    m = init_model(5, 7, 3, seed=1)
    probs, _ = forward(m, np.random.default_rng(1).normal(size=(50, 5)) * 10)
    np.testing.assert_allclose(probs.sum(axis=1), 1.0, atol=1e-12)


def test_zero_input_depends_only_on_bias():
    a, b = init_model(3, 4, 2, seed=0), init_model(3, 4, 2, seed=9)
    for m in (a, b):
        m.b1[:] = 0.1
        m.b2[:] = [0.3, -0.2]
        m.W2[:] = 1.0
    pa, _ = forward(a, np.zeros((1, 3)))
    pb, _ = forward(b, np.zeros((1, 3)))
    np.testing.assert_allclose(pa, pb)


def test_loss_closed_forms():
    assert total_loss(np.array([[1.0, 0.0], [0.0, 1.0]]), [0, 1]) == pytest.approx(0.0)
    assert total_loss(np.full((3, 4), 0.25), [0, 1, 2]) == pytest.approx(np.log(4))
    layer = GateLayer([0.3, -1.0], [1.0, 2.0], lam=0.4)
    probs = np.array([[0.7, 0.3]])
    base = total_loss(probs, [0])
    from flexcodesign.gating import cost_loss
    assert total_loss(probs, [0], layer) - base == pytest.approx(0.4 * cost_loss(layer), abs=1e-15)


def test_full_gradient_matches_finite_difference():
    model, layer, X, y, u = small_problem()
    assert max_rel_fd_error(model, layer, X, y, u) <= 1e-4


def test_masked_and_warmup_gradients():
    model, layer, X, y, u = small_problem()
    model.mask["W1"][0, :] = 0
    model.W1[0, :] = 0
    layer.warmup_epochs = 2
    s = sample_gates(layer, u=u)
    _, cache = forward(model, X, sample=s)
    early = backward(model, layer, cache, y, epoch=0)
    late = backward(model, layer, cache, y, epoch=2)
    assert np.all(early["W1"][0] == 0)
    assert np.all(early["log_alpha"] == 0)
    assert np.any(late["log_alpha"] != 0)
    for k in ("W1", "b1", "W2", "b2"):
        np.testing.assert_array_equal(early[k], late[k])


def test_stale_cache_rejected():
    model, layer, X, y, u = small_problem()
    _, cache = forward(model, X)
    model.set_params(model.params())
    with pytest.raises(UsageError):
        backward(model, layer, cache, y)


def test_adam_fixed_point_and_first_step():
    p = {"w": np.array([1.0, -2.0, 3.0])}
    adam_step(p, {"w": np.zeros(3)}, AdamState(), 0.1)
    np.testing.assert_array_equal(p["w"], [1.0, -2.0, 3.0])
    adam_step(p, {"w": np.array([0.5, -3.0, 1e-3])}, AdamState(), 0.1)
    np.testing.assert_allclose(p["w"], [0.9, -1.9, 2.9], atol=1e-6)


def test_adam_keeps_masked_zero():
    p = {"W1": np.array([0.0, 1.0])}
    st = AdamState()
    for _ in range(20):
        adam_step(p, {"W1": np.array([1.0, 1.0])}, st, 0.1, masks={"W1": np.array([0.0, 1.0])})
        assert p["W1"][0] == 0.0


def test_train_separable():
    X, y = separable_data()
    cfg = TrainConfig(epochs=50, lr=1e-2, patience=0, hidden=16)
    model, _, hist = train(init_model(4, 16, 2), None, X, y, cfg=cfg)
    assert len(hist) == 50
    assert np.mean(predict(model, X) == y) >= 0.99


def test_train_early_stop_bounds_history():
    X, y = separable_data(seed=1)
    cfg = TrainConfig(epochs=30, patience=2, lr=1e-2)
    _, _, hist = train(init_model(4, 8, 2), None, X[:200], y[:200], X[200:], y[200:], cfg=cfg)
    assert len(hist) <= 30


def test_train_deterministic_and_empty():
    X, y = separable_data(n=100)
    cfg = TrainConfig(epochs=3, patience=0)
    layer_a, layer_b = GateLayer.create(np.ones(4), lam=0.1), GateLayer.create(np.ones(4), lam=0.1)
    a, la, _ = train(init_model(4, 8, 2), layer_a, X, y, cfg=cfg)
    b, lb, _ = train(init_model(4, 8, 2), layer_b, X, y, cfg=cfg)
    np.testing.assert_array_equal(a.W1, b.W1)
    np.testing.assert_array_equal(la.log_alpha, lb.log_alpha)
    with pytest.raises(DataError):
        train(init_model(4, 8, 2), None, X[:0], y[:0], cfg=cfg)


def test_quantization():
    m = init_model(4, 6, 2, seed=2)
    q = quantize_weights(m, 8)
    for k in ("W1", "W2"):
        w = getattr(m, k)
        assert np.abs(q.q[k]).max() == 127
        assert q.q[k].flat[np.argmax(np.abs(w))] == 127 * np.sign(w.flat[np.argmax(np.abs(w))])
        assert np.all(np.abs(getattr(q, k) - w) <= q.scale[k] / 2 + 1e-15)
    assert quantize_input(0.5, 4) == pytest.approx(8 / 15)


def _ws(X, labels):
    n = len(labels)
    return WindowSet(("ch0",), 0.25, X.reshape(n, 1, -1), labels, ["s"] * n)


def test_evaluate_examples():
    ws = _ws(np.random.default_rng(0).uniform(size=(10, 4)), np.zeros(10, dtype=int))
    d = len(candidate_entries(ws.channels))
    m = init_model(d, 4, 2)
    m.W2[:] = 0
    m.b2[:] = [1.0, 0.0]
    layer = GateLayer.create(np.ones(d), frozen_mask=np.ones(d))
    assert evaluate(m, layer, ws)[0] == 1.0
    with pytest.raises(UsageError):
        evaluate(m, GateLayer.create(np.ones(d)), ws)


def test_empty_mask_is_bias_only():
    rng = np.random.default_rng(1)
    ws = _ws(rng.uniform(size=(30, 4)), rng.integers(0, 2, 30))
    d = len(candidate_entries(ws.channels))
    m = init_model(d, 4, 2, seed=5)
    m.b1[:] = rng.normal(size=4)
    m.b2[:] = rng.normal(size=2)
    layer = GateLayer.create(np.ones(d), frozen_mask=np.zeros(d))
    for path in ("ideal", "analog"):
        acc, preds = evaluate(m, layer, ws, path=path)
        bias_pred = predict(m, np.zeros((1, d)))[0]
        assert np.all(preds == bias_pred)
        assert acc == np.mean(ws.labels == bias_pred)


def test_checkpoint_round_trip(tmp_path):
    model, layer, *_ = small_problem()
    layer.frozen_mask = np.array([1, 0, 1, 1, 0, 1], dtype=float)
    q = quantize_weights(model)
    save_checkpoint(tmp_path / "c.npz", model, layer, q, meta={"fold": 0})
    m2, l2, q2, header = load_checkpoint(tmp_path / "c.npz")
    for k in ("W1", "b1", "W2", "b2"):
        np.testing.assert_array_equal(getattr(model, k), getattr(m2, k))
    np.testing.assert_array_equal(l2.frozen_mask, layer.frozen_mask)
    np.testing.assert_array_equal(q2.W1, q.W1)
    assert header["meta"] == {"fold": 0} and header["arch"]["H"] == 8
