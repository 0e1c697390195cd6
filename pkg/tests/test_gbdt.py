import numpy as np
import pytest

from mhapgraph.gbdt import (
    GBDTConfig,
    GBDTModel,
    evaluate,
    fit,
    load_model,
    predict,
    save_model,
    softmax_loss,
)


def _separable(n=100, seed=0):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 4))
    y = (X[:, 1] > 0.0).astype(np.int64)
    return X, y


# ---------------------------------------------------------------------------
# loss


def test_softmax_gradient_matches_finite_differences():
    rng = np.random.default_rng(1)
    scores = rng.normal(size=(5, 3))
    y = np.array([0, 2, 1, 1, 0])
    _, grad, hess = softmax_loss(scores, y)
    h = 1e-6
    for i in range(5):
        for c in range(3):
            orig = scores[i, c]
            scores[i, c] = orig + h
            up = softmax_loss(scores, y)[0]
            scores[i, c] = orig - h
            down = softmax_loss(scores, y)[0]
            scores[i, c] = orig
            # softmax_loss is a mean over samples; per-element grad is unscaled
            fd = (up - down) / (2 * h) * 5
            assert abs(fd - grad[i, c]) / max(abs(grad[i, c]), 1e-8) <= 1e-5
    assert np.all(hess >= 0.0)


# ---------------------------------------------------------------------------
# fitting


def test_separable_reaches_perfect_training_accuracy():
    X, y = _separable()
    model = fit(X, y, GBDTConfig(rounds=100, seed=0))
    assert evaluate(model, X, y) == 1.0
    _, labels = predict(model, X)
    assert np.array_equal(labels, y)


def test_training_loss_monotone():
    X, y = _separable(60, seed=3)
    model = fit(X, y, GBDTConfig(rounds=50, seed=0))
    diffs = np.diff(model.train_loss_history)
    assert np.all(diffs <= 1e-9)
    assert len(model.train_loss_history) == 51


def test_constant_features_predict_prior_argmax():
    X = np.ones((12, 3))
    y = np.array([0] * 8 + [1] * 4)
    model = fit(X, y, GBDTConfig(rounds=10, seed=0))
    _, labels = predict(model, np.ones((5, 3)))
    assert np.all(labels == 0)


def test_fit_deterministic():
    X, y = _separable(40, seed=5)
    m1 = fit(X, y, GBDTConfig(rounds=20, seed=7))
    m2 = fit(X, y, GBDTConfig(rounds=20, seed=7))
    assert m1.train_loss_history == m2.train_loss_history
    p1, _ = predict(m1, X)
    p2, _ = predict(m2, X)
    assert np.array_equal(p1, p2)


def test_multiclass_three_classes():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(90, 3))
    y = np.argmax(X, axis=1)
    model = fit(X, y, GBDTConfig(rounds=60, seed=0))
    assert evaluate(model, X, y) >= 0.95
    probs, _ = predict(model, X)
    assert probs.shape == (90, 3)


def test_fit_input_validation():
    X, y = _separable(10)
    with pytest.raises(ValueError):
        fit(X, np.zeros(10, dtype=int), GBDTConfig())  # single class
    bad = X.copy()
    bad[0, 0] = np.nan
    with pytest.raises(ValueError):
        fit(bad, y, GBDTConfig())
    with pytest.raises(ValueError):
        fit(X[:1], y[:1], GBDTConfig())
    with pytest.raises(ValueError):
        GBDTConfig(rounds=0).validate()


# ---------------------------------------------------------------------------
# prediction


def test_probabilities_sum_to_one():
    X, y = _separable(30, seed=4)
    model = fit(X, y, GBDTConfig(rounds=10, seed=0))
    probs, _ = predict(model, X)
    assert np.allclose(probs.sum(axis=1), 1.0, atol=1e-9)
    assert np.all(probs >= 0.0)


def test_zero_round_model_uniform():
    model = GBDTModel(trees=[], n_features=3, n_classes=4, cfg=GBDTConfig())
    probs, labels = predict(model, np.random.default_rng(0).normal(size=(6, 3)))
    assert np.allclose(probs, 0.25)
    assert np.all(labels == 0)  # argmax tie -> lowest class


def test_predict_width_mismatch():
    X, y = _separable(20)
    model = fit(X, y, GBDTConfig(rounds=5, seed=0))
    with pytest.raises(ValueError):
        predict(model, np.zeros((3, 7)))


# ---------------------------------------------------------------------------
# evaluate


def test_evaluate_trivial_cases():
    X, y = _separable(10, seed=6)
    model = fit(X, y, GBDTConfig(rounds=50, seed=0))
    assert evaluate(model, X, y) == 1.0
    assert evaluate(model, X, (y + 1) % 2) == 0.0
    half = np.concatenate([y[:5], (y[5:] + 1) % 2])
    assert evaluate(model, X, half) == 0.5
    with pytest.raises(ValueError):
        evaluate(model, X, y[:-1])


# ---------------------------------------------------------------------------
# serialization


def test_model_file_round_trip(tmp_path):
    X, y = _separable(50, seed=8)
    model = fit(X, y, GBDTConfig(rounds=12, max_depth=2, seed=3))
    path = tmp_path / "model.txt"
    save_model(model, path, parent_sha256="dead")
    text = path.read_text()
    assert text.startswith("# gbdt-model v1")
    assert "parent_sha256=dead" in text
    back = load_model(path)
    assert back.cfg == model.cfg
    assert (back.n_features, back.n_classes) == (model.n_features, model.n_classes)
    p1, _ = predict(model, X)
    p2, _ = predict(back, X)
    assert np.array_equal(p1, p2)
