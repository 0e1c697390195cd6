import numpy as np
import pytest

from conftest import conv1d_oracle, make_sign_dataset
from mhapgraph.dataset import MTSDataset, MTSSample
from mhapgraph.nn import (
    CNNConfig,
    TrainedCNN,
    _conv1d_batch,
    batch_activations,
    forward_with_activations,
    init_weights,
    load_checkpoint,
    loss_and_grads,
    predict,
    receptive_field,
    save_checkpoint,
    train_cnn,
)


def _random_model(conv_layers, d, T, C=2, seed=0) -> TrainedCNN:
    cfg = CNNConfig(conv_layers=conv_layers, epochs=1, seed=seed)
    weights = init_weights(cfg, d, C, np.random.default_rng(seed))
    return TrainedCNN(weights=weights, cfg=cfg, d=d, T=T, C=C, rf=cfg.rf_table())


# ---------------------------------------------------------------------------
# architecture arithmetic


def test_layer_lengths_and_validity():
    cfg = CNNConfig(conv_layers=((4, 8), (4, 5), (4, 3)))
    assert cfg.layer_lengths(14) == [7, 3, 1]
    with pytest.raises(ValueError):
        cfg.layer_lengths(13)


def test_gap_width_equals_last_filter_count():
    model = _random_model(((3, 3), (5, 2)), d=2, T=10)
    probs, acts = forward_with_activations(model, MTSSample(values=np.ones((2, 10)), label=0))
    assert acts[-1].values.shape[0] == 5
    assert probs.shape == (2,)


def test_rf_table():
    cfg = CNNConfig(conv_layers=((4, 5), (4, 3)))
    assert cfg.rf_table() == [(5, 1), (7, 1)]


# ---------------------------------------------------------------------------
# forward correctness


def test_forward_matches_bruteforce_convolution():
    rng = np.random.default_rng(42)
    model = _random_model(((3, 4), (2, 3)), d=2, T=20, seed=5)
    x = rng.normal(size=(2, 20))
    _, acts = forward_with_activations(model, MTSSample(values=x, label=0))
    W0, b0 = model.weights.conv[0]
    expect0 = np.maximum(conv1d_oracle(x, W0, b0), 0.0)
    assert np.max(np.abs(acts[0].values - expect0)) <= 1e-6
    W1, b1 = model.weights.conv[1]
    expect1 = np.maximum(conv1d_oracle(expect0, W1, b1), 0.0)
    assert np.max(np.abs(acts[1].values - expect1)) <= 1e-6


def test_zero_input_zero_bias_gives_zero_activations():
    model = _random_model(((4, 3), (4, 2)), d=2, T=12)
    _, acts = forward_with_activations(model, MTSSample(values=np.zeros((2, 12)), label=0))
    for a in acts:
        assert np.all(a.values == 0.0)


def test_probs_sum_to_one():
    rng = np.random.default_rng(0)
    model = _random_model(((4, 3), (4, 2)), d=3, T=16, C=5)
    for _ in range(5):
        probs, _ = forward_with_activations(
            model, MTSSample(values=rng.normal(size=(3, 16)), label=0)
        )
        assert abs(probs.sum() - 1.0) <= 1e-9
        assert np.all(probs >= 0)


def test_shape_mismatch_errors():
    model = _random_model(((4, 3), (4, 2)), d=2, T=12)
    with pytest.raises(ValueError):
        forward_with_activations(model, MTSSample(values=np.zeros((3, 12)), label=0))


# ---------------------------------------------------------------------------
# receptive fields


def test_receptive_field_examples():
    model = _random_model(((4, 5), (4, 3)), d=1, T=30)
    # second layer spans 1 + 4 + 2 = 7 input steps
    for j in (0, 3, 10):
        assert receptive_field(model, 2, j) == (j, j + 6)
    assert receptive_field(model, 1, 0) == (0, 4)
    with pytest.raises(IndexError):
        receptive_field(model, 3, 0)
    with pytest.raises(IndexError):
        receptive_field(model, 1, 26)


def test_receptive_field_perturbation_oracle():
    """Out-of-window input perturbations leave the activation bit-identical;
    in-window perturbations change it (positive weights keep ReLU alive)."""
    rng = np.random.default_rng(11)
    model = _random_model(((3, 5), (3, 3), (2, 2)), d=2, T=24)
    model.weights.conv = [
        (np.abs(W) + 0.05, b + 0.01) for W, b in model.weights.conv
    ]
    x = np.abs(rng.normal(size=(2, 24))) + 0.1
    _, base = batch_activations(model, x[None])
    lengths = model.layer_lengths()
    for trial in range(100):
        layer = int(rng.integers(1, 4))
        neuron = int(rng.integers(0, lengths[layer - 1]))
        a, b = receptive_field(model, layer, neuron)
        channel = int(rng.integers(0, 2))
        outside = [t for t in range(24) if not a <= t <= b]
        t_out = outside[int(rng.integers(0, len(outside)))] if outside else None
        t_in = int(rng.integers(a, b + 1))

        if t_out is not None:
            xp = x.copy()
            xp[channel, t_out] += 1.0
            _, acts = batch_activations(model, xp[None])
            assert np.array_equal(acts[layer - 1][0, :, neuron], base[layer - 1][0, :, neuron])

        xp = x.copy()
        xp[channel, t_in] += 1.0
        _, acts = batch_activations(model, xp[None])
        assert not np.array_equal(acts[layer - 1][0, :, neuron], base[layer - 1][0, :, neuron])


# ---------------------------------------------------------------------------
# gradients


def test_gradient_check_tiny_network():
    """Analytic vs central finite differences (h=1e-4) on every weight.

    Biases are randomized and the kink margin is checked so that no ReLU
    pre-activation sits within the finite-difference step of zero (central
    differences are meaningless exactly at the kink).
    """
    rng = np.random.default_rng(7)
    cfg = CNNConfig(conv_layers=((2, 3), (2, 2)), seed=7)
    weights = init_weights(cfg, 1, 2, rng)
    for _, b in weights.conv:
        b += rng.normal(0.0, 0.3, size=b.shape)
    weights.dense_b += rng.normal(0.0, 0.3, size=weights.dense_b.shape)
    X = rng.normal(size=(4, 1, 8))
    y = np.array([0, 1, 1, 0])
    h = 1e-4

    hidden = X
    for W, b in weights.conv:
        z = _conv1d_batch(hidden, W, b)
        assert np.abs(z).min() > 10 * h
        hidden = np.maximum(z, 0.0)

    _, grads = loss_and_grads(weights, X, y)

    def loss_of(w):
        return loss_and_grads(w, X, y)[0]

    for (name, arr), (_, g) in zip(weights.flat(), grads.flat()):
        it = np.nditer(arr, flags=["multi_index"])
        while not it.finished:
            idx = it.multi_index
            orig = arr[idx]
            arr[idx] = orig + h
            up = loss_of(weights)
            arr[idx] = orig - h
            down = loss_of(weights)
            arr[idx] = orig
            fd = (up - down) / (2 * h)
            denom = max(abs(fd), abs(g[idx]), 1e-8)
            assert abs(fd - g[idx]) / denom <= 1e-4, f"{name}{idx}: fd={fd} analytic={g[idx]}"
            it.iternext()


# ---------------------------------------------------------------------------
# training


def _split(ds: MTSDataset, n_val: int):
    n = len(ds)
    return ds.subset(range(n - n_val)), ds.subset(range(n - n_val, n))


def test_train_learnable_synthetic_default_cfg(sign_dataset):
    train, val = _split(sign_dataset, 50)
    model = train_cnn(train, val, CNNConfig(seed=1))
    assert model.best_val_accuracy >= 0.95
    assert model.train_loss_history[1] < model.train_loss_history[0]
    _, acc = predict(model, val)
    assert acc >= 0.95


def test_train_deterministic_bitwise(tmp_path):
    ds = make_sign_dataset(40, T=14, seed=2)
    train, val = _split(ds, 10)
    cfg = CNNConfig(conv_layers=((4, 5), (4, 3)), epochs=3, seed=9)
    m1 = train_cnn(train, val, cfg)
    m2 = train_cnn(train, val, cfg)
    for (_, a), (_, b) in zip(m1.weights.flat(), m2.weights.flat()):
        assert np.array_equal(a, b)
    save_checkpoint(m1, tmp_path / "a.bin")
    save_checkpoint(m2, tmp_path / "b.bin")
    assert (tmp_path / "a.bin").read_bytes() == (tmp_path / "b.bin").read_bytes()


def test_train_rejects_invalid_architecture():
    ds = make_sign_dataset(20, T=13, seed=0)
    train, val = _split(ds, 5)
    with pytest.raises(ValueError):
        train_cnn(train, val, CNNConfig(conv_layers=((4, 8), (4, 5), (4, 3)), epochs=1))


def test_train_shape_mismatch():
    a = make_sign_dataset(20, T=14, seed=0)
    b = make_sign_dataset(20, T=16, seed=0)
    with pytest.raises(ValueError):
        train_cnn(a, b, CNNConfig(conv_layers=((4, 5), (4, 3)), epochs=1))


# ---------------------------------------------------------------------------
# predict


def test_predict_perfect_and_tie_rule():
    ds = make_sign_dataset(10, T=10, seed=1)
    model = _random_model(((3, 3), (3, 2)), d=2, T=10)
    # zero dense weights -> uniform probabilities -> argmax tie -> class 0
    model.weights.dense_w[:] = 0.0
    model.weights.dense_b[:] = 0.0
    labels, acc = predict(model, ds)
    assert np.all(labels == 0)
    assert acc == pytest.approx(np.mean(ds.labels() == 0))


def test_checkpoint_round_trip(tmp_path, sign_dataset):
    train, val = _split(sign_dataset, 50)
    cfg = CNNConfig(conv_layers=((4, 5), (4, 3)), epochs=2, seed=4)
    model = train_cnn(train, val, cfg)
    save_checkpoint(model, tmp_path / "ckpt.bin", parent_sha256="abc")
    back = load_checkpoint(tmp_path / "ckpt.bin")
    assert back.cfg == model.cfg
    assert (back.d, back.T, back.C) == (model.d, model.T, model.C)
    for (_, a), (_, b) in zip(model.weights.flat(), back.weights.flat()):
        assert np.allclose(a, b, atol=1e-6)  # float32 storage
    # predictions agree on the training data
    l1, _ = predict(model, train)
    l2, _ = predict(back, train)
    assert (l1 == l2).mean() >= 0.95
