"""Deterministic 1D-CNN: valid (unpadded) stride-1 convolutions with ReLU,
global average pooling and a dense softmax head, trained with momentum SGD.

Everything runs in float64 on numpy; given identical data, config and seed,
two training runs produce bitwise-identical weights. Post-ReLU activation
tensors of every conv layer are exposed for downstream analysis, and
receptive fields are exact: with stride 1 and no padding, the neuron at
index n of layer l (1-based) sees input columns [n, n + rf_length(l) - 1]
where rf_length(l) = 1 + sum_{i<=l} (kernel_i - 1).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .container import read_container, write_container
from .dataset import MTSDataset, MTSSample

DEFAULT_CONV_LAYERS = ((32, 8), (64, 5), (128, 3))


@dataclass
class CNNConfig:
    """Architecture and optimizer settings; stride is 1 and padding none."""

    conv_layers: tuple[tuple[int, int], ...] = DEFAULT_CONV_LAYERS  # (filters, kernel)
    epochs: int = 500
    batch_size: int = 16
    learning_rate: float = 1e-3
    momentum: float = 0.9
    seed: int = 0

    def validate(self) -> None:
        if len(self.conv_layers) < 2:
            raise ValueError("need at least two conv layers")
        for f, k in self.conv_layers:
            if f < 1:
                raise ValueError(f"filter count {f} must be >= 1")
            if k < 2:
                raise ValueError(f"kernel width {k} must be >= 2")
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise ValueError("epochs, batch_size must be >= 1 and learning_rate > 0")

    def layer_lengths(self, T: int) -> list[int]:
        """Output length per conv layer: L_l = L_{l-1} - k_l + 1."""
        lengths = []
        length = T
        for _, k in self.conv_layers:
            length = length - k + 1
            if length < 1:
                raise ValueError(
                    f"kernel widths {[k for _, k in self.conv_layers]} do not fit T={T}"
                )
            lengths.append(length)
        return lengths

    def rf_table(self) -> list[tuple[int, int]]:
        """(rf_length, jump) per layer; jump stays 1 for stride-1 stacks."""
        table = []
        rf = 1
        for _, k in self.conv_layers:
            rf += k - 1
            table.append((rf, 1))
        return table


@dataclass
class CNNWeights:
    conv: list[tuple[np.ndarray, np.ndarray]]  # (W (F, C_in, K), b (F,))
    dense_w: np.ndarray  # (C, F_last)
    dense_b: np.ndarray  # (C,)

    def copy(self) -> "CNNWeights":
        return CNNWeights(
            conv=[(W.copy(), b.copy()) for W, b in self.conv],
            dense_w=self.dense_w.copy(),
            dense_b=self.dense_b.copy(),
        )

    def flat(self):
        """(name, array) pairs in a fixed order."""
        for i, (W, b) in enumerate(self.conv):
            yield f"conv{i}_w", W
            yield f"conv{i}_b", b
        yield "dense_w", self.dense_w
        yield "dense_b", self.dense_b


@dataclass
class ActivationTensor:
    """Post-ReLU activations of one conv layer: values is (filters, neurons)."""

    layer: int  # 1-based
    values: np.ndarray


@dataclass
class TrainedCNN:
    weights: CNNWeights
    cfg: CNNConfig
    d: int
    T: int
    C: int
    rf: list[tuple[int, int]]  # (rf_length, jump) per layer
    best_epoch: int = -1
    best_val_accuracy: float = 0.0
    train_loss_history: list[float] = field(default_factory=list)
    val_accuracy_history: list[float] = field(default_factory=list)

    @property
    def n_layers(self) -> int:
        return len(self.cfg.conv_layers)

    def layer_lengths(self) -> list[int]:
        return self.cfg.layer_lengths(self.T)


def init_weights(cfg: CNNConfig, d: int, C: int, rng: np.random.Generator) -> CNNWeights:
    """Glorot-uniform init, zero biases."""
    conv = []
    c_in = d
    for f, k in cfg.conv_layers:
        fan_in, fan_out = c_in * k, f * k
        bound = np.sqrt(6.0 / (fan_in + fan_out))
        W = rng.uniform(-bound, bound, size=(f, c_in, k))
        conv.append((W, np.zeros(f)))
        c_in = f
    f_last = cfg.conv_layers[-1][0]
    bound = np.sqrt(6.0 / (f_last + C))
    dense_w = rng.uniform(-bound, bound, size=(C, f_last))
    return CNNWeights(conv=conv, dense_w=dense_w, dense_b=np.zeros(C))


def _conv1d_batch(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Valid stride-1 convolution. x (B, C_in, T) -> (B, F, T - K + 1)."""
    B, c_in, T = x.shape
    F, _, K = W.shape
    L = T - K + 1
    win = sliding_window_view(x, K, axis=2)  # (B, C_in, L, K)
    win = win.transpose(0, 2, 1, 3).reshape(B, L, c_in * K)
    out = win @ W.reshape(F, c_in * K).T  # (B, L, F)
    return out.transpose(0, 2, 1) + b[None, :, None]


def _softmax(logits: np.ndarray) -> np.ndarray:
    e = np.exp(logits - logits.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def forward_batch(weights: CNNWeights, x: np.ndarray):
    """Returns (probs (B, C), activations [(B, F_l, L_l) post-ReLU per layer])."""
    acts = []
    h = x
    for W, b in weights.conv:
        h = np.maximum(_conv1d_batch(h, W, b), 0.0)
        acts.append(h)
    gap = h.mean(axis=2)  # (B, F_last)
    logits = gap @ weights.dense_w.T + weights.dense_b
    return _softmax(logits), acts


def loss_and_grads(weights: CNNWeights, x: np.ndarray, y: np.ndarray):
    """Mean cross-entropy over the batch and gradients for every weight."""
    B = x.shape[0]
    pre = []  # pre-ReLU per layer
    acts = []
    h = x
    for W, b in weights.conv:
        z = _conv1d_batch(h, W, b)
        pre.append(z)
        h = np.maximum(z, 0.0)
        acts.append(h)
    L_last = h.shape[2]
    gap = h.mean(axis=2)
    logits = gap @ weights.dense_w.T + weights.dense_b
    probs = _softmax(logits)
    eps = 1e-12
    loss = -np.log(probs[np.arange(B), y] + eps).mean()

    dlogits = probs.copy()
    dlogits[np.arange(B), y] -= 1.0
    dlogits /= B
    g_dense_w = dlogits.T @ gap
    g_dense_b = dlogits.sum(axis=0)
    dgap = dlogits @ weights.dense_w  # (B, F_last)
    dh = np.repeat(dgap[:, :, None], L_last, axis=2) / L_last

    g_conv: list[tuple[np.ndarray, np.ndarray]] = [None] * len(weights.conv)
    for li in range(len(weights.conv) - 1, -1, -1):
        W, _ = weights.conv[li]
        dz = dh * (pre[li] > 0)  # (B, F, L)
        inp = x if li == 0 else acts[li - 1]
        Bb, c_in, T_in = inp.shape
        F, _, K = W.shape
        L = T_in - K + 1
        win = sliding_window_view(inp, K, axis=2).transpose(0, 2, 1, 3).reshape(Bb * L, c_in * K)
        gW = (dz.transpose(1, 0, 2).reshape(F, Bb * L) @ win).reshape(F, c_in, K)
        gb = dz.sum(axis=(0, 2))
        g_conv[li] = (gW, gb)
        if li > 0:
            dinp = np.zeros_like(inp)
            dz_flat = dz.transpose(0, 2, 1).reshape(Bb * L, F)
            for k in range(K):
                contrib = (dz_flat @ W[:, :, k]).reshape(Bb, L, c_in).transpose(0, 2, 1)
                dinp[:, :, k : k + L] += contrib
            dh = dinp
    grads = CNNWeights(conv=g_conv, dense_w=g_dense_w, dense_b=g_dense_b)
    return loss, grads


def train_cnn(train: MTSDataset, val: MTSDataset, cfg: CNNConfig) -> TrainedCNN:
    """Momentum SGD over shuffled mini-batches; keeps the weights of the epoch
    with the best validation accuracy (ties go to the earliest epoch).

    train_loss_history[0] is the pre-training loss on the full training set,
    followed by the mean batch loss of each epoch.
    """
    cfg.validate()
    if (train.d, train.T, train.C) != (val.d, val.T, val.C):
        raise ValueError("train and val datasets must share d, T and C")
    cfg.layer_lengths(train.T)  # raises if the architecture does not fit

    rng = np.random.default_rng(cfg.seed)
    weights = init_weights(cfg, train.d, train.C, rng)
    velocity = CNNWeights(
        conv=[(np.zeros_like(W), np.zeros_like(b)) for W, b in weights.conv],
        dense_w=np.zeros_like(weights.dense_w),
        dense_b=np.zeros_like(weights.dense_b),
    )

    X = train.stack()
    y = train.labels()
    Xv = val.stack()
    yv = val.labels()
    n = len(train)

    loss0, _ = loss_and_grads(weights, X, y)
    loss_history = [float(loss0)]
    val_history: list[float] = []
    best = weights.copy()
    best_acc = -1.0
    best_epoch = -1

    for epoch in range(cfg.epochs):
        order = rng.permutation(n)
        batch_losses = []
        for start in range(0, n, cfg.batch_size):
            idx = order[start : start + cfg.batch_size]
            loss, grads = loss_and_grads(weights, X[idx], y[idx])
            batch_losses.append(loss)
            for (vW, vb), (gW, gb), (W, b) in zip(velocity.conv, grads.conv, weights.conv):
                vW *= cfg.momentum
                vW -= cfg.learning_rate * gW
                W += vW
                vb *= cfg.momentum
                vb -= cfg.learning_rate * gb
                b += vb
            velocity.dense_w *= cfg.momentum
            velocity.dense_w -= cfg.learning_rate * grads.dense_w
            weights.dense_w += velocity.dense_w
            velocity.dense_b *= cfg.momentum
            velocity.dense_b -= cfg.learning_rate * grads.dense_b
            weights.dense_b += velocity.dense_b
        loss_history.append(float(np.mean(batch_losses)))

        probs, _ = forward_batch(weights, Xv)
        acc = float((probs.argmax(axis=1) == yv).mean())
        val_history.append(acc)
        if acc > best_acc:
            best_acc = acc
            best_epoch = epoch
            best = weights.copy()

    return TrainedCNN(
        weights=best,
        cfg=cfg,
        d=train.d,
        T=train.T,
        C=train.C,
        rf=cfg.rf_table(),
        best_epoch=best_epoch,
        best_val_accuracy=best_acc,
        train_loss_history=loss_history,
        val_accuracy_history=val_history,
    )


def forward_with_activations(model: TrainedCNN, sample: MTSSample):
    """Class probabilities plus one post-ReLU ActivationTensor per conv layer."""
    if sample.values.shape != (model.d, model.T):
        raise ValueError(
            f"sample shape {sample.values.shape} does not match model {(model.d, model.T)}"
        )
    probs, acts = forward_batch(model.weights, sample.values[None])
    tensors = [ActivationTensor(layer=i + 1, values=a[0]) for i, a in enumerate(acts)]
    return probs[0], tensors


def batch_activations(model: TrainedCNN, X: np.ndarray):
    """(probs (n, C), [per-layer (n, F_l, L_l)]) for a stacked input array."""
    if X.shape[1:] != (model.d, model.T):
        raise ValueError(f"input shape {X.shape[1:]} does not match model {(model.d, model.T)}")
    return forward_batch(model.weights, X)


def receptive_field(model: TrainedCNN, layer: int, neuron: int) -> tuple[int, int]:
    """Inclusive input interval [a, b] feeding the given neuron; layer is 1-based."""
    if not 1 <= layer <= model.n_layers:
        raise IndexError(f"layer {layer} out of range [1, {model.n_layers}]")
    lengths = model.layer_lengths()
    if not 0 <= neuron < lengths[layer - 1]:
        raise IndexError(f"neuron {neuron} out of range [0, {lengths[layer - 1]})")
    rf_len = model.rf[layer - 1][0]
    return neuron, neuron + rf_len - 1


def predict(model: TrainedCNN, ds: MTSDataset):
    """(argmax labels, accuracy); argmax ties resolve to the lowest class."""
    if (ds.d, ds.T) != (model.d, model.T):
        raise ValueError("dataset shape does not match model")
    probs, _ = forward_batch(model.weights, ds.stack())
    labels = probs.argmax(axis=1)
    accuracy = float((labels == ds.labels()).mean())
    return labels, accuracy


CHECKPOINT_KIND = "cnn-checkpoint"


def save_checkpoint(model: TrainedCNN, path, parent_sha256: str | None = None) -> None:
    index = {
        "architecture": {
            "conv_layers": [list(fk) for fk in model.cfg.conv_layers],
            "d": model.d,
            "T": model.T,
            "C": model.C,
        },
        "optimizer": {
            "epochs": model.cfg.epochs,
            "batch_size": model.cfg.batch_size,
            "learning_rate": model.cfg.learning_rate,
            "momentum": model.cfg.momentum,
        },
        "seed": model.cfg.seed,
        "metrics": {
            "best_epoch": model.best_epoch,
            "best_val_accuracy": model.best_val_accuracy,
        },
        "parent_sha256": parent_sha256,
    }
    blobs = {name: arr for name, arr in model.weights.flat()}
    write_container(path, CHECKPOINT_KIND, index, blobs)


def load_checkpoint(path) -> TrainedCNN:
    index, blobs = read_container(path, expect_kind=CHECKPOINT_KIND)
    arch = index["architecture"]
    cfg = CNNConfig(
        conv_layers=tuple(tuple(fk) for fk in arch["conv_layers"]),
        epochs=index["optimizer"]["epochs"],
        batch_size=index["optimizer"]["batch_size"],
        learning_rate=index["optimizer"]["learning_rate"],
        momentum=index["optimizer"]["momentum"],
        seed=index["seed"],
    )
    conv = []
    for i in range(len(cfg.conv_layers)):
        conv.append(
            (blobs[f"conv{i}_w"].astype(np.float64), blobs[f"conv{i}_b"].astype(np.float64))
        )
    weights = CNNWeights(
        conv=conv,
        dense_w=blobs["dense_w"].astype(np.float64),
        dense_b=blobs["dense_b"].astype(np.float64),
    )
    return TrainedCNN(
        weights=weights,
        cfg=cfg,
        d=arch["d"],
        T=arch["T"],
        C=arch["C"],
        rf=cfg.rf_table(),
        best_epoch=index["metrics"]["best_epoch"],
        best_val_accuracy=index["metrics"]["best_val_accuracy"],
    )
