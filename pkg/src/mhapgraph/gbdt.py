"""Gradient-boosted regression trees for multiclass softmax classification.

Each boosting round fits one regression tree per class to the softmax
gradients/hessians, with exact greedy splits (every feature, every threshold
between distinct consecutive values) and Newton leaf weights damped by a
fixed L2 regularizer. Split ties resolve to the lowest feature index and
threshold, so fitting is deterministic.

Model files are versioned text: header lines, then one line per tree node
``tree <round> <class> node <id> feat <f> thr <t> left <l> right <r>`` or
``tree <round> <class> leaf <id> value <v>``.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

LAMBDA = 1.0  # L2 regularization on leaf weights (Newton damping)


@dataclass
class GBDTConfig:
    rounds: int = 200
    max_depth: int = 3
    learning_rate: float = 0.1
    min_samples_leaf: int = 2
    seed: int = 0

    def validate(self) -> None:
        if self.rounds < 1:
            raise ValueError("rounds must be >= 1")
        if self.max_depth < 1:
            raise ValueError("max_depth must be >= 1")
        if self.learning_rate <= 0 or self.min_samples_leaf < 1:
            raise ValueError("learning_rate must be > 0 and min_samples_leaf >= 1")


@dataclass
class Tree:
    """Array-encoded binary tree; children of -1 mark a leaf."""

    feature: list[int] = field(default_factory=list)
    threshold: list[float] = field(default_factory=list)
    left: list[int] = field(default_factory=list)
    right: list[int] = field(default_factory=list)
    value: list[float] = field(default_factory=list)  # additive score at leaves

    def add_leaf(self, value: float) -> int:
        self.feature.append(-1)
        self.threshold.append(0.0)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(value)
        return len(self.feature) - 1

    def add_split(self, feature: int, threshold: float) -> int:
        self.feature.append(feature)
        self.threshold.append(threshold)
        self.left.append(-1)
        self.right.append(-1)
        self.value.append(0.0)
        return len(self.feature) - 1

    def predict(self, X: np.ndarray) -> np.ndarray:
        out = np.zeros(X.shape[0])
        for i in range(X.shape[0]):
            node = 0
            while self.feature[node] >= 0:
                if X[i, self.feature[node]] <= self.threshold[node]:
                    node = self.left[node]
                else:
                    node = self.right[node]
            out[i] = self.value[node]
        return out


@dataclass
class GBDTModel:
    trees: list[list[Tree]]  # trees[round][class]
    n_features: int
    n_classes: int
    cfg: GBDTConfig
    train_loss_history: list[float] = field(default_factory=list)

    def scores(self, X: np.ndarray) -> np.ndarray:
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        F = np.zeros((X.shape[0], self.n_classes))
        for round_trees in self.trees:
            for c, tree in enumerate(round_trees):
                F[:, c] += tree.predict(X)
        return F


def softmax_loss(scores: np.ndarray, y: np.ndarray):
    """Mean cross-entropy of softmax(scores) plus per-element grad and hessian."""
    p = np.exp(scores - scores.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    n = scores.shape[0]
    eps = 1e-12
    loss = -np.log(p[np.arange(n), y] + eps).mean()
    onehot = np.zeros_like(p)
    onehot[np.arange(n), y] = 1.0
    grad = p - onehot
    hess = p * (1.0 - p)
    return float(loss), grad, hess


def _best_split(X: np.ndarray, order: np.ndarray, member: np.ndarray, g: np.ndarray, h: np.ndarray, min_leaf: int):
    """Best (gain, feature, threshold, left_idx, right_idx) over all features
    for the samples flagged in member; returns None when no valid split gains."""
    n_node = int(member.sum())
    if n_node < 2 * min_leaf:
        return None
    mask = member[order]  # (n, F): which rows of each sorted column belong here
    node_sorted = order.T[mask.T].reshape(X.shape[1], n_node)  # (F, n_node)
    xs = X.T[np.arange(X.shape[1])[:, None], node_sorted]
    gs = g[node_sorted]
    hs = h[node_sorted]
    GL = np.cumsum(gs, axis=1)[:, :-1]
    HL = np.cumsum(hs, axis=1)[:, :-1]
    G = GL[:, -1] + gs[:, -1]
    H = HL[:, -1] + hs[:, -1]
    GR = G[:, None] - GL
    HR = H[:, None] - HL
    gain = 0.5 * (GL**2 / (HL + LAMBDA) + GR**2 / (HR + LAMBDA) - (G**2 / (H + LAMBDA))[:, None])
    pos = np.arange(1, n_node)
    valid = (xs[:, 1:] > xs[:, :-1]) & (pos >= min_leaf) & (pos <= n_node - min_leaf)
    gain = np.where(valid, gain, -np.inf)
    f, i = np.unravel_index(np.argmax(gain), gain.shape)
    if not np.isfinite(gain[f, i]) or gain[f, i] <= 0.0:
        return None
    threshold = 0.5 * (xs[f, i] + xs[f, i + 1])
    return float(gain[f, i]), int(f), float(threshold), node_sorted[f, : i + 1], node_sorted[f, i + 1 :]


def _build_tree(X: np.ndarray, order: np.ndarray, g: np.ndarray, h: np.ndarray, cfg: GBDTConfig) -> Tree:
    tree = Tree()

    def grow(indices: np.ndarray, depth: int) -> int:
        if depth < cfg.max_depth:
            member = np.zeros(X.shape[0], dtype=bool)
            member[indices] = True
            split = _best_split(X, order, member, g, h, cfg.min_samples_leaf)
            if split is not None:
                _, feat, thr, left_idx, right_idx = split
                node = tree.add_split(feat, thr)
                left = grow(left_idx, depth + 1)
                right = grow(right_idx, depth + 1)
                tree.left[node] = left
                tree.right[node] = right
                return node
        G = g[indices].sum()
        H = h[indices].sum()
        return tree.add_leaf(float(cfg.learning_rate * (-G / (H + LAMBDA))))

    grow(np.arange(X.shape[0]), 0)
    return tree


def fit(X: np.ndarray, y: np.ndarray, cfg: GBDTConfig) -> GBDTModel:
    """Boost cfg.rounds rounds of per-class trees on the softmax objective.

    Training loss is recorded before boosting and after every round and is
    checked to be non-increasing.
    """
    cfg.validate()
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.int64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X must be (n, features) with one label per row")
    if X.shape[0] < 2:
        raise ValueError("need at least two samples")
    if not np.isfinite(X).all():
        raise ValueError("features contain NaN or Inf")
    classes = np.unique(y)
    if classes.size < 2:
        raise ValueError("need at least two classes present in y")
    n_classes = int(y.max()) + 1

    order = np.argsort(X, axis=0, kind="stable")
    F = np.zeros((X.shape[0], n_classes))
    loss, grad, hess = softmax_loss(F, y)
    history = [loss]
    all_trees: list[list[Tree]] = []
    for _ in range(cfg.rounds):
        round_trees = []
        for c in range(n_classes):
            tree = _build_tree(X, order, grad[:, c], hess[:, c], cfg)
            F[:, c] += tree.predict(X)
            round_trees.append(tree)
        all_trees.append(round_trees)
        loss, grad, hess = softmax_loss(F, y)
        if loss > history[-1] + 1e-9:
            raise AssertionError(
                f"training loss increased from {history[-1]:.6g} to {loss:.6g}"
            )
        history.append(loss)
    return GBDTModel(
        trees=all_trees,
        n_features=X.shape[1],
        n_classes=n_classes,
        cfg=cfg,
        train_loss_history=history,
    )


def predict(model: GBDTModel, X: np.ndarray):
    """(class probabilities, argmax labels); ties go to the lowest class."""
    X = np.asarray(X, dtype=np.float64)
    scores = model.scores(X)
    p = np.exp(scores - scores.max(axis=1, keepdims=True))
    p /= p.sum(axis=1, keepdims=True)
    return p, p.argmax(axis=1)


def evaluate(model: GBDTModel, X: np.ndarray, y: np.ndarray) -> float:
    y = np.asarray(y, dtype=np.int64)
    if len(y) != np.asarray(X).shape[0]:
        raise ValueError("X and y length mismatch")
    _, labels = predict(model, X)
    return float((labels == y).mean())


MODEL_VERSION = "gbdt-model v1"


def save_model(model: GBDTModel, path, parent_sha256: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write(f"# {MODEL_VERSION}\n")
        if parent_sha256:
            fh.write(f"# parent_sha256={parent_sha256}\n")
        fh.write(
            f"meta n_features {model.n_features} n_classes {model.n_classes} "
            f"rounds {model.cfg.rounds} max_depth {model.cfg.max_depth} "
            f"learning_rate {model.cfg.learning_rate!r} "
            f"min_samples_leaf {model.cfg.min_samples_leaf} seed {model.cfg.seed}\n"
        )
        for r, round_trees in enumerate(model.trees):
            for c, tree in enumerate(round_trees):
                for node in range(len(tree.feature)):
                    if tree.feature[node] >= 0:
                        fh.write(
                            f"tree {r} {c} node {node} feat {tree.feature[node]} "
                            f"thr {tree.threshold[node]!r} left {tree.left[node]} "
                            f"right {tree.right[node]}\n"
                        )
                    else:
                        fh.write(f"tree {r} {c} leaf {node} value {tree.value[node]!r}\n")


def load_model(path) -> GBDTModel:
    meta = None
    trees: dict[tuple[int, int], Tree] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(" ")
            if cells[0] == "meta":
                meta = {cells[i]: cells[i + 1] for i in range(1, len(cells), 2)}
                continue
            r, c = int(cells[1]), int(cells[2])
            tree = trees.setdefault((r, c), Tree())
            node = int(cells[4])
            while len(tree.feature) <= node:
                tree.add_leaf(0.0)
            if cells[3] == "node":
                tree.feature[node] = int(cells[6])
                tree.threshold[node] = float(cells[8])
                tree.left[node] = int(cells[10])
                tree.right[node] = int(cells[12])
            else:
                tree.feature[node] = -1
                tree.value[node] = float(cells[6])
    if meta is None:
        raise ValueError(f"{path} has no meta line")
    cfg = GBDTConfig(
        rounds=int(meta["rounds"]),
        max_depth=int(meta["max_depth"]),
        learning_rate=float(meta["learning_rate"]),
        min_samples_leaf=int(meta["min_samples_leaf"]),
        seed=int(meta["seed"]),
    )
    n_rounds = max((r for r, _ in trees), default=-1) + 1
    n_classes = int(meta["n_classes"])
    all_trees = [[trees[(r, c)] for c in range(n_classes)] for r in range(n_rounds)]
    return GBDTModel(
        trees=all_trees,
        n_features=int(meta["n_features"]),
        n_classes=n_classes,
        cfg=cfg,
    )
