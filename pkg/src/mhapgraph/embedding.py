"""Node embeddings of the merged graph: truncated weighted random walks fed
to a skip-gram model with negative sampling.

Walks follow out-edges only (intra- and cross-layer edges alike), with next
steps sampled proportionally to edge weight; dead ends truncate the walk.
Each (start node, walk index) pair draws from its own seeded generator, so
the corpus is identical no matter how walk generation is scheduled. Skip-gram
updates run single-threaded in corpus order, which makes training fully
deterministic for a fixed seed.

The embedding file is plain text: '#' comment lines, then a header line
``<node_count> <D> <seed>``, then one row ``node_id v_0 ... v_{D-1}`` per
node.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .evograph import MergedGraph


@dataclass
class EmbeddingConfig:
    dim: int = 100
    walks_per_node: int = 20
    walk_length: int = 10
    window: int = 5
    negatives: int = 5
    epochs: int = 5
    learning_rate: float = 0.025
    seed: int = 0

    def validate(self) -> None:
        if self.dim < 1:
            raise ValueError("dim must be >= 1")
        if self.walk_length < 2:
            raise ValueError("walk_length must be >= 2")
        if self.window < 1:
            raise ValueError("window must be >= 1")
        if self.walks_per_node < 1 or self.negatives < 0 or self.epochs < 1:
            raise ValueError("walks_per_node, epochs must be >= 1 and negatives >= 0")


@dataclass
class NodeEmbeddings:
    vectors: np.ndarray  # (n_nodes, D)
    seed: int = 0
    loss_per_epoch: list[float] = field(default_factory=list)
    first_epoch_half_losses: tuple[float, float] | None = None

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return self.vectors.shape[0]

    def __getitem__(self, node: int) -> np.ndarray:
        if not 0 <= node < len(self):
            raise KeyError(f"unknown node id {node}")
        return self.vectors[node]


def _out_adjacency(g: MergedGraph):
    """Per node: (neighbor array, cumulative weight array)."""
    adj: list[list[tuple[int, int]]] = [[] for _ in range(g.n_nodes)]
    for a, b, w, _ in g.all_edges():
        adj[a].append((b, w))
    neighbors = []
    cumweights = []
    for out in adj:
        out.sort()
        if out:
            neighbors.append(np.array([b for b, _ in out], dtype=np.int64))
            cumweights.append(np.cumsum([w for _, w in out]).astype(np.float64))
        else:
            neighbors.append(np.empty(0, dtype=np.int64))
            cumweights.append(np.empty(0))
    return neighbors, cumweights


def random_walks(g: MergedGraph, cfg: EmbeddingConfig) -> list[list[int]]:
    """walks_per_node weighted walks from every node, in (node, walk) order."""
    cfg.validate()
    if g.n_nodes == 0:
        raise ValueError("graph has no nodes")
    neighbors, cumweights = _out_adjacency(g)
    corpus = []
    for node in range(g.n_nodes):
        for w in range(cfg.walks_per_node):
            rng = np.random.default_rng([cfg.seed, node, w])
            walk = [node]
            while len(walk) < cfg.walk_length:
                nbrs = neighbors[walk[-1]]
                if nbrs.size == 0:
                    break
                cum = cumweights[walk[-1]]
                draw = rng.random() * cum[-1]
                walk.append(int(nbrs[np.searchsorted(cum, draw, side="right")]))
            corpus.append(walk)
    return corpus


def sgns_pair_loss_grads(v: np.ndarray, u_pos: np.ndarray, U_neg: np.ndarray):
    """Negative-sampling loss for one (center, context) pair and its gradients.

    loss = -log sigmoid(u_pos . v) - sum_j log sigmoid(-U_neg[j] . v)
    Returns (loss, g_v, g_upos, g_Uneg).
    """
    s_pos = 1.0 / (1.0 + np.exp(-(u_pos @ v)))
    s_neg = 1.0 / (1.0 + np.exp(-(U_neg @ v))) if U_neg.size else np.empty(0)
    eps = 1e-12
    loss = -np.log(s_pos + eps) - np.log(1.0 - s_neg + eps).sum()
    g_v = (s_pos - 1.0) * u_pos
    if U_neg.size:
        g_v = g_v + s_neg @ U_neg
    g_upos = (s_pos - 1.0) * v
    g_Uneg = s_neg[:, None] * v[None, :] if U_neg.size else np.empty((0, v.size))
    return float(loss), g_v, g_upos, g_Uneg


def train_skipgram(corpus: list[list[int]], cfg: EmbeddingConfig, n_nodes: int | None = None) -> NodeEmbeddings:
    """Skip-gram with negative sampling over fixed-width context windows.

    Negatives are drawn from the unigram distribution of corpus tokens raised
    to the 3/4 power; the learning rate decays linearly to 1e-4 of its start
    value over all updates.
    """
    cfg.validate()
    if not corpus or not any(corpus):
        raise ValueError("corpus is empty")
    max_id = max(max(walk) for walk in corpus if walk)
    if n_nodes is None:
        n_nodes = max_id + 1
    elif max_id >= n_nodes:
        raise ValueError(f"corpus contains node {max_id} >= n_nodes {n_nodes}")

    rng = np.random.default_rng([cfg.seed, 0x5EED])
    w_in = (rng.random((n_nodes, cfg.dim)) - 0.5) / cfg.dim
    w_out = np.zeros((n_nodes, cfg.dim))

    counts = np.zeros(n_nodes)
    n_pairs_per_epoch = 0
    for walk in corpus:
        for i, tok in enumerate(walk):
            counts[tok] += 1
            lo = max(0, i - cfg.window)
            hi = min(len(walk), i + cfg.window + 1)
            n_pairs_per_epoch += hi - lo - 1
    noise = counts**0.75
    noise_cum = np.cumsum(noise)
    total_noise = noise_cum[-1]

    total_updates = max(1, n_pairs_per_epoch * cfg.epochs)
    min_lr = cfg.learning_rate * 1e-4
    step = 0
    loss_per_epoch: list[float] = []
    half_losses: tuple[float, float] | None = None
    for epoch in range(cfg.epochs):
        epoch_losses: list[float] = []
        for walk in corpus:
            for i, center in enumerate(walk):
                lo = max(0, i - cfg.window)
                hi = min(len(walk), i + cfg.window + 1)
                for j in range(lo, hi):
                    if j == i:
                        continue
                    context = walk[j]
                    lr = max(min_lr, cfg.learning_rate * (1.0 - step / total_updates))
                    step += 1
                    if cfg.negatives:
                        draws = rng.random(cfg.negatives) * total_noise
                        negs = np.searchsorted(noise_cum, draws, side="right")
                    else:
                        negs = np.empty(0, dtype=np.int64)
                    v = w_in[center]
                    loss, g_v, g_upos, g_Uneg = sgns_pair_loss_grads(v, w_out[context], w_out[negs])
                    epoch_losses.append(loss)
                    w_in[center] = v - lr * g_v
                    w_out[context] -= lr * g_upos
                    if len(negs):
                        np.subtract.at(w_out, negs, lr * g_Uneg)
        loss_per_epoch.append(float(np.mean(epoch_losses)) if epoch_losses else 0.0)
        if epoch == 0 and len(epoch_losses) >= 2:
            mid = len(epoch_losses) // 2
            half_losses = (float(np.mean(epoch_losses[:mid])), float(np.mean(epoch_losses[mid:])))
    return NodeEmbeddings(
        vectors=w_in,
        seed=cfg.seed,
        loss_per_epoch=loss_per_epoch,
        first_epoch_half_losses=half_losses,
    )


def embed_graph(g: MergedGraph, cfg: EmbeddingConfig) -> NodeEmbeddings:
    """random_walks followed by train_skipgram; every graph node gets a vector."""
    if g.n_nodes == 0:
        raise ValueError("cannot embed an empty graph")
    corpus = random_walks(g, cfg)
    return train_skipgram(corpus, cfg, n_nodes=g.n_nodes)


def save_embeddings(emb: NodeEmbeddings, path, parent_sha256: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("# node-embeddings v1\n")
        if parent_sha256:
            fh.write(f"# parent_sha256={parent_sha256}\n")
        fh.write(f"{len(emb)} {emb.dim} {emb.seed}\n")
        for node in range(len(emb)):
            vals = " ".join(repr(float(v)) for v in emb.vectors[node])
            fh.write(f"{node} {vals}\n")


def load_embeddings(path) -> NodeEmbeddings:
    header = None
    rows = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if header is None:
                header = line.split(" ")
                continue
            cells = line.split(" ")
            rows[int(cells[0])] = np.array([float(v) for v in cells[1:]])
    if header is None:
        raise ValueError(f"{path} has no header line")
    n, dim, seed = int(header[0]), int(header[1]), int(header[2])
    vectors = np.zeros((n, dim))
    for node, vec in rows.items():
        vectors[node] = vec
    return NodeEmbeddings(vectors=vectors, seed=seed)
