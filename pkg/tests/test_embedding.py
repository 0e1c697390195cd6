import numpy as np
import pytest
from scipy import stats

from mhapgraph.embedding import (
    EmbeddingConfig,
    embed_graph,
    load_embeddings,
    random_walks,
    save_embeddings,
    sgns_pair_loss_grads,
    train_skipgram,
)
from mhapgraph.evograph import MergedGraph


def _clique_pair_graph() -> MergedGraph:
    """Two directed 5-cliques joined by one unit-weight bridge edge 4 -> 5."""
    intra = {}
    for base in (0, 5):
        for i in range(5):
            for j in range(5):
                if i != j:
                    intra[(base + i, base + j)] = 1
    intra[(4, 5)] = 1
    return MergedGraph(layer_sizes=[10], intra=intra)


def _cos(a, b):
    return float(a @ b / (np.linalg.norm(a) * np.linalg.norm(b)))


# ---------------------------------------------------------------------------
# walks


def test_dead_end_truncates_walk():
    g = MergedGraph(layer_sizes=[1])
    walks = random_walks(g, EmbeddingConfig(dim=4, walks_per_node=7, walk_length=10, seed=0))
    assert len(walks) == 7
    assert all(w == [0] for w in walks)


def test_walks_start_at_every_node():
    g = _clique_pair_graph()
    cfg = EmbeddingConfig(dim=4, walks_per_node=3, walk_length=5, seed=1)
    walks = random_walks(g, cfg)
    assert len(walks) == 30
    starts = [w[0] for w in walks]
    assert starts == sorted(starts)
    assert set(starts) == set(range(10))


def test_first_step_frequency_proportional_to_weight():
    # a -> b weight 3, a -> c weight 1: P(first step = b) = 0.75
    g = MergedGraph(layer_sizes=[3], intra={(0, 1): 3, (0, 2): 1})
    cfg = EmbeddingConfig(dim=4, walks_per_node=10_000, walk_length=2, seed=3)
    walks = random_walks(g, cfg)
    first = [w[1] for w in walks if w[0] == 0]
    assert len(first) == 10_000
    freq_b = first.count(1) / len(first)
    assert abs(freq_b - 0.75) <= 0.05


def test_walk_transitions_chi_square():
    g = MergedGraph(layer_sizes=[4], intra={(0, 1): 5, (0, 2): 3, (0, 3): 2})
    cfg = EmbeddingConfig(dim=4, walks_per_node=10_000, walk_length=2, seed=4)
    walks = random_walks(g, cfg)
    first = np.array([w[1] for w in walks if w[0] == 0])
    observed = [int((first == j).sum()) for j in (1, 2, 3)]
    expected = [10_000 * p for p in (0.5, 0.3, 0.2)]
    chi = stats.chisquare(observed, expected)
    assert chi.pvalue > 0.01


def test_walks_deterministic():
    g = _clique_pair_graph()
    cfg = EmbeddingConfig(dim=4, walks_per_node=5, walk_length=8, seed=9)
    assert random_walks(g, cfg) == random_walks(g, cfg)


def test_walks_follow_out_edges_only():
    g = MergedGraph(layer_sizes=[3], intra={(0, 1): 1}, cross={(1, 2): 1})
    cfg = EmbeddingConfig(dim=4, walks_per_node=4, walk_length=6, seed=5)
    for walk in random_walks(g, cfg):
        for a, b in zip(walk, walk[1:]):
            assert (a, b) in ((0, 1), (1, 2))


# ---------------------------------------------------------------------------
# skip-gram


def test_sgns_gradients_match_finite_differences():
    rng = np.random.default_rng(0)
    v = rng.normal(0, 0.5, 8)
    u_pos = rng.normal(0, 0.5, 8)
    U_neg = rng.normal(0, 0.5, (3, 8))
    loss, g_v, g_upos, g_Uneg = sgns_pair_loss_grads(v, u_pos, U_neg)
    h = 1e-6

    def fd(vec, idx, setter):
        orig = vec[idx]
        vec[idx] = orig + h
        up = sgns_pair_loss_grads(v, u_pos, U_neg)[0]
        vec[idx] = orig - h
        down = sgns_pair_loss_grads(v, u_pos, U_neg)[0]
        vec[idx] = orig
        return (up - down) / (2 * h)

    for i in range(8):
        assert abs(fd(v, i, None) - g_v[i]) / max(abs(g_v[i]), 1e-8) <= 1e-4
        assert abs(fd(u_pos, i, None) - g_upos[i]) / max(abs(g_upos[i]), 1e-8) <= 1e-4
    for j in range(3):
        for i in range(8):
            assert abs(fd(U_neg[j], i, None) - g_Uneg[j, i]) / max(abs(g_Uneg[j, i]), 1e-8) <= 1e-4


def test_single_node_corpus_gives_finite_vector():
    emb = train_skipgram([[0], [0]], EmbeddingConfig(dim=6, seed=0))
    assert emb.vectors.shape == (1, 6)
    assert np.isfinite(emb.vectors).all()


def test_loss_decreases_over_first_epoch():
    g = _clique_pair_graph()
    cfg = EmbeddingConfig(dim=16, walks_per_node=10, walk_length=10, window=3, epochs=2, seed=2)
    corpus = random_walks(g, cfg)
    emb = train_skipgram(corpus, cfg, n_nodes=10)
    first, second = emb.first_epoch_half_losses
    assert second < first
    assert emb.loss_per_epoch[1] < emb.loss_per_epoch[0]


def test_embedding_dimension_is_d():
    g = _clique_pair_graph()
    cfg = EmbeddingConfig(dim=100, walks_per_node=2, walk_length=5, epochs=1, seed=0)
    emb = embed_graph(g, cfg)
    assert emb.vectors.shape == (10, 100)
    for node in range(10):
        assert emb[node].shape == (100,)


def test_clique_pair_separation_over_seeds():
    g = _clique_pair_graph()
    for seed in range(5):
        cfg = EmbeddingConfig(
            dim=16, walks_per_node=10, walk_length=10, window=3, epochs=3, seed=seed
        )
        emb = embed_graph(g, cfg)
        intra, inter = [], []
        for i in range(10):
            for j in range(i + 1, 10):
                c = _cos(emb.vectors[i], emb.vectors[j])
                (intra if (i < 5) == (j < 5) else inter).append(c)
        assert np.mean(intra) > np.mean(inter)


def test_training_deterministic():
    g = _clique_pair_graph()
    cfg = EmbeddingConfig(dim=8, walks_per_node=4, walk_length=6, epochs=2, seed=6)
    a = embed_graph(g, cfg)
    b = embed_graph(g, cfg)
    assert np.array_equal(a.vectors, b.vectors)


def test_empty_graph_errors():
    with pytest.raises(ValueError):
        embed_graph(MergedGraph(layer_sizes=[0]), EmbeddingConfig(dim=4))


def test_unknown_node_lookup_errors():
    emb = train_skipgram([[0, 1]], EmbeddingConfig(dim=4, seed=0))
    with pytest.raises(KeyError):
        emb[5]


def test_embeddings_file_round_trip(tmp_path):
    g = _clique_pair_graph()
    cfg = EmbeddingConfig(dim=8, walks_per_node=3, walk_length=5, epochs=1, seed=7)
    emb = embed_graph(g, cfg)
    path = tmp_path / "emb.txt"
    save_embeddings(emb, path, parent_sha256="beef")
    text = path.read_text()
    assert text.splitlines()[0] == "# node-embeddings v1"
    assert "parent_sha256=beef" in text
    assert "10 8 " in text
    back = load_embeddings(path)
    assert np.array_equal(back.vectors, emb.vectors)  # repr round-trips exactly
    assert back.seed == emb.seed
