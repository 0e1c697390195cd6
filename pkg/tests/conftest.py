"""Shared test oracles and synthetic data constructions.

The oracles here are deliberately naive (triple-loop convolution, all-shift
scans, pair recounts) and independent of the library code paths they check.
"""

from __future__ import annotations

import numpy as np
import pytest

from mhapgraph.dataset import MTSDataset, MTSSample


# ---------------------------------------------------------------------------
# oracles


def conv1d_oracle(x: np.ndarray, W: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Triple-loop valid convolution. x (C_in, T), W (F, C_in, K) -> (F, L)."""
    c_in, T = x.shape
    F, _, K = W.shape
    L = T - K + 1
    out = np.zeros((F, L))
    for f in range(F):
        for t in range(L):
            acc = 0.0
            for c in range(c_in):
                for k in range(K):
                    acc += W[f, c, k] * x[c, t + k]
            out[f, t] = acc + b[f]
    return out


def sbd_oracle(x: np.ndarray, y: np.ndarray):
    """All-shift NCC scan with zero padding: returns (distance, best shift).

    NCC(x, y, s) = sum_t x[t] * y[t - s] / (||x|| ||y||), s in [-(m-1), m-1];
    ties prefer the most negative shift.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    m = x.size
    nx, ny = np.linalg.norm(x), np.linalg.norm(y)
    if nx < 1e-12 or ny < 1e-12:
        return 1.0, 0
    best_ncc, best_shift = -np.inf, 0
    for s in range(-(m - 1), m):
        cc = 0.0
        for t in range(m):
            if 0 <= t - s < m:
                cc += x[t] * y[t - s]
        ncc = cc / (nx * ny)
        if ncc > best_ncc:
            best_ncc, best_shift = ncc, s
    return 1.0 - best_ncc, best_shift


def adjusted_rand_index(a, b) -> float:
    """Contingency-table ARI."""
    a = np.asarray(a)
    b = np.asarray(b)
    n = a.size
    classes_a = np.unique(a)
    classes_b = np.unique(b)
    table = np.array([[(np.logical_and(a == i, b == j)).sum() for j in classes_b] for i in classes_a])

    def comb2(x):
        return x * (x - 1) / 2.0

    sum_ij = comb2(table).sum()
    sum_a = comb2(table.sum(axis=1)).sum()
    sum_b = comb2(table.sum(axis=0)).sum()
    expected = sum_a * sum_b / comb2(n)
    max_index = 0.5 * (sum_a + sum_b)
    if max_index == expected:
        return 1.0
    return (sum_ij - expected) / (max_index - expected)


def pair_counts_oracle(sequences) -> dict:
    """Brute-force recount of consecutive id pairs per sequence."""
    counts: dict[tuple[int, int], int] = {}
    for seq in sequences:
        for i in range(len(seq) - 1):
            key = (seq[i], seq[i + 1])
            counts[key] = counts.get(key, 0) + 1
    return counts


# ---------------------------------------------------------------------------
# synthetic datasets


def make_sign_dataset(n: int, T: int = 14, seed: int = 0, d: int = 2) -> MTSDataset:
    """Class = sign of channel-0 mean; solvable by one conv filter + GAP."""
    rng = np.random.default_rng(seed)
    samples = []
    for i in range(n):
        label = i % 2
        x = rng.normal(0.0, 0.3, (d, T))
        x[0] += 0.8 if label == 1 else -0.8
        samples.append(MTSSample(values=x, label=label))
    return MTSDataset(samples=samples, d=d, T=T, C=2, class_names=["neg", "pos"])


def make_order_dataset(n: int = 400, T: int = 100, noise: float = 0.1, seed: int = 0) -> MTSDataset:
    """Two classes that differ only in motif order: a smooth bump on channel 0
    and a triangle on channel 1 appear in both classes, early/late swapped."""
    rng = np.random.default_rng(seed)
    L = 15
    bump = 2.0 * np.sin(np.pi * np.linspace(0.0, 1.0, L))
    tri = 2.0 * (1.0 - np.abs(np.linspace(-1.0, 1.0, L)))
    samples = []
    for i in range(n):
        label = i % 2
        x = rng.normal(0.0, noise, (2, T))
        early = int(rng.integers(5, 30))
        late = int(rng.integers(55, 80))
        a_start, b_start = (early, late) if label == 0 else (late, early)
        x[0, a_start : a_start + L] += bump
        x[1, b_start : b_start + L] += tri
        samples.append(MTSSample(values=x, label=label))
    return MTSDataset(samples=samples, d=2, T=T, C=2, class_names=["bump-first", "tri-first"])


def make_shape_families(per_family: int = 10, m: int = 64, noise: float = 0.05, seed: int = 1, max_shift: int = 4):
    """Sine / square / ramp families with small random shifts and noise.

    Shifts stay small relative to m so that zero-padded alignment keeps
    intra-family distances well below inter-family ones.
    """
    rng = np.random.default_rng(seed)
    t = np.arange(m)
    base = [
        np.sin(2 * np.pi * t / m),
        np.sign(np.sin(2 * np.pi * t / m)),
        2.0 * t / m - 1.0,
    ]
    vectors, labels = [], []
    for fam, proto in enumerate(base):
        for _ in range(per_family):
            shift = int(rng.integers(-max_shift, max_shift + 1))
            v = np.roll(proto, shift) + rng.normal(0.0, noise, m)
            vectors.append(v)
            labels.append(fam)
    return np.stack(vectors), np.array(labels)


@pytest.fixture(scope="session")
def sign_dataset():
    return make_sign_dataset(250, T=14, seed=7)
