"""Segment-wise sample representations.

A sample of length T splits into M = ceil(T / segment_length) segments;
segment m covers input times [m*s, min((m+1)*s, T) - 1] and an MHAP belongs
to the segment containing its window start. Each segment's block is the sum
of the node-embedding vectors of its member MHAPs (zero if none), and the
sample representation is the concatenation of the M blocks, so the feature
length is exactly M*D.

The feature-matrix dump is plain text, one row ``label v_0 ... v_{MD-1}``
per sample; '#' lines are header comments.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .embedding import NodeEmbeddings


@dataclass
class SampleRepresentation:
    vector: np.ndarray  # (M*D,)
    sample_id: int
    segment_length: int
    dim: int

    @property
    def n_segments(self) -> int:
        return self.vector.size // self.dim


def n_segments(T: int, segment_length: int) -> int:
    if segment_length < 1 or T < 1:
        raise ValueError("T and segment_length must be >= 1")
    return math.ceil(T / segment_length)


def represent_sample(
    assigned,
    phi: NodeEmbeddings,
    segment_length: int,
    T: int,
    sample_id: int = -1,
) -> SampleRepresentation:
    """assigned is an iterable of (node_id, window_start) pairs for one sample."""
    M = n_segments(T, segment_length)
    D = phi.dim
    out = np.zeros(M * D)
    for node, start in assigned:
        if not 0 <= start < T:
            raise ValueError(f"window start {start} outside [0, {T})")
        seg = start // segment_length
        out[seg * D : (seg + 1) * D] += phi[node]
    return SampleRepresentation(vector=out, sample_id=sample_id, segment_length=segment_length, dim=D)


def represent_dataset(assigned_per_sample, labels, phi: NodeEmbeddings, segment_length: int, T: int):
    """Feature matrix (n, M*D) plus labels; row i represents sample i."""
    labels = np.asarray(labels, dtype=np.int64)
    if len(assigned_per_sample) != len(labels):
        raise ValueError("need one assigned-MHAP list per label")
    rows = [
        represent_sample(assigned, phi, segment_length, T, sample_id=i).vector
        for i, assigned in enumerate(assigned_per_sample)
    ]
    if not rows:
        return np.zeros((0, n_segments(T, segment_length) * phi.dim)), labels
    return np.stack(rows), labels


def save_features(X: np.ndarray, y: np.ndarray, path, parent_sha256: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("# feature-matrix v1\n")
        if parent_sha256:
            fh.write(f"# parent_sha256={parent_sha256}\n")
        for label, row in zip(y, X):
            fh.write(f"{int(label)} " + " ".join(repr(float(v)) for v in row) + "\n")


def load_features(path):
    labels = []
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(" ")
            labels.append(int(cells[0]))
            rows.append([float(v) for v in cells[1:]])
    return np.array(rows, dtype=np.float64), np.array(labels, dtype=np.int64)
