"""K-shape clustering on shift-invariant shape-based distance (SBD).

SBD(x, y) = 1 - max_s NCC(x, y, s) where NCC(x, y, s) = sum_t x[t] y[t-s]
normalized by ||x|| ||y||, shifts are zero-padded (non-circular) and range
over [-(m-1), m-1]. Cluster representatives come from shape extraction: the
dominant eigenvector of the centered correlation matrix of the shift-aligned,
z-normalized members.

Input vectors are z-normalized internally before clustering (the distance is
scale- but not offset-invariant); assignments and inertia refer to the
z-normalized vectors. The centroid update is guarded: a new centroid is kept
only if it does not increase its cluster's SBD sum, which makes the recorded
inertia non-increasing across iterations.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .container import read_container, write_container

_EPS = 1e-12


@dataclass
class ClusterModel:
    """One layer's clustering: centroids are z-normalized (or all-zero)."""

    k: int
    centroids: np.ndarray  # (k, m)
    assignments: np.ndarray  # (n,)
    inertia: float
    seed: int
    inertia_history: list[float] = field(default_factory=list)
    n_iter: int = 0


def znorm(v: np.ndarray) -> np.ndarray:
    """Zero mean, unit population std; (near-)constant vectors map to zeros."""
    v = np.asarray(v, dtype=np.float64)
    std = v.std()
    if std <= _EPS:
        return np.zeros_like(v)
    return (v - v.mean()) / std


def _znorm_rows(X: np.ndarray) -> np.ndarray:
    mean = X.mean(axis=1, keepdims=True)
    std = X.std(axis=1, keepdims=True)
    safe = np.where(std > _EPS, std, 1.0)
    return np.where(std > _EPS, (X - mean) / safe, 0.0)


def _pairwise_sbd(X: np.ndarray, Y: np.ndarray):
    """SBD and best shift between every row of X (n, m) and of Y (k, m).

    Returns (dist (n, k), shift (n, k)); shift s means Y-row delayed by s
    best matches the X-row. Zero-norm rows get distance 1, shift 0. Shift
    ties resolve to the most negative shift.
    """
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    Y = np.atleast_2d(np.asarray(Y, dtype=np.float64))
    n, m = X.shape
    k, m2 = Y.shape
    if m != m2:
        raise ValueError(f"length mismatch: {m} vs {m2}")
    nfft = 1 << max(1, (2 * m - 1).bit_length())
    FX = np.fft.rfft(X, nfft, axis=1)
    FY = np.fft.rfft(Y, nfft, axis=1)
    nx = np.linalg.norm(X, axis=1)
    ny = np.linalg.norm(Y, axis=1)
    # index order for shifts -(m-1) .. m-1 in the circular correlation
    idx = np.concatenate([np.arange(nfft - (m - 1), nfft), np.arange(m)]) if m > 1 else np.array([0])
    shift_values = np.arange(-(m - 1), m)

    dist = np.ones((n, k))
    shift = np.zeros((n, k), dtype=np.int64)
    x_ok = nx > _EPS
    nx_safe = np.where(x_ok, nx, 1.0)
    for j in range(k):
        if ny[j] <= _EPS:
            continue
        cc = np.fft.irfft(FX * np.conj(FY[j])[None, :], nfft, axis=1)[:, idx]
        ncc = cc / (nx_safe[:, None] * ny[j])
        am = np.argmax(ncc, axis=1)
        best = ncc[np.arange(n), am]
        dist[x_ok, j] = np.maximum(1.0 - best[x_ok], 0.0)
        shift[x_ok, j] = shift_values[am[x_ok]]
    return dist, shift


def sbd(x, y) -> tuple[float, int]:
    """(distance in [0, 2], best shift) for a single pair of equal-length vectors."""
    x = np.asarray(x, dtype=np.float64).ravel()
    y = np.asarray(y, dtype=np.float64).ravel()
    if x.size != y.size or x.size < 1:
        raise ValueError("vectors must have equal length >= 1")
    dist, shift = _pairwise_sbd(x[None], y[None])
    return float(dist[0, 0]), int(shift[0, 0])


def _shift_vector(y: np.ndarray, s: int) -> np.ndarray:
    """Delay y by s with zero padding (negate s to advance)."""
    m = y.size
    out = np.zeros_like(y)
    if s >= 0:
        out[s:] = y[: m - s]
    else:
        out[: m + s] = y[-s:]
    return out


def shape_extraction(members, ref: np.ndarray) -> np.ndarray:
    """New centroid for a cluster: members are shift-aligned to ref, then the
    dominant eigenvector (power iteration) of the centered correlation matrix
    of the z-normalized aligned members, sign-matched to ref, z-normalized.

    A single member needs no alignment (shifting it against a stale reference
    would only pad away its tail): the centroid is the z-normalized member.
    All-zero members yield the all-zero centroid.
    """
    members = np.atleast_2d(np.asarray(members, dtype=np.float64))
    if members.shape[0] < 1:
        raise ValueError("need at least one member")
    ref = np.asarray(ref, dtype=np.float64).ravel()
    m = members.shape[1]
    if ref.size != m:
        raise ValueError("ref length mismatch")

    if members.shape[0] == 1:
        v = znorm(members[0])
        if np.linalg.norm(ref) > _EPS and float(v @ ref) < 0:
            v = -v
        return v

    if np.linalg.norm(ref) > _EPS:
        # NCC(ref, y, s) = NCC(y, ref, -s): batch the FFT over members
        _, shifts = _pairwise_sbd(members, ref[None])
        aligned = np.stack(
            [_shift_vector(members[i], -int(shifts[i, 0])) for i in range(members.shape[0])]
        )
    else:
        aligned = members.copy()
    Y = _znorm_rows(aligned)
    if not Y.any():
        return np.zeros(m)

    S = Y.T @ Y
    Q = np.eye(m) - 1.0 / m
    M = Q @ S @ Q

    v = None
    if np.linalg.norm(ref) > _EPS:
        v = ref - ref.mean()
    if v is None or np.linalg.norm(v) <= _EPS:
        for basis in range(m):
            cand = Q[:, basis].copy()
            if np.linalg.norm(M @ cand) > _EPS:
                v = cand
                break
        else:
            return np.zeros(m)
    v = v / np.linalg.norm(v)
    for _ in range(100):
        w = M @ v
        norm = np.linalg.norm(w)
        if norm <= _EPS:
            return np.zeros(m)
        w /= norm
        if np.linalg.norm(w - v) / max(np.linalg.norm(w), _EPS) < 1e-8:
            v = w
            break
        v = w

    if np.linalg.norm(ref) > _EPS and float(v @ ref) < 0:
        v = -v
    elif np.linalg.norm(ref) <= _EPS:
        nz = np.flatnonzero(np.abs(v) > _EPS)
        if nz.size and v[nz[0]] < 0:
            v = -v
    return znorm(v)


def _extraction_step(Z: np.ndarray, labels: np.ndarray, centroids: np.ndarray):
    """Guarded centroid update; returns (centroids, inertia after update)."""
    k = centroids.shape[0]
    out = centroids.copy()
    total = 0.0
    for j in range(k):
        members = Z[labels == j]
        if members.shape[0] == 0:
            continue
        cand = shape_extraction(members, centroids[j])
        d_old, _ = _pairwise_sbd(members, centroids[j][None])
        d_new, _ = _pairwise_sbd(members, cand[None])
        s_old = float(d_old.sum())
        s_new = float(d_new.sum())
        if s_new <= s_old:
            out[j] = cand
            total += s_new
        else:
            total += s_old
    return out, total


def kshape_cluster(
    vectors,
    k: int,
    seed: int,
    max_iter: int = 100,
    restarts: int = 5,
) -> ClusterModel:
    """K-shape with random-assignment init and several restarts, keeping the
    run with the lowest final inertia. Deterministic for fixed inputs/seed.

    Empty clusters are reseeded with the vector farthest from its assigned
    centroid (the reseeded centroid becomes that vector), never emptying
    another cluster in the process.
    """
    Z = _znorm_rows(np.atleast_2d(np.asarray(vectors, dtype=np.float64)))
    n, m = Z.shape
    if not 1 <= k <= n:
        raise ValueError(f"k={k} must be in [1, {n}]")

    best: ClusterModel | None = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        labels = rng.integers(0, k, size=n)
        centroids = np.zeros((k, m))
        history: list[float] = []
        n_iter = 0
        for _ in range(max_iter):
            n_iter += 1
            centroids, inertia = _extraction_step(Z, labels, centroids)
            history.append(inertia)
            dist, _ = _pairwise_sbd(Z, centroids)
            new_labels = dist.argmin(axis=1)
            assigned = dist[np.arange(n), new_labels]
            counts = np.bincount(new_labels, minlength=k)
            for j in range(k):
                if counts[j] > 0:
                    continue
                order = np.argsort(-assigned, kind="stable")
                for i in order:
                    if counts[new_labels[i]] > 1:
                        counts[new_labels[i]] -= 1
                        new_labels[i] = j
                        counts[j] = 1
                        centroids[j] = Z[i]
                        assigned[i] = 0.0
                        break
            if np.array_equal(new_labels, labels):
                break
            labels = new_labels
        centroids, inertia = _extraction_step(Z, labels, centroids)
        history.append(inertia)
        model = ClusterModel(
            k=k,
            centroids=centroids,
            assignments=labels.astype(np.int64),
            inertia=inertia,
            seed=seed,
            inertia_history=history,
            n_iter=n_iter,
        )
        if best is None or model.inertia < best.inertia:
            best = model
    return best


def assign(v, cm: ClusterModel, return_distance: bool = False):
    """Nearest-centroid id for one vector (z-normalized first); ties -> lowest id."""
    v = np.asarray(v, dtype=np.float64).ravel()
    if v.size != cm.centroids.shape[1]:
        raise ValueError(f"vector length {v.size} != centroid length {cm.centroids.shape[1]}")
    dist, _ = _pairwise_sbd(znorm(v)[None], cm.centroids)
    j = int(dist[0].argmin())
    if return_distance:
        return j, float(dist[0, j])
    return j


def assign_many(vectors, cm: ClusterModel) -> np.ndarray:
    X = _znorm_rows(np.atleast_2d(np.asarray(vectors, dtype=np.float64)))
    if X.shape[1] != cm.centroids.shape[1]:
        raise ValueError("vector length mismatch")
    dist, _ = _pairwise_sbd(X, cm.centroids)
    return dist.argmin(axis=1).astype(np.int64)


CLUSTER_KIND = "cluster-model"


def save_cluster_models(models: list[ClusterModel], path, parent_sha256: str | None = None) -> None:
    index = {
        "k_per_layer": [m.k for m in models],
        "seed": models[0].seed if models else 0,
        "inertia_per_layer": [m.inertia for m in models],
        "n_iter_per_layer": [m.n_iter for m in models],
        "parent_sha256": parent_sha256,
    }
    blobs = {}
    for li, m in enumerate(models):
        blobs[f"centroids_{li}"] = m.centroids
        blobs[f"assignments_{li}"] = m.assignments
    write_container(path, CLUSTER_KIND, index, blobs)


def load_cluster_models(path) -> list[ClusterModel]:
    index, blobs = read_container(path, expect_kind=CLUSTER_KIND)
    models = []
    for li, k in enumerate(index["k_per_layer"]):
        models.append(
            ClusterModel(
                k=k,
                centroids=blobs[f"centroids_{li}"].astype(np.float64),
                assignments=blobs[f"assignments_{li}"].astype(np.int64),
                inertia=index["inertia_per_layer"][li],
                seed=index["seed"],
                n_iter=index["n_iter_per_layer"][li],
            )
        )
    return models
