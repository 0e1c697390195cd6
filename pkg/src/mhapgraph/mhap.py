"""Highly-activated-period extraction.

Per (layer, filter channel) activation thresholds are the nearest-rank
q-quantile of activations pooled over the training set; a neuron whose
post-ReLU activation meets or exceeds its threshold is highly activated, and
each such neuron contributes one MHAP: the channel-masked input restricted
to the neuron's receptive field.

The on-disk dump is line-delimited text, one record per MHAP with columns

    sample_id mask_bits layer channel neuron a b peak v_0 ... v_{d*rf-1}

where the values are the full d x rf_length window flattened row-major
(channel 0 first) and masked channels are all-zero. Lines starting with '#'
are header comments.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .dataset import ChannelMask, MTSDataset, enumerate_masks
from .nn import TrainedCNN, batch_activations, receptive_field


@dataclass
class ActivationThresholds:
    table: list[np.ndarray]  # per layer, one threshold per filter channel
    q: float
    pool: str  # "unmasked" or "input-set"

    def threshold(self, layer: int, channel: int) -> float:
        return float(self.table[layer - 1][channel])


@dataclass
class MHAP:
    sample_id: int
    mask: ChannelMask
    layer: int  # 1-based
    channel: int
    neuron: int
    a: int
    b: int
    values: np.ndarray  # (d, rf_length), inactive channels all-zero
    peak: float

    def vector(self) -> np.ndarray:
        return self.values.ravel()

    def sort_key(self):
        return (self.sample_id, self.a, self.layer, self.channel, self.mask.active)


def nearest_rank_quantile(pool: np.ndarray, q: float) -> float:
    """ceil(q*N)-th order statistic of the pool."""
    pool = np.asarray(pool).ravel()
    if pool.size == 0:
        raise ValueError("empty activation pool")
    rank = int(np.ceil(q * pool.size))
    rank = min(max(rank, 1), pool.size)
    return float(np.partition(pool, rank - 1)[rank - 1])


def compute_thresholds(
    model: TrainedCNN,
    ds: MTSDataset,
    q: float = 0.95,
    pool: str = "unmasked",
    input_policy: str = "auto",
) -> ActivationThresholds:
    """Per-(layer, channel) thresholds from activations pooled over ds.

    With pool="unmasked" (default) only the original samples feed the pool;
    "input-set" also pools the channel-masked variants.
    """
    if not 0.0 < q < 1.0:
        raise ValueError("q must be in (0, 1)")
    if pool not in ("unmasked", "input-set"):
        raise ValueError(f"unknown pool policy {pool!r}")
    X = ds.stack()
    batches = [X]
    if pool == "input-set":
        for m in enumerate_masks(ds.d, input_policy):
            if all(m.active):
                continue
            masked = X.copy()
            masked[:, [i for i, a in enumerate(m.active) if not a], :] = 0.0
            batches.append(masked)
    pooled = [[] for _ in range(model.n_layers)]
    for batch in batches:
        _, acts = batch_activations(model, batch)
        for li, a in enumerate(acts):
            pooled[li].append(a)
    table = []
    for li in range(model.n_layers):
        a = np.concatenate(pooled[li], axis=0)  # (n, F, L)
        table.append(
            np.array([nearest_rank_quantile(a[:, c, :], q) for c in range(a.shape[1])])
        )
    return ActivationThresholds(table=table, q=q, pool=pool)


def extract_han(act, thr: ActivationThresholds) -> list[tuple[int, int]]:
    """(channel, neuron) pairs with activation >= threshold, ascending (c, n)."""
    if not 1 <= act.layer <= len(thr.table):
        raise ValueError(f"layer {act.layer} not covered by thresholds")
    t = thr.table[act.layer - 1]
    out = []
    for c in range(act.values.shape[0]):
        for n in np.flatnonzero(act.values[c] >= t[c]):
            out.append((c, int(n)))
    return out


def _nms_runs(neurons: np.ndarray, activations: np.ndarray) -> np.ndarray:
    """Keep, per maximal run of consecutive neuron indices, the max-activation
    neuron (ties to the lowest index). neurons must be sorted ascending."""
    if neurons.size == 0:
        return neurons
    keep = []
    run_start = 0
    for i in range(1, neurons.size + 1):
        if i == neurons.size or neurons[i] != neurons[i - 1] + 1:
            run = slice(run_start, i)
            best = run_start + int(np.argmax(activations[run]))
            keep.append(best)
            run_start = i
    return neurons[keep]


def extract_mhaps(
    model: TrainedCNN,
    ds: MTSDataset,
    thr: ActivationThresholds,
    input_policy: str = "auto",
    nms: bool = True,
    sample_ids=None,
) -> list[list[MHAP]]:
    """Per-layer MHAP lists over the full input set of every sample.

    Within a layer, each sample's MHAPs appear contiguously (samples in ds
    order) sorted by window start, ties by (channel, mask). With nms=True,
    each maximal run of consecutive highly activated neurons with the same
    (layer, channel, mask, sample) keeps only its strongest neuron.
    """
    if len(thr.table) != model.n_layers:
        raise ValueError("thresholds were computed for a different architecture")
    if sample_ids is None:
        sample_ids = list(range(len(ds)))
    masks = enumerate_masks(ds.d, input_policy)
    X = ds.stack()

    per_layer: list[list[MHAP]] = [[] for _ in range(model.n_layers)]
    collected: list[list[list[MHAP]]] = [
        [[] for _ in range(len(ds))] for _ in range(model.n_layers)
    ]
    for mask in masks:
        masked = X.copy()
        inactive = [i for i, a in enumerate(mask.active) if not a]
        if inactive:
            masked[:, inactive, :] = 0.0
        _, acts = batch_activations(model, masked)
        for li in range(model.n_layers):
            t = thr.table[li]
            rf_len = model.rf[li][0]
            a = acts[li]  # (n, F, L)
            for si in range(len(ds)):
                for c in range(a.shape[1]):
                    row = a[si, c]
                    hans = np.flatnonzero(row >= t[c])
                    if nms:
                        hans = _nms_runs(hans, row[hans])
                    for n in hans:
                        n = int(n)
                        start, end = n, n + rf_len - 1
                        collected[li][si].append(
                            MHAP(
                                sample_id=sample_ids[si],
                                mask=mask,
                                layer=li + 1,
                                channel=c,
                                neuron=n,
                                a=start,
                                b=end,
                                values=masked[si, :, start : end + 1].copy(),
                                peak=float(row[n]),
                            )
                        )
    for li in range(model.n_layers):
        for si in range(len(ds)):
            per_layer[li].extend(
                sorted(collected[li][si], key=lambda m: (m.a, m.channel, m.mask.active))
            )
    return per_layer


def dump_mhaps(per_layer: list[list[MHAP]], path, parent_sha256: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("# mhap-dump v1\n")
        fh.write("# columns: sample_id mask_bits layer channel neuron a b peak values...\n")
        if parent_sha256:
            fh.write(f"# parent_sha256={parent_sha256}\n")
        for mhaps in per_layer:
            for m in mhaps:
                vals = " ".join(repr(float(v)) for v in m.vector())
                fh.write(
                    f"{m.sample_id} {m.mask.bits} {m.layer} {m.channel} {m.neuron} "
                    f"{m.a} {m.b} {m.peak!r} {vals}\n"
                )


def load_mhaps(path, n_layers: int, d: int) -> list[list[MHAP]]:
    per_layer: list[list[MHAP]] = [[] for _ in range(n_layers)]
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            cells = line.split(" ")
            sample_id, bits, layer, channel, neuron, a, b = cells[:7]
            peak = float(cells[7])
            values = np.array([float(v) for v in cells[8:]], dtype=np.float64)
            rf_len = int(b) - int(a) + 1
            per_layer[int(layer) - 1].append(
                MHAP(
                    sample_id=int(sample_id),
                    mask=ChannelMask(active=tuple(ch == "1" for ch in bits)),
                    layer=int(layer),
                    channel=int(channel),
                    neuron=int(neuron),
                    a=int(a),
                    b=int(b),
                    values=values.reshape(d, rf_len),
                    peak=peak,
                )
            )
    return per_layer
