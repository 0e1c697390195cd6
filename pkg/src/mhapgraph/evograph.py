"""Temporal evolution graphs over MHAP clusters.

Per layer, nodes are cluster ids and a directed edge a -> b counts how often
an MHAP assigned to cluster a is immediately followed (within the same
sample) by one assigned to b. Within a sample, MHAPs of a layer are ordered
by input-window start, ties by (channel mask lexicographic, filter channel);
MHAPs from all channel masks interleave into one sequence.

Layer graphs merge into a single graph: node (layer, cluster) gets the global
id offset(layer) + cluster; intra-layer edges are copied unchanged, and a
cross-layer edge (layer l-1, cluster of a lower MHAP) -> (layer l, cluster of
an upper MHAP) is counted whenever, for the same (sample, mask), the lower
MHAP's neuron index lies in the upper MHAP's neuron window
[n, n + kernel_l - 1].

Export formats: Graphviz DOT (node label "L<layer>C<cluster>", cross-layer
edges dashed) and a tab-separated adjacency dump ``src dst weight kind`` with
kind in {intra, cross}; '#' lines are header comments.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field

from .kshape import ClusterModel
from .mhap import MHAP
from .nn import TrainedCNN


@dataclass
class LayerGraph:
    layer: int  # 1-based
    n_nodes: int
    edges: dict[tuple[int, int], int] = field(default_factory=dict)

    def total_weight(self) -> int:
        return sum(self.edges.values())


@dataclass
class MergedGraph:
    layer_sizes: list[int]
    intra: dict[tuple[int, int], int] = field(default_factory=dict)
    cross: dict[tuple[int, int], int] = field(default_factory=dict)

    @property
    def n_nodes(self) -> int:
        return sum(self.layer_sizes)

    def offsets(self) -> list[int]:
        out = [0]
        for k in self.layer_sizes[:-1]:
            out.append(out[-1] + k)
        return out

    def node_id(self, layer: int, cluster: int) -> int:
        return self.offsets()[layer - 1] + cluster

    def node_layer(self, node: int) -> tuple[int, int]:
        """(layer, cluster) for a global node id; layer is 1-based."""
        for layer, (off, k) in enumerate(zip(self.offsets(), self.layer_sizes), start=1):
            if off <= node < off + k:
                return layer, node - off
        raise IndexError(f"node {node} out of range [0, {self.n_nodes})")

    def node_label(self, node: int) -> str:
        layer, cluster = self.node_layer(node)
        return f"L{layer}C{cluster}"

    def all_edges(self):
        for (a, b), w in self.intra.items():
            yield a, b, w, "intra"
        for (a, b), w in self.cross.items():
            yield a, b, w, "cross"


def mhap_sequence_key(m: MHAP):
    """Temporal ordering of a sample's MHAPs within one layer."""
    return (m.a, m.mask.active, m.channel)


def cluster_sequences(mhaps: list[MHAP], assignments) -> dict[int, list[int]]:
    """Per-sample ordered cluster-id sequences for one layer's MHAPs."""
    if len(mhaps) != len(assignments):
        raise ValueError("one assignment per MHAP required")
    grouped: dict[int, list[tuple]] = defaultdict(list)
    for m, cid in zip(mhaps, assignments):
        grouped[m.sample_id].append((mhap_sequence_key(m), int(cid)))
    return {
        sid: [cid for _, cid in sorted(items, key=lambda t: t[0])]
        for sid, items in grouped.items()
    }


def build_layer_graph(sequences, k: int, layer: int = 1) -> LayerGraph:
    """Count consecutive cluster-id pairs per sample. sequences is an iterable
    of per-sample ordered id lists (dict values or plain lists)."""
    if isinstance(sequences, dict):
        sequences = [sequences[sid] for sid in sorted(sequences)]
    edges: dict[tuple[int, int], int] = {}
    for seq in sequences:
        for a, b in zip(seq, seq[1:]):
            if not (0 <= a < k and 0 <= b < k):
                raise ValueError(f"cluster id pair ({a}, {b}) out of range [0, {k})")
            edges[(a, b)] = edges.get((a, b), 0) + 1
    return LayerGraph(layer=layer, n_nodes=k, edges=edges)


def merge_graphs(
    layer_graphs: list[LayerGraph],
    assigned_mhaps: list[list[tuple[MHAP, int]]],
    model: TrainedCNN,
) -> MergedGraph:
    """Merge per-layer graphs; cross-layer edges come from instance-level
    receptive-field containment between adjacent layers of the same
    (sample, mask)."""
    if len(layer_graphs) != model.n_layers or len(assigned_mhaps) != model.n_layers:
        raise ValueError("need one layer graph and one MHAP list per conv layer")
    for lg, pairs in zip(layer_graphs, assigned_mhaps):
        for m, cid in pairs:
            if not 0 <= cid < lg.n_nodes:
                raise ValueError(
                    f"cluster id {cid} inconsistent with layer {lg.layer} node count {lg.n_nodes}"
                )

    merged = MergedGraph(layer_sizes=[lg.n_nodes for lg in layer_graphs])
    offsets = merged.offsets()
    for li, lg in enumerate(layer_graphs):
        off = offsets[li]
        for (a, b), w in lg.edges.items():
            merged.intra[(off + a, off + b)] = w

    for li in range(1, model.n_layers):
        kernel = model.cfg.conv_layers[li][1]
        lower_by_key: dict[tuple, list[tuple[int, int]]] = defaultdict(list)
        for m, cid in assigned_mhaps[li - 1]:
            lower_by_key[(m.sample_id, m.mask.active)].append((m.neuron, cid))
        for upper, up_cid in assigned_mhaps[li]:
            lo, hi = upper.neuron, upper.neuron + kernel - 1
            for n_low, low_cid in lower_by_key.get((upper.sample_id, upper.mask.active), ()):
                if lo <= n_low <= hi:
                    key = (offsets[li - 1] + low_cid, offsets[li] + up_cid)
                    merged.cross[key] = merged.cross.get(key, 0) + 1
    return merged


def graph_stats(g: MergedGraph) -> dict:
    per_layer = []
    offsets = g.offsets()
    for li, k in enumerate(g.layer_sizes):
        off = offsets[li]
        intra = {e: w for e, w in g.intra.items() if off <= e[0] < off + k}
        per_layer.append(
            {
                "layer": li + 1,
                "nodes": k,
                "intra_edges": len(intra),
                "intra_weight": sum(intra.values()),
            }
        )
    return {
        "nodes": g.n_nodes,
        "edges": len(g.intra) + len(g.cross),
        "total_weight": sum(g.intra.values()) + sum(g.cross.values()),
        "intra_edges": len(g.intra),
        "cross_edges": len(g.cross),
        "per_layer": per_layer,
    }


def to_dot(g: MergedGraph, highlight_path: list[int] | None = None) -> str:
    """Graphviz DOT text; nodes/edges on a highlighted path get drawn bold red."""
    path = highlight_path or []
    path_nodes = set(path)
    path_edges = set(zip(path, path[1:]))
    lines = ["digraph mhap_evolution {"]
    for node in range(g.n_nodes):
        attrs = [f'label="{g.node_label(node)}"']
        if node in path_nodes:
            attrs.append('color="red"')
            attrs.append("penwidth=2")
        lines.append(f"  n{node} [{', '.join(attrs)}];")
    for a, b, w, kind in g.all_edges():
        attrs = [f"weight={w}", f'label="{w}"']
        if kind == "cross":
            attrs.append('style="dashed"')
        if (a, b) in path_edges:
            attrs.append('color="red"')
            attrs.append("penwidth=2")
        lines.append(f"  n{a} -> n{b} [{', '.join(attrs)}];")
    lines.append("}")
    return "\n".join(lines) + "\n"


def write_adjacency(g: MergedGraph, path, parent_sha256: str | None = None) -> None:
    with open(path, "w") as fh:
        fh.write("# merged-graph v1\n")
        fh.write(f"# layer_sizes={','.join(str(k) for k in g.layer_sizes)}\n")
        if parent_sha256:
            fh.write(f"# parent_sha256={parent_sha256}\n")
        fh.write("# src\tdst\tweight\tkind\n")
        for a, b, w, kind in sorted(g.all_edges()):
            fh.write(f"{a}\t{b}\t{w}\t{kind}\n")


def read_adjacency(path) -> MergedGraph:
    layer_sizes: list[int] | None = None
    intra: dict[tuple[int, int], int] = {}
    cross: dict[tuple[int, int], int] = {}
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if line.startswith("# layer_sizes="):
                    layer_sizes = [int(x) for x in line.split("=", 1)[1].split(",")]
                continue
            src, dst, w, kind = line.split("\t")
            target = intra if kind == "intra" else cross
            target[(int(src), int(dst))] = int(w)
    if layer_sizes is None:
        raise ValueError(f"{path} is missing the layer_sizes header")
    return MergedGraph(layer_sizes=layer_sizes, intra=intra, cross=cross)
