"""End-to-end orchestration.

Every stage reads its inputs from the fold's artifact store (hash-verified)
and writes its outputs back, so a full ``run_pipeline`` and a sequence of
stage commands produce bitwise-identical artifacts. Stage order per fold:

    checkpoint -> thresholds -> mhaps -> clusters -> graph -> embeddings
    -> features -> gbdt -> metrics

Cross-validation metrics aggregate per-fold test accuracy plus graph stats
and per-stage wall-clock timings (timings are the one part of the report
excluded from the determinism contract).
"""

from __future__ import annotations

import copy
import json
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import evograph, gbdt, kshape, mhap, nn, representation
from .artifacts import FoldStore
from .config import PipelineConfig, canonical_json, config_hash, save_config, stage_seed
from .dataset import FoldPlan, load_dataset, make_folds, znormalize
from .embedding import embed_graph, load_embeddings, save_embeddings
from .evograph import MergedGraph, read_adjacency, write_adjacency

STAGE_FILES = {
    "checkpoint": ["checkpoint.bin"],
    "thresholds": ["thresholds.json"],
    "mhaps": ["mhaps_train.txt", "mhaps_test.txt"],
    "clusters": ["clusters.bin"],
    "graph": ["graph.tsv"],
    "embeddings": ["embeddings.txt"],
    "features": ["features_train.txt", "features_test.txt"],
    "gbdt": ["gbdt.txt"],
    "metrics": ["metrics.json"],
}
STAGE_PARENT = {
    "checkpoint": None,
    "thresholds": "checkpoint",
    "mhaps": "thresholds",
    "clusters": "mhaps",
    "graph": "clusters",
    "embeddings": "graph",
    "features": "embeddings",
    "gbdt": "features",
    "metrics": "gbdt",
}
STAGE_ORDER = list(STAGE_FILES)


class PipelineStageError(RuntimeError):
    def __init__(self, stage: str, fold: int, cause: BaseException):
        super().__init__(f"stage {stage!r} failed in fold {fold}: {cause}")
        self.stage = stage
        self.fold = fold
        self.cause = cause


class RunContext:
    """Shared state of one run: resolved config, dataset, and the fold plan."""

    def __init__(self, cfg: PipelineConfig):
        cfg.validate()
        self.cfg = cfg
        self.run_dir = Path(cfg.out)
        self.run_dir.mkdir(parents=True, exist_ok=True)

        config_path = self.run_dir / "config.json"
        if config_path.exists():
            existing = config_path.read_text()
            if json.loads(existing) != json.loads(canonical_json(cfg)):
                raise ValueError(
                    f"{config_path} holds a different config; use a fresh output directory"
                )
        else:
            save_config(cfg, config_path)

        raw = load_dataset(cfg.dataset, cfg.format)
        self.ds = znormalize(raw) if cfg.normalize else raw

        plan_path = self.run_dir / "fold_plan.json"
        if plan_path.exists():
            with open(plan_path) as fh:
                data = json.load(fh)
            self.plan = FoldPlan(
                k=data["k"],
                seed=data["seed"],
                folds=[
                    (np.array(f["train"]), np.array(f["val"]), np.array(f["test"]))
                    for f in data["folds"]
                ],
            )
        else:
            self.plan = make_folds(self.ds, cfg.folds, cfg.seed)
            with open(plan_path, "w") as fh:
                json.dump(
                    {
                        "k": self.plan.k,
                        "seed": self.plan.seed,
                        "folds": [
                            {"train": tr.tolist(), "val": va.tolist(), "test": te.tolist()}
                            for tr, va, te in self.plan.folds
                        ],
                    },
                    fh,
                )

    def store(self, fold: int) -> FoldStore:
        return FoldStore(self.run_dir / f"fold_{fold:02d}")

    def split(self, fold: int):
        if not 0 <= fold < self.plan.k:
            raise ValueError(f"fold {fold} out of range [0, {self.plan.k})")
        return self.plan.folds[fold]


def _record(store: FoldStore, stage: str) -> None:
    store.record(stage, STAGE_FILES[stage], STAGE_PARENT[stage])


def _parent_hash(store: FoldStore, stage: str) -> str | None:
    parent = STAGE_PARENT[stage]
    return store.stage_hash(parent) if parent else None


def stage_checkpoint(ctx: RunContext, fold: int) -> None:
    train_idx, val_idx, _ = ctx.split(fold)
    cnn_cfg = copy.deepcopy(ctx.cfg.cnn)
    cnn_cfg.seed = stage_seed(ctx.cfg.seed, fold, "cnn")
    model = nn.train_cnn(ctx.ds.subset(train_idx), ctx.ds.subset(val_idx), cnn_cfg)
    store = ctx.store(fold)
    nn.save_checkpoint(model, store.path("checkpoint.bin"), parent_sha256=config_hash(ctx.cfg))
    _record(store, "checkpoint")


def _load_model(store: FoldStore) -> nn.TrainedCNN:
    return nn.load_checkpoint(store.load_path("checkpoint", "checkpoint.bin"))


def stage_thresholds(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    model = _load_model(store)
    train_idx, _, _ = ctx.split(fold)
    thr = mhap.compute_thresholds(
        model,
        ctx.ds.subset(train_idx),
        q=ctx.cfg.quantile,
        pool=ctx.cfg.threshold_pool,
        input_policy=ctx.cfg.input_policy,
    )
    with open(store.path("thresholds.json"), "w") as fh:
        json.dump(
            {
                "version": 1,
                "q": thr.q,
                "pool": thr.pool,
                "table": [t.tolist() for t in thr.table],
                "parent_sha256": _parent_hash(store, "thresholds"),
            },
            fh,
        )
    _record(store, "thresholds")


def _load_thresholds(store: FoldStore) -> mhap.ActivationThresholds:
    with open(store.load_path("thresholds", "thresholds.json")) as fh:
        data = json.load(fh)
    return mhap.ActivationThresholds(
        table=[np.array(t) for t in data["table"]], q=data["q"], pool=data["pool"]
    )


def stage_mhaps(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    model = _load_model(store)
    thr = _load_thresholds(store)
    train_idx, _, test_idx = ctx.split(fold)
    parent = _parent_hash(store, "mhaps")
    for name, idx in (("mhaps_train.txt", train_idx), ("mhaps_test.txt", test_idx)):
        per_layer = mhap.extract_mhaps(
            model,
            ctx.ds.subset(idx),
            thr,
            input_policy=ctx.cfg.input_policy,
            nms=ctx.cfg.nms,
            sample_ids=[int(i) for i in idx],
        )
        mhap.dump_mhaps(per_layer, store.path(name), parent_sha256=parent)
    _record(store, "mhaps")


def _load_mhaps(ctx: RunContext, store: FoldStore, name: str) -> list[list[mhap.MHAP]]:
    path = store.load_path("mhaps", name)
    return mhap.load_mhaps(path, n_layers=len(ctx.cfg.cnn.conv_layers), d=ctx.ds.d)


def stage_clusters(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    mhaps_train = _load_mhaps(ctx, store, "mhaps_train.txt")
    seed = stage_seed(ctx.cfg.seed, fold, "clusters")
    models = []
    for li, mhaps in enumerate(mhaps_train):
        rf_len = 1 + sum(k - 1 for _, k in ctx.cfg.cnn.conv_layers[: li + 1])
        m = ctx.ds.d * rf_len
        if not mhaps:
            models.append(
                kshape.ClusterModel(
                    k=0,
                    centroids=np.zeros((0, m)),
                    assignments=np.zeros(0, dtype=np.int64),
                    inertia=0.0,
                    seed=seed,
                )
            )
            continue
        vectors = np.stack([h.vector() for h in mhaps])
        k = min(ctx.cfg.cluster.counts[li], len(mhaps))
        models.append(
            kshape.kshape_cluster(
                vectors,
                k,
                seed=seed,
                max_iter=ctx.cfg.cluster.max_iter,
                restarts=ctx.cfg.cluster.restarts,
            )
        )
    kshape.save_cluster_models(
        models, store.path("clusters.bin"), parent_sha256=_parent_hash(store, "clusters")
    )
    _record(store, "clusters")


def _load_clusters(store: FoldStore) -> list[kshape.ClusterModel]:
    return kshape.load_cluster_models(store.load_path("clusters", "clusters.bin"))


def stage_graph(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    model = _load_model(store)
    mhaps_train = _load_mhaps(ctx, store, "mhaps_train.txt")
    clusters = _load_clusters(store)
    layer_graphs = []
    assigned = []
    for li, (mhaps, cm) in enumerate(zip(mhaps_train, clusters)):
        cids = kshape.assign_many(np.stack([h.vector() for h in mhaps]), cm) if mhaps and cm.k else np.zeros(0, dtype=np.int64)
        sequences = evograph.cluster_sequences(mhaps, cids)
        layer_graphs.append(evograph.build_layer_graph(sequences, k=cm.k, layer=li + 1))
        assigned.append(list(zip(mhaps, (int(c) for c in cids))))
    merged = evograph.merge_graphs(layer_graphs, assigned, model)
    write_adjacency(merged, store.path("graph.tsv"), parent_sha256=_parent_hash(store, "graph"))
    _record(store, "graph")


def _load_graph(store: FoldStore) -> MergedGraph:
    return read_adjacency(store.load_path("graph", "graph.tsv"))


def stage_embeddings(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    graph = _load_graph(store)
    emb_cfg = copy.deepcopy(ctx.cfg.embedding)
    emb_cfg.seed = stage_seed(ctx.cfg.seed, fold, "embeddings")
    emb = embed_graph(graph, emb_cfg)
    save_embeddings(emb, store.path("embeddings.txt"), parent_sha256=_parent_hash(store, "embeddings"))
    _record(store, "embeddings")


def _assigned_pairs(ctx, mhaps_per_layer, clusters, graph, n_samples, id_map):
    """Per-sample (node_id, window_start) pairs across all layers."""
    offsets = graph.offsets()
    pairs = [[] for _ in range(n_samples)]
    for li, (mhaps, cm) in enumerate(zip(mhaps_per_layer, clusters)):
        if not mhaps or cm.k == 0:
            continue
        cids = kshape.assign_many(np.stack([h.vector() for h in mhaps]), cm)
        for h, cid in zip(mhaps, cids):
            pairs[id_map[h.sample_id]].append((offsets[li] + int(cid), h.a))
    return pairs


def stage_features(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    clusters = _load_clusters(store)
    graph = _load_graph(store)
    emb = load_embeddings(store.load_path("embeddings", "embeddings.txt"))
    train_idx, _, test_idx = ctx.split(fold)
    labels = ctx.ds.labels()
    parent = _parent_hash(store, "features")
    for name, idx, dump in (
        ("features_train.txt", train_idx, "mhaps_train.txt"),
        ("features_test.txt", test_idx, "mhaps_test.txt"),
    ):
        mhaps_per_layer = _load_mhaps(ctx, store, dump)
        id_map = {int(sid): pos for pos, sid in enumerate(idx)}
        pairs = _assigned_pairs(ctx, mhaps_per_layer, clusters, graph, len(idx), id_map)
        X, y = representation.represent_dataset(
            pairs, labels[idx], emb, ctx.cfg.segment_length, ctx.ds.T
        )
        representation.save_features(X, y, store.path(name), parent_sha256=parent)
    _record(store, "features")


def stage_gbdt(ctx: RunContext, fold: int) -> None:
    store = ctx.store(fold)
    X, y = representation.load_features(store.load_path("features", "features_train.txt"))
    cfg = copy.deepcopy(ctx.cfg.gbdt)
    cfg.seed = stage_seed(ctx.cfg.seed, fold, "gbdt")
    model = gbdt.fit(X, y, cfg)
    gbdt.save_model(model, store.path("gbdt.txt"), parent_sha256=_parent_hash(store, "gbdt"))
    _record(store, "gbdt")


def stage_metrics(ctx: RunContext, fold: int) -> dict:
    store = ctx.store(fold)
    model = gbdt.load_model(store.load_path("gbdt", "gbdt.txt"))
    Xte, yte = representation.load_features(store.load_path("features", "features_test.txt"))
    Xtr, ytr = representation.load_features(store.load_path("features", "features_train.txt"))
    graph = _load_graph(store)
    metrics = {
        "fold": fold,
        "test_accuracy": gbdt.evaluate(model, Xte, yte),
        "train_accuracy": gbdt.evaluate(model, Xtr, ytr),
        "n_train": len(ytr),
        "n_test": len(yte),
        "graph": evograph.graph_stats(graph),
        "parent_sha256": _parent_hash(store, "metrics"),
    }
    with open(store.path("metrics.json"), "w") as fh:
        json.dump(metrics, fh, indent=2, sort_keys=True)
    _record(store, "metrics")
    return metrics


STAGE_FUNCS = {
    "checkpoint": stage_checkpoint,
    "thresholds": stage_thresholds,
    "mhaps": stage_mhaps,
    "clusters": stage_clusters,
    "graph": stage_graph,
    "embeddings": stage_embeddings,
    "features": stage_features,
    "gbdt": stage_gbdt,
    "metrics": stage_metrics,
}


def run_fold(ctx: RunContext, fold: int) -> dict:
    """All stages of one fold; returns fold metrics with per-stage timings."""
    timings = {}
    result = None
    for stage in STAGE_ORDER:
        t0 = time.perf_counter()
        try:
            result = STAGE_FUNCS[stage](ctx, fold)
        except Exception as exc:  # artifacts up to the failed stage stay on disk
            raise PipelineStageError(stage, fold, exc) from exc
        timings[stage] = time.perf_counter() - t0
    metrics = dict(result)
    metrics["timing"] = timings
    return metrics


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Cross-validated pipeline run; writes metrics.json / metrics.txt at the
    run directory and returns the report dict."""
    ctx = RunContext(cfg)
    fold_metrics = [run_fold(ctx, fold) for fold in range(ctx.plan.k)]
    accs = [m["test_accuracy"] for m in fold_metrics]
    stage_totals = {
        stage: float(sum(m["timing"][stage] for m in fold_metrics)) for stage in STAGE_ORDER
    }
    total_time = sum(stage_totals.values()) or 1.0
    report = {
        "config_sha256": config_hash(cfg),
        "folds": [
            {k: v for k, v in m.items() if k != "timing"} for m in fold_metrics
        ],
        "accuracy_mean": float(np.mean(accs)),
        "accuracy_std": float(np.std(accs)),
        "timing": {
            "per_stage_seconds": stage_totals,
            "per_stage_share": {s: t / total_time for s, t in stage_totals.items()},
            "total_seconds": total_time,
        },
    }
    with open(ctx.run_dir / "metrics.json", "w") as fh:
        json.dump(report, fh, indent=2, sort_keys=True)
    with open(ctx.run_dir / "metrics.txt", "w") as fh:
        fh.write(format_report(report))
    return report


def format_report(report: dict) -> str:
    lines = ["cross-validation report", "======================="]
    for m in report["folds"]:
        g = m["graph"]
        lines.append(
            f"fold {m['fold']:2d}: test_accuracy={m['test_accuracy']:.4f} "
            f"(train {m['train_accuracy']:.4f}, n_test={m['n_test']}, "
            f"graph: {g['nodes']} nodes / {g['edges']} edges / weight {g['total_weight']})"
        )
    lines.append(
        f"mean accuracy: {report['accuracy_mean']:.4f} +/- {report['accuracy_std']:.4f}"
    )
    lines.append("stage timing (share of total):")
    for stage, seconds in report["timing"]["per_stage_seconds"].items():
        share = report["timing"]["per_stage_share"][stage]
        lines.append(f"  {stage:<12s} {seconds:8.2f}s  {share:6.1%}")
    return "\n".join(lines) + "\n"


@dataclass
class RunArtifacts:
    """Handle to one fold's persisted artifacts."""

    run_dir: Path
    fold: int

    @property
    def store(self) -> FoldStore:
        return FoldStore(Path(self.run_dir) / f"fold_{self.fold:02d}")


@dataclass
class ExplanationReport:
    sample_id: int
    label: int
    predicted: int | None
    entries: list[dict]
    path_nodes: list[int]
    path_labels: list[str]
    text: str
    dot: str


def explain_sample(artifacts: RunArtifacts, sample_id: int, cfg: PipelineConfig) -> ExplanationReport:
    """Per-sample report: every MHAP (window, channels, layer, cluster node,
    peak activation) in temporal order plus a DOT export of the merged graph
    with the sample's node path highlighted."""
    store = artifacts.store
    raw = load_dataset(cfg.dataset, cfg.format)
    ds = znormalize(raw) if cfg.normalize else raw
    if not 0 <= sample_id < len(ds):
        raise ValueError(f"unknown sample id {sample_id}")
    model = _load_model(store)
    thr = _load_thresholds(store)
    clusters = _load_clusters(store)
    graph = _load_graph(store)
    offsets = graph.offsets()

    sub = ds.subset([sample_id])
    per_layer = mhap.extract_mhaps(
        model, sub, thr, input_policy=cfg.input_policy, nms=cfg.nms, sample_ids=[sample_id]
    )
    records = []
    for li, mhaps in enumerate(per_layer):
        if not mhaps or clusters[li].k == 0:
            continue
        cids = kshape.assign_many(np.stack([h.vector() for h in mhaps]), clusters[li])
        for h, cid in zip(mhaps, cids):
            node = offsets[li] + int(cid)
            records.append(
                {
                    "window": [h.a, h.b],
                    "active_channels": [i for i, on in enumerate(h.mask.active) if on],
                    "layer": h.layer,
                    "channel": h.channel,
                    "neuron": h.neuron,
                    "cluster": int(cid),
                    "node": node,
                    "node_label": graph.node_label(node),
                    "peak_activation": h.peak,
                    "threshold": thr.threshold(h.layer, h.channel),
                }
            )
    records.sort(key=lambda r: (r["window"][0], r["layer"], r["active_channels"], r["channel"]))
    path_nodes = [r["node"] for r in records]
    path_labels = [r["node_label"] for r in records]

    predicted = None
    if (store.dir / "gbdt.txt").exists() and (store.dir / "embeddings.txt").exists():
        emb = load_embeddings(store.load_path("embeddings", "embeddings.txt"))
        pairs = [(r["node"], r["window"][0]) for r in records]
        rep = representation.represent_sample(pairs, emb, cfg.segment_length, ds.T, sample_id)
        model_gbdt = gbdt.load_model(store.load_path("gbdt", "gbdt.txt"))
        _, labels = gbdt.predict(model_gbdt, rep.vector[None])
        predicted = int(labels[0])

    lines = [f"sample {sample_id} (label {ds.samples[sample_id].label}"]
    lines[0] += f", predicted {predicted})" if predicted is not None else ")"
    if not records:
        lines.append("no highly activated periods")
    else:
        lines.append("highly activated periods in temporal order:")
        for r in records:
            chans = ",".join(str(c) for c in r["active_channels"])
            lines.append(
                f"  t[{r['window'][0]:>3d}..{r['window'][1]:>3d}] layer {r['layer']} "
                f"filter {r['channel']:>3d} channels {{{chans}}} -> {r['node_label']} "
                f"(node {r['node']}, activation {r['peak_activation']:.4f} >= "
                f"threshold {r['threshold']:.4f})"
            )
        lines.append("node path: " + " -> ".join(path_labels))
    text = "\n".join(lines) + "\n"
    dot = evograph.to_dot(graph, highlight_path=path_nodes)
    return ExplanationReport(
        sample_id=sample_id,
        label=ds.samples[sample_id].label,
        predicted=predicted,
        entries=records,
        path_nodes=path_nodes,
        path_labels=path_labels,
        text=text,
        dot=dot,
    )


SWEEP_PARAMS = ("embedding.dim", "segment_length", "cluster.counts")


def sweep(cfg: PipelineConfig, parameter: str, grid) -> list[dict]:
    """One single-fold pipeline run per grid value; returns accuracy rows."""
    if parameter not in SWEEP_PARAMS:
        raise ValueError(f"parameter must be one of {SWEEP_PARAMS}")
    rows = []
    for value in grid:
        run_cfg = copy.deepcopy(cfg)
        if parameter == "embedding.dim":
            run_cfg.embedding.dim = int(value)
        elif parameter == "segment_length":
            run_cfg.segment_length = int(value)
        else:
            run_cfg.cluster.counts = tuple(int(v) for v in value)
        tag = str(value).replace(" ", "").replace("(", "").replace(")", "").replace(",", "-")
        run_cfg.out = str(Path(cfg.out) / f"sweep_{parameter.replace('.', '_')}_{tag}")
        ctx = RunContext(run_cfg)
        metrics = run_fold(ctx, 0)
        rows.append({"parameter": parameter, "value": value, "accuracy": metrics["test_accuracy"]})
    return rows
