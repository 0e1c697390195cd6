"""Multivariate time-series datasets: loading, z-normalization, stratified
fold plans, and channel-masked input sets.

Two on-disk formats are supported:

* ``tabular-per-sample``: a directory containing ``meta.json`` (keys ``d``,
  ``T``, ``C``, ``class_names``) and one headerless CSV per sample with d
  rows of T comma-separated values, named ``<id>_<label>.csv``. Samples are
  ordered by filename (lexicographic).
* ``single-file``: one CSV whose rows are ``label, ch0_t0..ch0_t{T-1},
  ch1_t0, ..`` with a ``meta.json`` next to it giving ``d`` and ``T``.
"""

from __future__ import annotations

import itertools
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

TABULAR = "tabular-per-sample"
SINGLE_FILE = "single-file"
FORMATS = (TABULAR, SINGLE_FILE)

# full power set of channel masks is only built for small d
POWERSET_MAX_CHANNELS = 10


@dataclass
class MTSSample:
    """One labeled series: values has shape (d, T), label in [0, C)."""

    values: np.ndarray
    label: int
    orig_length: int | None = None

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def T(self) -> int:
        return self.values.shape[1]


@dataclass
class MTSDataset:
    samples: list[MTSSample]
    d: int
    T: int
    C: int
    class_names: list[str] | None = None

    def __len__(self) -> int:
        return len(self.samples)

    def stack(self) -> np.ndarray:
        """All sample values as one (n, d, T) array."""
        return np.stack([s.values for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def subset(self, indices) -> "MTSDataset":
        return MTSDataset(
            samples=[self.samples[i] for i in indices],
            d=self.d,
            T=self.T,
            C=self.C,
            class_names=self.class_names,
        )

    def validate(self) -> None:
        if not self.samples:
            raise ValueError("dataset has no samples")
        for i, s in enumerate(self.samples):
            if s.values.shape != (self.d, self.T):
                raise ValueError(
                    f"sample {i} has shape {s.values.shape}, expected {(self.d, self.T)}"
                )
            if not np.isfinite(s.values).all():
                c, t = np.argwhere(~np.isfinite(s.values))[0]
                raise ValueError(f"non-finite value at (sample {i}, channel {c}, t {t})")
            if not 0 <= s.label < self.C:
                raise ValueError(f"sample {i} label {s.label} outside [0, {self.C})")
        counts = np.bincount(self.labels(), minlength=self.C)
        if (counts == 0).any():
            empty = int(np.argmin(counts))
            raise ValueError(f"class {empty} has no samples")


@dataclass(frozen=True)
class ChannelMask:
    """Active-channel selector; at least one channel must be active."""

    active: tuple[bool, ...]

    def __post_init__(self):
        if not any(self.active):
            raise ValueError("mask must keep at least one channel active")

    @property
    def bits(self) -> str:
        return "".join("1" if a else "0" for a in self.active)

    def apply(self, sample: MTSSample) -> MTSSample:
        masked = sample.values.copy()
        masked[[i for i, a in enumerate(self.active) if not a], :] = 0.0
        return MTSSample(values=masked, label=sample.label, orig_length=sample.orig_length)


@dataclass
class FoldPlan:
    k: int
    folds: list[tuple[np.ndarray, np.ndarray, np.ndarray]]  # (train, val, test)
    seed: int


def _read_meta(path: Path) -> dict:
    meta_path = path / "meta.json" if path.is_dir() else path.parent / "meta.json"
    if not meta_path.exists():
        raise FileNotFoundError(f"missing meta.json next to {path}")
    with open(meta_path) as fh:
        return json.load(fh)


def _parse_csv_matrix(path: Path) -> np.ndarray:
    rows = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rows.append([float(cell) for cell in line.split(",")])
            except ValueError as exc:
                raise ValueError(f"non-numeric cell in {path}: {exc}") from exc
    return rows


def _remap_labels(raw_labels: list[str], class_names: list[str] | None):
    if class_names is None:
        # sort numerically when every label parses as a number
        try:
            order = sorted(set(raw_labels), key=float)
        except ValueError:
            order = sorted(set(raw_labels))
        class_names = [str(x) for x in order]
    index = {name: i for i, name in enumerate(class_names)}
    unknown = [l for l in raw_labels if l not in index]
    if unknown:
        raise ValueError(f"label {unknown[0]!r} not in class_names {class_names}")
    return [index[l] for l in raw_labels], class_names


def load_dataset(path, format: str) -> MTSDataset:
    """Load and validate a dataset; labels are remapped to contiguous [0, C).

    Samples shorter than the longest one are padded with trailing zeros
    (original lengths recorded per sample).
    """
    path = Path(path)
    if format not in FORMATS:
        raise ValueError(f"unknown format {format!r}, expected one of {FORMATS}")
    if not path.exists():
        raise FileNotFoundError(f"dataset path {path} does not exist")
    meta = _read_meta(path)
    d = int(meta["d"])

    raw_values: list[np.ndarray] = []
    raw_labels: list[str] = []
    if format == TABULAR:
        files = sorted(p for p in path.iterdir() if p.suffix == ".csv")
        if not files:
            raise FileNotFoundError(f"no sample CSV files in {path}")
        for f in files:
            stem = f.stem
            if "_" not in stem:
                raise ValueError(f"sample file {f.name} does not match <id>_<label>.csv")
            label = stem.rsplit("_", 1)[1]
            rows = _parse_csv_matrix(f)
            if len(rows) != d:
                raise ValueError(f"{f.name}: expected {d} channel rows, got {len(rows)}")
            lengths = {len(r) for r in rows}
            if len(lengths) != 1:
                raise ValueError(f"{f.name}: ragged channel lengths {sorted(lengths)}")
            raw_values.append(np.array(rows, dtype=np.float64))
            raw_labels.append(label)
    else:
        rows = _parse_csv_matrix(path)
        T = int(meta["T"])
        for i, row in enumerate(rows):
            if len(row) != 1 + d * T:
                raise ValueError(
                    f"row {i}: expected 1 + d*T = {1 + d * T} cells, got {len(row)}"
                )
            raw_labels.append(_format_label(row[0]))
            raw_values.append(np.array(row[1:], dtype=np.float64).reshape(d, T))

    labels, class_names = _remap_labels(raw_labels, meta.get("class_names"))

    T_max = max(v.shape[1] for v in raw_values)
    samples = []
    for i, (v, y) in enumerate(zip(raw_values, labels)):
        orig = v.shape[1]
        if not np.isfinite(v).all():
            c, t = np.argwhere(~np.isfinite(v))[0]
            raise ValueError(f"non-finite value at (sample {i}, channel {c}, t {t})")
        if orig < T_max:
            v = np.pad(v, ((0, 0), (0, T_max - orig)))
        samples.append(MTSSample(values=v, label=y, orig_length=orig))

    ds = MTSDataset(samples=samples, d=d, T=T_max, C=len(class_names), class_names=class_names)
    ds.validate()
    if "C" in meta and int(meta["C"]) != ds.C:
        raise ValueError(f"meta.json declares C={meta['C']} but found {ds.C} classes")
    return ds


def _format_label(value: float) -> str:
    return str(int(value)) if float(value).is_integer() else str(value)


def save_dataset(ds: MTSDataset, path, format: str) -> None:
    """Inverse of load_dataset, used by round-trip tests and the scripts."""
    path = Path(path)
    names = ds.class_names or [str(i) for i in range(ds.C)]
    meta = {"d": ds.d, "T": ds.T, "C": ds.C, "class_names": names}
    if format == TABULAR:
        path.mkdir(parents=True, exist_ok=True)
        with open(path / "meta.json", "w") as fh:
            json.dump(meta, fh)
        width = len(str(len(ds.samples)))
        for i, s in enumerate(ds.samples):
            fname = path / f"{i:0{width}d}_{names[s.label]}.csv"
            with open(fname, "w") as fh:
                for row in s.values:
                    fh.write(",".join(repr(float(x)) for x in row) + "\n")
    elif format == SINGLE_FILE:
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path.parent / "meta.json", "w") as fh:
            json.dump(meta, fh)
        with open(path, "w") as fh:
            for s in ds.samples:
                cells = [str(s.label)] + [repr(float(x)) for x in s.values.ravel()]
                fh.write(",".join(cells) + "\n")
    else:
        raise ValueError(f"unknown format {format!r}")


def znormalize(ds: MTSDataset) -> MTSDataset:
    """Per (sample, channel) z-normalization with population std.

    Constant channels map to all-zeros. Idempotent to within float error.
    """
    out = []
    for s in ds.samples:
        v = s.values
        mean = v.mean(axis=1, keepdims=True)
        std = v.std(axis=1, keepdims=True)
        normed = np.where(std > 1e-12, (v - mean) / np.where(std > 1e-12, std, 1.0), 0.0)
        out.append(MTSSample(values=normed, label=s.label, orig_length=s.orig_length))
    return MTSDataset(samples=out, d=ds.d, T=ds.T, C=ds.C, class_names=ds.class_names)


def make_folds(ds: MTSDataset, k: int, seed: int) -> FoldPlan:
    """Stratified k-fold plan with rotating val/test blocks.

    Per class, indices are shuffled once and cut into k blocks; fold i uses
    block i as test and block i+1 (mod k) as val, the rest as train. At the
    default k=10 this yields the 80/10/10 split; in general it is
    ((k-2)/k, 1/k, 1/k), so k must be at least 3.
    """
    if k < 3:
        raise ValueError("k must be >= 3 (one block each for val and test)")
    labels = ds.labels()
    rng = np.random.default_rng(seed)
    per_class_blocks: list[list[np.ndarray]] = []
    for c in range(ds.C):
        idx = np.flatnonzero(labels == c)
        if len(idx) < k:
            raise ValueError(f"class {c} has {len(idx)} samples, fewer than k={k}")
        rng.shuffle(idx)
        per_class_blocks.append([b for b in np.array_split(idx, k)])

    folds = []
    for i in range(k):
        test = np.sort(np.concatenate([blocks[i] for blocks in per_class_blocks]))
        val = np.sort(np.concatenate([blocks[(i + 1) % k] for blocks in per_class_blocks]))
        train_parts = []
        for blocks in per_class_blocks:
            train_parts.extend(blocks[j] for j in range(k) if j not in (i, (i + 1) % k))
        train = np.sort(np.concatenate(train_parts))
        folds.append((train, val, test))
    return FoldPlan(k=k, folds=folds, seed=seed)


def enumerate_masks(d: int, policy: str) -> list[ChannelMask]:
    """Channel-combination masks in deterministic (size, lexicographic) order.

    ``full-powerset`` yields all 2^d - 1 non-empty subsets. ``capped`` yields
    singletons, pairs, and the all-channels mask. ``auto`` picks powerset for
    d <= POWERSET_MAX_CHANNELS, capped otherwise.
    """
    if policy == "auto":
        policy = "full-powerset" if d <= POWERSET_MAX_CHANNELS else "capped"
    masks: list[tuple[int, ...]] = []
    if policy == "full-powerset":
        for size in range(1, d + 1):
            masks.extend(itertools.combinations(range(d), size))
    elif policy == "capped":
        masks.extend(itertools.combinations(range(d), 1))
        if d >= 2:
            masks.extend(itertools.combinations(range(d), 2))
        if d > 2:
            masks.append(tuple(range(d)))
    else:
        raise ValueError(f"unknown input-set policy {policy!r}")
    out = []
    for subset in masks:
        out.append(ChannelMask(active=tuple(i in subset for i in range(d))))
    return out


def build_input_set(sample: MTSSample, policy: str = "auto") -> list[tuple[ChannelMask, MTSSample]]:
    """Masked variants of a sample: active channels untouched, others zeroed."""
    return [(m, m.apply(sample)) for m in enumerate_masks(sample.d, policy)]
