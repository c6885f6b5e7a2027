"""Embedding datasets, the hidden-ratio incremental scenario builder, and the EMB1 binary format."""

from __future__ import annotations

import json
import math
import struct
from dataclasses import dataclass, field

import numpy as np

from .rng import stream

EMB1_MAGIC = b"EMB1"
EMB1_VERSION = 1
_HEADER = struct.Struct("<4sBBHII")


class DataError(Exception):
    """Malformed dataset, file, or scenario request."""


@dataclass
class EmbeddingDataset:
    """A matrix of feature vectors with optional ground-truth labels.

    Labels, when present, are for evaluation only; the learning pipeline sees
    them on the initial (labeled) step and never afterwards.
    """

    features: np.ndarray          # N x d_in, float32
    labels: np.ndarray | None     # N ints, or None
    ids: np.ndarray               # N unique sample ids

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float32)
        if self.features.ndim != 2:
            raise DataError("features must be a 2-D matrix")
        if not np.all(np.isfinite(self.features)):
            raise DataError("features contain non-finite entries")
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if len(self.ids) != len(self.features):
            raise DataError("ids length mismatch")
        if len(np.unique(self.ids)) != len(self.ids):
            raise DataError("ids are not unique")
        if self.labels is not None:
            self.labels = np.asarray(self.labels, dtype=np.int64)
            if len(self.labels) != len(self.features):
                raise DataError("labels length mismatch")
            if np.any(self.labels < 0):
                raise DataError("labels must be non-negative")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx: np.ndarray, keep_labels: bool = True) -> "EmbeddingDataset":
        labels = self.labels[idx] if (keep_labels and self.labels is not None) else None
        return EmbeddingDataset(self.features[idx], labels, self.ids[idx])


@dataclass
class ScenarioConfig:
    """How to carve a labeled source set into hidden-ratio incremental steps.

    The fractions mirror the usual benchmark splits (e.g. 0.8/0.2 classes,
    0.2 of each old class's samples carried into the unlabeled step); they are
    used only to generate the data and are never exposed to the learner.
    """

    old_class_fraction: float = 0.8
    old_sample_carryover: float = 0.2
    step_class_fractions: tuple[float, ...] | None = None  # default: one step with the rest
    validation_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.old_class_fraction < 1.0:
            raise DataError("old_class_fraction must lie in (0, 1)")
        if not 0.0 <= self.old_sample_carryover < 1.0:
            raise DataError("old_sample_carryover must lie in [0, 1)")
        if not 0.0 <= self.validation_fraction < 1.0:
            raise DataError("validation_fraction must lie in [0, 1)")
        if self.step_class_fractions is None:
            self.step_class_fractions = (1.0 - self.old_class_fraction,)
        self.step_class_fractions = tuple(float(f) for f in self.step_class_fractions)
        for f in self.step_class_fractions:
            if not 0.0 < f < 1.0:
                raise DataError("step class fractions must lie in (0, 1)")
        total = self.old_class_fraction + sum(self.step_class_fractions)
        if abs(total - 1.0) > 1e-9:
            raise DataError("class fractions must sum to 1")


@dataclass
class StepDataset:
    """One step of the scenario: training data plus the evaluation-only truth."""

    step_index: int
    train: EmbeddingDataset                 # labeled at step 0, unlabeled afterwards
    holdout_truth: np.ndarray | None        # hidden labels of `train` for steps >= 1
    validation: EmbeddingDataset            # all classes seen so far, labeled
    class_ids: tuple[int, ...] = ()         # dense classes introduced at this step


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def build_scenario(src: EmbeddingDataset, cfg: ScenarioConfig) -> list[StepDataset]:
    """Partition a labeled dataset into the incremental discovery scenario.

    Classes are split between the initial step and the incremental steps by
    cfg's fractions (round half up, remainder classes to step 0). Samples of a
    class introduced at step s keep (1 - carryover) at s and spread the rest
    evenly over the later steps. Pure function of (src, cfg).

    Returns one StepDataset per step; train labels are stripped for step >= 1
    and kept aside as holdout_truth.
    """
    if src.labels is None:
        raise DataError("build_scenario requires a labeled source dataset")
    orig_classes = np.unique(src.labels)
    dense = {int(c): i for i, c in enumerate(orig_classes)}
    labels = np.array([dense[int(y)] for y in src.labels], dtype=np.int64)
    n_classes = len(orig_classes)
    counts = np.bincount(labels, minlength=n_classes)
    if counts.min() < 2:
        raise DataError("every class needs at least 2 samples")

    n_steps = len(cfg.step_class_fractions)
    rng = stream(cfg.seed, "scenario")

    # class partition: old classes first, remainder of rounding goes to step 0
    order = rng.permutation(n_classes)
    per_step = [_round_half_up(f * n_classes) for f in cfg.step_class_fractions]
    n_old = n_classes - sum(per_step)
    if n_old < 1 or min(per_step) < 1:
        raise DataError("class fractions leave an empty step")
    # dense ids follow introduction order: step-0 classes are 0..n_old-1 and
    # each later step continues the range, so freshly discovered ids never
    # collide with existing ones
    class_steps = np.empty(n_classes, dtype=np.int64)
    remap = np.empty(n_classes, dtype=np.int64)
    pos = 0
    step_classes: list[list[int]] = []
    for s, cnt in enumerate([n_old] + per_step):
        cls = sorted(int(c) for c in order[pos:pos + cnt])
        ids = list(range(pos, pos + cnt))
        for c, i in zip(cls, ids):
            remap[c] = i
        step_classes.append(ids)
        class_steps[ids] = s
        pos += cnt
    labels = remap[labels]

    # per-class validation holdout, carved before scenario construction
    train_pool: dict[int, np.ndarray] = {}
    val_idx: list[np.ndarray] = []
    for c in range(n_classes):
        idx = np.flatnonzero(labels == c)
        idx = idx[rng.permutation(len(idx))]
        n_val = _round_half_up(cfg.validation_fraction * len(idx))
        if len(idx) - n_val < 1:
            raise DataError(f"class {c} has too few samples for the validation holdout")
        val_idx.append(idx[:n_val])
        train_pool[c] = idx[n_val:]

    # distribute each class's training pool over its introduction step and later ones
    step_train: list[list[np.ndarray]] = [[] for _ in range(n_steps + 1)]
    last = n_steps
    for c in range(n_classes):
        s = int(class_steps[c])
        idx = train_pool[c]
        m = len(idx)
        if s == last or cfg.old_sample_carryover == 0.0:
            step_train[s].append(idx)
            continue
        carry = _round_half_up(cfg.old_sample_carryover * m)
        if carry < 1 or m - carry < 1:
            raise DataError(f"class {c} has too few samples for the carryover split")
        step_train[s].append(idx[carry:])
        later = range(s + 1, last + 1)
        base, extra = divmod(carry, len(later))
        start = 0
        for j, t in enumerate(later):
            take = base + (1 if j < extra else 0)
            step_train[t].append(idx[start:start + take])
            start += take

    val_all = np.sort(np.concatenate(val_idx)) if val_idx else np.array([], dtype=np.int64)
    steps: list[StepDataset] = []
    seen: list[int] = []
    for s in range(n_steps + 1):
        seen.extend(step_classes[s])
        idx = np.sort(np.concatenate(step_train[s])) if step_train[s] else np.array([], dtype=np.int64)
        v_mask = np.isin(labels[val_all], np.array(seen, dtype=np.int64))
        validation = EmbeddingDataset(
            src.features[val_all[v_mask]], labels[val_all[v_mask]], src.ids[val_all[v_mask]])
        if s == 0:
            train = EmbeddingDataset(src.features[idx], labels[idx], src.ids[idx])
            truth = None
        else:
            train = EmbeddingDataset(src.features[idx], None, src.ids[idx])
            truth = labels[idx].copy()
        steps.append(StepDataset(s, train, truth, validation, tuple(step_classes[s])))
    return steps


def class_map(src: EmbeddingDataset) -> dict[int, int]:
    """Original label -> dense 0..C-1 index in sorted label order."""
    if src.labels is None:
        raise DataError("class_map requires labels")
    return {int(c): i for i, c in enumerate(np.unique(src.labels))}


def scenario_class_map(src: EmbeddingDataset, steps: list[StepDataset]) -> dict[int, int]:
    """Original label -> the dense id build_scenario assigned under this config.

    Recovered by matching sample ids between the source and the step datasets,
    so it stays correct for any partition the builder produced.
    """
    if src.labels is None:
        raise DataError("scenario_class_map requires labels")
    by_id = {int(i): int(y) for i, y in zip(src.ids, src.labels)}
    out: dict[int, int] = {}
    for s in steps:
        pairs = [(s.validation.ids, s.validation.labels)]
        if s.train.labels is not None:
            pairs.append((s.train.ids, s.train.labels))
        elif s.holdout_truth is not None:
            pairs.append((s.train.ids, s.holdout_truth))
        for ids, dense in pairs:
            for i, y in zip(ids, dense):
                out[by_id[int(i)]] = int(y)
    return out


def generate_synthetic(n_classes: int, per_class: int, d_in: int,
                       separation: float, seed: int) -> EmbeddingDataset:
    """Isotropic unit-variance Gaussian classes with mutually separated means.

    Means are drawn on a scaled random frame and rescaled until every pair is
    at least `separation` apart, so nearest-centroid labeling is near-perfect
    for large separations. Deterministic given the seed.
    """
    if n_classes < 2 or per_class < 2:
        raise DataError("need n_classes >= 2 and per_class >= 2")
    if d_in < 1:
        raise DataError("d_in must be positive")
    if separation <= 0:
        raise DataError("separation must be positive")
    rng = stream(seed, "synthetic")
    means = rng.standard_normal((n_classes, d_in))
    # rescale so the closest pair of means is exactly `separation` apart
    diff = means[:, None, :] - means[None, :, :]
    dist = np.sqrt((diff ** 2).sum(-1))
    np.fill_diagonal(dist, np.inf)
    means *= separation / dist.min()
    feats = means.repeat(per_class, axis=0) + rng.standard_normal((n_classes * per_class, d_in))
    labels = np.arange(n_classes).repeat(per_class)
    return EmbeddingDataset(feats.astype(np.float32), labels, np.arange(len(labels)))


def write_emb1(ds: EmbeddingDataset, path) -> None:
    """Write the EMB1 binary layout: header, float32 features, optional int32 labels."""
    n, d = ds.features.shape
    flags = 1 if ds.labels is not None else 0
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(EMB1_MAGIC, EMB1_VERSION, flags, 0, n, d))
        fh.write(np.ascontiguousarray(ds.features, dtype="<f4").tobytes())
        if ds.labels is not None:
            fh.write(ds.labels.astype("<i4").tobytes())


def read_emb1(path) -> EmbeddingDataset:
    """Read an EMB1 file back; ids are assigned 0..N-1 in row order."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        if len(head) < _HEADER.size:
            raise DataError("truncated EMB1 header")
        magic, version, flags, reserved, n, d = _HEADER.unpack(head)
        if magic != EMB1_MAGIC:
            raise DataError(f"bad magic {magic!r}")
        if version != EMB1_VERSION:
            raise DataError(f"unsupported EMB1 version {version}")
        if n * d > (1 << 34):
            raise DataError("N*d too large")
        payload = fh.read(4 * n * d)
        if len(payload) < 4 * n * d:
            raise DataError("truncated EMB1 feature payload")
        feats = np.frombuffer(payload, dtype="<f4").reshape(n, d)
        labels = None
        if flags & 1:
            lab = fh.read(4 * n)
            if len(lab) < 4 * n:
                raise DataError("truncated EMB1 label payload")
            labels = np.frombuffer(lab, dtype="<i4").astype(np.int64)
    return EmbeddingDataset(feats.copy(), labels, np.arange(n))


def write_manifest(path, step_files: list[dict], cmap: dict[int, int]) -> None:
    """Manifest: step file roles plus the original-to-dense class map."""
    doc = {"steps": step_files, "class_map": {str(k): v for k, v in cmap.items()}}
    with open(path, "w") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)


def read_manifest(path) -> dict:
    with open(path) as fh:
        return json.load(fh)
