"""Cluster-accuracy evaluation via optimal assignment and the continual-learning metrics."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.optimize import linear_sum_assignment


class MetricError(Exception):
    pass


@dataclass
class StepReport:
    """Per-step evaluation: overall/old/new accuracy plus forgetting and discovery folds."""

    step_index: int
    m_all: float
    m_old: float | None
    m_new: float | None
    m_f: float | None
    m_d: float | None
    novel_class_count_estimate: int | None = None
    assignment: dict[int, int] = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {
            "step_index": self.step_index,
            "m_all": self.m_all,
            "m_old": self.m_old,
            "m_new": self.m_new,
            "m_f": self.m_f,
            "m_d": self.m_d,
            "novel_class_count_estimate": self.novel_class_count_estimate,
            "assignment": {str(k): v for k, v in sorted(self.assignment.items())},
        }


def hungarian(cost: np.ndarray):
    """Minimum-cost one-to-one assignment; rectangular inputs are zero-padded square.

    Returns a list of (row, col) pairs covering min(n, m) real rows/cols.
    """
    cost = np.asarray(cost, dtype=np.float64)
    if cost.size == 0:
        raise MetricError("empty cost matrix")
    if not np.all(np.isfinite(cost)):
        raise MetricError("non-finite costs")
    n, m = cost.shape
    k = max(n, m)
    padded = np.zeros((k, k))
    padded[:n, :m] = cost
    rows, cols = linear_sum_assignment(padded)
    return [(int(r), int(c)) for r, c in zip(rows, cols) if r < n and c < m]


def cluster_accuracy(pred: np.ndarray, truth: np.ndarray):
    """Fraction of samples matched under the optimal cluster-to-class assignment.

    Returns (accuracy, assignment dict predicted id -> truth id).
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    if len(pred) != len(truth):
        raise MetricError("prediction/truth length mismatch")
    if len(pred) == 0:
        raise MetricError("empty prediction")
    pred_ids = np.unique(pred)
    true_ids = np.unique(truth)
    cont = np.zeros((len(pred_ids), len(true_ids)), dtype=np.int64)
    pi = {int(c): i for i, c in enumerate(pred_ids)}
    ti = {int(c): i for i, c in enumerate(true_ids)}
    for p, t in zip(pred, truth):
        cont[pi[int(p)], ti[int(t)]] += 1
    pairs = hungarian(-cont.astype(np.float64))
    assignment = {int(pred_ids[r]): int(true_ids[c]) for r, c in pairs}
    matched = sum(cont[r, c] for r, c in pairs)
    return matched / len(pred), assignment


def max_forgetting(initial_old_acc: float, old_accs: list[float]) -> float:
    """Largest drop of old-class accuracy across the incremental steps."""
    if not old_accs:
        raise MetricError("no incremental old accuracies")
    return max(initial_old_acc - a for a in old_accs)


def mean_discovery(novel_accs: list[float]) -> float:
    """Average novel-class accuracy over the completed incremental steps."""
    if not novel_accs:
        raise MetricError("no novel accuracies")
    return float(np.mean(novel_accs))


def step_metrics(pred: np.ndarray, truth: np.ndarray, old_class_set,
                 prior_reports: list[StepReport],
                 novel_class_count_estimate: int | None = None) -> StepReport:
    """Evaluate one step and fold the forgetting/discovery metrics.

    A single global assignment on the full validation set scores the old and
    new subsets; per-subset re-solving would inflate them. Forgetting is the
    largest drop of old accuracy from the initial step; discovery is the mean
    of the per-step new accuracies over the completed incremental steps. An
    empty subset reports its metric as absent (None), not 0.
    """
    pred = np.asarray(pred, dtype=np.int64)
    truth = np.asarray(truth, dtype=np.int64)
    old_class_set = set(int(c) for c in old_class_set)
    m_all, assignment = cluster_accuracy(pred, truth)
    mapped = np.array([assignment.get(int(p), -1) for p in pred])
    correct = mapped == truth

    old_mask = np.isin(truth, np.array(sorted(old_class_set), dtype=np.int64))
    m_old = float(correct[old_mask].mean()) if old_mask.any() else None
    new_mask = ~old_mask
    m_new = float(correct[new_mask].mean()) if new_mask.any() else None

    step_index = len(prior_reports)
    m_f = m_d = None
    if prior_reports:
        initial_old = prior_reports[0].m_old
        if initial_old is None:
            raise MetricError("initial report lacks an old-class accuracy")
        later = [r.m_old for r in prior_reports[1:] if r.m_old is not None]
        if m_old is not None:
            later = later + [m_old]
        if later:
            m_f = max_forgetting(initial_old, later)
        novel = [r.m_new for r in prior_reports[1:] if r.m_new is not None]
        if m_new is not None:
            novel = novel + [m_new]
        if novel:
            m_d = mean_discovery(novel)
    return StepReport(step_index, float(m_all), m_old, m_new, m_f, m_d,
                      novel_class_count_estimate, assignment)
