"""Pseudo-labeling of the separated sets.

Old-split samples take the previous model's nearest-proxy prediction; new-split
samples are clustered with affinity propagation, which also yields the novel
class count and the initial position of each new proxy.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .heads import ProjectionHead, ProxyBank, TrainError, embed_batch


@dataclass
class PseudoEntry:
    index: int              # row in the step's feature matrix
    sample_id: int
    pseudo_label: int       # dense class index
    provenance: str         # "old-pred" | "cluster"


@dataclass
class PseudoLabeledSet:
    entries: list[PseudoEntry]
    novel_class_count: int = 0
    cluster_centroids: np.ndarray = field(default_factory=lambda: np.zeros((0, 0)))


@dataclass
class ApConfig:
    damping: float = 0.9
    max_iter: int = 500
    convergence_window: int = 30
    preference: float | str = "median"

    def __post_init__(self):
        if not 0.5 < self.damping < 1.0:
            raise TrainError("damping must lie in (0.5, 1)")
        if self.max_iter < 1 or self.convergence_window < 1:
            raise TrainError("iteration counts must be positive")


def label_old(old_ids: np.ndarray, embeddings: np.ndarray,
              prev_head: ProjectionHead, prev_bank: ProxyBank) -> list[PseudoEntry]:
    """Nearest old proxy under the previous head; ties go to the lowest class id."""
    old_ids = np.asarray(old_ids, dtype=np.int64)
    if len(old_ids) == 0:
        return []
    Z = np.asarray(embeddings, dtype=np.float64)
    Pn = prev_bank.proxies / np.linalg.norm(prev_bank.proxies, axis=1, keepdims=True)
    # sort the bank by class id so argmax ties resolve to the lowest id
    order = np.argsort(prev_bank.class_ids)
    sims = Z / np.linalg.norm(Z, axis=1, keepdims=True) @ Pn[order].T
    best = prev_bank.class_ids[order][np.argmax(np.round(sims, 12), axis=1)]
    return [PseudoEntry(int(i), int(i), int(c), "old-pred") for i, c in zip(old_ids, best[old_ids])]


def affinity_propagation(points: np.ndarray, cfg: ApConfig):
    """Responsibility/availability message passing on s(i,k) = -||z_i - z_k||^2.

    The diagonal is the preference (median of off-diagonal similarities by
    default); messages are damped by cfg.damping; iteration stops once the
    exemplar set is unchanged for cfg.convergence_window sweeps. Returns
    (exemplar indices, assignment, info dict with convergence flag).
    """
    X = np.asarray(points, dtype=np.float64)
    m = len(X)
    if m < 2:
        raise TrainError("affinity propagation needs at least 2 points")
    d2 = ((X[:, None, :] - X[None, :, :]) ** 2).sum(-1)
    S = -d2
    off = S[~np.eye(m, dtype=bool)]
    pref = float(np.median(off)) if cfg.preference == "median" else float(cfg.preference)
    np.fill_diagonal(S, pref)
    return ap_from_similarity(S, cfg)


def ap_from_similarity(S: np.ndarray, cfg: ApConfig):
    """Message passing on a prepared similarity matrix (diagonal = preference)."""
    S = np.array(S, dtype=np.float64)
    m = len(S)
    R = np.zeros((m, m))
    A = np.zeros((m, m))
    lam = cfg.damping
    prev_ex: np.ndarray | None = None
    stable = 0
    converged = False
    it = 0
    for it in range(1, cfg.max_iter + 1):
        # responsibilities
        AS = A + S
        top = np.argmax(AS, axis=1)
        first = AS[np.arange(m), top]
        AS[np.arange(m), top] = -np.inf
        second = AS.max(axis=1)
        Rnew = S - first[:, None]
        Rnew[np.arange(m), top] = S[np.arange(m), top] - second
        R = lam * R + (1 - lam) * Rnew
        # availabilities
        Rp = np.maximum(R, 0)
        np.fill_diagonal(Rp, 0)
        col = Rp.sum(axis=0)
        Anew = np.minimum(0.0, R.diagonal() + col - Rp)
        np.fill_diagonal(Anew, col)
        A = lam * A + (1 - lam) * Anew

        ex = np.flatnonzero(np.diagonal(A + R) > 0)
        # an empty set is the pre-burn-in state under heavy damping, not a solution
        if len(ex) > 0 and prev_ex is not None and np.array_equal(ex, prev_ex):
            stable += 1
            if stable >= cfg.convergence_window:
                converged = True
                break
        else:
            stable = 0
        prev_ex = ex

    ex = np.flatnonzero(np.diagonal(A + R) > 0)
    if len(ex) == 0:
        ex = np.array([int(np.argmax(np.diagonal(A + R)))])
    assign = ex[np.argmax(S[:, ex], axis=1)]
    assign[ex] = ex  # exemplars self-assign
    return ex, assign, {"converged": converged, "iterations": it}


def label_new(new_ids: np.ndarray, embeddings: np.ndarray, cfg: ApConfig,
              existing_class_count: int):
    """Cluster the new split and assign fresh dense class ids C..C+k-1.

    Returns (entries, novel_class_count, unit-norm centroids, cluster info).
    """
    new_ids = np.asarray(new_ids, dtype=np.int64)
    if len(new_ids) == 0:
        raise TrainError("empty new split")
    Z = np.asarray(embeddings, dtype=np.float64)[new_ids]
    C = existing_class_count
    if len(new_ids) == 1:
        centroid = Z[0] / np.linalg.norm(Z[0])
        entries = [PseudoEntry(int(new_ids[0]), int(new_ids[0]), C, "cluster")]
        return entries, 1, centroid[None, :], {"converged": True, "iterations": 0,
                                               "exemplars": [int(new_ids[0])], "sizes": [1]}
    ex, assign, info = affinity_propagation(Z, cfg)
    cluster_of = {int(e): k for k, e in enumerate(ex)}
    labels = np.array([cluster_of[int(a)] for a in assign])
    centroids = []
    sizes = []
    for k in range(len(ex)):
        mean = Z[labels == k].mean(axis=0)
        centroids.append(mean / np.linalg.norm(mean))
        sizes.append(int((labels == k).sum()))
    entries = [PseudoEntry(int(i), int(i), C + int(k), "cluster")
               for i, k in zip(new_ids, labels)]
    info = dict(info, exemplars=[int(new_ids[e]) for e in ex], sizes=sizes)
    return entries, len(ex), np.array(centroids), info


def grow_bank(bank: ProxyBank, centroids: np.ndarray) -> ProxyBank:
    """Append one proxy per discovered cluster, initialized at its centroid."""
    centroids = np.asarray(centroids, dtype=np.float64)
    if len(centroids) == 0:
        raise TrainError("no centroids to grow the bank with")
    new_ids = np.arange(bank.class_ids.max() + 1,
                        bank.class_ids.max() + 1 + len(centroids))
    return ProxyBank(np.vstack([bank.proxies, centroids]),
                     np.concatenate([bank.class_ids, new_ids]))
