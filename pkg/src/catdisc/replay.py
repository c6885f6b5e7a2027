"""Proxy-centered feature replay and embedding distillation against the frozen previous head."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .heads import ProjectionHead, ProxyBank, TrainError, embed_backward, embed_batch
from .rng import stream


@dataclass
class Exemplar:
    """Per-class Gaussian feature generator: trained proxy mean + embedding stds."""

    class_ids: np.ndarray      # K old classes
    proxy_means: np.ndarray    # K x d_emb, unit rows
    sigmas: np.ndarray         # K x d_emb, per-dimension std >= 0

    def __post_init__(self):
        if np.any(self.sigmas < 0):
            raise TrainError("negative sigma in exemplar")


def build_exemplar(bank: ProxyBank, embeddings: np.ndarray, labels: np.ndarray) -> Exemplar:
    """Per-dimension std of each class's embeddings around its trained proxy.

    Classes with a single sample inherit the global per-dimension std.
    """
    Z = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    global_sigma = Z.std(axis=0, ddof=1) if len(Z) > 1 else np.zeros(Z.shape[1])
    means = []
    sigmas = []
    for c in bank.class_ids:
        rows = Z[labels == c]
        if len(rows) == 0:
            raise TrainError(f"class {c} absent from embeddings")
        sigmas.append(Z[labels == c].std(axis=0, ddof=1) if len(rows) > 1 else global_sigma)
        p = bank.proxies[np.flatnonzero(bank.class_ids == c)[0]]
        means.append(p / np.linalg.norm(p))
    return Exemplar(bank.class_ids.copy(), np.array(means), np.array(sigmas))


def generate_replay(ex: Exemplar, count: int, rng: np.random.Generator | int):
    """Draw `count` embedding-space samples z = p_c + sigma_c * eta, eta ~ N(0, I).

    Classes are cycled in bank order so the draw is balanced; returns (Z, labels).
    """
    if isinstance(rng, (int, np.integer)):
        rng = stream(int(rng), "replay")
    if count < 0:
        raise TrainError("negative replay count")
    k = len(ex.class_ids)
    if count == 0 or k == 0:
        return np.zeros((0, ex.proxy_means.shape[1])), np.zeros(0, dtype=np.int64)
    which = np.arange(count) % k
    eta = rng.standard_normal((count, ex.proxy_means.shape[1]))
    z = ex.proxy_means[which] + ex.sigmas[which] * eta
    return z, ex.class_ids[which]


def kd_loss(cur_head: ProjectionHead, prev_head: ProjectionHead, old_inputs: np.ndarray):
    """Mean L2 distance between previous and current embeddings of old-split inputs.

    Returns (loss, gradient w.r.t. the current head weight); the previous head
    is treated as frozen. Empty input gives (0, zeros).
    """
    if cur_head.weight.shape != prev_head.weight.shape:
        raise TrainError("head dimension mismatch")
    X = np.asarray(old_inputs, dtype=np.float64)
    if len(X) == 0:
        return 0.0, np.zeros_like(cur_head.weight)
    z_prev, _ = embed_batch(prev_head, X)
    z_cur, cache = embed_batch(cur_head, X)
    diff = z_cur - z_prev
    dist = np.linalg.norm(diff, axis=1)
    loss = float(dist.mean())
    # d/dz_cur of ||z_cur - z_prev|| is diff / dist; zero at coincidence
    safe = np.where(dist < 1e-12, 1.0, dist)
    grad_z = diff / safe[:, None] / len(X)
    grad_z[dist < 1e-12] = 0.0
    return loss, embed_backward(cache, grad_z)
