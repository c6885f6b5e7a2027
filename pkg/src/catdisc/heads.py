"""Projection head, proxy bank, proxy-anchor loss with analytic gradients, and AdamW training."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .rng import stream

_SIM_CLIP = 1.0 - 1e-7


class TrainError(Exception):
    """Invalid training input (shape mismatch, NaN gradient, degenerate batch)."""


@dataclass
class ProjectionHead:
    """Linear map from input features to the embedding space (no bias)."""

    weight: np.ndarray  # d_emb x d_in

    def __post_init__(self):
        self.weight = np.asarray(self.weight, dtype=np.float64)
        if not np.all(np.isfinite(self.weight)):
            raise TrainError("head weight contains non-finite entries")

    @property
    def d_in(self) -> int:
        return self.weight.shape[1]

    @property
    def d_emb(self) -> int:
        return self.weight.shape[0]

    def copy(self) -> "ProjectionHead":
        return ProjectionHead(self.weight.copy())


@dataclass
class ProxyBank:
    """One learnable anchor per known class."""

    proxies: np.ndarray            # C x d_emb
    class_ids: np.ndarray          # C dense class indices

    def __post_init__(self):
        self.proxies = np.asarray(self.proxies, dtype=np.float64)
        self.class_ids = np.asarray(self.class_ids, dtype=np.int64)
        if len(self.proxies) != len(self.class_ids) or len(self.proxies) < 1:
            raise TrainError("proxy bank needs one row per class id")
        if len(np.unique(self.class_ids)) != len(self.class_ids):
            raise TrainError("duplicate class ids in proxy bank")
        if not np.all(np.isfinite(self.proxies)):
            raise TrainError("proxies contain non-finite entries")

    def copy(self) -> "ProxyBank":
        return ProxyBank(self.proxies.copy(), self.class_ids.copy())


@dataclass
class PaHyperparams:
    alpha: float = 32.0
    delta: float = 0.1
    lr_model: float = 1e-4
    lr_proxy: float = 1e-2
    weight_decay: float = 1e-4
    epochs: int = 60
    lr_decay: float = 0.5
    lr_decay_every: int = 5
    batch_size: int = 120
    d_emb: int = 128

    def __post_init__(self):
        if self.alpha <= 0 or self.delta <= 0:
            raise TrainError("alpha and delta must be positive")
        if min(self.lr_model, self.lr_proxy) <= 0:
            raise TrainError("learning rates must be positive")


@dataclass
class AdamWState:
    """Decoupled weight decay Adam moments for one parameter tensor."""

    m: np.ndarray
    v: np.ndarray
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def like(cls, param: np.ndarray) -> "AdamWState":
        return cls(np.zeros_like(param, dtype=np.float64),
                   np.zeros_like(param, dtype=np.float64))


def adamw_step(param: np.ndarray, grad: np.ndarray, state: AdamWState,
               lr: float, wd: float) -> np.ndarray:
    """One AdamW update, in place on `param`; returns it for convenience."""
    if param.shape != grad.shape or param.shape != state.m.shape:
        raise TrainError("adamw_step shape mismatch")
    if not np.all(np.isfinite(grad)):
        raise TrainError("NaN or inf gradient")
    state.t += 1
    state.m = state.beta1 * state.m + (1 - state.beta1) * grad
    state.v = state.beta2 * state.v + (1 - state.beta2) * grad * grad
    m_hat = state.m / (1 - state.beta1 ** state.t)
    v_hat = state.v / (1 - state.beta2 ** state.t)
    param -= lr * (m_hat / (np.sqrt(v_hat) + state.eps) + wd * param)
    return param


_CANONICAL = None


def _canonical_unit(d: int) -> np.ndarray:
    e = np.zeros(d)
    e[0] = 1.0
    return e


def embed_batch(head: ProjectionHead, x: np.ndarray):
    """Project and L2-normalize a batch; returns (z, cache) for backprop."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape[1] != head.d_in:
        raise TrainError("input dimension mismatch")
    y = x @ head.weight.T
    norms = np.linalg.norm(y, axis=1)
    zero = norms < 1e-30
    safe = np.where(zero, 1.0, norms)
    z = y / safe[:, None]
    if zero.any():
        z[zero] = _canonical_unit(head.d_emb)
    return z, (x, z, safe, zero)


def embed_backward(cache, grad_z: np.ndarray) -> np.ndarray:
    """Gradient of the normalized projection w.r.t. the head weight."""
    x, z, norms, zero = cache
    inner = (grad_z * z).sum(axis=1, keepdims=True)
    grad_y = (grad_z - inner * z) / norms[:, None]
    if zero.any():
        grad_y[zero] = 0.0
    return grad_y.T @ x


def embed(head: ProjectionHead, x: np.ndarray) -> np.ndarray:
    """Map one input vector to a unit-norm embedding."""
    z, _ = embed_batch(head, np.asarray(x, dtype=np.float64)[None, :])
    return z[0]


def cosine_similarity(z: np.ndarray, p: np.ndarray) -> float:
    z = np.asarray(z, dtype=np.float64)
    p = np.asarray(p, dtype=np.float64)
    nz, np_ = np.linalg.norm(z), np.linalg.norm(p)
    if nz < 1e-30 or np_ < 1e-30:
        raise TrainError("cosine similarity of a zero vector")
    return float(z @ p / (nz * np_))


def pa_loss(batch_z: np.ndarray, batch_labels: np.ndarray, bank: ProxyBank,
            hp: PaHyperparams):
    """Proxy-anchor loss and its exact analytic gradients.

    loss = (1/|P+|) sum_{p in P+} log(1 + sum_{z in Z+_p} exp(-alpha (s(z,p) - delta)))
         + (1/|P|)  sum_{p in P}  log(1 + sum_{z in Z-_p} exp( alpha (s(z,p) + delta)))

    where P+ are the proxies whose class appears in the batch. Both gradients
    run through the internal L2 normalization, so the loss is invariant to
    positive rescaling of any embedding or proxy row. Log-sum terms use the
    usual max-shift for stability.

    Returns (loss, grad_batch_z, grad_proxies).
    """
    Z = np.asarray(batch_z, dtype=np.float64)
    labels = np.asarray(batch_labels, dtype=np.int64)
    if Z.ndim != 2 or len(Z) < 1:
        raise TrainError("empty batch")
    if len(labels) != len(Z):
        raise TrainError("label count mismatch")
    P = bank.proxies
    C = len(P)
    col = {int(c): j for j, c in enumerate(bank.class_ids)}
    try:
        lab_col = np.array([col[int(y)] for y in labels])
    except KeyError as exc:
        raise TrainError(f"batch label {exc} not in proxy bank") from None

    z_norm = np.linalg.norm(Z, axis=1)
    p_norm = np.linalg.norm(P, axis=1)
    if z_norm.min() < 1e-30 or p_norm.min() < 1e-30:
        raise TrainError("zero vector in batch or bank")
    Zn = Z / z_norm[:, None]
    Pn = P / p_norm[:, None]
    S = np.clip(Zn @ Pn.T, -_SIM_CLIP, _SIM_CLIP)  # B x C

    pos = np.zeros((len(Z), C), dtype=bool)
    pos[np.arange(len(Z)), lab_col] = True
    present = np.flatnonzero(pos.any(axis=0))
    alpha, delta = hp.alpha, hp.delta

    loss = 0.0
    G = np.zeros_like(S)  # dloss/dS
    # positive term over proxies present in the batch
    for j in present:
        x = -alpha * (S[pos[:, j], j] - delta)
        m = max(0.0, x.max())
        term = m + np.log(np.exp(-m) + np.exp(x - m).sum())
        loss += term / len(present)
        G[pos[:, j], j] += -alpha * np.exp(x - term) / len(present)
    # negative term over every proxy
    for j in range(C):
        neg = ~pos[:, j]
        if not neg.any():
            continue
        x = alpha * (S[neg, j] + delta)
        m = max(0.0, x.max())
        term = m + np.log(np.exp(-m) + np.exp(x - m).sum())
        loss += term / C
        G[neg, j] += alpha * np.exp(x - term) / C

    # chain through the cosine similarity of raw rows
    grad_zn = G @ Pn
    grad_pn = G.T @ Zn
    grad_z = (grad_zn - (grad_zn * Zn).sum(1, keepdims=True) * Zn) / z_norm[:, None]
    grad_p = (grad_pn - (grad_pn * Pn).sum(1, keepdims=True) * Pn) / p_norm[:, None]
    return float(loss), grad_z, grad_p


@dataclass
class TrainLog:
    epoch_loss: list[float] = field(default_factory=list)
    epoch_terms: list[dict] = field(default_factory=list)


def _lr_at(base: float, epoch: int, hp: PaHyperparams) -> float:
    return base * hp.lr_decay ** (epoch // hp.lr_decay_every)


def init_head(d_in: int, hp: PaHyperparams, seed: int) -> ProjectionHead:
    rng = stream(seed, "init")
    w = rng.standard_normal((hp.d_emb, d_in)) / np.sqrt(d_in)
    return ProjectionHead(w)


def init_bank(class_ids: np.ndarray, hp: PaHyperparams, seed: int) -> ProxyBank:
    rng = stream(seed, "init-proxies")
    p = 0.01 * rng.standard_normal((len(class_ids), hp.d_emb))
    return ProxyBank(p, np.asarray(class_ids, dtype=np.int64))


def train_initial(step0, hp: PaHyperparams, seed: int):
    """Fit the head and one proxy per labeled class on the initial step.

    Proxies start from a small fixed-seed Gaussian; both parameter groups use
    AdamW with the stepped learning-rate decay. Returns (head, bank, log).
    """
    if step0.train.labels is None:
        raise TrainError("initial step must be labeled")
    X = step0.train.features.astype(np.float64)
    y = step0.train.labels
    classes = np.unique(y)
    if len(classes) < 2:
        raise TrainError("need at least 2 classes")
    head = init_head(X.shape[1], hp, seed)
    bank = init_bank(classes, hp, seed)
    log = TrainLog()
    if hp.epochs == 0:
        return head, bank, log

    st_w = AdamWState.like(head.weight)
    st_p = AdamWState.like(bank.proxies)
    rng = stream(seed, "shuffle")
    for epoch in range(hp.epochs):
        order = rng.permutation(len(X))
        losses = []
        for start in range(0, len(X), hp.batch_size):
            idx = order[start:start + hp.batch_size]
            z, cache = embed_batch(head, X[idx])
            loss, gz, gp = pa_loss(z, y[idx], bank, hp)
            gw = embed_backward(cache, gz)
            adamw_step(head.weight, gw, st_w, _lr_at(hp.lr_model, epoch, hp), hp.weight_decay)
            adamw_step(bank.proxies, gp, st_p, _lr_at(hp.lr_proxy, epoch, hp), hp.weight_decay)
            losses.append(loss)
        log.epoch_loss.append(float(np.mean(losses)))
    return head, bank, log


def nearest_proxy(head: ProjectionHead, bank: ProxyBank, X: np.ndarray) -> np.ndarray:
    """Predicted class id per row: argmax cosine similarity to the bank."""
    z, _ = embed_batch(head, np.asarray(X, dtype=np.float64))
    Pn = bank.proxies / np.linalg.norm(bank.proxies, axis=1, keepdims=True)
    return bank.class_ids[np.argmax(z @ Pn.T, axis=1)]


def train_incremental(head: ProjectionHead, bank: ProxyBank, features: np.ndarray,
                      pseudo, exemplar, prev_head: ProjectionHead,
                      hp: PaHyperparams, seed: int):
    """Incremental-step training: anchor loss + generated replay + distillation.

    Per batch the total loss is L_pa(batch) + L_pa(replay) + L_kd(old split),
    where the replay count equals the number of cluster-labeled samples in the
    batch and the distillation term covers only samples split as old. Replay
    features live in embedding space and update the proxies only; distillation
    updates the head only.
    """
    from .replay import generate_replay, kd_loss  # local import avoids a cycle

    if len(pseudo.entries) == 0:
        raise TrainError("empty pseudo-labeled set")
    X = np.asarray(features, dtype=np.float64)
    idx_all = np.array([e.index for e in pseudo.entries])
    y_all = np.array([e.pseudo_label for e in pseudo.entries])
    is_novel = np.array([e.provenance == "cluster" for e in pseudo.entries])

    head = head.copy()
    bank = bank.copy()
    st_w = AdamWState.like(head.weight)
    st_p = AdamWState.like(bank.proxies)
    rng = stream(seed, "shuffle-inc")
    replay_rng = stream(seed, "replay")
    log = TrainLog()
    for epoch in range(hp.epochs):
        order = rng.permutation(len(idx_all))
        terms = {"pa": [], "ex": [], "kd": []}
        for start in range(0, len(idx_all), hp.batch_size):
            b = order[start:start + hp.batch_size]
            xb = X[idx_all[b]]
            z, cache = embed_batch(head, xb)
            loss_pa, gz, gp = pa_loss(z, y_all[b], bank, hp)
            grad_w = embed_backward(cache, gz)
            grad_p = gp

            n_replay = int(is_novel[b].sum())
            if n_replay > 0 and exemplar is not None and len(exemplar.class_ids) > 0:
                z_rep, y_rep = generate_replay(exemplar, n_replay, replay_rng)
                loss_ex, _, gp_ex = pa_loss(z_rep, y_rep, bank, hp)
                grad_p = grad_p + gp_ex
            else:
                loss_ex = 0.0

            old_rows = np.flatnonzero(~is_novel[b])
            if prev_head is not None and len(old_rows) > 0:
                loss_kd, gw_kd = kd_loss(head, prev_head, xb[old_rows])
                grad_w = grad_w + gw_kd
            else:
                loss_kd = 0.0

            adamw_step(head.weight, grad_w, st_w, _lr_at(hp.lr_model, epoch, hp), hp.weight_decay)
            adamw_step(bank.proxies, grad_p, st_p, _lr_at(hp.lr_proxy, epoch, hp), hp.weight_decay)
            terms["pa"].append(loss_pa)
            terms["ex"].append(loss_ex)
            terms["kd"].append(loss_kd)
        log.epoch_loss.append(float(np.mean([a + b_ + c for a, b_, c in
                                             zip(terms["pa"], terms["ex"], terms["kd"])])))
        log.epoch_terms.append({k: float(np.mean(v)) for k, v in terms.items()})
    return head, bank, log
