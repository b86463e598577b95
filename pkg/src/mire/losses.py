"""Differentiable losses on unit-norm embeddings.

All functions take a ``(B, k)`` :class:`~mire.ndgrad.Tensor` whose rows lie on
the unit sphere and return a scalar Tensor. Pair mining decisions are made on
the forward values and are treated as constants by the backward pass.
"""

from dataclasses import dataclass, field

import numpy as np

from . import ndgrad as nd

_UNIT_TOL = 1e-8
_ZERO_VAR = 1e-20


@dataclass(frozen=True)
class MsConfig:
    alpha_ms: float = 2.0
    beta_ms: float = 50.0
    lambda_ms: float = 0.5
    epsilon_ms: float = 0.1

    def __post_init__(self):
        if self.alpha_ms <= 0 or self.beta_ms <= 0:
            raise ValueError("alpha_ms and beta_ms must be positive")
        if self.epsilon_ms < 0:
            raise ValueError("epsilon_ms must be non-negative")


@dataclass(frozen=True)
class MireConfig:
    alpha: float = 0.02          # entropy weight
    beta: float = 0.01           # correlation penalty weight
    delta: float = 5.0           # vMF kernel concentration
    ms: MsConfig = field(default_factory=MsConfig)
    dml: str = "ms"              # "ms" | "triplet" | "npairs"
    margin: float = 0.2          # triplet margin
    cc_normalize: bool = False   # average the penalty over dimensions instead of summing

    def __post_init__(self):
        if self.alpha < 0 or self.beta < 0:
            raise ValueError("alpha and beta must be non-negative")
        if self.delta <= 0:
            raise ValueError("delta must be positive")
        if self.dml not in DML_LOSSES:
            raise ValueError(f"unknown metric loss {self.dml!r}")


def _check_unit(emb):
    norms = np.linalg.norm(emb.data, axis=1)
    if emb.ndim != 2 or emb.shape[0] < 1:
        raise ValueError(f"expected a nonempty (B, k) batch, got shape {emb.shape}")
    if np.any(np.abs(norms - 1.0) > _UNIT_TOL):
        raise ValueError("embedding rows must be unit-norm")


def _label_masks(labels):
    labels = np.asarray(labels)
    same = labels[:, None] == labels[None, :]
    pos = same & ~np.eye(len(labels), dtype=bool)
    return pos, ~same


def ms_mining(sim, labels, epsilon):
    """Hard-mined positive and negative masks for every anchor."""
    pos, neg = _label_masks(labels)
    hardest_neg = np.where(neg, sim, -np.inf).max(axis=1, keepdims=True)
    easiest_pos = np.where(pos, sim, np.inf).min(axis=1, keepdims=True)
    return pos & (sim < hardest_neg + epsilon), neg & (sim > easiest_pos - epsilon)


def ms_loss(emb, labels, cfg=MsConfig()):
    """Multi-similarity loss with hard pair mining.

    Each anchor contributes
    ``1/a log(1 + sum_P exp(-a(S-l))) + 1/b log(1 + sum_N exp(b(S-l)))``
    and the result is averaged over the batch. An anchor without positives or
    negatives in the batch mines empty sets and contributes zero.
    """
    _check_unit(emb)
    a, b, lam = cfg.alpha_ms, cfg.beta_ms, cfg.lambda_ms
    sim = nd.gram(emb)
    p_mask, n_mask = ms_mining(sim.data, labels, cfg.epsilon_ms)
    pos = nd.exp((sim - lam) * (-a)) * p_mask.astype(float)
    neg = nd.exp((sim - lam) * b) * n_mask.astype(float)
    per_anchor = (nd.log(pos.sum(axis=1) + 1.0) * (1.0 / a)
                  + nd.log(neg.sum(axis=1) + 1.0) * (1.0 / b))
    return per_anchor.mean()


def entropy_estimate(emb, delta=5.0):
    """vMF-kernel plug-in entropy, ``-mean_i log mean_j exp(delta z_i.z_j)``.

    The normalising constant of the kernel is dropped and the inner average
    includes ``j == i``.
    """
    _check_unit(emb)
    if delta <= 0:
        raise ValueError("delta must be positive")
    n = emb.shape[0]
    lse = nd.logsumexp(nd.gram(emb) * delta, axis=1)
    return -(lse.mean() - np.log(n))


def triplet_loss(emb, labels, margin=0.2):
    """Batch-all triplet loss on squared distances ``2 - 2 z_i.z_j``.

    Averaged over every (anchor, positive, negative) triple in the batch.
    """
    _check_unit(emb)
    pos, neg = _label_masks(labels)
    valid = pos[:, :, None] & neg[:, None, :]
    count = int(valid.sum())
    if count == 0:
        return nd.Tensor(0.0) * nd.tsum(emb * 0.0)
    n = emb.shape[0]
    dist = (nd.gram(emb) * -2.0) + 2.0
    gap = dist.reshape(n, n, 1) - dist.reshape(n, 1, n) + margin
    return nd.tsum(nd.relu(gap) * valid.astype(float)) * (1.0 / count)


def n_pairs_loss(emb, labels):
    """N-pairs loss ``log(1 + sum_n exp(S_an - S_ap))`` averaged over positive pairs.

    Only anchors with at least one negative in the batch form pairs.
    """
    _check_unit(emb)
    pos, neg = _label_masks(labels)
    pairs = pos & neg.any(axis=1, keepdims=True)
    count = int(pairs.sum())
    if count == 0:
        return nd.Tensor(0.0) * nd.tsum(emb * 0.0)
    n = emb.shape[0]
    sim = nd.gram(emb)
    # diff[a, p, m] = S[a, m] - S[a, p]
    diff = sim.reshape(n, 1, n) - sim.reshape(n, n, 1)
    # |diff| <= 2 on the unit sphere, so exp cannot overflow
    terms = nd.exp(diff) * np.broadcast_to(neg[:, None, :], (n, n, n)).astype(float)
    inner = nd.log(terms.sum(axis=2) + 1.0)
    return nd.tsum(inner * pairs.astype(float)) * (1.0 / count)


DML_LOSSES = {
    "ms": lambda emb, labels, cfg: ms_loss(emb, labels, cfg.ms),
    "triplet": lambda emb, labels, cfg: triplet_loss(emb, labels, cfg.margin),
    "npairs": lambda emb, labels, cfg: n_pairs_loss(emb, labels),
}


def mire_loss(emb, labels, cfg=MireConfig()):
    """Metric-learning loss minus ``alpha`` times the batch entropy estimate."""
    base = DML_LOSSES[cfg.dml](emb, labels, cfg)
    if cfg.alpha == 0:
        return base
    return base - entropy_estimate(emb, cfg.delta) * cfg.alpha


def cc_per_class(current, stored):
    """Per-dimension Pearson correlation between current and stored features.

    ``current`` is a Tensor of features recomputed now, ``stored`` the aligned
    array of features recorded at insertion. Dimensions where either series is
    constant get a correlation of exactly zero and no gradient. Returns
    ``None`` when fewer than two rows are available.
    """
    current = nd.as_tensor(current)
    stored = np.asarray(stored, dtype=np.float64)
    if current.shape[0] < 2:
        return None
    if stored.shape != current.shape:
        raise ValueError(f"shape mismatch: current {current.shape} vs stored {stored.shape}")
    zc = stored - stored.mean(axis=0)
    z_ss = np.sum(zc * zc, axis=0)
    fc = current - current.mean(axis=0, keepdims=True)
    f_ss = nd.tsum(fc * fc, axis=0)
    valid = ((z_ss > _ZERO_VAR) & (f_ss.data > _ZERO_VAR)).astype(float)
    num = nd.tsum(fc * zc, axis=0) * valid
    den = nd.sqrt(f_ss + (1.0 - valid)) * np.sqrt(np.where(valid > 0, z_ss, 1.0))
    return num / den


def cc_penalty(pairs, normalize=False):
    """Sum over classes of the summed (or dimension-averaged) correlations.

    ``pairs`` is an iterable of ``(current_features, stored_features)``.
    Classes with fewer than two rows contribute nothing. Returns ``None`` if
    no class contributes.
    """
    total = None
    for current, stored in pairs:
        rho = cc_per_class(current, stored)
        if rho is None:
            continue
        term = rho.mean() if normalize else rho.sum()
        total = term if total is None else total + term
    return total


def mire_pp_loss(emb, labels, cfg=MireConfig(), cc_pairs=()):
    """``mire_loss`` minus ``beta`` times the cross-time correlation of stored samples."""
    loss = mire_loss(emb, labels, cfg)
    if cfg.beta == 0:
        return loss
    penalty = cc_penalty(cc_pairs, cfg.cc_normalize)
    if penalty is None:
        return loss
    return loss - penalty * cfg.beta
