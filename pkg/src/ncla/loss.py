"""Neighbour contrastive loss and its single-positive variants.

For an anchor ``i`` in view ``a`` contrasted with view ``b`` (both
L2-row-normalised, similarity = inner product / tau):

* positives: the same node in ``b``; neighbours in ``a`` (intra-view);
  neighbours in ``b`` (inter-view). Which groups count depends on the variant.
* denominator: the same node in ``b``, every other node in ``a`` and every
  other node in ``b``. INFONCE drops the intra-view nodes.

Similarities are produced in blocks of ``chunk_size`` anchor rows so the
peak extra memory is ``O(chunk_size * N)``.
"""
from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np

from . import kernels as K


class Variant(str, enum.Enum):
    NCL = "NCL"
    INFONCE = "INFONCE"
    NT_XENT = "NT_XENT"
    NCL_NO_POS2 = "NCL_NO_POS2"
    NCL_NO_POS3 = "NCL_NO_POS3"

    @property
    def intra_neighbors_positive(self):
        return self in (Variant.NCL, Variant.NCL_NO_POS3)

    @property
    def inter_neighbors_positive(self):
        return self in (Variant.NCL, Variant.NCL_NO_POS2)

    @property
    def intra_in_denominator(self):
        return self is not Variant.INFONCE


VARIANTS = tuple(v.value for v in Variant)

PIVOT_FIXED = "fixed"
PIVOT_PER_EPOCH = "per-epoch"
PIVOT_POLICIES = (PIVOT_FIXED, PIVOT_PER_EPOCH)


@dataclass(frozen=True)
class LossConfig:
    tau: float = 1.0
    variant: Variant = Variant.NCL
    pivot_policy: str = PIVOT_PER_EPOCH
    pivot: int = 0
    chunk_size: int = 512

    def __post_init__(self):
        object.__setattr__(self, "variant", Variant(self.variant))
        if not self.tau > 0:
            raise ValueError("tau must be > 0")
        if self.chunk_size < 1:
            raise ValueError("chunk_size must be >= 1")
        if self.pivot_policy not in PIVOT_POLICIES:
            raise ValueError(f"pivot_policy must be one of {PIVOT_POLICIES}")


class PairwiseSimilarities:
    """Chunked access to ``theta(a, b) / tau`` for two normalised views.

    ``blocks()`` yields ``(start, stop, intra1, inter12, intra2, inter21)``
    where e.g. ``inter12[r, j] = <u_{start+r}, v_j> / tau``.
    """

    def __init__(self, u, v, tau, chunk_size=512):
        if u.shape != v.shape:
            raise ValueError(f"view shapes differ: {u.shape} vs {v.shape}")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(v))):
            raise FloatingPointError("non-finite similarity input")
        self.u, self.v = u, v
        self.tau = float(tau)
        self.chunk_size = int(chunk_size)

    @property
    def num_nodes(self):
        return self.u.shape[0]

    def blocks(self):
        u, v, tau = self.u, self.v, self.tau
        for s in range(0, self.num_nodes, self.chunk_size):
            e = min(s + self.chunk_size, self.num_nodes)
            yield s, e, (u[s:e] @ u.T) / tau, (u[s:e] @ v.T) / tau, (v[s:e] @ v.T) / tau, (v[s:e] @ u.T) / tau

    def dense(self, kind):
        """Assembled ``exp(theta/tau)`` matrix for ``intra1``, ``intra2`` or ``inter``."""
        pick = {"intra1": 2, "inter": 3, "intra2": 4}[kind]
        return np.concatenate([np.exp(blk[pick]) for blk in self.blocks()], axis=0)


def pairwise_similarities(hn1, hn2, tau, chunk_size=512):
    return PairwiseSimilarities(hn1, hn2, tau, chunk_size)


def _neighbor_block(g, s, e):
    mask = np.zeros((e - s, g.num_nodes), dtype=bool)
    for r, i in enumerate(range(s, e)):
        mask[r, g.indices[g.indptr[i]:g.indptr[i + 1]]] = True
    return mask


def _masked_lse(parts):
    """Row-wise log-sum-exp over several (logits, mask) pairs.

    Returns ``(lse, weights)`` where ``weights[k]`` is the softmax mass of
    each entry of ``parts[k]`` (zero where masked out).
    """
    ninf = -np.inf
    masked = [np.where(m, x, ninf) for x, m in parts]
    mx = np.max([blk.max(axis=1) for blk in masked], axis=0)
    exps = [np.exp(blk - mx[:, None]) for blk in masked]
    total = np.sum([ex.sum(axis=1) for ex in exps], axis=0)
    return np.log(total) + mx, [ex / total[:, None] for ex in exps]


def _anchor_block(g, s, e, intra, inter, variant, with_grad):
    """Losses for anchors ``s..e`` of one view, plus logit gradients."""
    nb = _neighbor_block(g, s, e)
    self_mask = np.zeros_like(nb)
    self_mask[np.arange(e - s), np.arange(s, e)] = True
    not_self = ~self_mask

    pos_intra = nb if variant.intra_neighbors_positive else np.zeros_like(nb)
    pos_inter = (nb | self_mask) if variant.inter_neighbors_positive else self_mask
    den_intra = not_self if variant.intra_in_denominator else np.zeros_like(nb)
    den_inter = np.ones_like(nb)

    lse_pos, w_pos = _masked_lse([(intra, pos_intra), (inter, pos_inter)])
    lse_den, w_den = _masked_lse([(intra, den_intra), (inter, den_inter)])
    losses = lse_den - lse_pos
    if not with_grad:
        return losses, None, None
    return losses, w_den[0] - w_pos[0], w_den[1] - w_pos[1]


def anchor_loss(i, view, g, hn1, hn2, cfg: LossConfig):
    """Loss of a single anchor ``i`` taken from ``view`` (1 or 2).

    ``hn1``/``hn2`` must already be L2-row-normalised.
    """
    if not 0 <= i < g.num_nodes:
        raise IndexError(f"anchor {i} out of range")
    if view not in (1, 2):
        raise ValueError("view must be 1 or 2")
    a, b = (hn1, hn2) if view == 1 else (hn2, hn1)
    intra = (a[i:i + 1] @ a.T) / cfg.tau
    inter = (a[i:i + 1] @ b.T) / cfg.tau
    losses, _, _ = _anchor_block(g, i, i + 1, intra, inter, cfg.variant, False)
    return float(losses[0])


def _two_view(g, h1, h2, cfg, weight, with_grad):
    if h1.shape != h2.shape or h1.shape[0] != g.num_nodes:
        raise ValueError(f"embedding shapes {h1.shape}, {h2.shape} do not match graph with {g.num_nodes} nodes")
    u, nu = K.l2_normalize_rows(h1)
    v, nv = K.l2_normalize_rows(h2)
    sims = PairwiseSimilarities(u, v, cfg.tau, cfg.chunk_size)
    n = g.num_nodes
    scale = weight / (2 * n)
    total = 0.0
    du = np.zeros_like(u) if with_grad else None
    dv = np.zeros_like(v) if with_grad else None
    for s, e, s11, s12, s22, s21 in sims.blocks():
        l1, g11, g12 = _anchor_block(g, s, e, s11, s12, cfg.variant, with_grad)
        l2, g22, g21 = _anchor_block(g, s, e, s22, s21, cfg.variant, with_grad)
        total += float(np.sum(l1)) + float(np.sum(l2))
        if with_grad:
            c = scale / cfg.tau
            du[s:e] += c * (g11 @ u + g12 @ v)
            du += c * (g11.T @ u[s:e] + g21.T @ v[s:e])
            dv[s:e] += c * (g22 @ v + g21 @ u)
            dv += c * (g22.T @ v[s:e] + g12.T @ u[s:e])
    value = scale * total
    if not np.isfinite(value):
        raise FloatingPointError("non-finite contrastive loss")
    if not with_grad:
        return value, None, None
    return value, K.l2_normalize_rows_vjp(u, nu, du), K.l2_normalize_rows_vjp(v, nv, dv)


def two_view_loss(g, h1, h2, cfg: LossConfig, return_grad=False):
    """Symmetric loss between two raw view embeddings, averaged over 2N anchors.

    Normalisation happens here. With ``return_grad`` the result is
    ``(value, dL/dh1, dL/dh2)``.
    """
    value, d1, d2 = _two_view(g, h1, h2, cfg, 1.0, return_grad)
    return (value, d1, d2) if return_grad else value


def total_loss(g, embeddings, cfg: LossConfig, pivot, return_grad=False):
    """Sum of two-view losses of every view against ``pivot``, divided by K.

    ``embeddings`` is an :class:`~ncla.model.EmbeddingSet` or a list of
    per-view matrices. With ``return_grad`` returns ``(value, [dL/dH_k])``.
    """
    views = getattr(embeddings, "per_view", embeddings)
    k_views = len(views)
    if k_views < 2:
        raise ValueError("need at least two views")
    if not 0 <= pivot < k_views:
        raise IndexError(f"pivot {pivot} out of range for {k_views} views")
    value = 0.0
    grads = [np.zeros_like(h) for h in views] if return_grad else None
    for k in range(k_views):
        if k == pivot:
            continue
        v, dk, dl = _two_view(g, views[k], views[pivot], cfg, 1.0 / k_views, return_grad)
        value += v
        if return_grad:
            grads[k] += dk
            grads[pivot] += dl
    return (value, grads) if return_grad else value
