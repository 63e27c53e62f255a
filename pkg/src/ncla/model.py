"""Learnable attention augmentation and per-view encoders.

Each of the K views owns a projection ``W`` (F'×F) and an attention vector
``phi`` (2F'). A view computes softmax-normalised edge coefficients over
every closed neighbourhood ``N_i ∪ {i}`` and aggregates projected features
with them, followed by ELU. View embeddings are concatenated.
"""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels as K
from .seeding import derive_rng

CHECKPOINT_FORMAT = "ncla-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class ViewParams:
    W: np.ndarray
    phi: np.ndarray

    def __post_init__(self):
        self.W = np.asarray(self.W)
        self.phi = np.asarray(self.phi).reshape(-1)
        if self.W.ndim != 2:
            raise ValueError("W must be 2-D (F' x F)")
        if self.phi.shape != (2 * self.W.shape[0],):
            raise ValueError(f"phi must have length 2F' = {2 * self.W.shape[0]}, got {self.phi.shape}")

    @property
    def out_dim(self):
        return self.W.shape[0]

    @property
    def in_dim(self):
        return self.W.shape[1]

    def arrays(self):
        return [self.W, self.phi]

    def astype(self, dtype):
        return ViewParams(self.W.astype(dtype), self.phi.astype(dtype))


@dataclass
class ModelParams:
    views: list

    def __post_init__(self):
        if len(self.views) < 2:
            raise ValueError("need at least two views")
        shapes = {(v.W.shape, v.phi.shape) for v in self.views}
        if len(shapes) != 1:
            raise ValueError("all views must share F and F'")

    @property
    def n_views(self):
        return len(self.views)

    @property
    def out_dim(self):
        return self.views[0].out_dim

    @property
    def in_dim(self):
        return self.views[0].in_dim

    @property
    def dtype(self):
        return self.views[0].W.dtype

    def arrays(self):
        """Flat list ``[W_1, phi_1, W_2, phi_2, ...]`` (the optimizer's view)."""
        return [a for v in self.views for a in v.arrays()]

    @classmethod
    def from_arrays(cls, arrays):
        return cls([ViewParams(arrays[i], arrays[i + 1]) for i in range(0, len(arrays), 2)])

    def astype(self, dtype):
        return ModelParams([v.astype(dtype) for v in self.views])

    def copy(self):
        return ModelParams.from_arrays([a.copy() for a in self.arrays()])

    def to_dict(self):
        return {
            "format": CHECKPOINT_FORMAT,
            "version": CHECKPOINT_VERSION,
            "K": self.n_views,
            "F": self.in_dim,
            "F_prime": self.out_dim,
            "dtype": str(self.dtype),
            "views": [{"W": v.W.tolist(), "phi": v.phi.tolist()} for v in self.views],
        }

    @classmethod
    def from_dict(cls, d):
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an ncla checkpoint")
        if d.get("version") != CHECKPOINT_VERSION:
            raise ValueError(f"unsupported checkpoint version {d.get('version')}")
        dtype = np.dtype(d.get("dtype", "float64"))
        mp = cls([
            ViewParams(np.array(v["W"], dtype=dtype), np.array(v["phi"], dtype=dtype))
            for v in d["views"]
        ])
        if (mp.n_views, mp.in_dim, mp.out_dim) != (d["K"], d["F"], d["F_prime"]):
            raise ValueError("checkpoint header does not match stored matrices")
        return mp


def save_checkpoint(mp: ModelParams, path) -> str:
    """Write ``mp`` as JSON; returns the sha256 of the written bytes."""
    data = (json.dumps(mp.to_dict()) + "\n").encode()
    Path(path).write_bytes(data)
    return hashlib.sha256(data).hexdigest()


def load_checkpoint(path) -> ModelParams:
    return ModelParams.from_dict(json.loads(Path(path).read_text()))


def init_params(in_dim, out_dim, n_views, seed, dtype=np.float64) -> ModelParams:
    """Glorot-uniform parameters, one independent stream per view."""
    if min(in_dim, out_dim) < 1 or n_views < 2:
        raise ValueError("need positive dimensions and at least two views")
    views = []
    for k in range(n_views):
        rng = derive_rng(seed, f"init:view:{k}")
        w_bound = np.sqrt(6.0 / (in_dim + out_dim))
        a_bound = np.sqrt(6.0 / (2 * out_dim + 1))
        W = rng.uniform(-w_bound, w_bound, size=(out_dim, in_dim))
        phi = rng.uniform(-a_bound, a_bound, size=2 * out_dim)
        views.append(ViewParams(W.astype(dtype), phi.astype(dtype)))
    return ModelParams(views)


@dataclass(frozen=True)
class AdaptiveAdjacency:
    """Edge coefficients of one view on the closed-neighbourhood layout."""

    values: np.ndarray
    row: np.ndarray
    col: np.ndarray
    ptr: np.ndarray

    @property
    def num_nodes(self):
        return len(self.ptr) - 1

    def group(self, i):
        s, e = self.ptr[i], self.ptr[i + 1]
        return self.col[s:e], self.values[s:e]

    def to_dense(self):
        n = self.num_nodes
        out = np.zeros((n, n), dtype=self.values.dtype)
        out[self.row, self.col] = self.values
        return out


@dataclass
class EmbeddingSet:
    per_view: list

    @property
    def concatenated(self):
        return np.concatenate(self.per_view, axis=1)

    @property
    def n_views(self):
        return len(self.per_view)


@dataclass
class _ViewCache:
    x: np.ndarray
    z: np.ndarray
    pairs: np.ndarray
    logits: np.ndarray
    alpha: np.ndarray
    agg: np.ndarray


def _check_dims(g, p):
    if p.in_dim != g.num_features:
        raise ValueError(f"W expects {p.in_dim} input features, graph has {g.num_features}")


def _adjacency_from_cache(g, cache):
    row, col, ptr = g.closed_edges
    return AdaptiveAdjacency(cache.alpha, row, col, ptr)


def _view_forward(g, p):
    _check_dims(g, p)
    row, col, ptr = g.closed_edges
    x = g.features.astype(p.W.dtype, copy=False)
    z = K.matmul(x, p.W.T)
    pairs = K.row_concat_pairs(z, row, col)
    logits = pairs @ p.phi
    alpha = K.neighborhood_softmax(K.leaky_relu(logits), ptr)
    agg = K.weighted_neighbor_sum(alpha, z, ptr, col)
    h = K.elu(agg)
    return h, _ViewCache(x, z, pairs, logits, alpha, agg)


def _view_backward(g, p, cache, dh):
    """Gradients of a scalar w.r.t. (W, phi) given ``dL/dH`` for this view."""
    row, col, ptr = g.closed_edges
    n = g.num_nodes
    d_agg = K.elu_vjp(cache.agg, dh)
    d_alpha, dz = K.weighted_neighbor_sum_vjp(cache.alpha, cache.z, ptr, col, d_agg)
    d_act = K.neighborhood_softmax_vjp(cache.alpha, d_alpha, ptr)
    d_logits = K.leaky_relu_vjp(cache.logits, d_act)
    d_phi = cache.pairs.T @ d_logits
    dz = dz + K.row_concat_pairs_vjp(np.outer(d_logits, p.phi), row, col, n)
    _, dW_t = K.matmul_vjp(cache.x, p.W.T, dz)
    return ViewParams(dW_t.T, d_phi)


def compute_view_adjacency(g, p: ViewParams) -> AdaptiveAdjacency:
    """Attention coefficients of one view over every ``N_i ∪ {i}``."""
    _check_dims(g, p)
    row, col, ptr = g.closed_edges
    z = K.matmul(g.features.astype(p.W.dtype, copy=False), p.W.T)
    logits = K.row_concat_pairs(z, row, col) @ p.phi
    alpha = K.neighborhood_softmax(K.leaky_relu(logits), ptr)
    return AdaptiveAdjacency(alpha, row, col, ptr)


def encode_view(g, p: ViewParams, adj: AdaptiveAdjacency) -> np.ndarray:
    """ELU of the coefficient-weighted sum of projected closed-neighbourhood features."""
    _check_dims(g, p)
    if adj.num_nodes != g.num_nodes or len(adj.values) != g.num_edges + g.num_nodes:
        raise ValueError("adjacency does not match graph layout")
    z = K.matmul(g.features.astype(p.W.dtype, copy=False), p.W.T)
    return K.elu(K.weighted_neighbor_sum(adj.values, z, adj.ptr, adj.col))


def forward(g, mp: ModelParams):
    """Run every view; returns ``(adjacencies, EmbeddingSet)``."""
    adjs, hs = [], []
    for p in mp.views:
        h, cache = _view_forward(g, p)
        adjs.append(_adjacency_from_cache(g, cache))
        hs.append(h)
    return adjs, EmbeddingSet(hs)


def forward_with_cache(g, mp: ModelParams):
    hs, caches = zip(*(_view_forward(g, p) for p in mp.views))
    return EmbeddingSet(list(hs)), list(caches)


def backward(g, mp: ModelParams, caches, d_views) -> ModelParams:
    """Chain per-view embedding gradients back to parameter gradients."""
    return ModelParams([
        _view_backward(g, p, c, dh) for p, c, dh in zip(mp.views, caches, d_views)
    ])
