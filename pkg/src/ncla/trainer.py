"""Full-batch training of all view parameters with Adam."""
from __future__ import annotations

import json
import logging
import time
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from . import loss as L
from . import model as M
from .seeding import derive_rng

logger = logging.getLogger(__name__)


class TrainingDivergedError(FloatingPointError):
    def __init__(self, epoch, param_norms):
        self.epoch = epoch
        self.param_norms = param_norms
        norms = ", ".join(f"{k}={v:.3g}" for k, v in param_norms.items())
        super().__init__(f"non-finite loss at epoch {epoch}; parameter norms: {norms}")


@dataclass
class TrainConfig:
    n_views: int = 2
    out_dim: int = 32
    tau: float = 1.0
    learning_rate: float = 1e-2
    weight_decay: float = 1e-4
    epochs: int = 200
    seed: int = 0
    precision: int = 64
    pivot_policy: str = L.PIVOT_PER_EPOCH
    pivot: int = 0
    chunk_size: int = 512
    log_every: int = 0
    variant: str = "NCL"

    def __post_init__(self):
        self.variant = L.Variant(self.variant).value
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if not self.learning_rate >= 0:
            raise ValueError("learning_rate must be >= 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.precision not in (32, 64):
            raise ValueError("precision must be 32 or 64")
        if self.n_views < 2:
            raise ValueError("n_views must be >= 2")
        if not 0 <= self.pivot < self.n_views:
            raise ValueError("pivot out of range")
        self.loss_config()

    @property
    def dtype(self):
        return np.float32 if self.precision == 32 else np.float64

    def loss_config(self):
        return L.LossConfig(
            tau=self.tau,
            variant=self.variant,
            pivot_policy=self.pivot_policy,
            pivot=self.pivot,
            chunk_size=self.chunk_size,
        )

    def to_dict(self):
        return asdict(self)


# --------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m: list
    v: list
    t: int = 0

    @classmethod
    def zeros_like(cls, params):
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], 0)

    def to_dict(self):
        return {"t": self.t, "m": [a.tolist() for a in self.m], "v": [a.tolist() for a in self.v]}

    @classmethod
    def from_dict(cls, d, dtype=np.float64):
        return cls(
            [np.array(a, dtype=dtype) for a in d["m"]],
            [np.array(a, dtype=dtype) for a in d["v"]],
            int(d["t"]),
        )


def adam_step(params, grads, state, lr, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
    """One bias-corrected Adam update with L2 weight decay added to the gradient.

    Returns ``(new_params, new_state)``; inputs are left untouched.
    """
    if len(params) != len(grads) or any(p.shape != g.shape for p, g in zip(params, grads)):
        raise ValueError("params and grads must have matching shapes")
    b1, b2 = betas
    t = state.t + 1
    new_params, ms, vs = [], [], []
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if weight_decay:
            g = g + weight_decay * p
        m = b1 * m + (1 - b1) * g
        v = b2 * v + (1 - b2) * g * g
        m_hat = m / (1 - b1 ** t)
        v_hat = v / (1 - b2 ** t)
        new_params.append((p - lr * m_hat / (np.sqrt(v_hat) + eps)).astype(p.dtype, copy=False))
        ms.append(m.astype(p.dtype, copy=False))
        vs.append(v.astype(p.dtype, copy=False))
    return new_params, AdamState(ms, vs, t)


# --------------------------------------------------------------------------
# training loop


@dataclass
class TrainReport:
    loss_trace: list
    wall_time: float
    params: M.ModelParams
    embeddings: M.EmbeddingSet
    optimizer_state: AdamState
    pivots: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "loss_trace": list(self.loss_trace),
            "pivots": list(self.pivots),
            "wall_time_seconds": self.wall_time,
            "epochs": len(self.loss_trace),
            "config": self.config,
        }

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")


def choose_pivot(cfg: TrainConfig, epoch):
    if cfg.pivot_policy == L.PIVOT_FIXED:
        return cfg.pivot
    return int(derive_rng(cfg.seed, f"pivot:{epoch}").integers(cfg.n_views))


def loss_and_grads(g, mp, loss_cfg, pivot):
    """Total loss at ``mp`` and its gradient as a :class:`ModelParams`."""
    emb, caches = M.forward_with_cache(g, mp)
    value, d_views = L.total_loss(g, emb, loss_cfg, pivot, return_grad=True)
    return value, M.backward(g, mp, caches, d_views)


def _param_norms(mp):
    out = {}
    for k, v in enumerate(mp.views):
        out[f"W{k}"] = float(np.linalg.norm(v.W))
        out[f"phi{k}"] = float(np.linalg.norm(v.phi))
    return out


def train(g, cfg: TrainConfig, params=None, optimizer_state=None, start_epoch=0) -> TrainReport:
    """Optimise all view parameters for ``cfg.epochs`` epochs.

    ``params``/``optimizer_state``/``start_epoch`` resume an earlier run;
    the epoch counter keeps pivot draws aligned with an uninterrupted run.
    """
    dtype = cfg.dtype
    if params is None:
        params = M.init_params(g.num_features, cfg.out_dim, cfg.n_views, cfg.seed, dtype)
    else:
        params = params.astype(dtype)
        if (params.n_views, params.in_dim, params.out_dim) != (cfg.n_views, g.num_features, cfg.out_dim):
            raise ValueError("initial parameters do not match config / graph")
    state = optimizer_state or AdamState.zeros_like(params.arrays())
    loss_cfg = cfg.loss_config()

    trace, pivots = [], []
    t0 = time.perf_counter()
    for epoch in range(start_epoch, start_epoch + cfg.epochs):
        pivot = choose_pivot(cfg, epoch)
        value, grads = loss_and_grads(g, params, loss_cfg, pivot)
        if not np.isfinite(value):
            raise TrainingDivergedError(epoch + 1, _param_norms(params))
        trace.append(float(value))
        pivots.append(pivot)
        new, state = adam_step(
            params.arrays(), grads.arrays(), state, cfg.learning_rate, cfg.weight_decay
        )
        params = M.ModelParams.from_arrays(new)
        if cfg.log_every and (epoch + 1) % cfg.log_every == 0:
            logger.info("epoch %d loss %.6f", epoch + 1, value)
    _, emb = M.forward(g, params)
    return TrainReport(
        loss_trace=trace,
        wall_time=time.perf_counter() - t0,
        params=params,
        embeddings=emb,
        optimizer_state=state,
        pivots=pivots,
        config=cfg.to_dict(),
    )


def save_optimizer_state(state: AdamState, epoch, path):
    d = state.to_dict()
    d["epoch"] = int(epoch)
    Path(path).write_text(json.dumps(d) + "\n")


def load_optimizer_state(path, dtype=np.float64):
    d = json.loads(Path(path).read_text())
    return AdamState.from_dict(d, dtype), int(d.get("epoch", d["t"]))
