"""scikit-learn style wrapper around the trainer."""
from __future__ import annotations

import numpy as np
import scipy.sparse as sp
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_array, check_is_fitted

from . import model as M
from .graph import Graph
from .trainer import TrainConfig, train


def as_graph(X, adjacency=None):
    """Accept a :class:`Graph` or a feature matrix plus adjacency (dense or sparse)."""
    if isinstance(X, Graph):
        if adjacency is not None:
            raise ValueError("adjacency given together with a Graph")
        return X
    if adjacency is None:
        raise ValueError("adjacency is required when X is a feature matrix")
    X = check_array(X, dtype=np.float64)
    a = sp.coo_matrix(adjacency)
    if a.shape != (X.shape[0], X.shape[0]):
        raise ValueError(f"adjacency shape {a.shape} does not match {X.shape[0]} nodes")
    nz = a.data != 0
    return Graph.from_edges(X.shape[0], np.stack([a.row[nz], a.col[nz]], axis=1), X)


class NCLA(TransformerMixin, BaseEstimator):
    """Self-supervised node embeddings from learnable attention views.

    ``fit`` trains on a graph (``X`` is a :class:`~ncla.graph.Graph`, or a
    feature matrix with ``adjacency=``); ``transform`` returns the
    concatenated view embeddings, shape ``(N, n_views * out_dim)``.
    """

    def __init__(self, n_views=2, out_dim=32, tau=1.0, learning_rate=1e-2, weight_decay=1e-4,
                 epochs=200, random_state=0, precision=64, pivot_policy="per-epoch",
                 chunk_size=512, variant="NCL"):
        self.n_views = n_views
        self.out_dim = out_dim
        self.tau = tau
        self.learning_rate = learning_rate
        self.weight_decay = weight_decay
        self.epochs = epochs
        self.random_state = random_state
        self.precision = precision
        self.pivot_policy = pivot_policy
        self.chunk_size = chunk_size
        self.variant = variant

    def _config(self):
        return TrainConfig(
            n_views=self.n_views,
            out_dim=self.out_dim,
            tau=self.tau,
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            epochs=self.epochs,
            seed=self.random_state,
            precision=self.precision,
            pivot_policy=self.pivot_policy,
            chunk_size=self.chunk_size,
            variant=self.variant,
        )

    def fit(self, X, y=None, adjacency=None):
        g = as_graph(X, adjacency)
        report = train(g, self._config())
        self.params_ = report.params
        self.loss_curve_ = report.loss_trace
        self.report_ = report
        self.embedding_ = report.embeddings.concatenated
        self.n_features_in_ = g.num_features
        return self

    def transform(self, X, adjacency=None):
        check_is_fitted(self, "params_")
        g = as_graph(X, adjacency)
        if g.num_features != self.n_features_in_:
            raise ValueError(f"expected {self.n_features_in_} features, got {g.num_features}")
        return M.forward(g, self.params_)[1].concatenated

    def fit_transform(self, X, y=None, adjacency=None):
        return self.fit(X, y, adjacency=adjacency).embedding_
