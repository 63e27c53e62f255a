"""Neighbour contrastive learning on learnable attention-based graph views."""
from .estimator import NCLA
from .evaluation import (
    EvalResult,
    L2LogisticRegression,
    Split,
    SplitSpec,
    evaluate,
    fit_logreg,
    sample_split,
)
from .graph import Graph, SbmSpec, generate_sbm, load_graph, neighbors, write_graph
from .loss import LossConfig, Variant, anchor_loss, pairwise_similarities, total_loss, two_view_loss
from .model import (
    AdaptiveAdjacency,
    EmbeddingSet,
    ModelParams,
    ViewParams,
    compute_view_adjacency,
    encode_view,
    forward,
    init_params,
)
from .trainer import AdamState, TrainConfig, TrainReport, adam_step, train

__version__ = "0.1.0"
