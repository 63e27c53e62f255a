"""Graph container, GraphPack I/O and a stochastic block model generator."""
from __future__ import annotations

import json
import logging
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from pathlib import Path

import numpy as np
import scipy.sparse as sp

logger = logging.getLogger(__name__)

META_FILE = "meta.json"
EDGES_FILE = "edges.tsv"
FEATURES_FILE = "features.csv"
LABELS_FILE = "labels.csv"


class GraphPackError(ValueError):
    """Base class for malformed GraphPack directories."""

    def __init__(self, message, path=None, line=None):
        where = ""
        if path is not None:
            where = f"{path}"
            if line is not None:
                where += f":{line}"
            where += ": "
        super().__init__(where + message)
        self.path = path
        self.line = line


class MissingFileError(GraphPackError):
    pass


class DimensionMismatchError(GraphPackError):
    pass


class NonFiniteFeatureError(GraphPackError):
    pass


class LabelRangeError(GraphPackError):
    pass


def _readonly(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class Graph:
    """Undirected, unweighted attributed graph in CSR form.

    The adjacency never stores self-loops; the model adds each node to its
    own neighbourhood itself. Arrays are frozen after construction.
    """

    features: np.ndarray
    indptr: np.ndarray
    indices: np.ndarray
    labels: np.ndarray | None = None
    num_classes: int | None = None
    name: str = "graph"

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim != 2:
            raise ValueError(f"features must be 2-D, got shape {x.shape}")
        if not np.all(np.isfinite(x)):
            raise ValueError("features contain non-finite entries")
        n = x.shape[0]
        indptr = np.asarray(self.indptr, dtype=np.int64)
        indices = np.asarray(self.indices, dtype=np.int64)
        if indptr.shape != (n + 1,) or indptr[0] != 0 or indptr[-1] != len(indices):
            raise ValueError("indptr inconsistent with number of nodes / edges")
        if np.any(np.diff(indptr) < 0):
            raise ValueError("indptr must be non-decreasing")
        if len(indices) and (indices.min() < 0 or indices.max() >= n):
            raise ValueError("column index out of range")
        rows = np.repeat(np.arange(n), np.diff(indptr))
        if np.any(rows == indices):
            raise ValueError("adjacency must not store self-loops")
        # strictly increasing within each row => sorted and duplicate free
        same_row = rows[1:] == rows[:-1]
        if np.any(indices[1:][same_row] <= indices[:-1][same_row]):
            raise ValueError("column indices must be sorted and unique per row")
        a = sp.csr_matrix((np.ones(len(indices)), indices, indptr), shape=(n, n))
        if (a != a.T).nnz:
            raise ValueError("adjacency must be symmetric")

        labels = self.labels
        num_classes = self.num_classes
        if labels is not None:
            labels = np.asarray(labels, dtype=np.int64)
            if labels.shape != (n,):
                raise ValueError(f"labels must have shape ({n},), got {labels.shape}")
            if num_classes is None:
                num_classes = int(labels.max()) + 1 if n else 0
            if n and (labels.min() < 0 or labels.max() >= num_classes):
                raise ValueError("label out of range [0, num_classes)")
            labels = _readonly(labels)

        object.__setattr__(self, "features", _readonly(x))
        object.__setattr__(self, "indptr", _readonly(indptr))
        object.__setattr__(self, "indices", _readonly(indices))
        object.__setattr__(self, "labels", labels)
        object.__setattr__(self, "num_classes", None if num_classes is None else int(num_classes))

    @classmethod
    def from_edges(cls, num_nodes, edges, features, labels=None, num_classes=None, name="graph"):
        """Build a graph from an edge list, symmetrizing and deduplicating.

        Self-loops are dropped; the number dropped is stored on the result
        as ``dropped_self_loops``.
        """
        edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if len(edges) and (edges.min() < 0 or edges.max() >= num_nodes):
            raise ValueError("edge endpoint out of range")
        loops = edges[:, 0] == edges[:, 1]
        edges = edges[~loops]
        both = np.concatenate([edges, edges[:, ::-1]])
        a = sp.csr_matrix(
            (np.ones(len(both)), (both[:, 0], both[:, 1])), shape=(num_nodes, num_nodes)
        )
        a.sum_duplicates()
        a.sort_indices()
        g = cls(features, a.indptr, a.indices, labels, num_classes, name)
        object.__setattr__(g, "dropped_self_loops", int(loops.sum()))
        return g

    @property
    def num_nodes(self):
        return self.features.shape[0]

    @property
    def num_features(self):
        return self.features.shape[1]

    @property
    def num_edges(self):
        """Number of stored directed entries (twice the undirected count)."""
        return len(self.indices)

    def degrees(self):
        return np.diff(self.indptr)

    def neighbors(self, i):
        return neighbors(self, i)

    def adjacency(self):
        """Adjacency as a scipy CSR matrix (no self-loops)."""
        n = self.num_nodes
        return sp.csr_matrix(
            (np.ones(self.num_edges), self.indices, self.indptr), shape=(n, n)
        )

    def dense_adjacency(self):
        return self.adjacency().toarray().astype(bool)

    @cached_property
    def closed_edges(self):
        """CSR layout of ``N_i ∪ {i}``: (row, col, group_ptr).

        Each group is sorted by column and contains the self slot.
        """
        n = self.num_nodes
        deg = self.degrees()
        ptr = np.zeros(n + 1, dtype=np.int64)
        np.cumsum(deg + 1, out=ptr[1:])
        row = np.repeat(np.arange(n, dtype=np.int64), deg + 1)
        col = np.empty(len(row), dtype=np.int64)
        for i in range(n):
            nb = self.indices[self.indptr[i]:self.indptr[i + 1]]
            k = np.searchsorted(nb, i)
            s = ptr[i]
            col[s:s + k] = nb[:k]
            col[s + k] = i
            col[s + k + 1:ptr[i + 1]] = nb[k:]
        return _readonly(row), _readonly(col), _readonly(ptr)

    def permute(self, perm):
        """Relabel nodes so that new node ``p`` is old node ``perm[p]``."""
        perm = np.asarray(perm, dtype=np.int64)
        inv = np.empty_like(perm)
        inv[perm] = np.arange(len(perm))
        a = self.adjacency().tocoo()
        edges = np.stack([inv[a.row], inv[a.col]], axis=1)
        labels = None if self.labels is None else self.labels[perm]
        return Graph.from_edges(
            self.num_nodes, edges, self.features[perm], labels, self.num_classes, self.name
        )

    def __eq__(self, other):
        if not isinstance(other, Graph):
            return NotImplemented
        same_labels = (self.labels is None and other.labels is None) or (
            self.labels is not None
            and other.labels is not None
            and np.array_equal(self.labels, other.labels)
        )
        return (
            self.features.shape == other.features.shape
            and np.array_equal(self.features, other.features)
            and np.array_equal(self.indptr, other.indptr)
            and np.array_equal(self.indices, other.indices)
            and same_labels
            and self.num_classes == other.num_classes
            and self.name == other.name
        )

    __hash__ = None

    def __repr__(self):
        return (
            f"Graph(name={self.name!r}, N={self.num_nodes}, F={self.num_features}, "
            f"edges={self.num_edges}, C={self.num_classes})"
        )


def neighbors(g, i):
    """Sorted neighbour ids of node ``i`` (``i`` itself excluded)."""
    if not 0 <= i < g.num_nodes:
        raise IndexError(f"node {i} out of range for graph with {g.num_nodes} nodes")
    return g.indices[g.indptr[i]:g.indptr[i + 1]].tolist()


@dataclass(frozen=True)
class SbmSpec:
    num_blocks: int = 2
    nodes_per_block: int = 100
    p_in: float = 0.1
    p_out: float = 0.01
    feature_dim: int = 16
    feature_signal: float = 0.5
    seed: int = 0
    name: str = field(default="sbm", compare=False)

    def __post_init__(self):
        if self.num_blocks < 1 or self.nodes_per_block < 1:
            raise ValueError("num_blocks and nodes_per_block must be positive")
        if not 0.0 <= self.p_out <= self.p_in <= 1.0:
            raise ValueError("need 0 <= p_out <= p_in <= 1")
        if self.feature_dim < 1:
            raise ValueError("feature_dim must be >= 1")
        if self.feature_signal < 0:
            raise ValueError("feature_signal must be >= 0")


def generate_sbm(spec: SbmSpec) -> Graph:
    """Sample a planted-partition graph with block-dependent features.

    Block ``b`` gets mean offset ``feature_signal`` along axis
    ``b % feature_dim`` on top of standard normal noise.
    """
    rng = np.random.default_rng(spec.seed)
    n = spec.num_blocks * spec.nodes_per_block
    block = np.repeat(np.arange(spec.num_blocks), spec.nodes_per_block)
    iu, ju = np.triu_indices(n, k=1)
    p = np.where(block[iu] == block[ju], spec.p_in, spec.p_out)
    keep = rng.random(len(iu)) < p
    edges = np.stack([iu[keep], ju[keep]], axis=1)

    x = rng.standard_normal((n, spec.feature_dim))
    x[np.arange(n), block % spec.feature_dim] += spec.feature_signal
    return Graph.from_edges(n, edges, x, block, spec.num_blocks, spec.name)


def write_graph(g: Graph, path) -> Path:
    """Write ``g`` as a GraphPack directory (inverse of :func:`load_graph`)."""
    path = Path(path)
    path.mkdir(parents=True, exist_ok=True)
    meta = {"N": g.num_nodes, "F": g.num_features, "C": g.num_classes, "name": g.name}
    (path / META_FILE).write_text(json.dumps(meta, indent=2) + "\n")
    a = g.adjacency().tocoo()
    upper = a.row < a.col
    with open(path / EDGES_FILE, "w") as fh:
        for i, j in zip(a.row[upper], a.col[upper]):
            fh.write(f"{i}\t{j}\n")
    np.savetxt(path / FEATURES_FILE, g.features, fmt="%.17g", delimiter=",")
    labels_file = path / LABELS_FILE
    if g.labels is not None:
        np.savetxt(labels_file, g.labels, fmt="%d")
    elif labels_file.exists():
        labels_file.unlink()
    return path


def _require(path):
    if not path.is_file():
        raise MissingFileError("required file missing", path)
    return path


def _read_edges(path, n):
    edges = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.split()
            if not parts or parts[0].startswith("#"):
                continue
            if len(parts) != 2:
                raise GraphPackError(f"expected 2 columns, got {len(parts)}", path, lineno)
            try:
                i, j = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphPackError(f"non-integer node id in {line.strip()!r}", path, lineno)
            if not (0 <= i < n and 0 <= j < n):
                raise DimensionMismatchError(
                    f"edge ({i}, {j}) references a node outside [0, {n})", path, lineno
                )
            edges.append((i, j))
    return np.array(edges, dtype=np.int64).reshape(-1, 2)


def _read_features(path, n, f):
    rows = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            if not line.strip():
                continue
            try:
                row = [float(v) for v in line.split(",")]
            except ValueError:
                raise GraphPackError("unparseable feature value", path, lineno)
            if len(row) != f:
                raise DimensionMismatchError(f"expected {f} features, got {len(row)}", path, lineno)
            if not all(np.isfinite(row)):
                raise NonFiniteFeatureError("non-finite feature value", path, lineno)
            rows.append(row)
    if len(rows) != n:
        raise DimensionMismatchError(f"expected {n} feature rows, got {len(rows)}", path)
    return np.array(rows, dtype=np.float64).reshape(n, f)


def _read_labels(path, n, c):
    labels = []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            for tok in line.replace(",", " ").split():
                try:
                    y = int(tok)
                except ValueError:
                    raise GraphPackError(f"non-integer label {tok!r}", path, lineno)
                if y < 0 or (c is not None and y >= c):
                    raise LabelRangeError(f"label {y} outside [0, {c})", path, lineno)
                labels.append(y)
    if len(labels) != n:
        raise DimensionMismatchError(f"expected {n} labels, got {len(labels)}", path)
    return np.array(labels, dtype=np.int64)


def load_graph(path) -> Graph:
    """Read and validate a GraphPack directory."""
    path = Path(path)
    if not path.is_dir():
        raise MissingFileError("GraphPack directory not found", path)
    meta_path = _require(path / META_FILE)
    try:
        meta = json.loads(meta_path.read_text())
        n, f = int(meta["N"]), int(meta["F"])
    except (ValueError, KeyError, TypeError) as exc:
        raise GraphPackError(f"invalid meta: {exc}", meta_path)
    c = meta.get("C")
    c = None if c is None else int(c)

    edges = _read_edges(_require(path / EDGES_FILE), n)
    x = _read_features(_require(path / FEATURES_FILE), n, f)
    labels_path = path / LABELS_FILE
    labels = _read_labels(labels_path, n, c) if labels_path.is_file() else None
    if labels is None:
        c = None

    g = Graph.from_edges(n, edges, x, labels, c, meta.get("name", path.name))
    if g.dropped_self_loops:
        msg = f"{path}: dropped {g.dropped_self_loops} self-loop(s)"
        logger.warning(msg)
        warnings.warn(msg, stacklevel=2)
    return g
