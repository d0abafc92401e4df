"""
Core data types: social graphs, node datasets and model parameters.

Everything here is immutable after construction (arrays are flagged
read-only) so that solver and sampler workers can share instances freely.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np


class GraphError(ValueError):
    """Malformed or invalid graph input."""


class DatasetError(ValueError):
    """Malformed or invalid node data."""


def _frozen(a):
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class SocialGraph:
    """Undirected simple graph on nodes ``0..num_nodes-1``.

    Edges are stored once, canonically as ``(i, j)`` with ``i < j`` and in
    lexicographic order. Directed edge *slots* are numbered ``2e`` for the
    copy owned by ``edges[e, 0]`` and ``2e + 1`` for the copy owned by
    ``edges[e, 1]``; the CSR arrays ``indptr``/``neighbors``/``slots`` list
    for every node its neighbors and the slot ids it owns.
    """

    num_nodes: int
    edges: np.ndarray
    indptr: np.ndarray = field(repr=False)
    neighbors: np.ndarray = field(repr=False)
    slots: np.ndarray = field(repr=False)

    @classmethod
    def from_edges(cls, num_nodes, edges) -> "SocialGraph":
        num_nodes = int(num_nodes)
        if num_nodes < 0:
            raise GraphError("num_nodes must be nonnegative")
        e = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
        if e.size and (e.min() < 0 or e.max() >= num_nodes):
            raise GraphError(f"edge endpoint outside [0, {num_nodes})")
        loops = np.flatnonzero(e[:, 0] == e[:, 1])
        if loops.size:
            raise GraphError(f"self-loop at node {int(e[loops[0], 0])}")
        e = np.sort(e, axis=1)
        e = np.unique(e, axis=0) if e.size else np.zeros((0, 2), dtype=np.int64)

        deg = np.bincount(e.ravel(), minlength=num_nodes)
        indptr = np.zeros(num_nodes + 1, dtype=np.int64)
        np.cumsum(deg, out=indptr[1:])
        owner = e.ravel()  # slot s is owned by owner[s]
        other = e[:, ::-1].ravel()
        order = np.argsort(owner, kind="stable")
        return cls(
            num_nodes=num_nodes,
            edges=_frozen(e),
            indptr=_frozen(indptr),
            neighbors=_frozen(other[order]),
            slots=_frozen(order.astype(np.int64)),
        )

    @property
    def num_edges(self) -> int:
        return int(self.edges.shape[0])

    def degree(self) -> np.ndarray:
        return np.diff(self.indptr)

    def neighbors_of(self, i: int) -> np.ndarray:
        return self.neighbors[self.indptr[i]:self.indptr[i + 1]]

    def slots_of(self, i: int) -> np.ndarray:
        return self.slots[self.indptr[i]:self.indptr[i + 1]]

    def slot_owner(self) -> np.ndarray:
        return self.edges.ravel()

    def subgraph(self, nodes) -> tuple["SocialGraph", np.ndarray]:
        """Induced subgraph on ``nodes`` (relabelled in the given order).

        Returns the subgraph and the indices into ``self.edges`` of the
        edges it keeps.
        """
        nodes = np.asarray(nodes, dtype=np.int64)
        local = np.full(self.num_nodes, -1, dtype=np.int64)
        local[nodes] = np.arange(nodes.size)
        li, lj = local[self.edges[:, 0]], local[self.edges[:, 1]]
        keep = np.flatnonzero((li >= 0) & (lj >= 0))
        return SocialGraph.from_edges(nodes.size, np.column_stack([li[keep], lj[keep]])), keep

    def edge_set(self) -> set[tuple[int, int]]:
        return {(int(i), int(j)) for i, j in self.edges}


@dataclass(frozen=True, eq=False)
class Dataset:
    """Node features and ternary labels (-1, +1, or 0 for unobserved)."""

    features: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        x = np.asarray(self.features, dtype=np.float64)
        if x.ndim == 1:
            x = x[:, None]
        if x.ndim != 2:
            raise DatasetError("features must be a 2-d array")
        y = np.asarray(self.labels)
        if y.shape != (x.shape[0],):
            raise DatasetError(f"labels length {y.shape} does not match {x.shape[0]} feature rows")
        bad = ~np.isin(y, (-1, 0, 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise DatasetError(f"label {y[i]!r} at node {i} not in {{-1, 0, 1}}")
        if not np.all(np.isfinite(x)):
            raise DatasetError("features must be finite")
        object.__setattr__(self, "features", _frozen(x))
        object.__setattr__(self, "labels", _frozen(y.astype(np.int8)))

    @property
    def num_nodes(self) -> int:
        return int(self.features.shape[0])

    @property
    def num_features(self) -> int:
        return int(self.features.shape[1])

    @property
    def labeled(self) -> np.ndarray:
        return self.labels != 0

    def check_graph(self, graph: SocialGraph) -> None:
        if graph.num_nodes != self.num_nodes:
            raise DatasetError(
                f"dataset has {self.num_nodes} rows but graph has {graph.num_nodes} nodes")

    def masked(self, nodes) -> "Dataset":
        """Copy with the labels of ``nodes`` recoded as unobserved."""
        y = self.labels.copy()
        y[np.asarray(nodes, dtype=np.int64)] = 0
        return Dataset(self.features, y)


@dataclass(frozen=True, eq=False)
class LLGRParams:
    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.asarray(self.W, dtype=np.float64).ravel()
        b = np.asarray(self.b, dtype=np.float64).ravel()
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("LLGR parameters must be finite")
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "b", _frozen(b))

    @classmethod
    def zeros(cls, num_nodes, num_features):
        return cls(np.zeros(num_features), np.zeros(num_nodes))

    def scores(self, data: Dataset) -> np.ndarray:
        return data.features @ self.W + self.b


@dataclass(frozen=True, eq=False)
class LCGRParams:
    """Per-class weights ``W`` (K x d) and per-node, per-class offsets ``b`` (N x K)."""

    W: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        W = np.atleast_2d(np.asarray(self.W, dtype=np.float64))
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim == 1:
            b = b[:, None]
        if b.shape[1] != W.shape[0]:
            raise ValueError(f"b has {b.shape[1]} classes, W has {W.shape[0]}")
        if W.shape[0] < 1:
            raise ValueError("K must be >= 1")
        if not (np.all(np.isfinite(W)) and np.all(np.isfinite(b))):
            raise ValueError("LCGR parameters must be finite")
        object.__setattr__(self, "W", _frozen(W))
        object.__setattr__(self, "b", _frozen(b))

    @property
    def K(self) -> int:
        return int(self.W.shape[0])

    def scores(self, data: Dataset) -> np.ndarray:
        """N x K matrix of ``W_t . x_i + b_it``."""
        return data.features @ self.W.T + self.b

    def class_slice(self, t: int) -> LLGRParams:
        return LLGRParams(self.W[t], self.b[:, t])

    @classmethod
    def from_slices(cls, slices) -> "LCGRParams":
        return cls(np.stack([s.W for s in slices]), np.column_stack([s.b for s in slices]))


@dataclass(frozen=True)
class Hyperparams:
    lam: float = 1.0
    rho1: float = 1.0
    rho2: float = 1.0

    def __post_init__(self):
        if not self.lam >= 0:
            raise ValueError(f"lambda must be >= 0, got {self.lam}")
        if not (self.rho1 > 0 and self.rho2 > 0):
            raise ValueError("ADMM penalties rho1, rho2 must be > 0")


def choice_probability(h, y):
    """Probability of choosing ``y`` in {-1, +1} given score ``h``.

    ``1 / (1 + exp(-y h))``, evaluated without overflow for any finite ``h``.
    Works elementwise on arrays.
    """
    y_arr = np.asarray(y)
    if np.any((y_arr != 1) & (y_arr != -1)):
        raise ValueError("choice_probability needs labels in {-1, +1}")
    t = np.asarray(h, dtype=np.float64) * y_arr
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out[()] if out.ndim == 0 else out


def sigmoid(t):
    t = np.asarray(t, dtype=np.float64)
    out = np.empty_like(t)
    pos = t >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-t[pos]))
    e = np.exp(t[~pos])
    out[~pos] = e / (1.0 + e)
    return out[()] if out.ndim == 0 else out


def logistic_loss(t):
    """``log(1 + exp(-t))`` elementwise, stable for large |t|."""
    t = np.asarray(t, dtype=np.float64)
    return np.logaddexp(0.0, -t)


# ---------------------------------------------------------------------------
# file formats

def load_graph(path, num_nodes: int | None = None) -> SocialGraph:
    """Read a whitespace-separated edge list.

    A header line ``# nodes: N`` (or the ``num_nodes`` argument) fixes the
    node count; otherwise it is one more than the largest id seen. Lines
    starting with ``#`` are otherwise ignored.
    """
    pairs = []
    header_n = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            s = line.strip()
            if not s:
                continue
            if s.startswith("#"):
                key, _, val = s[1:].partition(":")
                if key.strip().lower() == "nodes":
                    try:
                        header_n = int(val)
                    except ValueError:
                        raise GraphError(f"line {lineno}: bad node-count header {s!r}") from None
                continue
            parts = s.split()
            if len(parts) != 2:
                if len(parts) == 3:
                    raise GraphError(f"line {lineno}: weighted edges are not supported")
                raise GraphError(f"line {lineno}: expected two node ids, got {s!r}")
            try:
                u, v = int(parts[0]), int(parts[1])
            except ValueError:
                raise GraphError(f"line {lineno}: non-integer node id in {s!r}") from None
            if u < 0 or v < 0:
                raise GraphError(f"line {lineno}: negative node id")
            if u == v:
                raise GraphError(f"line {lineno}: self-loop at node {u}")
            pairs.append((u, v))
    n = num_nodes if num_nodes is not None else header_n
    top = 1 + max((max(p) for p in pairs), default=-1)
    if n is None:
        n = top
    elif top > n:
        raise GraphError(f"node id {top - 1} exceeds declared node count {n}")
    return SocialGraph.from_edges(n, pairs)


def format_graph(graph: SocialGraph) -> str:
    lines = [f"# nodes: {graph.num_nodes}"]
    lines += [f"{i}\t{j}" for i, j in graph.edges]
    return "\n".join(lines) + "\n"


def _read_csv_rows(path):
    with open(path, newline="", encoding="utf-8") as fh:
        return [row for row in csv.reader(fh) if row and any(c.strip() for c in row)]


def _is_number(s):
    try:
        float(s)
        return True
    except ValueError:
        return False


def load_features(path) -> np.ndarray:
    rows = _read_csv_rows(path)
    if rows and not all(_is_number(c) for c in rows[0]):
        rows = rows[1:]
    try:
        x = np.array([[float(c) for c in r] for r in rows], dtype=np.float64)
    except ValueError as exc:
        raise DatasetError(f"{path}: non-numeric feature value ({exc})") from None
    if x.size == 0:
        raise DatasetError(f"{path}: no feature rows")
    if x.ndim != 2:
        raise DatasetError(f"{path}: ragged feature rows")
    return x


def load_labels(path, num_nodes: int) -> np.ndarray:
    rows = _read_csv_rows(path)
    if rows and not all(_is_number(c) for c in rows[0][:2]):
        rows = rows[1:]
    y = np.zeros(num_nodes, dtype=np.int8)
    for k, row in enumerate(rows, 1):
        if len(row) < 2:
            raise DatasetError(f"{path}: row {k} needs node_id,label")
        try:
            node, lab = int(row[0]), float(row[1])
        except ValueError:
            raise DatasetError(f"{path}: row {k} is not numeric") from None
        if not 0 <= node < num_nodes:
            raise DatasetError(f"{path}: node id {node} outside [0, {num_nodes})")
        if lab not in (-1.0, 0.0, 1.0):
            raise DatasetError(f"{path}: label {row[1]} for node {node} not in {{-1, 0, 1}}")
        y[node] = int(lab)
    return y


def load_dataset(features_file, labels_file, graph: SocialGraph) -> Dataset:
    x = load_features(features_file)
    if x.shape[0] != graph.num_nodes:
        raise DatasetError(
            f"features have {x.shape[0]} rows but graph has {graph.num_nodes} nodes")
    return Dataset(x, load_labels(labels_file, graph.num_nodes))


def format_features(data: Dataset) -> str:
    d = data.num_features
    lines = [",".join(f"x{k}" for k in range(d))]
    lines += [",".join(repr(float(v)) for v in row) for row in data.features]
    return "\n".join(lines) + "\n"


def format_labels(labels) -> str:
    lines = ["node_id,label"] + [f"{i},{int(v)}" for i, v in enumerate(labels)]
    return "\n".join(lines) + "\n"


