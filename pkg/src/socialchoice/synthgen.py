"""
Planted-partition generators for the two synthetic experiments.

* connectivity sweep: three equal communities, two of which form one class;
  labels follow the class, features come from two Gaussians assigned
  independently of the communities, and ``beta`` sets the probability of
  an edge between nodes of different classes;
* preference sweep: two equal classes with opposite weight vectors
  ``W_1 = -W_2`` of norm ``w_norm``, per-node Gaussian offsets, and labels
  drawn from the logistic choice model.

Features, communities and labels use one random stream and edges another,
so changing only a connectivity parameter keeps features and labels fixed.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .graph_model import Dataset, SocialGraph, sigmoid


@dataclass(frozen=True)
class GroundTruth:
    community: np.ndarray
    cls: np.ndarray
    labels: np.ndarray
    test_nodes: np.ndarray
    W: np.ndarray | None = None
    b: np.ndarray | None = None

    def to_csv(self) -> str:
        lines = ["node_id,community,class,label"]
        lines += [f"{i},{int(c)},{int(k)},{int(y)}"
                  for i, (c, k, y) in enumerate(zip(self.community, self.cls, self.labels))]
        return "\n".join(lines) + "\n"


def _check_prob(name, p):
    if not 0.0 <= p <= 1.0:
        raise ValueError(f"{name} must be a probability, got {p}")


@dataclass(frozen=True)
class BetaExperimentSpec:
    n_nodes: int = 300
    n_communities: int = 3
    n_classes: int = 2
    p_in: float = 0.2
    p_same_class: float = 0.01
    beta: float = 1e-4
    n_features: int = 2
    # the two feature Gaussians have means +/- feature_mean * ones
    feature_mean: float = 1.0
    feature_sigma: float = 1.0
    n_test: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        for name in ("p_in", "p_same_class", "beta"):
            _check_prob(name, getattr(self, name))
        if self.n_nodes % self.n_communities:
            raise ValueError("communities must be of equal size")
        if not 2 <= self.n_classes <= self.n_communities:
            raise ValueError("need 2 <= n_classes <= n_communities")
        if not 0 <= self.n_test <= self.n_nodes:
            raise ValueError("n_test must lie in [0, n_nodes]")


@dataclass(frozen=True)
class WExperimentSpec:
    n_nodes: int = 200
    w_norm: float = 10.0
    b_sigma: float = 1.0
    p_in: float = 0.2
    p_cross: float = 1e-4
    n_features: int = 2
    feature_mean: float = 1.0
    feature_sigma: float = 0.3
    n_test: int = 50
    rng_seed: int = 0

    def __post_init__(self):
        _check_prob("p_in", self.p_in)
        _check_prob("p_cross", self.p_cross)
        if self.w_norm < 0 or self.b_sigma < 0:
            raise ValueError("w_norm and b_sigma must be >= 0")
        if self.n_nodes % 2:
            raise ValueError("n_nodes must be even (two equal classes)")
        if not 0 <= self.n_test <= self.n_nodes:
            raise ValueError("n_test must lie in [0, n_nodes]")


def _streams(seed):
    node_ss, edge_ss = np.random.SeedSequence(int(seed)).spawn(2)
    return np.random.default_rng(node_ss), np.random.default_rng(edge_ss)


def sample_planted_edges(prob_matrix, group, rng) -> np.ndarray:
    """Independent edges with probability ``prob_matrix[group[i], group[j]]``."""
    n = group.size
    iu, ju = np.triu_indices(n, k=1)
    p = prob_matrix[group[iu], group[ju]]
    keep = rng.random(iu.size) < p
    return np.column_stack([iu[keep], ju[keep]])


def beta_edge_probabilities(spec: BetaExperimentSpec, community_class) -> np.ndarray:
    c = np.asarray(community_class)
    same_comm = np.eye(c.size, dtype=bool)
    same_class = c[:, None] == c[None, :]
    return np.where(same_comm, spec.p_in, np.where(same_class, spec.p_same_class, spec.beta))


def community_classes(n_communities, n_classes) -> np.ndarray:
    """Class of each community: the first ``n_communities - n_classes + 1``
    communities share class 0, the rest get one class each."""
    first = n_communities - n_classes + 1
    return np.concatenate([np.zeros(first, dtype=np.int64),
                           np.arange(1, n_classes, dtype=np.int64)])


def class_labels(cls) -> np.ndarray:
    """Class 0 chooses +1, every other class -1."""
    return np.where(np.asarray(cls) == 0, 1, -1).astype(np.int8)


def generate_beta_experiment(spec: BetaExperimentSpec | None = None):
    """Returns (graph, dataset, truth). The dataset carries all labels; the
    held-out test nodes are listed in ``truth.test_nodes``."""
    spec = spec or BetaExperimentSpec()
    rng, erng = _streams(spec.rng_seed)
    n, d = spec.n_nodes, spec.n_features
    community = rng.permutation(np.arange(n) % spec.n_communities)
    comm_cls = community_classes(spec.n_communities, spec.n_classes)
    cls = comm_cls[community]
    labels = class_labels(cls)
    component = rng.permutation(np.arange(n) % 2)
    means = np.where(component[:, None] == 0, spec.feature_mean, -spec.feature_mean)
    X = means + spec.feature_sigma * rng.normal(size=(n, d))
    test = np.sort(rng.choice(n, size=spec.n_test, replace=False))
    edges = sample_planted_edges(beta_edge_probabilities(spec, comm_cls), community, erng)
    graph = SocialGraph.from_edges(n, edges)
    truth = GroundTruth(community, cls, labels, test)
    return graph, Dataset(X, labels), truth


def generate_w_experiment(spec: WExperimentSpec | None = None):
    """Returns (graph, dataset, truth) with the generating ``W`` (2 x d) and
    per-node offsets stored on ``truth``."""
    spec = spec or WExperimentSpec()
    rng, erng = _streams(spec.rng_seed)
    n, d = spec.n_nodes, spec.n_features
    cls = rng.permutation(np.arange(n) % 2)
    X = spec.feature_mean + spec.feature_sigma * rng.normal(size=(n, d))
    direction = np.ones(d) / np.sqrt(d)
    W = np.stack([spec.w_norm * direction, -spec.w_norm * direction])
    b = spec.b_sigma * rng.normal(size=n)
    h = np.einsum("ij,ij->i", X, W[cls]) + b
    labels = np.where(rng.random(n) < sigmoid(h), 1, -1).astype(np.int8)
    test = np.sort(rng.choice(n, size=spec.n_test, replace=False))
    prob = np.array([[spec.p_in, spec.p_cross], [spec.p_cross, spec.p_in]])
    graph = SocialGraph.from_edges(n, sample_planted_edges(prob, cls, erng))
    truth = GroundTruth(cls.copy(), cls, labels, test, W, b)
    return graph, Dataset(X, labels), truth
