"""
Monte Carlo EM for the latent-class graph-regularized model.

E-step: sample the class prior P(z; b) with Gibbs, estimate smoothed node
and edge-pair marginals, and combine them with the per-class choice
likelihoods into node posteriors q(z_i = t) and same-class edge posteriors
q(z_i = z_j = t). M-step: K independent weighted ADMM fits, one per class.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .admm import SolverConfig, admm_fit, weighted_objective
from .graph_model import Dataset, LCGRParams, LLGRParams, SocialGraph, choice_probability, sigmoid
from .mrf_gibbs import (
    MarginalEstimates,
    MRFSpec,
    estimate_marginals,
    exact_marginals,
    partition_blocks,
    sample_prior_blocked,
    single_block,
)


@dataclass(frozen=True, eq=False)
class PosteriorEstimates:
    node_post: np.ndarray
    edge_same_class: np.ndarray

    def __post_init__(self):
        q = np.asarray(self.node_post, dtype=np.float64)
        e = np.asarray(self.edge_same_class, dtype=np.float64)
        if q.ndim != 2 or e.ndim != 2 or (e.size and e.shape[1] != q.shape[1]):
            raise ValueError("posterior shapes must be N x K and E x K")
        if np.any(q < -1e-12) or np.any(np.abs(q.sum(axis=1) - 1.0) > 1e-9):
            raise ValueError("node posteriors must be nonnegative rows summing to 1")
        if e.size and (np.any(e < -1e-12) or np.any(e > 1 + 1e-12)
                       or np.any(e.sum(axis=1) > 1 + 1e-9)):
            raise ValueError("edge same-class posteriors must lie in [0, 1] and sum to <= 1")
        object.__setattr__(self, "node_post", q)
        object.__setattr__(self, "edge_same_class", e)

    @property
    def K(self) -> int:
        return int(self.node_post.shape[1])

    @classmethod
    def single_class(cls, num_nodes, num_edges):
        return cls(np.ones((num_nodes, 1)), np.ones((num_edges, 1)))


@dataclass
class MCEMConfig:
    K: int = 2
    lam: float = 1.0
    # Gibbs samples per EM iteration; None means 500 * (1 + iteration).
    # A shorter sequence repeats its last entry.
    schedule: tuple | None = None
    burn_in: int = 200
    thin: int = 1
    blocks: int = 1
    max_em_iters: int = 20
    em_tol: float = 1e-3
    em_window: int = 3
    smoothing: float = 0.5
    init_sigma: float = 0.1
    exact_estep: bool = False
    solver: SolverConfig = field(default_factory=SolverConfig)
    rng_seed: int = 0
    workers: int = 1

    def __post_init__(self):
        if self.K < 1:
            raise ValueError("K must be >= 1")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        if self.schedule is not None:
            s = tuple(int(v) for v in self.schedule)
            if not s or min(s) < 1:
                raise ValueError("schedule entries must be >= 1")
            if any(b < a for a, b in zip(s, s[1:])):
                raise ValueError("sample schedule must be nondecreasing")
            self.schedule = s
        if self.max_em_iters < 1 or self.em_window < 1 or self.blocks < 1 or self.thin < 1:
            raise ValueError("max_em_iters, em_window, blocks and thin must be >= 1")
        if self.burn_in < 0 or self.smoothing < 0 or not self.em_tol > 0:
            raise ValueError("burn_in and smoothing must be >= 0, em_tol > 0")

    def samples(self, em_iter: int) -> int:
        if self.schedule is None:
            return 500 * (1 + em_iter)
        return self.schedule[min(em_iter, len(self.schedule) - 1)]


def class_likelihood(i: int, t: int, params: LCGRParams, data: Dataset) -> float:
    y = int(data.labels[i])
    if y == 0:
        raise ValueError(f"node {i} is unlabeled; its likelihood is uniform across classes")
    h = float(params.W[t] @ data.features[i] + params.b[i, t])
    return float(choice_probability(h, y))


def class_likelihoods(params: LCGRParams, data: Dataset) -> np.ndarray:
    """N x K matrix of P(y_i | x_i, z_i = t), with 1 for unlabeled nodes."""
    y = data.labels.astype(np.float64)[:, None]
    lik = sigmoid(y * params.scores(data))
    lik[data.labels == 0] = 1.0
    return lik


def node_posterior(i: int, prior_node, params: LCGRParams, data: Dataset) -> np.ndarray:
    prior = np.asarray(prior_node, dtype=np.float64)
    if prior.ndim == 2:
        prior = prior[i]
    if data.labels[i] == 0:
        lik = np.ones(params.K)
    else:
        lik = np.array([class_likelihood(i, t, params, data) for t in range(params.K)])
    num = lik * prior
    return num / num.sum()


def edge_posterior(edge, prior_pair, params: LCGRParams, data: Dataset) -> np.ndarray:
    i, j = edge
    P = np.asarray(prior_pair, dtype=np.float64)
    K = params.K

    def lik(n):
        if data.labels[n] == 0:
            return np.ones(K)
        return np.array([class_likelihood(n, t, params, data) for t in range(K)])

    joint = np.outer(lik(i), lik(j)) * P
    return np.diag(joint) / joint.sum()


def assemble_posteriors(prior: MarginalEstimates, params: LCGRParams, data: Dataset,
                        graph: SocialGraph) -> PosteriorEstimates:
    """Vectorized node and same-class edge posteriors from prior marginals."""
    lik = class_likelihoods(params, data)
    num = lik * prior.node
    node = num / num.sum(axis=1, keepdims=True)
    li = lik[graph.edges[:, 0]]
    lj = lik[graph.edges[:, 1]]
    joint = li[:, :, None] * lj[:, None, :] * prior.edge_pair
    denom = joint.sum(axis=(1, 2))
    same = np.diagonal(joint, axis1=1, axis2=2) / denom[:, None]
    return PosteriorEstimates(node, same)


def expected_nll(params: LCGRParams, post: PosteriorEstimates, data: Dataset,
                 graph: SocialGraph, lam) -> float:
    """Posterior-weighted logistic loss plus same-class weighted offset penalty."""
    data.check_graph(graph)
    if post.node_post.shape != (data.num_nodes, params.K):
        raise ValueError("node posteriors do not match N x K")
    if post.edge_same_class.shape != (graph.num_edges, params.K):
        raise ValueError("edge posteriors do not match E x K")
    lab = data.labels != 0
    y = data.labels[lab].astype(np.float64)[:, None]
    loss = np.logaddexp(0.0, -y * params.scores(data)[lab])
    total = float(np.sum(post.node_post[lab] * loss))
    diff = params.b[graph.edges[:, 0]] - params.b[graph.edges[:, 1]]
    return total + float(lam) * float(np.sum(diff * diff * post.edge_same_class))


def _sampler_seed(rng_seed, em_iter) -> int:
    return int(np.random.SeedSequence([int(rng_seed), 7, int(em_iter)]).generate_state(1)[0])


def prior_marginals(params: LCGRParams, graph: SocialGraph, config: MCEMConfig, em_iter: int,
                    partition=None) -> MarginalEstimates:
    K = params.K
    if K == 1:
        return MarginalEstimates(np.ones((graph.num_nodes, 1)), np.ones((graph.num_edges, 1, 1)), 0)
    spec = MRFSpec(graph, params.b, config.lam)
    if config.exact_estep:
        return exact_marginals(spec)
    if partition is None:
        partition = (single_block(graph) if config.blocks == 1
                     else partition_blocks(graph, config.blocks, config.rng_seed))
    S = config.samples(em_iter)
    samples = sample_prior_blocked(spec, partition, S, config.burn_in, config.thin,
                                   _sampler_seed(config.rng_seed, em_iter), config.workers)
    return estimate_marginals(samples, spec, config.smoothing)


def e_step(params: LCGRParams, data: Dataset, graph: SocialGraph, config: MCEMConfig,
           em_iter: int = 0, prior: MarginalEstimates | None = None,
           partition=None) -> PosteriorEstimates:
    """Posterior node/edge class probabilities for the current parameters.

    ``prior`` injects precomputed prior marginals in place of sampling.
    """
    if prior is None:
        prior = prior_marginals(params, graph, config, em_iter, partition)
    return assemble_posteriors(prior, params, data, graph)


def _fit_class(t, post, data, graph, lam, solver, warm_start):
    nw = post.node_post[:, t]
    ew = post.edge_same_class[:, t]
    init = warm_start.class_slice(t)
    if not np.any(nw[data.labels != 0] > 0) and not np.any(ew > 0):
        return init, None
    res = admm_fit(data, graph, lam, nw, ew, solver, init)
    return res.params, res


def m_step_detailed(post: PosteriorEstimates, data: Dataset, graph: SocialGraph, lam,
                    solver: SolverConfig, warm_start: LCGRParams, workers: int = 1):
    """Like :func:`m_step`, also returning the per-class ADMM results
    (``None`` for classes with no weight, which keep the warm start)."""
    K = warm_start.K
    if workers > 1 and K > 1:
        with ThreadPoolExecutor(min(workers, K)) as pool:
            fits = list(pool.map(
                lambda t: _fit_class(t, post, data, graph, lam, solver, warm_start), range(K)))
    else:
        fits = [_fit_class(t, post, data, graph, lam, solver, warm_start) for t in range(K)]
    return LCGRParams.from_slices([f[0] for f in fits]), [f[1] for f in fits]


def m_step(post: PosteriorEstimates, data: Dataset, graph: SocialGraph, lam,
           solver: SolverConfig | None = None, warm_start: LCGRParams | None = None) -> LCGRParams:
    """Minimize the expected negative log-likelihood class by class."""
    solver = solver or SolverConfig()
    if warm_start is None:
        warm_start = LCGRParams(np.zeros((post.K, data.num_features)),
                                np.zeros((data.num_nodes, post.K)))
    return m_step_detailed(post, data, graph, lam, solver, warm_start)[0]


def initial_params(data: Dataset, config: MCEMConfig) -> LCGRParams:
    K = config.K
    if K == 1:
        return LCGRParams(np.zeros((1, data.num_features)), np.zeros((data.num_nodes, 1)))
    rng = np.random.default_rng([int(config.rng_seed), 3])
    W = rng.normal(scale=config.init_sigma, size=(K, data.num_features))
    return LCGRParams(W, np.zeros((data.num_nodes, K)))


@dataclass
class MCEMResult:
    params: LCGRParams
    posteriors: PosteriorEstimates
    history: list
    converged: bool
    lam: float

    def to_json(self) -> dict:
        return {
            "model": "lcgr",
            "K": self.params.K,
            "lambda": float(self.lam),
            "W": self.params.W.tolist(),
            "b": self.params.b.tolist(),
            "converged": bool(self.converged),
            "history": [{"iter": h["iter"], "Q": h["Q"], "samples": h["samples"]}
                        for h in self.history],
            # class memberships used for prediction
            "node_post": self.posteriors.node_post.tolist(),
        }


def _relative_change(a, b):
    return abs(b - a) / max(abs(a), 1e-12)


def mcem_fit(data: Dataset, graph: SocialGraph, config: MCEMConfig | None = None,
             init: LCGRParams | None = None) -> MCEMResult:
    """Alternate E- and M-steps until Q stabilizes or ``max_em_iters``.

    ``history[k]["Q"]`` is the expected negative log-likelihood of the
    parameters produced by M-step ``k`` under the posteriors of E-step ``k``.
    The returned posteriors come from one more E-step at the final
    parameters, so they are the ones to use for prediction.
    """
    config = config or MCEMConfig()
    data.check_graph(graph)
    params = init if init is not None else initial_params(data, config)
    if params.K != config.K:
        raise ValueError("init has the wrong number of classes")
    partition = None
    if config.K > 1 and config.blocks > 1 and not config.exact_estep:
        partition = partition_blocks(graph, config.blocks, config.rng_seed)

    history = []
    converged = False
    t0 = time.perf_counter()
    em_iter = 0
    for em_iter in range(config.max_em_iters):
        post = e_step(params, data, graph, config, em_iter, partition=partition)
        params, fits = m_step_detailed(post, data, graph, config.lam, config.solver, params,
                                       config.workers)
        q = expected_nll(params, post, data, graph, config.lam)
        history.append({
            "iter": em_iter,
            "Q": q,
            "samples": 0 if (config.K == 1 or config.exact_estep) else config.samples(em_iter),
            "admm_converged": all(f is None or f.converged for f in fits),
            "seconds": time.perf_counter() - t0,
        })
        if len(history) > config.em_window:
            recent = [h["Q"] for h in history[-(config.em_window + 1):]]
            if all(_relative_change(a, b) < config.em_tol for a, b in zip(recent, recent[1:])):
                converged = True
                break
    post = e_step(params, data, graph, config, em_iter + 1, partition=partition)
    return MCEMResult(params, post, history, converged, float(config.lam))


def predict(params: LCGRParams, post: PosteriorEstimates, data: Dataset, nodes=None):
    """Posterior-mixture choice probabilities and labels (ties go to +1)."""
    nodes = np.arange(data.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    h = data.features[nodes] @ params.W.T + params.b[nodes]
    p = np.sum(post.node_post[nodes] * sigmoid(h), axis=1)
    return p, np.where(p >= 0.5, 1, -1)


def predict_llgr(params: LLGRParams, data: Dataset, nodes=None):
    nodes = np.arange(data.num_nodes) if nodes is None else np.asarray(nodes, dtype=np.int64)
    p = np.atleast_1d(sigmoid(data.features[nodes] @ params.W + params.b[nodes]))
    return p, np.where(p >= 0.5, 1, -1)


def class_objectives(params: LCGRParams, post: PosteriorEstimates, data: Dataset,
                     graph: SocialGraph, lam) -> list[float]:
    """Per-class weighted LLGR objectives; they sum to :func:`expected_nll`."""
    return [weighted_objective(params.class_slice(t), data, graph, lam,
                               post.node_post[:, t], post.edge_same_class[:, t])
            for t in range(params.K)]
