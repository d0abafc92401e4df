"""
Consensus ADMM for the weighted graph-regularized logistic objective

    sum_i w_i log(1 + exp(-y_i (W.x_i + b_i))) + lam * sum_(i,j) q_ij (b_i - b_j)^2.

Each node keeps a local copy ``g_i`` of the shared weights and each edge
keeps one copy of each endpoint offset. An iteration runs, in order: the
global ``W`` average, the per-node offset bisections, the per-node Newton
solves for ``g_i``, the closed-form edge-copy updates and the dual ascent.
The per-node and per-edge steps are dispatched over fixed index chunks, so
the result does not depend on the worker count.
"""

from __future__ import annotations

import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels as K
from .graph_model import Dataset, Hyperparams, LLGRParams, SocialGraph, logistic_loss


class SolverError(RuntimeError):
    pass


@dataclass
class SolverConfig:
    max_iters: int = 500
    tol_primal: float = 1e-4
    tol_dual: float = 1e-4
    newton_max_iters: int = 50
    newton_tol: float = 1e-10
    bisection_tol: float = 1e-10
    rho1: float = 1.0
    rho2: float = 1.0
    # bound on offsets of labeled nodes that have no usable neighbors
    offset_cap: float = 1e3
    workers: int = 1
    chunk_size: int = 2048

    def __post_init__(self):
        if self.max_iters < 1 or self.newton_max_iters < 1:
            raise ValueError("iteration counts must be >= 1")
        for name in ("tol_primal", "tol_dual", "newton_tol", "bisection_tol", "rho1", "rho2"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be > 0")
        if self.workers < 1 or self.chunk_size < 1:
            raise ValueError("workers and chunk_size must be >= 1")


@dataclass
class ADMMState:
    """Mutable iterate of the consensus ADMM.

    ``c`` and ``u`` are indexed by directed edge slot (see
    :class:`SocialGraph`): slot ``2e`` is the copy of ``b`` of the first
    endpoint of edge ``e``, slot ``2e + 1`` that of the second.
    """

    W: np.ndarray
    b: np.ndarray
    g: np.ndarray
    c: np.ndarray
    u: np.ndarray
    r: np.ndarray
    rho1: float
    rho2: float
    node_weights: np.ndarray
    edge_weights: np.ndarray

    @classmethod
    def initial(cls, data: Dataset, graph: SocialGraph, node_weights=None, edge_weights=None,
                init: LLGRParams | None = None, rho1=1.0, rho2=1.0) -> "ADMMState":
        data.check_graph(graph)
        n, d = data.num_nodes, data.num_features
        nw = np.ones(n) if node_weights is None else np.array(node_weights, dtype=np.float64)
        ew = np.ones(graph.num_edges) if edge_weights is None else np.array(edge_weights, dtype=np.float64)
        if nw.shape != (n,) or ew.shape != (graph.num_edges,):
            raise ValueError("weight vectors must match node and edge counts")
        if np.any(nw < 0) or not np.all(np.isfinite(nw)):
            raise ValueError("node weights must be finite and nonnegative")
        if not np.all(np.isfinite(ew)):
            raise ValueError("edge weights must be finite")
        ew = np.maximum(ew, 0.0)
        # unlabeled nodes never enter the loss
        nw = np.where(data.labels != 0, nw, 0.0)
        if init is None:
            init = LLGRParams.zeros(n, d)
        if init.W.shape != (d,) or init.b.shape != (n,):
            raise ValueError("init parameters do not match data dimensions")
        W = init.W.copy()
        b = init.b.copy()
        return cls(
            W=W, b=b,
            g=np.tile(W, (n, 1)),
            c=b[graph.edges.ravel()].copy(),
            u=np.zeros(2 * graph.num_edges),
            r=np.zeros((n, d)),
            rho1=float(rho1), rho2=float(rho2),
            node_weights=nw, edge_weights=ew,
        )

    def copy(self) -> "ADMMState":
        return ADMMState(self.W.copy(), self.b.copy(), self.g.copy(), self.c.copy(),
                         self.u.copy(), self.r.copy(), self.rho1, self.rho2,
                         self.node_weights, self.edge_weights)


@dataclass
class ADMMResult:
    params: LLGRParams
    converged: bool
    iterations: int
    history: list = field(default_factory=list)
    state: ADMMState | None = None

    def to_json(self, lam) -> dict:
        return {
            "model": "llgr",
            "lambda": float(lam),
            "W": self.params.W.tolist(),
            "b": self.params.b.tolist(),
            "converged": bool(self.converged),
            "iters": int(self.iterations),
        }


def weighted_objective(params: LLGRParams, data: Dataset, graph: SocialGraph, lam,
                       node_weights=None, edge_weights=None) -> float:
    """Weighted logistic loss plus weighted Laplacian penalty on the offsets."""
    data.check_graph(graph)
    if params.W.shape != (data.num_features,) or params.b.shape != (data.num_nodes,):
        raise ValueError("parameter dimensions do not match the data")
    nw = np.ones(data.num_nodes) if node_weights is None else np.asarray(node_weights, dtype=np.float64)
    ew = np.ones(graph.num_edges) if edge_weights is None else np.asarray(edge_weights, dtype=np.float64)
    if nw.shape != (data.num_nodes,) or ew.shape != (graph.num_edges,):
        raise ValueError("weight vectors must match node and edge counts")
    lab = data.labels != 0
    h = data.features[lab] @ params.W + params.b[lab]
    loss = float(np.dot(nw[lab], logistic_loss(data.labels[lab] * h)))
    diff = params.b[graph.edges[:, 0]] - params.b[graph.edges[:, 1]]
    return loss + float(lam) * float(np.dot(np.maximum(ew, 0.0), diff * diff))


# ---------------------------------------------------------------------------
# single-variable updates (reference entry points; the solver loop runs the
# same kernels over index chunks)

def update_global_W(state: ADMMState) -> np.ndarray:
    return (state.g - state.r).mean(axis=0)


def update_offset_b(i: int, state: ADMMState, data: Dataset, graph: SocialGraph,
                    config: SolverConfig | None = None) -> float:
    """Minimize over ``b_i``:
    ``w_i log(1+exp(-y_i(g_i.x_i + b))) + rho2/2 sum_j (b - c_ij + u_ij)^2``."""
    config = config or SolverConfig()
    s = graph.slots_of(i)
    centers = state.c[s] - state.u[s]
    a = float(state.g[i] @ data.features[i])
    return float(K.solve_offset(float(state.node_weights[i]) if data.labels[i] else 0.0,
                                float(data.labels[i]), a, np.ascontiguousarray(centers),
                                state.rho2, float(state.b[i]), config.bisection_tol,
                                config.offset_cap))


def update_local_g(i: int, state: ADMMState, data: Dataset,
                   config: SolverConfig | None = None) -> np.ndarray:
    """Minimize over ``g``: ``w_i log(1+exp(-y_i(g.x_i + b_i))) + rho1/2 |W - g + r_i|^2``."""
    config = config or SolverConfig()
    out = np.empty(data.num_features)
    v = state.W + state.r[i]
    w = float(state.node_weights[i]) if data.labels[i] else 0.0
    _, gn = K.solve_local_g(w, float(data.labels[i]), data.features[i], float(state.b[i]), v,
                            state.rho1, config.newton_tol, config.newton_max_iters, out)
    if not np.isfinite(gn) or not np.all(np.isfinite(out)):
        raise SolverError(f"non-finite Newton iterate at node {i}")
    return out


def update_edge_copies(e: int, state: ADMMState, graph: SocialGraph, lam) -> tuple[float, float]:
    i, j = graph.edges[e]
    lq = float(lam) * float(state.edge_weights[e])
    c1, c2 = K.edge_pair(lq, state.rho2, state.b[i] + state.u[2 * e], state.b[j] + state.u[2 * e + 1])
    return float(c1), float(c2)


def update_duals(state: ADMMState, graph: SocialGraph) -> ADMMState:
    state.r += state.W - state.g
    state.u += state.b[graph.edges.ravel()] - state.c
    return state


# ---------------------------------------------------------------------------

def _chunks(n, size):
    return [(lo, min(lo + size, n)) for lo in range(0, n, size)]


class _Dispatcher:
    """Runs a range kernel over fixed chunks, serially or on a thread pool."""

    def __init__(self, workers, chunk_size):
        self.workers = workers
        self.chunk_size = chunk_size
        self.pool = ThreadPoolExecutor(workers) if workers > 1 else None

    def run(self, kernel, n, *args):
        ranges = _chunks(n, self.chunk_size)
        if self.pool is None or len(ranges) == 1:
            return [kernel(lo, hi, *args) for lo, hi in ranges]
        futures = [self.pool.submit(kernel, lo, hi, *args) for lo, hi in ranges]
        return [f.result() for f in futures]

    def close(self):
        if self.pool is not None:
            self.pool.shutdown()

    def __enter__(self):
        return self

    def __exit__(self, *exc):
        self.close()


class _Problem:
    """Contiguous arrays the kernels read, built once per fit."""

    def __init__(self, data: Dataset, graph: SocialGraph, lam, state: ADMMState):
        self.X = np.ascontiguousarray(data.features)
        self.y = data.labels.astype(np.float64)
        self.edges = np.ascontiguousarray(graph.edges)
        self.indptr = np.ascontiguousarray(graph.indptr)
        self.slots = np.ascontiguousarray(graph.slots)
        self.owner = graph.edges.ravel()
        self.lq = float(lam) * state.edge_weights
        self.n = data.num_nodes
        self.m = graph.num_edges


def admm_iteration(state: ADMMState, prob: _Problem, config: SolverConfig, disp: _Dispatcher):
    """One pass of the update sequence; mutates ``state``.

    Returns (primal residual, dual residual).
    """
    W_old = state.W
    c_old = state.c
    state.W = update_global_W(state)

    b_new = np.empty_like(state.b)
    disp.run(K.sweep_offsets, prob.n, prob.indptr, prob.slots, state.c, state.u, state.g,
             prob.X, prob.y, state.node_weights, state.rho2, state.b, b_new,
             config.bisection_tol, config.offset_cap)
    state.b = b_new

    g_new = np.empty_like(state.g)
    worst = disp.run(K.sweep_local, prob.n, prob.X, prob.y, state.node_weights, state.b,
                     state.W, state.r, state.rho1, g_new, config.newton_tol,
                     config.newton_max_iters)
    bad = [w for w in worst if w < 0]
    if bad:
        raise SolverError(f"non-finite Newton iterate at node {int(-bad[0] - 1)}")
    state.g = g_new

    c_new = np.empty_like(state.c)
    disp.run(K.sweep_edges, prob.m, prob.edges, state.b, state.u, prob.lq, state.rho2, c_new)
    state.c = c_new

    disp.run(K.sweep_node_duals, prob.n, state.W, state.g, state.r)
    disp.run(K.sweep_edge_duals, prob.m, prob.edges, state.b, state.c, state.u)

    primal = float(np.max(np.linalg.norm(state.W - state.g, axis=1))) if prob.n else 0.0
    if prob.m:
        primal = max(primal, float(np.max(np.abs(state.b[prob.owner] - state.c))))
    dual = state.rho1 * float(np.linalg.norm(state.W - W_old))
    if prob.m:
        dual = max(dual, state.rho2 * float(np.max(np.abs(state.c - c_old))))
    return primal, dual


def admm_fit(data: Dataset, graph: SocialGraph, lam, node_weights=None, edge_weights=None,
             config: SolverConfig | None = None, init: LLGRParams | None = None) -> ADMMResult:
    """Fit the (weighted) LLGR objective by consensus ADMM.

    ``lam`` may be a float or a :class:`Hyperparams` (which then also sets
    the penalties). Returns the iterate with the smallest residual; when the
    tolerances are not met within ``max_iters`` it is flagged
    ``converged=False``.
    """
    config = config or SolverConfig()
    if isinstance(lam, Hyperparams):
        rho1, rho2, lam = lam.rho1, lam.rho2, lam.lam
    else:
        rho1, rho2 = config.rho1, config.rho2
    if not lam >= 0:
        raise ValueError(f"lambda must be >= 0, got {lam}")
    state = ADMMState.initial(data, graph, node_weights, edge_weights, init, rho1, rho2)
    prob = _Problem(data, graph, lam, state)

    history = []
    best = (np.inf, state.W.copy(), state.b.copy(), 0)
    converged = False
    t0 = time.perf_counter()
    it = 0
    with _Dispatcher(config.workers, config.chunk_size) as disp:
        for it in range(1, config.max_iters + 1):
            primal, dual = admm_iteration(state, prob, config, disp)
            obj = weighted_objective(LLGRParams(state.W, state.b), data, graph, lam,
                                     state.node_weights, state.edge_weights)
            history.append({
                "iter": it, "objective": obj, "primal_residual": primal,
                "dual_residual": dual, "seconds": time.perf_counter() - t0,
            })
            score = max(primal / config.tol_primal, dual / config.tol_dual)
            if score <= best[0]:
                best = (score, state.W.copy(), state.b.copy(), it)
            if primal <= config.tol_primal and dual <= config.tol_dual:
                converged = True
                break
    if converged:
        params = LLGRParams(state.W, state.b)
    else:
        params = LLGRParams(best[1], best[2])
    return ADMMResult(params, converged, it, history, state)


def format_diagnostics(history, timing=True) -> str:
    """CSV of the per-iteration history; ``timing=False`` leaves the
    wall-clock column empty so that reruns are byte-identical."""
    lines = ["iter,objective,primal_residual,dual_residual,seconds"]
    for h in history:
        sec = f"{h['seconds']:.6f}" if timing else ""
        lines.append(f"{h['iter']},{h['objective']!r},{h['primal_residual']!r},"
                     f"{h['dual_residual']!r},{sec}")
    return "\n".join(lines) + "\n"
