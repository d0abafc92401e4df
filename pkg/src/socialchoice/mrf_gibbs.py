"""
Gibbs sampling for the latent-class Markov random field

    P(z; b) ∝ prod_(i,j) exp(-lam * sum_t (b_it - b_jt)^2 1(z_i = z_j = t)),

plus marginal estimation, exact enumeration for small graphs and the
block-partitioned sampler that drops edges between blocks so that blocks
can be sampled in parallel.
"""

from __future__ import annotations

import heapq
import itertools
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np
from numba import njit

from .graph_model import SocialGraph


@dataclass(frozen=True, eq=False)
class MRFSpec:
    graph: SocialGraph
    b: np.ndarray
    lam: float

    def __post_init__(self):
        b = np.asarray(self.b, dtype=np.float64)
        if b.ndim == 1:
            b = b[:, None]
        if b.shape[0] != self.graph.num_nodes:
            raise ValueError("offset matrix must have one row per node")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")
        object.__setattr__(self, "b", np.ascontiguousarray(b))

    @property
    def K(self) -> int:
        return int(self.b.shape[1])

    def slot_energies(self, graph: SocialGraph | None = None, b=None) -> np.ndarray:
        """``(b_it - b_jt)^2`` for every CSR adjacency entry (i, j), shape (nnz, K)."""
        graph = graph or self.graph
        b = self.b if b is None else b
        owner = np.repeat(np.arange(graph.num_nodes), graph.degree())
        return np.ascontiguousarray((b[owner] - b[graph.neighbors]) ** 2)


@dataclass(frozen=True, eq=False)
class MarginalEstimates:
    """Node marginals (N x K) and edge pair marginals (E x K x K)."""

    node: np.ndarray
    edge_pair: np.ndarray
    sample_count: int

    def same_class(self) -> np.ndarray:
        """E x K diagonals ``P(z_i = z_j = t)``."""
        return np.diagonal(self.edge_pair, axis1=1, axis2=2).copy()


@dataclass(frozen=True, eq=False)
class BlockPartition:
    blocks: tuple
    cut_edges: np.ndarray

    def labels(self, num_nodes) -> np.ndarray:
        lab = np.empty(num_nodes, dtype=np.int64)
        for k, blk in enumerate(self.blocks):
            lab[blk] = k
        return lab


# ---------------------------------------------------------------------------
# conditionals and exact enumeration

def gibbs_conditional(i: int, z, spec: MRFSpec) -> np.ndarray:
    """Full conditional of ``z_i`` given the other assignments."""
    z = np.asarray(z)
    nbr = spec.graph.neighbors_of(i)
    logits = np.zeros(spec.K)
    for j in nbr:
        t = z[j]
        logits[t] -= spec.lam * (spec.b[i, t] - spec.b[j, t]) ** 2
    p = np.exp(logits - logits.max())
    return p / p.sum()


def log_potential(z, spec: MRFSpec) -> float:
    z = np.asarray(z)
    i, j = spec.graph.edges[:, 0], spec.graph.edges[:, 1]
    same = z[i] == z[j]
    t = z[i][same]
    d = spec.b[i[same], t] - spec.b[j[same], t]
    return -spec.lam * float(np.sum(d * d))


def exact_marginals(spec: MRFSpec, max_states: int = 1 << 20) -> MarginalEstimates:
    """Node and edge-pair marginals by enumerating all K^N assignments."""
    n, k = spec.graph.num_nodes, spec.K
    if k ** n > max_states:
        raise ValueError(f"{k}^{n} assignments exceed the enumeration limit")
    Z = np.array(list(itertools.product(range(k), repeat=n)), dtype=np.int64).reshape(-1, n)
    e = spec.graph.edges
    logp = np.zeros(Z.shape[0])
    for idx, (i, j) in enumerate(e):
        same = Z[:, i] == Z[:, j]
        t = Z[:, i]
        logp -= spec.lam * np.where(same, (spec.b[i, t] - spec.b[j, t]) ** 2, 0.0)
    p = np.exp(logp - logp.max())
    p /= p.sum()
    node = np.zeros((n, k))
    for i in range(n):
        node[i] = np.bincount(Z[:, i], weights=p, minlength=k)
    pair = np.zeros((len(e), k, k))
    for idx, (i, j) in enumerate(e):
        pair[idx] = np.bincount(Z[:, i] * k + Z[:, j], weights=p, minlength=k * k).reshape(k, k)
    return MarginalEstimates(node, pair, 0)


# ---------------------------------------------------------------------------
# sampling kernels

@njit(cache=True, nogil=True)
def _gibbs_sweeps(indptr, nbrs, energy, lam, K, z, uniforms, sweep0, burn_in, thin, out, rec):
    """Run ``uniforms.shape[0]`` systematic-scan sweeps.

    Sweep numbers start at ``sweep0``; after ``burn_in`` sweeps, every
    ``thin``-th sweep is written to ``out[rec]``. Returns the new ``rec``.
    """
    n = z.shape[0]
    logits = np.empty(K)
    for s in range(uniforms.shape[0]):
        for i in range(n):
            for t in range(K):
                logits[t] = 0.0
            for m in range(indptr[i], indptr[i + 1]):
                t = z[nbrs[m]]
                logits[t] -= lam * energy[m, t]
            mx = logits[0]
            for t in range(1, K):
                if logits[t] > mx:
                    mx = logits[t]
            tot = 0.0
            for t in range(K):
                logits[t] = math.exp(logits[t] - mx)
                tot += logits[t]
            thresh = uniforms[s, i] * tot
            acc = 0.0
            pick = K - 1
            for t in range(K):
                acc += logits[t]
                if thresh < acc:
                    pick = t
                    break
            z[i] = pick
        k = sweep0 + s + 1 - burn_in
        if k > 0 and k % thin == 0 and rec < out.shape[0]:
            for i in range(n):
                out[rec, i] = z[i]
            rec += 1
    return rec


@njit(cache=True, nogil=True)
def _count_pairs(samples, edges, K, counts):
    for s in range(samples.shape[0]):
        for e in range(edges.shape[0]):
            counts[e, samples[s, edges[e, 0]] * K + samples[s, edges[e, 1]]] += 1


@njit(cache=True, nogil=True)
def _count_nodes(samples, K, counts):
    for s in range(samples.shape[0]):
        for i in range(samples.shape[1]):
            counts[i, samples[s, i]] += 1


def _sample_dtype(K):
    return np.int8 if K <= 127 else np.int32


def _run_block(spec: MRFSpec, nodes, n_samples, burn_in, thin, seed, block_id):
    sub, _ = spec.graph.subgraph(nodes)
    b = spec.b[nodes]
    energy = spec.slot_energies(sub, b)
    rng = np.random.default_rng([int(seed), int(block_id)])
    K = spec.K
    z = rng.integers(0, K, size=len(nodes)).astype(np.int64)
    out = np.empty((n_samples, len(nodes)), dtype=_sample_dtype(K))
    total = burn_in + n_samples * thin
    chunk = max(1, (1 << 20) // max(1, len(nodes)))
    done = 0
    rec = 0
    while done < total:
        m = min(chunk, total - done)
        u = rng.random((m, len(nodes)))
        rec = _gibbs_sweeps(sub.indptr, sub.neighbors, energy, float(spec.lam), K, z, u,
                            done, burn_in, thin, out, rec)
        done += m
    return out


def sample_prior_blocked(spec: MRFSpec, partition: BlockPartition, n_samples: int,
                         burn_in: int = 200, thin: int = 1, rng_seed: int = 0,
                         workers: int = 1) -> np.ndarray:
    """Sample each block independently, ignoring edges between blocks.

    Block ``k`` uses a generator seeded from ``(rng_seed, k)``, so the
    output is identical for any ``workers``. Returns an S x N array of
    class indices.
    """
    if n_samples < 1 or thin < 1 or burn_in < 0:
        raise ValueError("need n_samples >= 1, thin >= 1, burn_in >= 0")
    n = spec.graph.num_nodes
    out = np.empty((n_samples, n), dtype=_sample_dtype(spec.K))
    jobs = [(np.asarray(blk, dtype=np.int64), k) for k, blk in enumerate(partition.blocks)]
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            futs = [pool.submit(_run_block, spec, nodes, n_samples, burn_in, thin, rng_seed, k)
                    for nodes, k in jobs]
            results = [f.result() for f in futs]
    else:
        results = [_run_block(spec, nodes, n_samples, burn_in, thin, rng_seed, k)
                   for nodes, k in jobs]
    for (nodes, _), res in zip(jobs, results):
        out[:, nodes] = res
    return out


def single_block(graph: SocialGraph) -> BlockPartition:
    return BlockPartition((np.arange(graph.num_nodes),), np.zeros((0, 2), dtype=np.int64))


def sample_prior(spec: MRFSpec, n_samples: int, burn_in: int = 200, thin: int = 1,
                 rng_seed: int = 0) -> np.ndarray:
    """Systematic-scan Gibbs sampler over all nodes in index order."""
    return sample_prior_blocked(spec, single_block(spec.graph), n_samples, burn_in, thin, rng_seed)


def estimate_marginals(samples, spec: MRFSpec, smoothing: float = 0.5) -> MarginalEstimates:
    """Laplace-smoothed node and edge-pair frequencies."""
    samples = np.ascontiguousarray(samples)
    if samples.ndim != 2 or samples.shape[0] == 0:
        raise ValueError("need at least one sample")
    if smoothing < 0:
        raise ValueError("smoothing must be >= 0")
    S, n = samples.shape
    K = spec.K
    ncount = np.zeros((n, K), dtype=np.int64)
    _count_nodes(samples, K, ncount)
    edges = np.ascontiguousarray(spec.graph.edges)
    pcount = np.zeros((edges.shape[0], K * K), dtype=np.int64)
    _count_pairs(samples, edges, K, pcount)
    node = (ncount + smoothing) / (S + K * smoothing)
    pair = ((pcount + smoothing) / (S + K * K * smoothing)).reshape(-1, K, K)
    return MarginalEstimates(node, pair, S)


def samples_to_csv(samples) -> str:
    return "\n".join(",".join(str(int(v)) for v in row) for row in samples) + "\n"


# ---------------------------------------------------------------------------
# block partitioning

@njit(cache=True)
def _louvain_level(indptr, nbrs, order, max_passes):
    n = indptr.shape[0] - 1
    comm = np.arange(n)
    deg = np.empty(n)
    for i in range(n):
        deg[i] = indptr[i + 1] - indptr[i]
    m2 = deg.sum()
    if m2 == 0.0:
        return comm
    tot = deg.copy()
    w_to = np.zeros(n)
    touched = np.empty(n, dtype=np.int64)
    for _ in range(max_passes):
        moved = 0
        for i in order:
            ci = comm[i]
            ki = deg[i]
            nt = 0
            for m in range(indptr[i], indptr[i + 1]):
                c = comm[nbrs[m]]
                if w_to[c] == 0.0:
                    touched[nt] = c
                    nt += 1
                w_to[c] += 1.0
            tot[ci] -= ki
            best = ci
            best_gain = w_to[ci] - tot[ci] * ki / m2
            for k in range(nt):
                c = touched[k]
                gain = w_to[c] - tot[c] * ki / m2
                if gain > best_gain + 1e-12:
                    best_gain = gain
                    best = c
            tot[best] += ki
            comm[i] = best
            if best != ci:
                moved += 1
            for k in range(nt):
                w_to[touched[k]] = 0.0
        if moved == 0:
            break
    return comm


def _relabel(comm):
    _, first = np.unique(comm, return_index=True)
    order = np.argsort(first)
    remap = np.empty(comm.max() + 1, dtype=np.int64)
    remap[np.unique(comm)[order]] = np.arange(order.size)
    return remap[comm]


def _merge_to(comm, graph: SocialGraph, c):
    """Greedily merge the smallest block into its best modularity partner."""
    k0 = int(comm.max()) + 1
    deg = graph.degree().astype(np.float64)
    m2 = max(deg.sum(), 1.0)
    size = np.bincount(comm, minlength=k0)
    tot = np.bincount(comm, weights=deg, minlength=k0)
    links: list[dict[int, int]] = [{} for _ in range(k0)]
    a_e, b_e = comm[graph.edges[:, 0]], comm[graph.edges[:, 1]]
    cross = a_e != b_e
    pairs, counts = np.unique(np.column_stack([a_e[cross], b_e[cross]]), axis=0,
                              return_counts=True)
    for (a, b), e_ab in zip(pairs.tolist(), counts.tolist()):
        links[a][b] = links[a].get(b, 0) + e_ab
        links[b][a] = links[b].get(a, 0) + e_ab
    parent = np.arange(k0)
    alive = np.ones(k0, dtype=bool)
    heap = [(int(size[k]), k) for k in range(k0)]
    heapq.heapify(heap)

    def pop_smallest():
        while True:
            sz, k = heapq.heappop(heap)
            if alive[k] and sz == size[k]:
                return k

    n_groups = k0
    while n_groups > c:
        a = pop_smallest()
        best, best_gain = None, -np.inf
        for b, e_ab in links[a].items():
            gain = e_ab / (m2 / 2) - 2 * tot[a] * tot[b] / (m2 * m2)
            if gain > best_gain or (gain == best_gain and b < best):
                best, best_gain = b, gain
        if best is None:
            best = pop_smallest()
        alive[a] = False
        parent[a] = best
        size[best] += size[a]
        tot[best] += tot[a]
        for b, e_ab in links[a].items():
            links[b].pop(a, None)
            if b != best:
                links[best][b] = links[best].get(b, 0) + e_ab
                links[b][best] = links[b].get(best, 0) + e_ab
        links[a] = {}
        heapq.heappush(heap, (int(size[best]), best))
        n_groups -= 1
    # resolve merge chains
    root = parent.copy()
    while True:
        nxt = root[root]
        if np.array_equal(nxt, root):
            break
        root = nxt
    return root[comm]


def _bfs_order(graph: SocialGraph, members):
    member_set = set(members)
    seen, order = set(), []
    for start in sorted(members):
        if start in seen:
            continue
        queue = [start]
        seen.add(start)
        while queue:
            v = queue.pop(0)
            order.append(v)
            for w in sorted(graph.neighbors_of(v).tolist()):
                if w in member_set and w not in seen:
                    seen.add(w)
                    queue.append(w)
    return order


def _split_to(comm, graph: SocialGraph, c):
    """Split the largest block in half along a BFS order until there are ``c``."""
    groups = [np.flatnonzero(comm == k).tolist() for k in np.unique(comm)]
    while len(groups) < c:
        idx = max(range(len(groups)), key=lambda k: (len(groups[k]), -min(groups[k])))
        order = _bfs_order(graph, groups.pop(idx))
        half = len(order) // 2
        groups += [order[:half], order[half:]]
    out = np.empty_like(comm)
    for k, members in enumerate(groups):
        out[members] = k
    return out


def partition_blocks(graph: SocialGraph, c: int, rng_seed: int = 0) -> BlockPartition:
    """Partition nodes into exactly ``c`` blocks.

    Starts from one level of Louvain local moving (node visit order drawn
    from ``rng_seed``), then merges or splits blocks to reach ``c``.
    """
    n = graph.num_nodes
    if not 1 <= c <= max(n, 1):
        raise ValueError(f"block count must be in [1, {n}]")
    rng = np.random.default_rng(rng_seed)
    order = rng.permutation(n).astype(np.int64)
    comm = _louvain_level(graph.indptr, graph.neighbors, order, 50)
    comm = _relabel(comm)
    k = int(comm.max()) + 1 if n else 0
    if k > c:
        comm = _merge_to(comm, graph, c)
    elif k < c:
        comm = _split_to(comm, graph, c)
    comm = _relabel(comm)
    blocks = tuple(np.flatnonzero(comm == k) for k in range(c))
    cut = graph.edges[comm[graph.edges[:, 0]] != comm[graph.edges[:, 1]]]
    return BlockPartition(blocks, cut)
