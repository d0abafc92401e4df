"""Independent reference computations used as test oracles.

These are deliberately naive (Python loops, brute-force enumeration) and do
not call into the package's numerical code.
"""

import itertools
import math

import numpy as np


def softplus_neg(t):
    """log(1 + exp(-t)), written out branch by branch."""
    if t > 0:
        return math.log1p(math.exp(-t))
    return -t + math.log1p(math.exp(t))


def objective(W, b, X, y, edges, lam, node_w=None, edge_w=None):
    total = 0.0
    for i in range(len(y)):
        if y[i] == 0:
            continue
        wi = 1.0 if node_w is None else node_w[i]
        h = sum(W[k] * X[i][k] for k in range(len(W))) + b[i]
        total += wi * softplus_neg(y[i] * h)
    for e, (i, j) in enumerate(edges):
        q = 1.0 if edge_w is None else max(edge_w[e], 0.0)
        total += lam * q * (b[i] - b[j]) ** 2
    return total


def log_prior_weight(z, edges, b, lam):
    s = 0.0
    for i, j in edges:
        if z[i] == z[j]:
            t = z[i]
            s -= lam * (b[i][t] - b[j][t]) ** 2
    return s


def enumerate_prior(n, edges, b, lam, K):
    """Exact node marginals (n x K) and edge-pair marginals (m x K x K)."""
    states = list(itertools.product(range(K), repeat=n))
    logw = np.array([log_prior_weight(z, edges, b, lam) for z in states])
    p = np.exp(logw - logw.max())
    p /= p.sum()
    node = np.zeros((n, K))
    pair = np.zeros((len(edges), K, K))
    for z, pz in zip(states, p):
        for i in range(n):
            node[i, z[i]] += pz
        for e, (i, j) in enumerate(edges):
            pair[e, z[i], z[j]] += pz
    return node, pair


def choice_lik(W, b, x, y, i, t):
    if y == 0:
        return 1.0
    h = float(np.dot(W[t], x)) + b[i][t]
    return 1.0 / (1.0 + math.exp(-y * h))


def bayes_posteriors(n, edges, W, b, X, y, lam, K):
    """Node posteriors conditioned on the node's own label and same-class
    edge posteriors conditioned on both endpoint labels, computed by summing
    over every joint class assignment."""
    states = list(itertools.product(range(K), repeat=n))
    logw = np.array([log_prior_weight(z, edges, b, lam) for z in states])
    prior = np.exp(logw - logw.max())
    prior /= prior.sum()
    node = np.zeros((n, K))
    for i in range(n):
        for z, pz in zip(states, prior):
            node[i, z[i]] += pz * choice_lik(W, b, X[i], y[i], i, z[i])
        node[i] /= node[i].sum()
    same = np.zeros((len(edges), K))
    for e, (i, j) in enumerate(edges):
        total = 0.0
        for z, pz in zip(states, prior):
            v = pz * choice_lik(W, b, X[i], y[i], i, z[i]) * choice_lik(W, b, X[j], y[j], j, z[j])
            total += v
            if z[i] == z[j]:
                same[e, z[i]] += v
        same[e] /= total
    return node, same


def tv(p, q):
    return 0.5 * float(np.abs(np.asarray(p) - np.asarray(q)).sum())
