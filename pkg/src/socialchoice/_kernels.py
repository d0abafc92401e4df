"""Compiled per-node / per-edge kernels for the consensus ADMM solver.

Every sweep kernel processes an index range ``[lo, hi)`` and writes only the
slots it owns, so ranges can be dispatched to worker threads in any order
without changing results.
"""

import math

import numpy as np
from numba import njit


@njit(cache=True, nogil=True)
def sigmoid(t):
    if t >= 0.0:
        return 1.0 / (1.0 + math.exp(-t))
    e = math.exp(t)
    return e / (1.0 + e)


@njit(cache=True, nogil=True)
def softplus_neg(t):
    """log(1 + exp(-t))."""
    if t > 0.0:
        return math.log1p(math.exp(-t))
    return -t + math.log1p(math.exp(t))


@njit(cache=True, nogil=True)
def offset_derivative(b, w, y, a, rho2, deg, center_sum):
    # d/db [ w*log(1+exp(-y(a+b))) + rho2/2 * sum_j (b - m_j)^2 ]
    return -w * y * sigmoid(-y * (a + b)) + rho2 * (deg * b - center_sum)


@njit(cache=True, nogil=True)
def solve_offset(w, y, a, centers, rho2, b_cur, tol, cap):
    """Minimize the univariate offset subproblem by bisection.

    ``centers`` holds ``c_ij - u_ij`` for every slot owned by the node.
    Returns the minimizer, ``b_cur`` when the objective is flat, or the
    signed ``cap`` when the objective has no finite minimizer.
    """
    deg = centers.shape[0]
    if w == 0.0 or y == 0.0:
        if deg == 0:
            return b_cur
        return centers.sum() / deg
    csum = centers.sum()
    if deg == 0:
        # strictly monotone logistic term alone: minimizer at infinity
        return cap if y > 0 else -cap
    lo = centers.min() - abs(y) / rho2 - 1.0
    hi = centers.max() + 1.0
    n = 0
    while offset_derivative(lo, w, y, a, rho2, deg, csum) > 0.0 and n < 200:
        lo -= (hi - lo)
        n += 1
    n = 0
    while offset_derivative(hi, w, y, a, rho2, deg, csum) < 0.0 and n < 200:
        hi += (hi - lo)
        n += 1
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if mid <= lo or mid >= hi:
            break
        if offset_derivative(mid, w, y, a, rho2, deg, csum) > 0.0:
            hi = mid
        else:
            lo = mid
    return 0.5 * (lo + hi)


@njit(cache=True, nogil=True)
def _g_objective(g, x, w, y, b, v, rho1):
    s = 0.0
    q = 0.0
    for k in range(g.shape[0]):
        s += g[k] * x[k]
        q += (g[k] - v[k]) ** 2
    return w * softplus_neg(y * (s + b)) + 0.5 * rho1 * q


@njit(cache=True, nogil=True)
def solve_local_g(w, y, x, b, v, rho1, tol, max_iter, out):
    """Damped Newton for ``w*log(1+exp(-y(g.x+b))) + rho1/2 |g - v|^2``.

    Starts at ``v`` and writes the minimizer into ``out``. The Hessian is
    ``rho1 I + c x x^T``; its inverse is applied via Sherman-Morrison.
    Returns (iterations, final gradient norm).
    """
    d = x.shape[0]
    for k in range(d):
        out[k] = v[k]
    xx = 0.0
    for k in range(d):
        xx += x[k] * x[k]
    if w == 0.0 or y == 0.0 or xx == 0.0:
        return 0, 0.0
    grad = np.empty(d)
    step = np.empty(d)
    trial = np.empty(d)
    gnorm = 0.0
    for it in range(max_iter):
        s = 0.0
        for k in range(d):
            s += out[k] * x[k]
        p = sigmoid(-y * (s + b))
        gnorm = 0.0
        for k in range(d):
            grad[k] = -w * y * p * x[k] + rho1 * (out[k] - v[k])
            gnorm += grad[k] * grad[k]
        gnorm = math.sqrt(gnorm)
        if gnorm <= tol:
            return it, gnorm
        c = w * p * (1.0 - p)
        xg = 0.0
        for k in range(d):
            xg += x[k] * grad[k]
        coef = c * xg / (rho1 + c * xx)
        slope = 0.0
        for k in range(d):
            step[k] = -(grad[k] - coef * x[k]) / rho1
            slope += step[k] * grad[k]
        f0 = _g_objective(out, x, w, y, b, v, rho1)
        t = 1.0
        accepted = False
        for _ in range(60):
            for k in range(d):
                trial[k] = out[k] + t * step[k]
            if _g_objective(trial, x, w, y, b, v, rho1) <= f0 + 1e-4 * t * slope:
                accepted = True
                break
            t *= 0.5
        if not accepted:
            # objective flat at machine precision along the Newton direction
            return it, gnorm
        for k in range(d):
            out[k] = trial[k]
    s = 0.0
    for k in range(d):
        s += out[k] * x[k]
    p = sigmoid(-y * (s + b))
    gnorm = 0.0
    for k in range(d):
        gk = -w * y * p * x[k] + rho1 * (out[k] - v[k])
        gnorm += gk * gk
    return max_iter, math.sqrt(gnorm)


@njit(cache=True, nogil=True)
def sweep_offsets(lo, hi, indptr, slots, c, u, g, X, y, w, rho2, b_old, b_new, tol, cap):
    for i in range(lo, hi):
        a = 0.0
        for k in range(X.shape[1]):
            a += g[i, k] * X[i, k]
        s0, s1 = indptr[i], indptr[i + 1]
        centers = np.empty(s1 - s0)
        for m in range(s0, s1):
            s = slots[m]
            centers[m - s0] = c[s] - u[s]
        b_new[i] = solve_offset(w[i], float(y[i]), a, centers, rho2, b_old[i], tol, cap)


@njit(cache=True, nogil=True)
def sweep_local(lo, hi, X, y, w, b, W, r, rho1, g_new, tol, max_iter):
    """Returns the worst final gradient norm over the range."""
    d = X.shape[1]
    v = np.empty(d)
    worst = 0.0
    for i in range(lo, hi):
        for k in range(d):
            v[k] = W[k] + r[i, k]
        _, gn = solve_local_g(w[i], float(y[i]), X[i], b[i], v, rho1, tol, max_iter, g_new[i])
        if not math.isfinite(gn):
            return -1.0 - i
        if gn > worst:
            worst = gn
    return worst


@njit(cache=True, nogil=True)
def edge_pair(lq, rho2, p1, p2):
    """Stationary point of ``lq (c1-c2)^2 + rho2/2 [(c1-p1)^2 + (c2-p2)^2]``.

    First-order system [[2lq+rho2, -2lq], [-2lq, 2lq+rho2]] c = rho2 p,
    solved by Cramer's rule.
    """
    a = 2.0 * lq + rho2
    off = -2.0 * lq
    det = a * a - off * off
    r1 = rho2 * p1
    r2 = rho2 * p2
    return (a * r1 - off * r2) / det, (a * r2 - off * r1) / det


@njit(cache=True, nogil=True)
def sweep_edges(lo, hi, edges, b, u, lq, rho2, c_new):
    for e in range(lo, hi):
        i = edges[e, 0]
        j = edges[e, 1]
        c1, c2 = edge_pair(lq[e], rho2, b[i] + u[2 * e], b[j] + u[2 * e + 1])
        c_new[2 * e] = c1
        c_new[2 * e + 1] = c2


@njit(cache=True, nogil=True)
def sweep_node_duals(lo, hi, W, g, r):
    for i in range(lo, hi):
        for k in range(W.shape[0]):
            r[i, k] += W[k] - g[i, k]


@njit(cache=True, nogil=True)
def sweep_edge_duals(lo, hi, edges, b, c, u):
    for e in range(lo, hi):
        u[2 * e] += b[edges[e, 0]] - c[2 * e]
        u[2 * e + 1] += b[edges[e, 1]] - c[2 * e + 1]
