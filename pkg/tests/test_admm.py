import warnings

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import minimize

from socialchoice.admm import (ADMMState, SolverConfig, admm_fit, format_diagnostics,
                               update_duals, update_edge_copies, update_global_W, update_local_g,
                               update_offset_b, weighted_objective)
from socialchoice.baselines import fit_logistic
from socialchoice.experiments import random_dataset, random_graph
from socialchoice.graph_model import Dataset, LLGRParams, SocialGraph

from . import oracles


def path3():
    return SocialGraph.from_edges(3, [(0, 1), (1, 2)])


def make_state(data, graph, seed=0, **kw):
    rng = np.random.default_rng(seed)
    st_ = ADMMState.initial(data, graph, **kw)
    st_.W = rng.normal(size=data.num_features)
    st_.b = rng.normal(size=data.num_nodes)
    st_.g = rng.normal(size=st_.g.shape)
    st_.r = rng.normal(scale=0.3, size=st_.r.shape)
    st_.c = rng.normal(size=st_.c.shape)
    st_.u = rng.normal(scale=0.3, size=st_.u.shape)
    return st_


# ---------------------------------------------------------------------------
# objective

def test_objective_single_zero_node():
    data = Dataset(np.zeros((1, 2)), np.array([1]))
    g = SocialGraph.from_edges(1, [])
    val = weighted_objective(LLGRParams(np.array([3.0, -1.0]), np.zeros(1)), data, g, 0.0)
    assert val == pytest.approx(np.log(2.0), abs=1e-15)


def test_objective_constant_offsets_have_no_penalty():
    rng = np.random.default_rng(1)
    data = Dataset(rng.normal(size=(3, 2)), np.array([1, -1, 0]))
    W = rng.normal(size=2)
    a = weighted_objective(LLGRParams(W, np.full(3, 0.7)), data, path3(), 0.0)
    b = weighted_objective(LLGRParams(W, np.full(3, 0.7)), data, path3(), 123.0)
    assert a == b


def test_objective_matches_direct_summation():
    rng = np.random.default_rng(2)
    X = rng.normal(size=(3, 2))
    y = np.array([1, -1, 1])
    W, b = rng.normal(size=2), rng.normal(size=3)
    nw, ew = rng.random(3), rng.random(2)
    data = Dataset(X, y)
    got = weighted_objective(LLGRParams(W, b), data, path3(), 0.7, nw, ew)
    want = oracles.objective(W, b, X, y, [(0, 1), (1, 2)], 0.7, nw, ew)
    assert got == pytest.approx(want, rel=1e-13)


def test_objective_dimension_mismatch():
    data = Dataset(np.zeros((3, 2)), np.array([1, -1, 1]))
    with pytest.raises(ValueError):
        weighted_objective(LLGRParams(np.zeros(3), np.zeros(3)), data, path3(), 1.0)


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 10_000))
def test_objective_is_convex(seed):
    rng = np.random.default_rng(seed)
    n, d = 6, 3
    graph = random_graph(n, 7, seed)
    data = Dataset(rng.normal(size=(n, d)), rng.choice([-1, 0, 1], size=n))
    lam = float(rng.uniform(0, 5))
    p0 = (rng.normal(size=d) * 3, rng.normal(size=n) * 3)
    p1 = (rng.normal(size=d) * 3, rng.normal(size=n) * 3)
    f0 = weighted_objective(LLGRParams(*p0), data, graph, lam)
    f1 = weighted_objective(LLGRParams(*p1), data, graph, lam)
    for t in np.linspace(0, 1, 12)[1:-1]:
        mid = LLGRParams((1 - t) * p0[0] + t * p1[0], (1 - t) * p0[1] + t * p1[1])
        assert weighted_objective(mid, data, graph, lam) <= (1 - t) * f0 + t * f1 + 1e-9


# ---------------------------------------------------------------------------
# W update

def test_W_single_node():
    data = Dataset(np.zeros((1, 2)), np.array([1]))
    s = make_state(data, SocialGraph.from_edges(1, []))
    assert np.array_equal(update_global_W(s), s.g[0] - s.r[0])


def test_W_constant_field():
    data = Dataset(np.zeros((4, 2)), np.ones(4, dtype=int))
    s = ADMMState.initial(data, SocialGraph.from_edges(4, []))
    s.g[:] = [1.5, -2.0]
    assert np.allclose(update_global_W(s), [1.5, -2.0], atol=0)


def test_W_two_node_mean():
    data = Dataset(np.zeros((2, 2)), np.ones(2, dtype=int))
    s = ADMMState.initial(data, SocialGraph.from_edges(2, []))
    s.g[:] = [[1.0, 4.0], [3.0, 0.0]]
    s.r[:] = [[0.5, 1.0], [-0.5, 2.0]]
    # ((1-0.5)+(3+0.5))/2 = 2, ((4-1)+(0-2))/2 = 0.5
    assert update_global_W(s).tolist() == [2.0, 0.5]


# ---------------------------------------------------------------------------
# b update

def test_b_unlabeled_single_neighbor():
    data = Dataset(np.zeros((2, 1)), np.array([0, 1]))
    graph = SocialGraph.from_edges(2, [(0, 1)])
    s = ADMMState.initial(data, graph)
    s.c[0], s.u[0] = 7.0, 2.0
    assert update_offset_b(0, s, data, graph) == 5.0


def test_b_unlabeled_two_neighbors():
    data = Dataset(np.zeros((3, 1)), np.array([1, 0, 1]))
    graph = path3()
    s = ADMMState.initial(data, graph)
    # node 1 owns slot 1 (edge 0) and slot 2 (edge 1)
    s.c[1], s.u[1] = 1.0, 0.0
    s.c[2], s.u[2] = 4.0, 1.0
    assert update_offset_b(1, s, data, graph) == pytest.approx(2.0, abs=1e-12)


def test_b_flat_objective_keeps_value():
    data = Dataset(np.zeros((2, 1)), np.array([0, 0]))
    graph = SocialGraph.from_edges(2, [])
    s = ADMMState.initial(data, graph)
    s.b[0] = 3.25
    assert update_offset_b(0, s, data, graph) == 3.25


def b_objective(b, w, y, a, centers, rho2):
    return w * np.logaddexp(0.0, -y * (a + b)) + 0.5 * rho2 * ((b[:, None] - centers) ** 2).sum(1)


def test_b_matches_grid_search():
    rng = np.random.default_rng(3)
    grid = np.arange(-20.0, 20.0, 1e-5)
    for trial in range(3):
        n = 5
        graph = random_graph(n, 6, trial)
        data = Dataset(rng.normal(size=(n, 2)), rng.choice([-1, 1], size=n))
        s = make_state(data, graph, trial)
        s.node_weights = rng.random(n)
        s.rho2 = float(rng.uniform(0.2, 3))
        for i in range(n):
            bi = update_offset_b(i, s, data, graph)
            sl = graph.slots_of(i)
            cen = s.c[sl] - s.u[sl]
            args = (s.node_weights[i], data.labels[i], s.g[i] @ data.features[i], cen, s.rho2)
            f_grid = b_objective(grid, *args).min()
            assert b_objective(np.array([bi]), *args)[0] <= f_grid + 1e-4


# ---------------------------------------------------------------------------
# g update

def test_g_zero_weight_is_prox_center():
    data = Dataset(np.ones((1, 3)), np.array([1]))
    s = make_state(data, SocialGraph.from_edges(1, []))
    s.node_weights[:] = 0.0
    assert np.array_equal(update_local_g(0, s, data), s.W + s.r[0])


def test_g_zero_features_is_prox_center():
    data = Dataset(np.zeros((1, 3)), np.array([-1]))
    s = make_state(data, SocialGraph.from_edges(1, []))
    assert np.allclose(update_local_g(0, s, data), s.W + s.r[0], atol=1e-14)


def g_objective(g, w, y, x, b, v, rho1):
    return w * np.logaddexp(0.0, -y * (g @ x + b)) + 0.5 * rho1 * np.sum((v - g) ** 2)


def test_g_random_instances_optimal():
    rng = np.random.default_rng(4)
    for trial in range(20):
        data = Dataset(rng.normal(scale=3, size=(1, 3)), np.array([rng.choice([-1, 1])]))
        s = make_state(data, SocialGraph.from_edges(1, []), trial)
        s.rho1 = float(rng.uniform(0.1, 3))
        g = update_local_g(0, s, data)
        args = (1.0, data.labels[0], data.features[0], s.b[0], s.W + s.r[0], s.rho1)
        x, y = data.features[0], data.labels[0]
        grad = -y * x / (1 + np.exp(y * (g @ x + s.b[0]))) + s.rho1 * (g - args[4])
        assert np.linalg.norm(grad) <= 1e-8
        ref = minimize(g_objective, np.zeros(3), args=args, method="BFGS", options={"gtol": 1e-12})
        assert g_objective(g, *args) <= ref.fun + 1e-8
        # first-order check along random directions
        f0 = g_objective(g, *args)
        for _ in range(20):
            dvec = rng.normal(size=3)
            dvec /= np.linalg.norm(dvec)
            assert (g_objective(g + 1e-6 * dvec, *args) - f0) / 1e-6 >= -1e-6


# ---------------------------------------------------------------------------
# edge copies

def edge_state(p1, p2, q=1.0, rho2=1.0):
    data = Dataset(np.zeros((2, 1)), np.array([1, 1]))
    graph = SocialGraph.from_edges(2, [(0, 1)])
    s = ADMMState.initial(data, graph, edge_weights=[q], rho2=rho2)
    s.b[:] = [p1, p2]
    return s, graph


def test_edge_copies_decoupled():
    s, graph = edge_state(1.5, -2.0)
    s.u[:] = [0.25, 0.5]
    assert update_edge_copies(0, s, graph, 0.0) == (1.75, -1.5)


@pytest.mark.parametrize("lam", [0.0, 0.1, 10.0, 1e6])
def test_edge_copies_symmetric(lam):
    s, graph = edge_state(2.5, 2.5)
    c1, c2 = update_edge_copies(0, s, graph, lam)
    assert c1 == pytest.approx(2.5, abs=1e-15) and c2 == pytest.approx(2.5, abs=1e-15)


def test_edge_copies_strong_coupling():
    s, graph = edge_state(0.0, 4.0)
    c1, c2 = update_edge_copies(0, s, graph, 1000.0)
    assert abs(c1 - 2) < 1e-2 and abs(c2 - 2) < 1e-2

    def f(c):
        return 1000.0 * (c[0] - c[1]) ** 2 + 0.5 * ((0 - c[0]) ** 2 + (4 - c[1]) ** 2)

    def jac(c):
        return np.array([2000 * (c[0] - c[1]) - (0 - c[0]), -2000 * (c[0] - c[1]) - (4 - c[1])])

    hess = np.array([[2001.0, -2000.0], [-2000.0, 2001.0]])
    ref = minimize(f, np.zeros(2), jac=jac, hess=lambda c: hess, method="trust-exact",
                   options={"gtol": 1e-14})
    assert np.allclose([c1, c2], ref.x, atol=1e-9, rtol=0)


# ---------------------------------------------------------------------------
# duals

def test_duals_unchanged_at_consensus():
    data = Dataset(np.zeros((3, 2)), np.array([1, 1, 1]))
    graph = path3()
    s = make_state(data, graph)
    s.g[:] = s.W
    s.c = s.b[graph.edges.ravel()].copy()
    r0, u0 = s.r.copy(), s.u.copy()
    update_duals(s, graph)
    assert np.array_equal(s.r, r0) and np.array_equal(s.u, u0)


def test_duals_single_step_and_accumulation():
    data = Dataset(np.zeros((1, 2)), np.array([1]))
    graph = SocialGraph.from_edges(1, [])
    s = ADMMState.initial(data, graph)
    s.W = np.array([1.0, -1.0])
    update_duals(s, graph)
    assert s.r[0].tolist() == [1.0, -1.0]
    update_duals(s, graph)
    assert s.r[0].tolist() == [2.0, -2.0]


# ---------------------------------------------------------------------------
# full solver

def small_problem(seed=0, n=40, d=3, m=80):
    return random_graph(n, m, seed), random_dataset(n, d, rng_seed=seed)


def test_consensus_at_convergence():
    graph, data = small_problem()
    cfg = SolverConfig(max_iters=3000)
    res = admm_fit(data, graph, 50.0, config=cfg)
    assert res.converged
    s = res.state
    assert np.max(np.abs(s.W - s.g)) <= 10 * cfg.tol_primal
    assert np.max(np.abs(s.b[graph.edges.ravel()] - s.c)) <= 10 * cfg.tol_primal


def test_min_primal_residual_nonincreasing():
    graph, data = small_problem(1)
    res = admm_fit(data, graph, 1.0, config=SolverConfig(max_iters=200))
    prim = np.array([h["primal_residual"] for h in res.history])
    running = np.minimum.accumulate(prim)
    assert np.all(np.diff(running) <= 0)


def test_large_lambda_recovers_logistic_regression():
    # a well-posed counterpart of the zero-penalty equivalence: with a strong
    # penalty on a connected graph all offsets collapse to one intercept
    graph, data = small_problem(2, n=120, m=400)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        lr = fit_logistic(data, l2=0.0)
    res = admm_fit(data, graph, 1e3, config=SolverConfig(max_iters=5000))
    assert res.converged
    assert np.max(np.abs(res.params.W - lr.w)) <= 1e-3
    assert np.max(np.abs(res.params.b - lr.b)) <= 1e-2


def test_unit_weights_equal_unweighted():
    graph, data = small_problem(3)
    cfg = SolverConfig(max_iters=50)
    a = admm_fit(data, graph, 0.5, config=cfg)
    b = admm_fit(data, graph, 0.5, np.ones(data.num_nodes), np.ones(graph.num_edges), config=cfg)
    assert np.array_equal(a.params.W, b.params.W) and np.array_equal(a.params.b, b.params.b)
    assert [h["objective"] for h in a.history] == [h["objective"] for h in b.history]


@pytest.mark.parametrize("workers", [2, 4])
def test_worker_count_does_not_change_result(workers):
    graph, data = small_problem(4, n=300, m=900)
    base = admm_fit(data, graph, 1.0, config=SolverConfig(max_iters=30, chunk_size=16))
    par = admm_fit(data, graph, 1.0, config=SolverConfig(max_iters=30, chunk_size=16,
                                                          workers=workers))
    assert np.array_equal(base.params.W, par.params.W)
    assert np.array_equal(base.params.b, par.params.b)


def test_nonconvergence_flagged_with_best_iterate():
    graph, data = small_problem(5)
    res = admm_fit(data, graph, 1.0, config=SolverConfig(max_iters=1))
    assert not res.converged and res.iterations == 1
    assert np.all(np.isfinite(res.params.W))


def test_negative_lambda_rejected():
    graph, data = small_problem()
    with pytest.raises(ValueError):
        admm_fit(data, graph, -1.0)


def test_diagnostics_csv():
    graph, data = small_problem()
    res = admm_fit(data, graph, 1.0, config=SolverConfig(max_iters=3))
    lines = format_diagnostics(res.history, timing=False).splitlines()
    assert lines[0] == "iter,objective,primal_residual,dual_residual,seconds"
    assert len(lines) == 4 and lines[1].startswith("1,") and lines[1].endswith(",")


def test_json_document():
    graph, data = small_problem()
    res = admm_fit(data, graph, 0.25, config=SolverConfig(max_iters=3))
    doc = res.to_json(0.25)
    assert set(doc) == {"model", "lambda", "W", "b", "converged", "iters"}
    assert doc["model"] == "llgr" and doc["iters"] == 3
