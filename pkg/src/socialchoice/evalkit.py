"""
Evaluation harness: accuracy, masked k-fold cross-validation, lambda sweeps
and regularization-path snapshots.

Held-out nodes are never removed from the graph. Their labels are recoded
as unobserved for training, so the social models still use their edges.
"""

from __future__ import annotations

import logging
import math
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .admm import SolverConfig, admm_fit
from .baselines import fit_latent_class, fit_logistic, predict_baseline
from .graph_model import Dataset, SocialGraph
from .mcem import MCEMConfig, PosteriorEstimates, mcem_fit, predict, predict_llgr

log = logging.getLogger(__name__)

MODEL_KINDS = ("logistic", "latent_class", "llgr", "lcgr")


@dataclass
class FittedModel:
    kind: str
    lam: float
    model: object
    data: Dataset
    converged: bool = True
    result: object = None

    def predict(self, nodes):
        nodes = np.asarray(nodes, dtype=np.int64)
        if self.kind in ("logistic", "latent_class"):
            return predict_baseline(self.model, self.data.features[nodes])
        if self.kind == "llgr":
            return predict_llgr(self.model, self.data, nodes)
        return predict(self.model, self.result.posteriors, self.data, nodes)

    def to_json(self) -> dict:
        if self.kind == "llgr":
            return self.result.to_json(self.lam)
        if self.kind == "lcgr":
            return self.result.to_json()
        return self.model.to_json()


@dataclass(frozen=True)
class ModelConfig:
    """What to train: one of ``MODEL_KINDS`` plus its hyperparameters."""

    kind: str = "llgr"
    lam: float = 1.0
    K: int = 2
    l2: float = 1e-6
    em_iters: int = 200
    restarts: int = 5
    solver: SolverConfig = field(default_factory=SolverConfig)
    mcem: MCEMConfig = field(default_factory=MCEMConfig)
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ValueError(f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}")
        if not self.lam >= 0:
            raise ValueError("lambda must be >= 0")

    def with_lambda(self, lam) -> "ModelConfig":
        return replace(self, lam=float(lam))

    def fit(self, data: Dataset, graph: SocialGraph) -> FittedModel:
        if self.kind == "logistic":
            m = fit_logistic(data, self.l2)
            return FittedModel("logistic", self.lam, m, data, m.converged)
        if self.kind == "latent_class":
            m = fit_latent_class(data, self.K, self.em_iters, self.seed, self.l2, self.restarts)
            return FittedModel("latent_class", self.lam, m, data, m.converged)
        if self.kind == "llgr":
            res = admm_fit(data, graph, self.lam, config=self.solver)
            return FittedModel("llgr", self.lam, res.params, data, res.converged, res)
        cfg = replace(self.mcem, K=self.K, lam=self.lam, rng_seed=self.seed, solver=self.solver)
        res = mcem_fit(data, graph, cfg)
        return FittedModel("lcgr", self.lam, res.params, data, res.converged, res)


def accuracy(predicted, truth, eval_mask=None) -> float:
    """Fraction of correct labels over the evaluated nodes.

    ``eval_mask`` is a boolean mask or an index array; it must select at
    least one node, all with an observed truth label.
    """
    predicted = np.asarray(predicted)
    truth = np.asarray(truth)
    if eval_mask is None:
        idx = np.arange(truth.size)
    else:
        m = np.asarray(eval_mask)
        idx = np.flatnonzero(m) if m.dtype == bool else m.astype(np.int64)
    if idx.size == 0:
        raise ValueError("accuracy over an empty evaluation set")
    if np.any(truth[idx] == 0):
        raise ValueError("evaluation set contains unlabeled nodes")
    return float(np.mean(predicted[idx] == truth[idx]))


@dataclass(frozen=True)
class CVPlan:
    k: int
    folds: np.ndarray  # fold id per node, -1 for unlabeled nodes
    rng_seed: int = 0

    def fold_nodes(self, f) -> np.ndarray:
        return np.flatnonzero(self.folds == f)


def make_cv_plan(data: Dataset, k: int, rng_seed: int = 0) -> CVPlan:
    """Label-stratified fold assignment over the labeled nodes."""
    n_lab = int(np.count_nonzero(data.labels))
    if not 1 <= k <= n_lab:
        raise ValueError(f"fold count must be in [1, {n_lab}]")
    rng = np.random.default_rng(rng_seed)
    order = np.concatenate([rng.permutation(np.flatnonzero(data.labels == v)) for v in (1, -1)])
    folds = np.full(data.num_nodes, -1, dtype=np.int64)
    folds[order] = np.arange(order.size) % k
    return CVPlan(k, folds, rng_seed)


@dataclass
class CVResult:
    fold_accuracy: list
    failed: list

    @property
    def mean(self) -> float:
        ok = [a for a in self.fold_accuracy if not math.isnan(a)]
        return float(np.mean(ok)) if ok else float("nan")

    @property
    def std(self) -> float:
        ok = [a for a in self.fold_accuracy if not math.isnan(a)]
        return float(np.std(ok)) if ok else float("nan")


def _run_jobs(fn, jobs, workers):
    if workers > 1 and len(jobs) > 1:
        with ThreadPoolExecutor(workers) as pool:
            return list(pool.map(fn, jobs))
    return [fn(j) for j in jobs]


def _score(model, data: Dataset, graph: SocialGraph, nodes):
    fitted = model.fit(data.masked(nodes), graph)
    _, labels = fitted.predict(nodes)
    return accuracy(labels, data.labels[nodes], np.arange(len(nodes))), fitted


def kfold_masked_cv(model, data: Dataset, graph: SocialGraph, plan: CVPlan,
                    workers: int = 1) -> CVResult:
    """Train on each fold's complement (held-out labels masked, graph intact)
    and score the held-out nodes. ``model`` is anything with
    ``fit(data, graph)`` returning an object with ``predict(nodes)``."""
    if plan.folds.shape != (data.num_nodes,):
        raise ValueError("CV plan does not match the dataset")

    def job(f):
        nodes = plan.fold_nodes(f)
        try:
            return _score(model, data, graph, nodes)[0]
        except Exception as exc:  # noqa: BLE001 - a failed fold is reported, not fatal
            log.warning("fold %d failed: %s", f, exc)
            return float("nan")

    accs = _run_jobs(job, list(range(plan.k)), workers)
    failed = [f for f, a in enumerate(accs) if math.isnan(a)]
    return CVResult(accs, failed)


@dataclass(frozen=True)
class SweepGrid:
    lambdas: tuple
    kinds: tuple = ("llgr", "lcgr")
    seed: int = 0

    def __post_init__(self):
        if not self.lambdas or not self.kinds:
            raise ValueError("sweep grid must be nonempty")
        object.__setattr__(self, "lambdas", tuple(float(v) for v in self.lambdas))
        object.__setattr__(self, "kinds", tuple(self.kinds))


@dataclass
class SweepResult:
    rows: list  # dicts: model, lambda, fold, accuracy
    summary: list  # dicts: model, lambda, mean_accuracy, std
    best: dict  # model -> (lambda, mean_accuracy)

    def metrics_csv(self) -> str:
        lines = ["model,lambda,fold,accuracy"]
        lines += [f"{r['model']},{r['lambda']!r},{r['fold']},{r['accuracy']!r}" for r in self.rows]
        return "\n".join(lines) + "\n"

    def summary_csv(self) -> str:
        lines = ["model,lambda,mean_accuracy,std"]
        lines += [f"{r['model']},{r['lambda']!r},{r['mean_accuracy']!r},{r['std']!r}"
                  for r in self.summary]
        return "\n".join(lines) + "\n"

    def table(self) -> str:
        width = max(len(k) for k in self.best) + 2
        out = [f"{'model':<{width}}{'best lambda':>12}{'accuracy':>10}"]
        for kind, (lam, acc) in self.best.items():
            out.append(f"{kind:<{width}}{lam:>12g}{100 * acc:>9.1f}%")
        return "\n".join(out)


def best_lambda(entries):
    """Argmax accuracy over (lambda, accuracy) pairs; ties go to the smaller lambda."""
    entries = [(lam, acc) for lam, acc in entries if not math.isnan(acc)]
    if not entries:
        return float("nan"), float("nan")
    return min(entries, key=lambda e: (-e[1], e[0]))


def lambda_sweep(grid: SweepGrid, data: Dataset, graph: SocialGraph, test_nodes=None,
                 plan: CVPlan | None = None, configs: dict | None = None,
                 workers: int = 1) -> SweepResult:
    """Evaluate every (model, lambda) pair on a fixed test set or a CV plan.

    Exactly one of ``test_nodes`` and ``plan`` must be given. Every job
    uses the grid seed, so results do not depend on evaluation order.
    """
    if (test_nodes is None) == (plan is None):
        raise ValueError("give either test_nodes or a CV plan")
    configs = configs or {}
    jobs = []
    for kind in grid.kinds:
        base = configs.get(kind) or ModelConfig(kind=kind)
        base = replace(base, kind=kind, seed=grid.seed)
        for lam in grid.lambdas:
            if plan is None:
                jobs.append((kind, lam, base.with_lambda(lam), "test"))
            else:
                for f in range(plan.k):
                    jobs.append((kind, lam, base.with_lambda(lam), f))

    def job(j):
        kind, lam, cfg, fold = j
        nodes = np.asarray(test_nodes, dtype=np.int64) if fold == "test" else plan.fold_nodes(fold)
        try:
            return _score(cfg, data, graph, nodes)[0]
        except Exception as exc:  # noqa: BLE001
            log.warning("%s lambda=%g fold %s failed: %s", kind, lam, fold, exc)
            return float("nan")

    accs = _run_jobs(job, jobs, workers)
    rows = [{"model": k, "lambda": lam, "fold": f, "accuracy": a}
            for (k, lam, _, f), a in zip(jobs, accs)]
    summary, best = [], {}
    for kind in grid.kinds:
        per_lam = []
        for lam in grid.lambdas:
            vals = [r["accuracy"] for r in rows if r["model"] == kind and r["lambda"] == lam]
            ok = [v for v in vals if not math.isnan(v)]
            mean = float(np.mean(ok)) if ok else float("nan")
            std = float(np.std(ok)) if ok else float("nan")
            summary.append({"model": kind, "lambda": lam, "mean_accuracy": mean, "std": std})
            per_lam.append((lam, mean))
        best[kind] = best_lambda(per_lam)
    return SweepResult(rows, summary, best)


# ---------------------------------------------------------------------------
# regularization path

def snapshot_csv(post: PosteriorEstimates, b) -> str:
    K = post.K
    b = np.asarray(b).reshape(post.node_post.shape[0], K)
    head = ["node_id"] + [f"q_{t + 1}" for t in range(K)] + [f"b_{t + 1}" for t in range(K)]
    lines = [",".join(head)]
    for i in range(post.node_post.shape[0]):
        vals = [repr(float(v)) for v in post.node_post[i]] + [repr(float(v)) for v in b[i]]
        lines.append(",".join([str(i)] + vals))
    return "\n".join(lines) + "\n"


def load_snapshot(path):
    """Parse a snapshot CSV back into (PosteriorEstimates, offsets).

    Only node-level quantities are stored, so the returned estimates have
    an empty edge table.
    """
    rows = Path(path).read_text(encoding="utf-8").strip().splitlines()
    head = rows[0].split(",")
    K = sum(1 for h in head if h.startswith("q_"))
    vals = np.array([[float(v) for v in r.split(",")] for r in rows[1:]])
    order = np.argsort(vals[:, 0], kind="stable")
    vals = vals[order]
    post = PosteriorEstimates(vals[:, 1:1 + K], np.zeros((0, K)))
    return post, vals[:, 1 + K:1 + 2 * K]


def regularization_path(data: Dataset, graph: SocialGraph, lambdas, K: int, out_dir,
                        config: MCEMConfig | None = None, workers: int = 1) -> list:
    """Fit LCGR at each lambda and write one node-level snapshot CSV per
    lambda (class memberships and offsets). Returns the file paths."""
    from .io import atomic_write_text

    config = config or MCEMConfig()
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    def job(lam):
        return mcem_fit(data, graph, replace(config, K=K, lam=float(lam)))

    results = _run_jobs(job, list(lambdas), workers)
    paths = []
    for lam, res in zip(lambdas, results):
        p = out_dir / f"path_lambda_{float(lam):g}.csv"
        atomic_write_text(p, snapshot_csv(res.posteriors, res.params.b))
        paths.append(p)
    return paths

