"""Non-social reference models: logistic regression and an i.i.d. latent-class
mixture of logistic regressions fitted by EM."""

from __future__ import annotations

import warnings
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .graph_model import Dataset, logistic_loss, sigmoid

COEF_CAP = 1e3


@dataclass(frozen=True, eq=False)
class LogisticModel:
    w: np.ndarray
    b: float
    separated: bool = False
    converged: bool = True
    grad_norm: float = 0.0

    def decision(self, X) -> np.ndarray:
        return np.asarray(X, dtype=np.float64) @ self.w + self.b

    def to_json(self) -> dict:
        return {"model": "logistic", "w": self.w.tolist(), "b": float(self.b),
                "separated": bool(self.separated), "converged": bool(self.converged)}

    @classmethod
    def from_json(cls, doc) -> "LogisticModel":
        return cls(np.asarray(doc["w"], dtype=np.float64), float(doc["b"]),
                   bool(doc.get("separated", False)), bool(doc.get("converged", True)))


@dataclass(frozen=True, eq=False)
class LatentClassModel:
    W: np.ndarray
    b: np.ndarray
    pi: np.ndarray
    loglik_trace: tuple = field(default=(), repr=False)
    reseeds: tuple = field(default=(), repr=False)
    converged: bool = True

    def __post_init__(self):
        pi = np.asarray(self.pi, dtype=np.float64)
        if np.any(pi < 0) or abs(pi.sum() - 1.0) > 1e-9:
            raise ValueError("mixing proportions must be nonnegative and sum to 1")

    @property
    def K(self) -> int:
        return int(self.W.shape[0])

    def to_json(self) -> dict:
        return {"model": "latent_class", "K": self.K, "W": self.W.tolist(), "b": self.b.tolist(),
                "pi": self.pi.tolist(), "converged": bool(self.converged),
                "history": [{"iter": k, "loglik": v} for k, v in enumerate(self.loglik_trace)]}

    @classmethod
    def from_json(cls, doc) -> "LatentClassModel":
        return cls(np.atleast_2d(np.asarray(doc["W"], dtype=np.float64)),
                   np.asarray(doc["b"], dtype=np.float64), np.asarray(doc["pi"], dtype=np.float64))


def _penalized_loss(theta, Z, y, s, l2):
    h = Z @ theta
    w = theta[:-1]
    return float(np.dot(s, logistic_loss(y * h))) + 0.5 * l2 * float(w @ w)


def fit_logistic(data: Dataset, l2: float = 1e-6, sample_weight=None, init=None,
                 max_iter: int = 200, tol: float = 1e-8) -> LogisticModel:
    """Newton's method on the ridge-penalized logistic likelihood.

    Only labeled nodes enter. The intercept is unpenalized. With ``l2 = 0``
    and perfectly separable data the coefficients are scaled to norm
    ``COEF_CAP`` along the separating direction and ``separated`` is set.
    """
    if l2 < 0:
        raise ValueError("l2 must be >= 0")
    lab = data.labels != 0
    if not lab.any():
        raise ValueError("fit_logistic needs at least one labeled node")
    X = data.features[lab]
    y = data.labels[lab].astype(np.float64)
    s = np.ones(y.size) if sample_weight is None else np.asarray(sample_weight, dtype=np.float64)[lab]
    Z = np.hstack([X, np.ones((X.shape[0], 1))])
    d1 = Z.shape[1]
    ridge = np.full(d1, l2)
    ridge[-1] = 0.0
    theta = np.zeros(d1) if init is None else np.asarray(init, dtype=np.float64).copy()

    separated = False
    converged = False
    gnorm = np.inf
    for _ in range(max_iter):
        h = Z @ theta
        p = sigmoid(-y * h)  # probability of the wrong label
        grad = -(Z.T @ (s * y * p)) + ridge * theta
        gnorm = float(np.linalg.norm(grad))
        if gnorm <= tol:
            converged = True
            break
        if l2 == 0 and np.all((y * h)[s > 0] > 0):
            separated = True
            break
        c = s * p * (1.0 - p)
        H = (Z * c[:, None]).T @ Z + np.diag(ridge)
        try:
            step = -np.linalg.solve(H + 1e-12 * np.eye(d1), grad)
        except np.linalg.LinAlgError:
            step = -np.linalg.lstsq(H, grad, rcond=None)[0]
        f0 = _penalized_loss(theta, Z, y, s, l2)
        slope = float(step @ grad)
        t = 1.0
        while t > 1e-12:
            if _penalized_loss(theta + t * step, Z, y, s, l2) <= f0 + 1e-4 * t * slope:
                break
            t *= 0.5
        else:
            break
        theta = theta + t * step
        if np.linalg.norm(theta) > COEF_CAP:
            separated = True
            break
    if separated:
        nrm = np.linalg.norm(theta)
        if nrm > 0:
            theta = theta * (COEF_CAP / nrm)
        warnings.warn("logistic fit: data are separable, coefficients capped", RuntimeWarning,
                      stacklevel=2)
    return LogisticModel(theta[:-1].copy(), float(theta[-1]), separated, converged, gnorm)


def _class_loglik(X, y, W, b):
    """N x K matrix of log P(y_i | class t)."""
    h = X @ W.T + b
    return -logistic_loss(y[:, None] * h)


def _em_run(data: Dataset, K, em_iters, seed, l2, tol):
    rng = np.random.default_rng(seed)
    lab = data.labels != 0
    X = data.features[lab]
    y = data.labels[lab].astype(np.float64)
    n, d = X.shape
    resp = rng.dirichlet(np.ones(K), size=n)
    W = np.zeros((K, d))
    b = np.zeros(K)
    trace, reseeds = [], []
    sub = Dataset(X, data.labels[lab])
    converged = False
    for it in range(em_iters):
        # M-step
        for t in range(K):
            if resp[:, t].sum() < 1e-8 * n:
                W[t] = rng.normal(scale=1.0, size=d)
                b[t] = 0.0
                resp[:, t] = 1.0 / K
                resp /= resp.sum(axis=1, keepdims=True)
                reseeds.append(it)
            m = fit_logistic(sub, l2, sample_weight=resp[:, t], init=np.append(W[t], b[t]))
            W[t], b[t] = m.w, m.b
        pi = resp.mean(axis=0)
        # E-step
        logp = _class_loglik(X, y, W, b) + np.log(np.maximum(pi, 1e-300))
        mx = logp.max(axis=1, keepdims=True)
        ll_i = mx[:, 0] + np.log(np.exp(logp - mx).sum(axis=1))
        resp = np.exp(logp - ll_i[:, None])
        ll = float(ll_i.sum()) - 0.5 * l2 * float(np.sum(W * W))
        trace.append(ll)
        if len(trace) > 1 and abs(trace[-1] - trace[-2]) <= tol * max(1.0, abs(trace[-1])):
            converged = True
            break
    pi = pi / pi.sum()
    return LatentClassModel(W.copy(), b.copy(), pi, tuple(trace), tuple(reseeds), converged)


def fit_latent_class(data: Dataset, K: int, em_iters: int = 200, rng_seed: int = 0,
                     l2: float = 1e-6, restarts: int = 5, tol: float = 1e-10,
                     workers: int = 1) -> LatentClassModel:
    """EM for a K-component mixture of logistic regressions with i.i.d. class prior.

    Runs ``restarts`` seeded restarts and keeps the best penalized
    log-likelihood. ``K = 1`` is plain :func:`fit_logistic`.
    """
    if K < 1:
        raise ValueError("K must be >= 1")
    if K == 1:
        m = fit_logistic(data, l2)
        return LatentClassModel(m.w[None, :].copy(), np.array([m.b]), np.array([1.0]),
                                converged=m.converged)
    seeds = [np.random.SeedSequence([rng_seed, r]) for r in range(restarts)]
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            runs = list(pool.map(lambda s: _em_run(data, K, em_iters, s, l2, tol), seeds))
    else:
        runs = [_em_run(data, K, em_iters, s, l2, tol) for s in seeds]
    best = max(range(len(runs)), key=lambda k: (runs[k].loglik_trace[-1], -k))
    return runs[best]


def predict_baseline(model, X):
    """Return (P(y=+1), labels) with ties going to +1."""
    X = np.atleast_2d(np.asarray(X, dtype=np.float64))
    if isinstance(model, LogisticModel):
        p = sigmoid(model.decision(X))
    elif isinstance(model, LatentClassModel):
        p = sigmoid(X @ model.W.T + model.b) @ model.pi
    else:
        raise TypeError(f"not a baseline model: {type(model).__name__}")
    p = np.atleast_1d(p)
    return p, np.where(p >= 0.5, 1, -1)
