"""
Command-line entry point.

Every command reads an optional flat ``key=value`` config file, applies
``key=value`` overrides given after the command, and then the common
``--seed``/``--out``/``--workers`` flags. The worker count can also come
from the ``SOCIALCHOICE_WORKERS`` environment variable (flags win).

Exit codes: 0 success, 2 usage or config error, 3 finished without solver
convergence (artifacts are still written).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import io
from .admm import SolverConfig, format_diagnostics
from .baselines import LatentClassModel, LogisticModel, predict_baseline
from .evalkit import MODEL_KINDS, ModelConfig, SweepGrid, kfold_masked_cv, lambda_sweep, make_cv_plan, \
    regularization_path
from .experiments import thread_scaling
from .graph_model import (Dataset, DatasetError, GraphError, LCGRParams, LLGRParams, format_features,
                          format_graph, format_labels, load_features, load_graph, load_labels,
                          logistic_loss)
from .mcem import MCEMConfig, PosteriorEstimates, predict, predict_llgr
from .synthgen import BetaExperimentSpec, WExperimentSpec, generate_beta_experiment, \
    generate_w_experiment

ENV_WORKERS = "SOCIALCHOICE_WORKERS"

EXIT_OK, EXIT_USAGE, EXIT_NOT_CONVERGED = 0, 2, 3


class ConfigError(ValueError):
    pass


# ---------------------------------------------------------------------------
# config schema: key -> (parser, default)

def _bool(s):
    v = str(s).strip().lower()
    if v in ("1", "true", "yes", "on"):
        return True
    if v in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _floats(s):
    return tuple(float(v) for v in str(s).split(",") if v.strip())


def _ints(s):
    return tuple(int(v) for v in str(s).split(",") if v.strip())


def _words(s):
    return tuple(v.strip() for v in str(s).split(",") if v.strip())


def _opt_ints(s):
    return None if str(s).strip().lower() in ("", "none") else _ints(s)


COMMON = {"seed": (int, 0), "out": (str, "out"), "workers": (int, 1)}
DATA = {"graph": (str, None), "features": (str, None), "labels": (str, None)}
MODEL = {"model": (str, "llgr"), "lam": (float, 1.0), "K": (int, 2), "l2": (float, 1e-6),
         "em_iters": (int, 200), "restarts": (int, 5)}
_SOLVER_DEFAULTS = SolverConfig()
SOLVER = {f.name: (type(getattr(_SOLVER_DEFAULTS, f.name)), getattr(_SOLVER_DEFAULTS, f.name))
          for f in fields(SolverConfig) if f.name != "workers"}
_MCEM_DEFAULTS = MCEMConfig()
MCEM = {k: (type(getattr(_MCEM_DEFAULTS, k)), getattr(_MCEM_DEFAULTS, k))
        for k in ("burn_in", "thin", "blocks", "max_em_iters", "em_tol", "em_window",
                  "smoothing", "init_sigma")}
MCEM["exact_estep"] = (_bool, False)
MCEM["schedule"] = (_opt_ints, None)
TRAIN = {**DATA, **MODEL, **SOLVER, **MCEM}

_BETA_KEYS = {f.name for f in fields(BetaExperimentSpec)} - {"rng_seed"}
_W_KEYS = {f.name for f in fields(WExperimentSpec)} - {"rng_seed"}
_SYNTH_TYPES = {f.name: f.type for f in fields(BetaExperimentSpec)}
_SYNTH_TYPES.update({f.name: f.type for f in fields(WExperimentSpec)})
SYNTH = {k: (float if _SYNTH_TYPES[k] == "float" else int, None)
         for k in sorted(_BETA_KEYS | _W_KEYS)}
SYNTH["experiment"] = (str, "beta")

SCHEMAS = {
    "synth": {**COMMON, **SYNTH},
    "fit": {**COMMON, **TRAIN, "timing": (_bool, False)},
    "predict": {**COMMON, **DATA, "model_file": (str, None), "nodes": (str, "all")},
    "cv": {**COMMON, **TRAIN, "folds": (int, 3), "models": (_words, None)},
    "sweep": {**COMMON, **TRAIN, "folds": (int, 3), "models": (_words, ("llgr", "lcgr")),
              "lambdas": (_floats, (0.01, 0.1, 1.0, 10.0))},
    "path": {**COMMON, **DATA, **SOLVER, **MCEM, "K": (int, 2),
             "lambdas": (_floats, (0.01, 0.1, 1.0, 10.0))},
    "bench": {**COMMON, "n_nodes": (int, 100_000), "n_edges": (int, 500_000),
              "bench_workers": (_ints, (1, 8)), "blocks": (int, 10), "lam": (float, 1.0)},
}
PATH_KEYS = ("graph", "features", "labels", "model_file")


def parse_config_text(text: str, source: str = "<config>") -> dict:
    """Flat ``key=value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{source}:{lineno}: expected key=value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key:
            raise ConfigError(f"{source}:{lineno}: empty key")
        out[key] = value
    return out


def resolve_config(command: str, file_values: dict, overrides: dict, flags: dict,
                   environ=None) -> dict:
    """Merge defaults, config file, environment, overrides and flags, then
    validate and convert every value."""
    environ = os.environ if environ is None else environ
    schema = SCHEMAS[command]
    raw = {}
    raw.update(file_values)
    if environ.get(ENV_WORKERS):
        raw["workers"] = environ[ENV_WORKERS]
    raw.update(overrides)
    raw.update({k: v for k, v in flags.items() if v is not None})
    for key in raw:
        if key not in schema:
            raise ConfigError(f"unknown config key {key!r} for command {command!r}")
    cfg = {}
    for key, (parse, default) in schema.items():
        if key in raw:
            try:
                cfg[key] = parse(raw[key])
            except (TypeError, ValueError) as exc:
                raise ConfigError(f"bad value for {key!r}: {raw[key]!r} ({exc})") from None
        else:
            cfg[key] = default
    cfg["_given"] = frozenset(raw)
    if cfg["workers"] < 1:
        raise ConfigError("'workers' must be >= 1")
    for key in PATH_KEYS:
        if key in schema and cfg[key] is None and key != "labels":
            raise ConfigError(f"missing required key {key!r}")
        if key in schema and cfg[key] is not None and not Path(cfg[key]).exists():
            raise ConfigError(f"path for {key!r} does not exist: {cfg[key]}")
    return cfg


# ---------------------------------------------------------------------------
# shared helpers

def _load(cfg):
    X = load_features(cfg["features"])
    graph = load_graph(cfg["graph"], num_nodes=X.shape[0])
    if cfg.get("labels"):
        y = load_labels(cfg["labels"], graph.num_nodes)
    else:
        y = np.zeros(graph.num_nodes, dtype=np.int8)
    return graph, Dataset(X, y)


def _solver(cfg) -> SolverConfig:
    try:
        return SolverConfig(**{k: cfg[k] for k in SOLVER}, workers=cfg["workers"])
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _mcem(cfg, K, lam) -> MCEMConfig:
    try:
        return MCEMConfig(K=K, lam=lam, solver=_solver(cfg), rng_seed=cfg["seed"],
                          workers=cfg["workers"], **{k: cfg[k] for k in MCEM})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None


def _model_config(cfg, kind=None) -> ModelConfig:
    kind = kind or cfg["model"]
    if kind not in MODEL_KINDS:
        raise ConfigError(f"bad value for 'model': {kind!r} (expected one of {', '.join(MODEL_KINDS)})")
    if cfg["K"] < 1:
        raise ConfigError("'K' must be >= 1")
    if not cfg["lam"] >= 0:
        raise ConfigError("'lam' must be >= 0")
    return ModelConfig(kind=kind, lam=cfg["lam"], K=cfg["K"], l2=cfg["l2"],
                       em_iters=cfg["em_iters"], restarts=cfg["restarts"], solver=_solver(cfg),
                       mcem=_mcem(cfg, cfg["K"], cfg["lam"]), seed=cfg["seed"])


def _out_dir(cfg) -> Path:
    out = Path(cfg["out"])
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise ConfigError(f"cannot create output directory {out}: {exc}") from None
    if not os.access(out, os.W_OK):
        raise ConfigError(f"output directory is not writable: {out}")
    return out


def _csv(header, rows) -> str:
    return "\n".join([header] + [",".join(str(v) for v in r) for r in rows]) + "\n"


# ---------------------------------------------------------------------------
# commands

def cmd_synth(cfg) -> int:
    given = {k for k in cfg["_given"] if k in SYNTH and k != "experiment"}
    if cfg["experiment"] == "beta":
        spec_cls, allowed, gen = BetaExperimentSpec, _BETA_KEYS, generate_beta_experiment
    elif cfg["experiment"] == "w":
        spec_cls, allowed, gen = WExperimentSpec, _W_KEYS, generate_w_experiment
    else:
        raise ConfigError(f"bad value for 'experiment': {cfg['experiment']!r} (expected beta or w)")
    stray = sorted(given - allowed)
    if stray:
        raise ConfigError(f"config key {stray[0]!r} does not apply to experiment {cfg['experiment']!r}")
    try:
        spec = spec_cls(rng_seed=cfg["seed"], **{k: cfg[k] for k in given})
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    graph, data, truth = gen(spec)
    out = _out_dir(cfg)
    io.write_outputs(out, {
        "edges.tsv": format_graph(graph),
        "features.csv": format_features(data),
        "labels.csv": format_labels(data.labels),
        "truth.csv": truth.to_csv(),
    })
    classes = np.bincount(truth.cls)
    labels = {int(v): int(np.sum(data.labels == v)) for v in (1, -1)}
    print(f"N={graph.num_nodes} |E|={graph.num_edges}")
    print("class counts: " + " ".join(f"{k}={int(c)}" for k, c in enumerate(classes)))
    print(f"label counts: +1={labels[1]} -1={labels[-1]}")
    return EXIT_OK


def _diagnostics(fitted, timing) -> str:
    if fitted.kind == "llgr":
        return format_diagnostics(fitted.result.history, timing)
    if fitted.kind == "lcgr":
        rows = [(h["iter"], repr(h["Q"]), h["samples"], int(h["admm_converged"]),
                 f"{h['seconds']:.6f}" if timing else "") for h in fitted.result.history]
        return _csv("iter,Q,samples,admm_converged,seconds", rows)
    if fitted.kind == "latent_class":
        return _csv("iter,loglik", [(k, repr(v)) for k, v in enumerate(fitted.model.loglik_trace)])
    m, data = fitted.model, fitted.data
    lab = data.labels != 0
    ll = -float(np.sum(logistic_loss(data.labels[lab] * m.decision(data.features[lab]))))
    return _csv("iter,loglik,grad_norm,separated", [(0, repr(ll), repr(m.grad_norm), int(m.separated))])


def cmd_fit(cfg) -> int:
    graph, data = _load(cfg)
    if not np.any(data.labels != 0):
        raise ConfigError("labels file has no observed labels")
    mc = _model_config(cfg)
    out = _out_dir(cfg)
    fitted = mc.fit(data, graph)
    io.write_outputs(out, {
        "model.json": io.dumps_model(fitted.to_json()),
        "diagnostics.csv": _diagnostics(fitted, cfg["timing"]),
    })
    status = "converged" if fitted.converged else "NOT converged"
    print(f"{fitted.kind} lambda={fitted.lam:g}: {status}")
    return EXIT_OK if fitted.converged else EXIT_NOT_CONVERGED


def _predict_from_doc(doc, data: Dataset, nodes):
    kind = doc["model"]
    if kind in ("logistic", "latent_class"):
        m = LogisticModel.from_json(doc) if kind == "logistic" else LatentClassModel.from_json(doc)
        return predict_baseline(m, data.features[nodes])
    b = np.asarray(doc["b"], dtype=np.float64)
    if b.shape[0] != data.num_nodes:
        raise ConfigError(f"model has offsets for {b.shape[0]} nodes, data has {data.num_nodes}")
    if kind == "llgr":
        return predict_llgr(LLGRParams(np.asarray(doc["W"], dtype=np.float64), b), data, nodes)
    if kind == "lcgr":
        params = LCGRParams(np.asarray(doc["W"], dtype=np.float64), b)
        post = PosteriorEstimates(np.asarray(doc["node_post"], dtype=np.float64),
                                  np.zeros((0, params.K)))
        return predict(params, post, data, nodes)
    raise ConfigError(f"unknown model type {kind!r} in model file")


def cmd_predict(cfg) -> int:
    graph, data = _load(cfg)
    try:
        doc = io.read_model(cfg["model_file"])
    except ValueError as exc:
        raise ConfigError(f"bad model file {cfg['model_file']}: {exc}") from None
    if cfg["nodes"] == "all":
        nodes = np.arange(data.num_nodes)
    elif cfg["nodes"] == "unlabeled":
        nodes = np.flatnonzero(data.labels == 0)
    else:
        raise ConfigError(f"bad value for 'nodes': {cfg['nodes']!r} (expected all or unlabeled)")
    out = _out_dir(cfg)
    p, labels = _predict_from_doc(doc, data, nodes)
    rows = [(int(i), repr(float(pi)), int(li)) for i, pi, li in zip(nodes, p, labels)]
    io.write_outputs(out, {"predictions.csv": _csv("node_id,p_plus,label", rows)})
    print(f"predicted {len(rows)} nodes with {doc['model']}")
    return EXIT_OK


def _models(cfg):
    kinds = cfg["models"] or (cfg["model"],)
    for k in kinds:
        if k not in MODEL_KINDS:
            raise ConfigError(f"bad value for 'models': {k!r}")
    return tuple(kinds)


def _plan(cfg, data):
    try:
        return make_cv_plan(data, cfg["folds"], cfg["seed"])
    except ValueError as exc:
        raise ConfigError(f"bad value for 'folds': {exc}") from None


def cmd_cv(cfg) -> int:
    graph, data = _load(cfg)
    plan = _plan(cfg, data)
    out = _out_dir(cfg)
    kinds = _models(cfg)
    metrics, summary = [], []
    for kind in kinds:
        res = kfold_masked_cv(_model_config(cfg, kind), data, graph, plan)
        metrics += [(kind, repr(cfg["lam"]), f, repr(a)) for f, a in enumerate(res.fold_accuracy)]
        summary.append((kind, repr(cfg["lam"]), repr(res.mean), repr(res.std)))
    io.write_outputs(out, {
        "cv_metrics.csv": _csv("model,lambda,fold,accuracy", metrics),
        "cv_summary.csv": _csv("model,lambda,mean_accuracy,std", summary),
    })
    print(f"{plan.k}-fold masked cross-validation, lambda={cfg['lam']:g}")
    for kind, _, mean, std in summary:
        print(f"{kind:<14}{100 * float(mean):>7.1f}% (+/- {100 * float(std):.1f})")
    return EXIT_OK


def cmd_sweep(cfg) -> int:
    graph, data = _load(cfg)
    plan = _plan(cfg, data)
    kinds = _models(cfg)
    if not cfg["lambdas"]:
        raise ConfigError("'lambdas' must list at least one value")
    out = _out_dir(cfg)
    configs = {k: _model_config(cfg, k) for k in kinds}
    res = lambda_sweep(SweepGrid(cfg["lambdas"], kinds, cfg["seed"]), data, graph, plan=plan,
                       configs=configs, workers=1)
    io.write_outputs(out, {"sweep_metrics.csv": res.metrics_csv(),
                           "sweep_summary.csv": res.summary_csv()})
    print(res.table())
    return EXIT_OK


def cmd_path(cfg) -> int:
    graph, data = _load(cfg)
    out = _out_dir(cfg)
    if cfg["K"] < 1 or not cfg["lambdas"]:
        raise ConfigError("'K' must be >= 1 and 'lambdas' nonempty")
    paths = regularization_path(data, graph, cfg["lambdas"], cfg["K"], out,
                                _mcem(cfg, cfg["K"], 1.0), workers=1)
    for p in paths:
        print(p.name)
    return EXIT_OK


def cmd_bench(cfg) -> int:
    out = _out_dir(cfg)
    workers = cfg["bench_workers"]
    if not workers or min(workers) < 1:
        raise ConfigError("'bench_workers' must list positive worker counts")
    res = thread_scaling(cfg["n_nodes"], cfg["n_edges"], workers, cfg["blocks"], cfg["lam"],
                         cfg["seed"])
    io.write_outputs(out, {"bench.csv": res.to_csv()})
    print(res.to_csv(), end="")
    print(f"outputs identical across workers: admm={res.admm_identical} "
          f"gibbs={res.gibbs_identical}")
    return EXIT_OK


COMMANDS = {"synth": cmd_synth, "fit": cmd_fit, "predict": cmd_predict, "cv": cmd_cv,
            "sweep": cmd_sweep, "path": cmd_path, "bench": cmd_bench}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="socialchoice",
                                     description="Graph-regularized discrete choice models.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, usage=f"%(prog)s [options] [key=value ...]",
                           epilog="key=value arguments override the config file")
        p.add_argument("--config", "-c", help="flat key=value config file")
        p.add_argument("--seed", type=int)
        p.add_argument("--out")
        p.add_argument("--workers", type=int)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args, extra = parser.parse_known_args(argv)
    stray = [a for a in extra if a.startswith("-") or "=" not in a]
    if stray:
        parser.error(f"unrecognized arguments: {' '.join(stray)}")
    try:
        file_values = {}
        if args.config:
            try:
                text = Path(args.config).read_text(encoding="utf-8")
            except OSError as exc:
                raise ConfigError(f"cannot read config file: {exc}") from None
            file_values = parse_config_text(text, args.config)
        overrides = parse_config_text("\n".join(extra), "<command line>")
        flags = {"seed": args.seed, "out": args.out, "workers": args.workers}
        cfg = resolve_config(args.command, file_values, overrides, flags)
        return COMMANDS[args.command](cfg)
    except (ConfigError, GraphError, DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
