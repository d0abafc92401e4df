import json
import os

import numpy as np
import pytest

from socialchoice import cli
from socialchoice.baselines import fit_logistic
from socialchoice.graph_model import Dataset, SocialGraph, format_features, format_graph, format_labels

FAST_LCGR = ["max_iters=40", "max_em_iters=2", "schedule=40", "burn_in=10"]


def run(*argv):
    return cli.main([str(a) for a in argv])


def read_all(d):
    return {p.name: p.read_bytes() for p in sorted(d.iterdir()) if p.is_file()}


@pytest.fixture(scope="module")
def synth_dir(tmp_path_factory):
    d = tmp_path_factory.mktemp("synth")
    assert run("synth", "--out", d, "--seed", 1, "n_nodes=60", "n_test=10") == 0
    return d


def data_args(d):
    return [f"graph={d / 'edges.tsv'}", f"features={d / 'features.csv'}",
            f"labels={d / 'labels.csv'}"]


# ---------------------------------------------------------------------------
# configuration

def test_parse_config_text():
    cfg = cli.parse_config_text("# comment\nlam = 0.5  # trailing\n\nmodel=lcgr\n")
    assert cfg == {"lam": "0.5", "model": "lcgr"}
    with pytest.raises(cli.ConfigError, match="key=value"):
        cli.parse_config_text("oops\n")


def test_precedence(tmp_path):
    cfg = cli.resolve_config("bench", {"workers": "2", "seed": "1"}, {"seed": "5"},
                             {"seed": 9, "out": None}, environ={cli.ENV_WORKERS: "4"})
    assert cfg["seed"] == 9 and cfg["workers"] == 4
    cfg = cli.resolve_config("bench", {"workers": "2"}, {}, {"workers": 3},
                             environ={cli.ENV_WORKERS: "4"})
    assert cfg["workers"] == 3


def test_unknown_key_rejected():
    with pytest.raises(cli.ConfigError, match="'bogus'"):
        cli.resolve_config("bench", {"bogus": "1"}, {}, {}, environ={})


def test_missing_path_rejected(tmp_path):
    with pytest.raises(cli.ConfigError, match="does not exist"):
        cli.resolve_config("fit", {"graph": str(tmp_path / "nope"), "features": str(tmp_path)},
                           {}, {}, environ={})


def test_unknown_key_exit_code(synth_dir, tmp_path, capsys):
    assert run("fit", "--out", tmp_path, *data_args(synth_dir), "lamda=1") == 2
    assert "lamda" in capsys.readouterr().err


def test_bad_value_exit_code(synth_dir, tmp_path, capsys):
    assert run("fit", "--out", tmp_path, *data_args(synth_dir), "model=svm") == 2
    assert "'model'" in capsys.readouterr().err


def test_usage_error_exit_code():
    with pytest.raises(SystemExit) as exc:
        run("fit", "--nope")
    assert exc.value.code == 2


def test_config_file(synth_dir, tmp_path):
    conf = tmp_path / "run.conf"
    conf.write_text("\n".join(data_args(synth_dir) + ["model=logistic", f"out={tmp_path / 'o'}"]))
    assert run("fit", "--config", conf) == 0
    assert json.loads((tmp_path / "o" / "model.json").read_text())["model"] == "logistic"


# ---------------------------------------------------------------------------
# synth

def test_synth_files_and_summary(tmp_path, capsys):
    assert run("synth", "--out", tmp_path) == 0
    assert sorted(read_all(tmp_path)) == ["edges.tsv", "features.csv", "labels.csv", "truth.csv"]
    assert "N=300" in capsys.readouterr().out


def test_synth_bad_output_is_atomic(tmp_path):
    blocker = tmp_path / "file"
    blocker.write_text("x")
    assert run("synth", "--out", blocker / "sub") == 2
    assert list(tmp_path.iterdir()) == [blocker]


def test_synth_rejects_foreign_key(tmp_path):
    assert run("synth", "--out", tmp_path, "experiment=w", "beta=0.1") == 2


def test_synth_w_experiment(tmp_path, capsys):
    assert run("synth", "--out", tmp_path, "experiment=w", "w_norm=0") == 0
    assert "N=200" in capsys.readouterr().out


# ---------------------------------------------------------------------------
# fit and predict

@pytest.mark.parametrize("model", ["logistic", "latent_class", "llgr", "lcgr"])
def test_fit_each_model(synth_dir, tmp_path, model):
    code = run("fit", "--out", tmp_path, *data_args(synth_dir), f"model={model}", "em_iters=20",
               *FAST_LCGR)
    assert code in (0, 3)
    doc = json.loads((tmp_path / "model.json").read_text())
    assert doc["model"] == model
    assert (tmp_path / "diagnostics.csv").read_text().startswith("iter,")


def test_fit_forced_nonconvergence(synth_dir, tmp_path):
    assert run("fit", "--out", tmp_path, *data_args(synth_dir), "model=llgr", "max_iters=1") == 3
    assert (tmp_path / "model.json").exists() and (tmp_path / "diagnostics.csv").exists()


def test_lcgr_single_class_matches_llgr(synth_dir, tmp_path):
    args = data_args(synth_dir) + ["max_iters=60", "lam=1"]
    run("fit", "--out", tmp_path / "a", *args, "model=llgr")
    run("fit", "--out", tmp_path / "b", *args, "model=lcgr", "K=1", "max_em_iters=1")
    a = json.loads((tmp_path / "a" / "model.json").read_text())
    b = json.loads((tmp_path / "b" / "model.json").read_text())
    assert np.allclose(np.array(b["W"])[0], a["W"], atol=1e-4)
    assert np.allclose(np.array(b["b"])[:, 0], a["b"], atol=1e-4)


def edgeless_dir(tmp_path):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(40, 2))
    y = np.where(X[:, 0] + rng.normal(size=40) > 0, 1, -1).astype(np.int8)
    d = tmp_path / "edgeless"
    d.mkdir()
    (d / "edges.tsv").write_text(format_graph(SocialGraph.from_edges(40, [])))
    (d / "features.csv").write_text(format_features(Dataset(X, y)))
    (d / "labels.csv").write_text(format_labels(y))
    return d, Dataset(X, y)


@pytest.mark.xfail(strict=True, reason="per-node offsets are unpenalized without edges, so the "
                                       "LLGR fit has no finite minimizer; see decisions ledger")
def test_edgeless_llgr_matches_logistic(tmp_path):
    d, data = edgeless_dir(tmp_path)
    code = run("fit", "--out", tmp_path / "o", *data_args(d), "model=llgr")
    doc = json.loads((tmp_path / "o" / "model.json").read_text())
    ref = fit_logistic(data)
    assert code == 0
    assert np.allclose(doc["W"], ref.w, atol=1e-3)
    assert np.allclose(doc["b"], ref.b, atol=1e-3)


@pytest.mark.parametrize("model", ["logistic", "llgr", "lcgr"])
def test_predict_roundtrip(synth_dir, tmp_path, model):
    run("fit", "--out", tmp_path, *data_args(synth_dir), f"model={model}", *FAST_LCGR)
    assert run("predict", "--out", tmp_path, *data_args(synth_dir),
               f"model_file={tmp_path / 'model.json'}") == 0
    lines = (tmp_path / "predictions.csv").read_text().splitlines()
    assert lines[0] == "node_id,p_plus,label" and len(lines) == 61
    p = np.array([float(r.split(",")[1]) for r in lines[1:]])
    assert np.all((p > 0) & (p < 1))


def test_predict_bad_model_file(synth_dir, tmp_path):
    bad = tmp_path / "m.json"
    bad.write_text("{}")
    assert run("predict", "--out", tmp_path, *data_args(synth_dir), f"model_file={bad}") == 2


# ---------------------------------------------------------------------------
# cv, sweep, path

def test_cv_rows(synth_dir, tmp_path):
    assert run("cv", "--out", tmp_path, *data_args(synth_dir), "models=logistic,llgr",
               "max_iters=20") == 0
    metrics = (tmp_path / "cv_metrics.csv").read_text().splitlines()
    assert len(metrics) == 1 + 2 * 3
    assert len((tmp_path / "cv_summary.csv").read_text().splitlines()) == 3


def test_sweep_rows(synth_dir, tmp_path, capsys):
    assert run("sweep", "--out", tmp_path, *data_args(synth_dir), "models=logistic,llgr",
               "lambdas=0.01,0.1,1,10,100", "max_iters=20") == 0
    assert len((tmp_path / "sweep_summary.csv").read_text().splitlines()) == 11
    assert "best lambda" in capsys.readouterr().out


def test_path_files(synth_dir, tmp_path):
    assert run("path", "--out", tmp_path, *data_args(synth_dir), "lambdas=0.1,1,10",
               *FAST_LCGR) == 0
    assert sorted(p.name for p in tmp_path.glob("path_lambda_*.csv")) == [
        "path_lambda_0.1.csv", "path_lambda_1.csv", "path_lambda_10.csv"]


def test_workers_env(synth_dir, tmp_path, monkeypatch):
    monkeypatch.setenv(cli.ENV_WORKERS, "0")
    assert run("fit", "--out", tmp_path, *data_args(synth_dir)) == 2


# ---------------------------------------------------------------------------
# determinism

DETERMINISTIC = {
    "fit": ["model=lcgr", *FAST_LCGR],
    "cv": ["models=logistic,lcgr", *FAST_LCGR],
    "sweep": ["lambdas=0.1,1", *FAST_LCGR],
    "path": ["lambdas=0.1,1", *FAST_LCGR],
}


@pytest.mark.parametrize("command", sorted(DETERMINISTIC))
def test_rerun_byte_identical(synth_dir, tmp_path, command):
    for name in ("a", "b"):
        assert run(command, "--out", tmp_path / name, "--seed", 3, *data_args(synth_dir),
                   *DETERMINISTIC[command]) in (0, 3)
    assert read_all(tmp_path / "a") == read_all(tmp_path / "b")


def test_synth_rerun_byte_identical(tmp_path):
    for name in ("a", "b"):
        run("synth", "--out", tmp_path / name, "--seed", 5)
    assert read_all(tmp_path / "a") == read_all(tmp_path / "b")


def test_worker_count_does_not_change_fit(synth_dir, tmp_path):
    for name, w in (("a", 1), ("b", 3)):
        run("fit", "--out", tmp_path / name, "--workers", w, *data_args(synth_dir), "model=lcgr",
            *FAST_LCGR)
    assert read_all(tmp_path / "a") == read_all(tmp_path / "b")


def test_bench_small(tmp_path, capsys):
    assert run("bench", "--out", tmp_path, "n_nodes=500", "n_edges=2000", "bench_workers=1,2",
               "blocks=4") == 0
    lines = (tmp_path / "bench.csv").read_text().splitlines()
    assert lines[0] == "benchmark,workers,seconds,speedup" and len(lines) == 6
    assert "admm=True gibbs=True" in capsys.readouterr().out
