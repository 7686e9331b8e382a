import csv
import json
import math
import subprocess
import sys

import numpy as np
import pytest

from uherd import cli
from uherd.config import ConfigError, config_from_dict, load_config
from uherd.core import PreconditionError
from uherd.data import DataFormatError, generate_blobs, generate_halfmoons, load_dataset, write_dataset
from uherd.experiment import (
    Experiment,
    RoundRecord,
    delta_accuracy,
    emit_results,
    evaluate_accuracy,
    indices_path,
    read_results,
    run_experiment,
    validation_split,
)
from uherd.model import ClassifierSpec, train, untrained_model


def small_cfg(method="uherding", **extra):
    d = {"method": method,
         "data": {"kind": "halfmoons", "n": 60, "noise": 0.1},
         "test": {"kind": "halfmoons", "n": 100, "noise": 0.1},
         "schedule": {"budgets": [2, 3, 3], "seed": 4},
         "model": {"max_epochs": 300}}
    for k, v in extra.items():
        d.setdefault(k, {}).update(v) if isinstance(v, dict) else d.__setitem__(k, v)
    return config_from_dict(d)


# ------------------------------------------------------------------- data

def test_halfmoons_examples():
    x, y = generate_halfmoons(100, 0.1, 0)
    assert x.rows == 100 and np.bincount(y).tolist() == [50, 50]
    x, y = generate_halfmoons(101, 0.0, 0)
    assert np.bincount(y).tolist() == [51, 50]
    upper = x.values[y == 0]
    assert np.allclose((upper ** 2).sum(axis=1), 1.0, atol=1e-9)
    lower = x.values[y == 1]
    assert np.allclose(((lower - [1.0, 0.5]) ** 2).sum(axis=1), 1.0, atol=1e-9)
    a, b = generate_halfmoons(50, 0.2, 7), generate_halfmoons(50, 0.2, 7)
    assert np.array_equal(a[0].values, b[0].values) and np.array_equal(a[1], b[1])


def test_blobs_examples():
    x, y = generate_blobs([[0, 0], [3, 3]], 5, 1.0, 0)
    assert x.rows == 10 and set(y.tolist()) == {0, 1}
    x, y = generate_blobs([[0, 0], [3, 3]], 5, 0.0, 0)
    assert np.array_equal(x.values[y == 1], np.tile([3.0, 3.0], (5, 1)))


def test_load_dataset_examples(tmp_path):
    f, l = tmp_path / "x.csv", tmp_path / "y.txt"
    f.write_text("1.0,2.0\n3.0,4.0\n")
    l.write_text("0\n1\n")
    x, y = load_dataset(f, l)
    assert (x.rows, x.dim, x.norm_bound) == (2, 2, 5.0) and y.tolist() == [0, 1]
    (tmp_path / "empty.csv").write_text("")
    with pytest.raises(DataFormatError):
        load_dataset(tmp_path / "empty.csv")
    l.write_text("0\n1\n1\n")
    with pytest.raises(DataFormatError, match="2 rows.*3 labels"):
        load_dataset(f, l)
    f.write_text("1.0,2.0\n3.0\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_dataset(f)
    f.write_text("1.0,2.0\n3.0,abc\n")
    with pytest.raises(DataFormatError, match=":2:"):
        load_dataset(f)


def test_write_then_load_round_trip(tmp_path):
    x, y = generate_halfmoons(30, 0.1, 3)
    write_dataset(x, y, tmp_path / "f.csv", tmp_path / "l.txt")
    x2, y2 = load_dataset(tmp_path / "f.csv", tmp_path / "l.txt")
    assert np.array_equal(x.values, x2.values) and np.array_equal(y, y2)


def test_evaluate_accuracy():
    model = untrained_model(2, 2)
    x = np.zeros((4, 2))
    assert evaluate_accuracy(model, x, [0, 1, 0, 1]) == 0.5
    assert evaluate_accuracy(model, x, [0, 0, 0, 0]) == 1.0
    with pytest.raises(PreconditionError):
        evaluate_accuracy(model, np.zeros((0, 2)), [])


# ----------------------------------------------------------------- output

def _records():
    return [RoundRecord(0, 2, "uherding", 1, math.nan, math.nan, [3, 5], 0.5),
            RoundRecord(1, 5, "uherding", 1, 0.25, 0.125, [1, 7, 9], 0.75)]


def test_emit_results(tmp_path):
    p = tmp_path / "r.csv"
    emit_results([], p)
    assert p.read_text() == "round,labeled_size,method,seed,tau_star,sigma_star,test_accuracy\n"
    emit_results(_records(), p)
    text = p.read_text()
    assert text.splitlines()[1:] == ["0,2,uherding,1,nan,nan,0.5", "1,5,uherding,1,0.25,0.125,0.75"]
    assert indices_path(p).read_text() == "3 5\n1 7 9\n"
    emit_results(_records(), p)
    assert p.read_text() == text


def test_delta_accuracy():
    m = [{"round": "0", "labeled_size": "2", "method": "uherding", "seed": "1", "test_accuracy": "0.75"}]
    r = [{"round": "0", "labeled_size": "2", "method": "random", "seed": "1", "test_accuracy": "0.5"}]
    out = delta_accuracy(m, r)
    assert float(out[0]["delta_acc"]) == 0.25
    with pytest.raises(PreconditionError):
        delta_accuracy(m, [])


# ------------------------------------------------------------------ loop

def test_validation_split():
    rng = np.random.default_rng(0)
    lab = np.arange(100, 120)
    labels = np.array([0] * 10 + [1] * 10)
    tr, val = validation_split(lab, labels, 0.1, rng)
    assert val.size == 2 and tr.size == 18
    assert sorted(np.concatenate([tr, val]).tolist()) == lab.tolist()
    assert sorted(labels[np.searchsorted(lab, val)].tolist()) == [0, 1]
    tr, val = validation_split(np.array([4, 9]), np.array([0, 1]), 0.1, rng)
    assert tr.size == 1 and val.size == 1


def test_run_determinism_and_budget_accounting():
    a = run_experiment(small_cfg())
    b = run_experiment(small_cfg())
    assert [(r.selected, r.test_accuracy, r.tau_star, r.sigma_star) for r in a] == \
           [(r.selected, r.test_accuracy, r.tau_star, r.sigma_star) for r in b]
    picks = [i for r in a for i in r.selected]
    assert len(picks) == 8 == len(set(picks))
    assert [r.labeled_size for r in a] == [2, 5, 8]


def test_sigma_star_nonincreasing_within_run():
    recs = run_experiment(small_cfg(schedule={"budgets": [2, 2, 2, 2, 2, 2]}))
    sig = [r.sigma_star for r in recs if not math.isnan(r.sigma_star)]
    assert len(sig) >= 4
    assert all(b <= a for a, b in zip(sig, sig[1:]))


def test_constant_uncertainty_equals_maxherding_end_to_end():
    for adapt in (True, False):
        u = run_experiment(small_cfg("uherding", uncertainty={"measure": "constant"},
                                     kernel={"adapt_radius": adapt}))
        m = run_experiment(small_cfg("maxherding", kernel={"adapt_radius": adapt}))
        assert [r.selected for r in u] == [r.selected for r in m]


def test_cold_start_each_round():
    cfg = small_cfg("margin")
    exp = Experiment(cfg)
    recs = exp.run()
    labeled = np.concatenate([r.selected for r in recs])
    fresh = train(exp.features.values[np.sort(labeled)], exp.state.labels[np.sort(labeled)],
                  exp.clf_spec, exp.state.num_classes)
    assert recs[-1].test_accuracy == evaluate_accuracy(fresh, exp.test_features, exp.test_labels)


@pytest.mark.parametrize("method", ["random", "confidence", "margin", "entropy", "coreset", "maxherding",
                                    "uherding", "weighted_kmeans", "alfamix_uherding", "badge_medoids"])
def test_every_method_runs(method):
    recs = run_experiment(small_cfg(method))
    assert len(recs) == 3
    assert all(0.0 <= r.test_accuracy <= 1.0 for r in recs)


def test_infeasible_schedule_rejected_before_training(monkeypatch):
    import uherd.experiment as ex
    monkeypatch.setattr(ex, "train", lambda *a, **k: pytest.fail("trained before the feasibility check"))
    with pytest.raises(PreconditionError):
        Experiment(small_cfg(schedule={"budgets": [50, 50]}))


def test_initial_strategies():
    for strategy in ("random", "random_per_class", "maxherding"):
        recs = run_experiment(small_cfg("margin", initial={"strategy": strategy}))
        assert len(recs[0].selected) == 2
    recs = run_experiment(small_cfg("margin", initial={"strategy": "random_per_class"}))
    exp = Experiment(small_cfg())
    assert sorted(exp.state.labels[recs[0].selected].tolist()) == [0, 1]


# ---------------------------------------------------------------- config

def test_config_rejects_unknown_keys():
    with pytest.raises(ConfigError, match="bogus"):
        config_from_dict({"bogus": 1})
    with pytest.raises(ConfigError, match="kernel"):
        config_from_dict({"kernel": {"sigma": 1.0}})
    with pytest.raises(ConfigError):
        config_from_dict({"method": "nope"})
    with pytest.raises(ConfigError):
        config_from_dict({"data": {"kind": "files", "features": "missing.csv", "labels": "missing.txt"}})


def test_load_config_errors(tmp_path):
    with pytest.raises(ConfigError):
        load_config(tmp_path / "absent.json")
    bad = tmp_path / "bad.json"
    bad.write_text("{not json")
    with pytest.raises(ConfigError):
        load_config(bad)


def test_file_data_source_relative_to_config(tmp_path):
    x, y = generate_halfmoons(40, 0.1, 1)
    write_dataset(x, y, tmp_path / "pool.csv", tmp_path / "pool.txt")
    xt, yt = generate_halfmoons(40, 0.1, 2)
    write_dataset(xt, yt, tmp_path / "test.csv", tmp_path / "test.txt")
    cfg_path = tmp_path / "c.json"
    cfg_path.write_text(json.dumps({
        "method": "maxherding", "schedule": {"budgets": [2, 2]},
        "data": {"kind": "files", "features": "pool.csv", "labels": "pool.txt"},
        "test": {"kind": "files", "features": "test.csv", "labels": "test.txt"}}))
    recs = run_experiment(load_config(cfg_path))
    assert [r.labeled_size for r in recs] == [2, 4]


# ------------------------------------------------------------------- CLI

def _write_cfg(tmp_path, **kw):
    d = {"method": "uherding", "data": {"kind": "halfmoons", "n": 40},
         "test": {"kind": "halfmoons", "n": 50}, "schedule": {"budgets": [2, 2]},
         "model": {"max_epochs": 200}}
    d.update(kw)
    p = tmp_path / "cfg.json"
    p.write_text(json.dumps(d))
    return p


def test_cli_run(tmp_path, capsys):
    out = tmp_path / "res.csv"
    assert cli.main(["run", "--config", str(_write_cfg(tmp_path)), "--output", str(out), "--seeds", "1", "2"]) == 0
    rows = read_results(out)
    assert [(r["seed"], r["round"]) for r in rows] == [("1", "0"), ("1", "1"), ("2", "0"), ("2", "1")]
    assert len(indices_path(out).read_text().splitlines()) == 4


def test_cli_run_errors(tmp_path, capsys):
    assert cli.main(["run", "--config", str(tmp_path / "missing.json"), "--output", "x.csv"]) == 1
    assert cli.main(["run", "--config", str(_write_cfg(tmp_path, extra=1)), "--output", "x.csv"]) == 1
    assert cli.main(["run", "--config", str(_write_cfg(tmp_path))]) == 1  # no output path
    cfg = _write_cfg(tmp_path, schedule={"budgets": [30, 30]})
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "r.csv")]) == 2
    assert cli.main(["frobnicate"]) == 1
    assert cli.main(["run"]) == 1


def test_cli_select(tmp_path, capsys):
    x, y = generate_halfmoons(50, 0.1, 0)
    write_dataset(x, y, tmp_path / "f.csv", tmp_path / "l.txt")
    (tmp_path / "lab.txt").write_text("0\n1\n2\n3\n")
    argv = ["select", "--features", str(tmp_path / "f.csv"), "--labels", str(tmp_path / "l.txt"),
            "--labeled", str(tmp_path / "lab.txt"), "--budget", "3", "--method", "uherding"]
    assert cli.main(argv) == 0
    picks = [int(v) for v in capsys.readouterr().out.split()]
    assert len(picks) == 3 and not set(picks) & {0, 1, 2, 3}
    assert cli.main(["select", "--features", str(tmp_path / "f.csv"), "--budget", "2",
                     "--method", "maxherding"]) == 0
    assert len(capsys.readouterr().out.split()) == 2
    assert cli.main(["select", "--features", str(tmp_path / "f.csv"), "--budget", "2",
                     "--method", "margin"]) == 1
    assert cli.main(["select", "--features", str(tmp_path / "f.csv"), "--budget", "99",
                     "--method", "maxherding"]) == 2


def test_cli_calibrate(tmp_path, capsys):
    logits = np.tile([math.log(4.0), 0.0], (10, 1))
    np.savetxt(tmp_path / "z.csv", logits, delimiter=",")
    (tmp_path / "y.txt").write_text("0\n" * 8 + "1\n" * 2)
    argv = ["calibrate", "--logits", str(tmp_path / "z.csv"), "--labels", str(tmp_path / "y.txt"),
            "--tau-min", "0.5", "--tau-max", "2", "--tau-count", "3"]
    assert cli.main(argv) == 0
    lines = capsys.readouterr().out.splitlines()
    assert lines[0] == "tau,ece,selected"
    selected = [ln for ln in lines[1:] if ln.endswith(",1")]
    assert len(selected) == 1 and float(selected[0].split(",")[0]) == pytest.approx(1.0)
    (tmp_path / "y.txt").write_text("0\n")
    assert cli.main(argv) == 1


def test_cli_gen_data(tmp_path):
    assert cli.main(["gen-data", "--kind", "halfmoons", "--n", "20", "--features-out", str(tmp_path / "f.csv"),
                     "--labels-out", str(tmp_path / "l.txt")]) == 0
    x, y = load_dataset(tmp_path / "f.csv", tmp_path / "l.txt")
    assert x.rows == 20
    assert cli.main(["gen-data", "--kind", "blobs", "--centers", "0,0;4,4", "--per-center", "3",
                     "--features-out", str(tmp_path / "b.csv"), "--labels-out", str(tmp_path / "b.txt")]) == 0
    assert load_dataset(tmp_path / "b.csv")[0].rows == 6
    assert cli.main(["gen-data", "--kind", "blobs", "--features-out", "a", "--labels-out", "b"]) == 1


def test_cli_bound(capsys):
    assert cli.main(["bound", "-B", "1", "-N", "10000", "-d", "2", "-R", "1", "--sigma", "1"]) == 0
    assert float(capsys.readouterr().out) == pytest.approx(0.0940171925, abs=1e-9)
    assert cli.main(["bound", "-B", "10", "-N", "10", "-d", "2", "-R", "0.1", "--sigma", "1"]) == 2


def test_cli_delta_acc(tmp_path, capsys):
    cfg = _write_cfg(tmp_path)
    assert cli.main(["run", "--config", str(cfg), "--output", str(tmp_path / "u.csv")]) == 0
    rnd = _write_cfg(tmp_path, method="random")
    assert cli.main(["run", "--config", str(rnd), "--output", str(tmp_path / "r.csv")]) == 0
    out = tmp_path / "d.csv"
    assert cli.main(["delta-acc", "--method", str(tmp_path / "u.csv"), "--random", str(tmp_path / "r.csv"),
                     "--output", str(out)]) == 0
    with out.open() as fh:
        rows = list(csv.DictReader(fh))
    assert len(rows) == 2 and all("delta_acc" in r for r in rows)
    assert cli.main(["delta-acc", "--method", str(tmp_path / "nope.csv"), "--random", str(out)]) == 1


def test_cli_module_entry_point(tmp_path):
    proc = subprocess.run([sys.executable, "-m", "uherd", "bound", "-B", "1", "-N", "100", "-d", "1",
                           "-R", "1", "--sigma", "1"], capture_output=True, text=True)
    assert proc.returncode == 0 and float(proc.stdout) > 0
