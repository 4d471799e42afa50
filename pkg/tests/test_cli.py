import csv
import json
from math import comb

import numpy as np
import pytest

from conftest import planted_table, write_table_csv
from synergyfe.cli import (
    ConfigError,
    EXIT_FAILED,
    EXIT_OK,
    EXIT_USAGE,
    RunConfig,
    main,
    percent_change,
    verify_ii,
)
from synergyfe.infotheory import EstimatorConfig


@pytest.fixture(scope="module")
def planted_csv(tmp_path_factory):
    t = planted_table(n=400, d=5, seed=3)
    path = tmp_path_factory.mktemp("data") / "planted.csv"
    write_table_csv(path, {n: t.column(n).values for n in t.names})
    return path


def _read(path):
    with open(path, newline="") as fh:
        return list(csv.reader(fh))


def _run_args(data, out, *extra):
    return ["run", "--data", str(data), "--target", "y", "--task", "regression",
            "--max-iterations", "2", "--subsample-size", "400", "--output", str(out), *extra]


# run


def test_run_writes_report_and_features(planted_csv, tmp_path):
    out = tmp_path / "report.json"
    assert main(_run_args(planted_csv, out)) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["status"] == "complete"
    assert rep["n_train"] == 320 and rep["n_test"] == 80
    assert len(rep["cv_history"]) == 2 == len(rep["features"])
    assert rep["percent_change_over_baseline"] > 0
    assert rep["config"]["max_iterations"] == 2 and rep["seeds"] == {"split": 0, "algorithm": 0}
    assert rep["artifact"]["name"] == "synergyfe"
    feats = json.loads((tmp_path / "report.features.json").read_text())
    assert [f["expr"] for f in feats] == rep["features"]


def test_run_zero_iterations_matches_baseline(planted_csv, tmp_path):
    out = tmp_path / "r.json"
    assert main(_run_args(planted_csv, out, "--max-iterations", "0")) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["features"] == []
    assert rep["test_score"] == pytest.approx(rep["baseline_test_score"], abs=1e-9)


def test_run_is_reproducible(planted_csv, tmp_path):
    reps = []
    for name in ("a.json", "b.json"):
        out = tmp_path / name
        main(_run_args(planted_csv, tmp_path / "x.json", "--output", str(out),
                       "--features-output", str(tmp_path / "f.json")))
        rep = json.loads(out.read_text())
        rep.pop("timing")
        rep["config"].pop("output")
        reps.append(json.dumps(rep, sort_keys=True))
    assert reps[0] == reps[1]


def test_config_file_with_override(planted_csv, tmp_path):
    cfg = tmp_path / "cfg.json"
    cfg.write_text(json.dumps({"data": str(planted_csv), "target": "y", "task": "regression",
                               "max_iterations": 5, "subsample_size": 400}))
    out = tmp_path / "r.json"
    assert main(["run", "--config", str(cfg), "--max-iterations", "0", "-o", str(out)]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert rep["config"]["max_iterations"] == 0 and rep["config"]["subsample_size"] == 400


def test_invalid_config_exit_code(planted_csv, tmp_path, capsys):
    code = main(_run_args(planted_csv, tmp_path / "r.json", "--P", "3"))
    assert code == EXIT_USAGE
    assert "P must be" in capsys.readouterr().err


def test_missing_target_column_exit_code(planted_csv, tmp_path):
    args = _run_args(planted_csv, tmp_path / "r.json")
    args[args.index("y")] = "nope"
    assert main(args) == EXIT_FAILED


def test_config_validation_rules():
    with pytest.raises(ConfigError, match="unknown config keys"):
        RunConfig.from_sources(None, {"data": "d", "target": "y", "task": "regression", "bogus": 1})
    with pytest.raises(ConfigError):
        RunConfig(data="d", target="y", task="regression", model="logreg").validate()
    with pytest.raises(ConfigError):
        RunConfig(data="d", target="y", task="ranking").validate()


def test_percent_change():
    assert percent_change(0.5, 0.75) == pytest.approx(50.0)
    assert percent_change(-0.5, 0.0) == pytest.approx(100.0)
    assert percent_change(0.0, 0.3) is None


# transform


@pytest.fixture
def mixed_csv(tmp_path):
    path = tmp_path / "train.csv"
    write_table_csv(path, {"F1": [1.0, 2.0, 3.0, 4.0], "F2": [0.5, 0.5, 1.5, 1.5],
                           "C": ["a", "a", "b", "b"]})
    return path


def test_transform_empty_feature_file_copies_input(mixed_csv, tmp_path):
    feats = tmp_path / "f.json"
    feats.write_text("[]")
    out = tmp_path / "out.csv"
    assert main(["transform", str(feats), str(mixed_csv), str(out)]) == EXIT_OK
    assert out.read_bytes() == mixed_csv.read_bytes()


def test_transform_add(mixed_csv, tmp_path):
    feats = tmp_path / "f.json"
    feats.write_text(json.dumps(["add(col:F1,col:F2)"]))
    out = tmp_path / "out.csv"
    assert main(["transform", str(feats), str(mixed_csv), str(out)]) == EXIT_OK
    rows = _read(out)
    assert rows[0][-1] == "add(col:F1,col:F2)"
    np.testing.assert_allclose([float(r[-1]) for r in rows[1:]], [1.5, 2.5, 4.5, 5.5])


def test_transform_unseen_category_groupby_is_zero(mixed_csv, tmp_path):
    feats = tmp_path / "f.json"
    feats.write_text(json.dumps([{
        "expr": "gbmean(col:C,col:F1)",
        "state": [{"node": "gbmean(col:C,col:F1)", "kind": "groupby",
                   "map": {"a": 1.5, "b": 3.5}}],
        "columns": {"C": "categorical", "F1": "numeric"},
    }]))
    test = tmp_path / "test.csv"
    write_table_csv(test, {"F1": [9.0, 9.0], "F2": [0.0, 0.0], "C": ["b", "zz"]})
    out = tmp_path / "out.csv"
    assert main(["transform", str(feats), str(test), str(out)]) == EXIT_OK
    assert [float(r[-1]) for r in _read(out)[1:]] == [3.5, 0.0]


def test_transform_unknown_column(mixed_csv, tmp_path, capsys):
    feats = tmp_path / "f.json"
    feats.write_text(json.dumps(["mul(col:F1,col:Nope)"]))
    assert main(["transform", str(feats), str(mixed_csv), str(tmp_path / "o.csv")]) == EXIT_FAILED
    assert "mul(col:F1,col:Nope)" in capsys.readouterr().err


def test_run_features_apply_to_test_rows(planted_csv, tmp_path):
    out = tmp_path / "r.json"
    main(_run_args(planted_csv, out))
    dest = tmp_path / "t.csv"
    assert main(["transform", str(tmp_path / "r.features.json"), str(planted_csv), str(dest)]) == 0
    rows = _read(dest)
    assert len(rows[0]) == 6 + 2 and len(rows) == 401


# verify-ii


def test_verify_ii_rank_bounds():
    rng = np.random.default_rng(0)
    cols = {f"F{i}": rng.standard_normal(500) for i in range(10)}
    res = verify_ii(cols, ["sum", "product"], EstimatorConfig(subsample_size=500))
    assert res["n_pairs"] == comb(10, 2)
    for f in ("sum", "product"):
        ranks = res["functions"][f]["ranks"]
        assert len(ranks) == 45
        assert all(0 <= r <= 44 for r in ranks)
        assert sum(res["functions"][f]["histogram"]) == 45


def test_verify_ii_command(tmp_path):
    rng = np.random.default_rng(1)
    data = tmp_path / "d.csv"
    write_table_csv(data, {f"F{i}": rng.standard_normal(300) for i in range(4)})
    out = tmp_path / "v.json"
    assert main(["verify-ii", str(data), "-o", str(out), "--functions", "product",
                 "--subsample-size", "300"]) == EXIT_OK
    rep = json.loads(out.read_text())
    assert list(rep["functions"]) == ["product"] and rep["n_pairs"] == 6


def test_verify_ii_unknown_function():
    rng = np.random.default_rng(2)
    with pytest.raises(Exception, match="unknown"):
        verify_ii({"a": rng.random(50), "b": rng.random(50)}, ["cube"])


# expand-reduce bench


def test_bench_two_rows(planted_csv, tmp_path):
    out = tmp_path / "b.json"
    code = main(["expand-reduce-bench", "--data", str(planted_csv), "--target", "y", "--task",
                 "regression", "--subsample-size", "320", "--filter-factors", "1,5",
                 "--max-selected", "2", "-o", str(out)])
    assert code == EXIT_OK
    rep = json.loads(out.read_text())
    rows = rep["results"]
    assert [r["filter_factor"] for r in rows] == [1.0, 5.0]
    assert rows[0]["candidate_fraction"] == 1.0
    assert rows[1]["n_candidates"] <= 0.2 * rows[0]["n_candidates"] + 10
    assert len(rep["timing"]["wall_time"]) == 2


def test_bench_rejects_bad_factor(planted_csv, tmp_path):
    code = main(["expand-reduce-bench", "--data", str(planted_csv), "--target", "y", "--task",
                 "regression", "--filter-factors", "0.5", "-o", str(tmp_path / "b.json")])
    assert code == EXIT_USAGE
