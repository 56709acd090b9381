import csv
import json

import pytest

from reinforce_lab import cli, experiments


def write(tmp_path, doc, name="cfg.json"):
    p = tmp_path / name
    p.write_text(json.dumps(doc))
    return str(p)


SMALL_POLYA = {"experiment": "polya", "seed": 5,
               "params": {"replicas": 300, "horizon": 2000}}


def test_list_experiments(capsys):
    assert cli.main(["list-experiments"]) == cli.EXIT_PASS
    lines = capsys.readouterr().out.strip().splitlines()
    assert len(lines) == 13
    crit = sorted(e.criterion for e in experiments.CATALOG.values())
    assert crit == list(range(1, 14))


def test_graph_emit(capsys):
    assert cli.main(["graph", "grid_box(2,3)", "--emit"]) == 0
    doc = json.loads(capsys.readouterr().out)
    assert doc["vertices"] == 9 and len(doc["edges"]) == 12


def test_graph_bad_family(capsys):
    assert cli.main(["graph", "hypercube(3)"]) == cli.EXIT_CONFIG


@pytest.mark.parametrize("doc,where", [
    ({"experiment": "polya", "params": {"replicas": 0}}, "/params/replicas"),
    ({"experiment": "polya", "seed": -1}, "/seed"),
    ({"experiment": "polya", "colour": "red"}, "/"),
    ({"experiment": "decay", "params": {"s": 0.3}}, "/params"),
    ({"experiment": "nope"}, "/experiment"),
])
def test_config_errors_exit_2(tmp_path, capsys, doc, where):
    assert cli.main(["run", write(tmp_path, doc)]) == cli.EXIT_CONFIG
    err = capsys.readouterr().err
    assert err.startswith(f"config error at {where}")


def test_unreadable_config(tmp_path, capsys):
    p = tmp_path / "broken.json"
    p.write_text("{")
    assert cli.main(["run", str(p)]) == cli.EXIT_CONFIG


def test_same_seed_same_record(tmp_path):
    cfg = cli.ExperimentConfig.from_json(SMALL_POLYA)
    a, b = cli.run_experiment(cfg), cli.run_experiment(cfg)
    assert a.hash == b.hash
    other = cli.run_experiment(cli.ExperimentConfig.from_json({**SMALL_POLYA, "seed": 6}))
    assert other.hash != a.hash


def test_workers_do_not_change_results():
    one = cli.run_experiment(cli.ExperimentConfig.from_json({**SMALL_POLYA, "workers": 1}))
    two = cli.run_experiment(cli.ExperimentConfig.from_json({**SMALL_POLYA, "workers": 3}))
    assert one.metrics == two.metrics


def test_run_writes_outputs(tmp_path, capsys):
    out = tmp_path / "out"
    code = cli.main(["run", write(tmp_path, SMALL_POLYA), "--out", str(out), "--check"])
    record = json.loads((out / "record.json").read_text())
    assert code == (cli.EXIT_PASS if record["passed"] else cli.EXIT_GATE)
    assert record["seed"] == 5 and len(record["config_hash"]) == 64
    assert "record_hash" in record and "wall_time" in record


def test_decay_csv_and_plotdata(tmp_path):
    doc = {"experiment": "decay", "graph": "path(6)", "params":
           {"distances": [1, 2, 3, 4, 5], "replicas": 300, "T": 2000}}
    rec = cli.run_experiment(cli.ExperimentConfig.from_json(doc))
    files = cli.write_outputs(rec, tmp_path)
    table = [f for f in files if f.name.startswith("decay") and f.parent == tmp_path][0]
    raw = table.read_bytes()
    assert b"\r" not in raw and raw.endswith(b"\n")
    rows = list(csv.reader(raw.decode().splitlines()))
    assert rows[0][:4] == ["graph", "distance", "moment", "stderr"]
    assert len(rows) == 6
    float(rows[1][2])  # '.' decimal, parseable
    plot = tmp_path / "plotdata" / "decay_path(6).csv"
    head = plot.read_text().splitlines()
    assert head[0] == "distance,log_moment"


def test_plotdata_return_tail_and_tree_phase(tmp_path):
    rt = cli.run_experiment(cli.ExperimentConfig.from_json(
        {"experiment": "return-tail", "graph": {"family": "path", "params": [41], "v0": 20},
         "params": {"Ms": [1, 2, 4, 8, 16], "replicas": 500}}))
    tp = cli.run_experiment(cli.ExperimentConfig.from_json(
        {"experiment": "tree-phase", "graph": "k_ary_tree(2,3)",
         "params": {"replicas": 20, "T": 500, "alist": [0.5, 4.0]}}))
    f1 = cli.emit_plotdata(rt, tmp_path / "rt")
    f2 = cli.emit_plotdata(tp, tmp_path / "tp")
    assert f1[0].read_text().splitlines()[0] == "log_M,log_survival"
    assert f2[0].read_text().splitlines()[0] == "a,recurrence_score"
    assert len(f2[0].read_text().splitlines()) == 3


def test_record_hash_ignores_wall_time():
    rec = cli.run_experiment(cli.ExperimentConfig.from_json(SMALL_POLYA))
    h = rec.hash
    rec.wall_time += 100.0
    assert rec.hash == h
