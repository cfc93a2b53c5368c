import csv
import json

import pytest

from pefl import cli

TINY = """
[run]
seed = 1
[model]
widths = [64, 8, 6, 10]
[training]
parties = 2
global_rounds = 3
lr = 0.3
checkpoint_every = 1
[encryption]
exposed_prefix = 2
[data]
per_party = 10
test_size = 100
[attack]
members = 12
nonmembers = 12
runs = 1
cadence = 1
inversion_steps = 20
property_batches = 40
property_trees = 10
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "tiny.toml"
    cfg.write_text(TINY)
    assert cli.main(["train", str(cfg), "--out", str(root / "run")]) == 0
    return root


def _rows(path):
    with open(path) as f:
        return list(csv.DictReader(f))


def test_train_outputs(trained):
    run = trained / "run"
    for name in ("metrics.csv", "metrics.jsonl", "traffic.csv", "schedule.csv", "audit.json",
                 "manifest.json", "training.png", "checkpoints/epoch_0003.json"):
        assert (run / name).is_file(), name
    assert len(_rows(run / "metrics.csv")) == 3
    audit = json.loads((run / "audit.json").read_text())
    assert audit["status_violations"] == [] and audit["taint_violations"] == []
    man = json.loads((run / "manifest.json").read_text())
    assert "metrics.csv" in man["files"] and man["seeds"] == {"run": 1, "data": 0}


def test_rerun_reproduces_csvs(trained):
    assert cli.main(["rerun", str(trained / "run"), "--out", str(trained / "again"), "--check"]) == 0
    a = (trained / "run" / "metrics.csv").read_bytes()
    assert a == (trained / "again" / "metrics.csv").read_bytes()


def test_rerun_check_detects_drift(trained):
    man_path = trained / "run" / "manifest.json"
    man = json.loads(man_path.read_text())
    man["files"]["metrics.csv"] = "0" * 64
    bad = trained / "tampered"
    bad.mkdir()
    (bad / "manifest.json").write_text(json.dumps(man))
    assert cli.main(["rerun", str(bad), "--out", str(trained / "drift"), "--check"]) == cli.EXIT_RUN


def test_attack_and_select_layers(trained):
    out = trained / "attack"
    assert cli.main(["attack", str(trained / "run"), "--out", str(out)]) == 0
    rows = _rows(out / "attack_report.csv")
    inv = [r for r in rows if r["attack"] == "inversion"]
    assert inv and all(r["mean_acc"] != "blocked" for r in inv)
    mem = [r for r in rows if r["attack"] == "membership"]
    assert {r["mean_acc"] for r in mem if r["layer"] == "3"} == {"blocked"}
    sel = trained / "sel"
    assert cli.main(["select-layers", str(out), "--tau", "0.6", "--out", str(sel)]) == 0
    sched = _rows(sel / "schedule.csv")
    assert [int(r["epoch"]) for r in sched] == list(range(1, len(sched) + 1))
    assert cli.main(["rerun", str(sel), "--out", str(trained / "sel2"), "--check"]) == 0


def test_microbench(tmp_path):
    assert cli.main(["microbench", "--out", str(tmp_path)]) == 0
    ops = [r["operation"] for r in _rows(tmp_path / "microbench.csv")]
    assert len(ops) >= 5


def test_tradeoff(trained):
    out = trained / "trade"
    code = cli.main(["tradeoff", str(trained / "tiny.toml"), "--set", "training.global_rounds=1",
                     "--set", "training.checkpoint_every=1", "--out", str(out)])
    assert code == 0
    rows = _rows(out / "tradeoff.csv")
    assert [int(r["T"]) for r in rows] == [3, 2, 1, 0]
    times = [float(r["simulated_seconds"]) for r in rows]
    assert times == sorted(times)
    ratio = _rows(out / "ratio.csv")[0]
    assert float(ratio["analytic_bytes_ratio"]) == pytest.approx(float(ratio["measured_bytes_ratio"]), rel=0.2)


def test_exit_codes(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text("[training]\nlr = -1.0\n")
    assert cli.main(["train", str(bad), "--out", str(tmp_path / "x")]) == cli.EXIT_CONFIG
    assert "training.lr" in capsys.readouterr().err
    assert cli.main(["attack", str(tmp_path), "--out", str(tmp_path / "y")]) == cli.EXIT_RUN
    assert cli.main(["rerun", str(tmp_path / "missing.json")]) == cli.EXIT_CONFIG
    assert cli.main(["train", "--set", "training.lr", "--out", str(tmp_path / "z")]) == cli.EXIT_CONFIG


def test_select_layers_reads_selection_table(trained, tmp_path):
    if not (trained / "attack" / "attack_report.csv").is_file():
        assert cli.main(["attack", str(trained / "run"), "--attacks", "membership",
                         "--out", str(trained / "attack")]) == 0
    cfg = tmp_path / "sel.toml"
    cfg.write_text("[selection]\ntau = 0.5\ncombine = \"vote\"\n")
    out = tmp_path / "sel"
    assert cli.main(["select-layers", str(trained / "attack"), "--config", str(cfg), "--out", str(out)]) == 0
    man = json.loads((out / "manifest.json").read_text())
    assert man["args"]["tau"] == [0.5] and man["args"]["combine"] == "vote"
    assert cli.main(["select-layers", str(trained / "attack"), "--set", "selection.tau=2.0",
                     "--out", str(tmp_path / "bad")]) == cli.EXIT_CONFIG
