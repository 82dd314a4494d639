import subprocess
import sys

import pytest

from metanas.cli import EXIT_CONFIG, EXIT_OK, EXIT_RUNTIME, main

CONFIG = """\
[trial]
agent = meta_a2c
stages = omniglot:40, dtd:30
seed = 1

[environment]
mode = chain
"""


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    root = tmp_path_factory.mktemp("cli")
    cfg = root / "trial.ini"
    cfg.write_text(CONFIG)
    assert main(["train", "--config", str(cfg), "--out", str(root / "run")]) == EXIT_OK
    return root


def test_train_writes_log_and_checkpoint(trained, capsys):
    run = trained / "run"
    assert (run / "trial.jsonl").exists()
    assert (run / "checkpoint.npz").exists() and (run / "checkpoint.json").exists()
    assert list((run / "cache").glob("*.tsv"))


def test_train_seed_override_changes_the_run(trained, tmp_path):
    assert main(["train", "--config", str(trained / "trial.ini"), "--out", str(tmp_path), "--seed", "2"]) == 0
    assert (tmp_path / "trial.jsonl").read_bytes() != (trained / "run" / "trial.jsonl").read_bytes()


def test_evaluate_prints_top_architectures(trained, tmp_path, capsys):
    rc = main(["evaluate", "--checkpoint", str(trained / "run" / "checkpoint.npz"),
               "--envs", "aircraft,cu_birds", "--steps", "30", "--out", str(tmp_path / "eval.jsonl")])
    out = capsys.readouterr().out
    assert rc == EXIT_OK
    assert "aircraft:" in out and "cu_birds:" in out and out.count("#1 ") == 2
    assert (tmp_path / "eval.jsonl").exists()


def test_report_writes_csvs(trained, tmp_path):
    rc = main(["report", "--log", str(trained / "run" / "trial.jsonl"), "--window", "10", "--out", str(tmp_path)])
    assert rc == EXIT_OK
    assert {p.name for p in tmp_path.iterdir()} == {"metrics.csv", "entropy.csv", "actions.csv"}


def test_inspect_prints_graph_shapes_and_score(capsys):
    assert main(["inspect", "--state", "omniglot;1,3,0,0;2,2,1,0", "--dot"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "82x82x32" in out and "41x41x32" in out
    assert "surrogate score:" in out and "digraph" in out


def test_inspect_reports_unbuildable_state(capsys):
    key = "omniglot;" + ";".join(f"2,3,{i},0" for i in range(5))
    assert main(["inspect", "--state", key]) == EXIT_RUNTIME


@pytest.mark.parametrize("argv", [
    ["train", "--config", "/nonexistent.ini", "--out", "x"],
    ["inspect", "--state", "omniglot;9,9,9"],
    ["evaluate", "--checkpoint", "/nonexistent.npz", "--envs", "dtd", "--steps", "5"],
    ["report", "--log", "/nonexistent.jsonl", "--out", "x"],
    ["train"],
    ["frobnicate"],
])
def test_configuration_errors_exit_with_one(argv, capsys):
    assert main(argv) == EXIT_CONFIG


def test_bad_config_value_exits_with_one(tmp_path):
    cfg = tmp_path / "bad.ini"
    cfg.write_text("[trial]\nagent = genetic\n")
    assert main(["train", "--config", str(cfg), "--out", str(tmp_path)]) == EXIT_CONFIG


def test_mismatched_checkpoint_exits_with_one(trained, tmp_path):
    ck = trained / "run" / "checkpoint.json"
    bad = tmp_path / "ck.json"
    bad.write_text(ck.read_text().replace('"mode": "chain"', '"mode": "multibranch"'))
    (tmp_path / "ck.npz").write_bytes((trained / "run" / "checkpoint.npz").read_bytes())
    rc = main(["evaluate", "--checkpoint", str(tmp_path / "ck.npz"), "--envs", "dtd", "--steps", "5"])
    assert rc == EXIT_CONFIG


def test_corrupt_log_is_a_runtime_failure(tmp_path):
    log = tmp_path / "trial.jsonl"
    log.write_text("{not json\n")
    assert main(["report", "--log", str(log), "--out", str(tmp_path / "r")]) == EXIT_RUNTIME


def test_module_entry_point():
    proc = subprocess.run([sys.executable, "-m", "metanas", "inspect", "--state", "dtd;1,5,0,0"],
                          capture_output=True, text=True)
    assert proc.returncode == 0 and "surrogate score" in proc.stdout
