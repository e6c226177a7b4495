import json

import pandas as pd
import pytest
import yaml

from src.config import OUTPUT_ROOT_ENV
from src.errors import EXIT_CONFIG, EXIT_FAILURE, EXIT_OK
from src.main import _parse_int_list, main


@pytest.mark.parametrize("text, expected", [
    ("1,8,64", [1, 8, 64]),
    ("1-4", [1, 2, 3, 4]),
    ("2, 5-6,", [2, 5, 6]),
])
def test_parse_int_list(text, expected):
    assert _parse_int_list(text) == expected


def test_oracle_passes_and_negative_control_fails(tmp_path):
    out = tmp_path / "oracle.csv"
    args = ["oracle", "--out", str(out), "--p-grid", "0.1,0.5", "--n-range", "1-4"]
    assert main(args) == EXIT_OK
    assert pd.read_csv(out)["passed"].all()
    assert main(args + ["--inject-normalization", "N"]) == EXIT_FAILURE
    report = pd.read_csv(out)
    assert not report["passed"].all()


def test_weights_table(tmp_path):
    out = tmp_path / "weights.csv"
    assert main(["weights", "--out", str(out), "--points", "5", "--orders", "1,4"]) == EXIT_OK
    frame = pd.read_csv(out)
    assert list(frame.columns) == ["p", "w_RL", "w_GRPO", "w_MaxRL_T1", "w_MaxRL_T4", "w_ML"]
    assert len(frame) == 5
    assert frame["w_MaxRL_T1"].tolist() == pytest.approx([1.0] * 5)


def test_weights_rejects_bad_interval(tmp_path):
    assert main(["weights", "--out", str(tmp_path / "w.csv"), "--low", "0.5", "--high", "0.2"]) != EXIT_OK


def test_gen_mazes_writes_dataset_and_vocab(tmp_path):
    out = tmp_path / "mazes" / "side5.jsonl"
    assert main(["gen-mazes", "--side", "5", "--count", "3", "--seed", "2", "--out", str(out)]) == EXIT_OK
    lines = out.read_text().splitlines()
    assert len(lines) == 3
    assert json.loads(lines[0])["side"] == 5
    assert (out.parent / "vocab.tsv").exists()


def test_train_rejects_even_maze_side():
    assert main(["train", "--set", "maze.side=6"]) == EXIT_CONFIG


def test_train_eval_and_report(tmp_path, monkeypatch, classifier_raw):
    output = tmp_path / "output"
    monkeypatch.setenv(OUTPUT_ROOT_ENV, str(output))
    config_path = tmp_path / "run.yaml"
    config_path.write_text(yaml.safe_dump(classifier_raw()))

    assert main(["train", "--config", str(config_path), "--run-id", "demo", "--objective", "grpo"]) == EXIT_OK
    run_dir = output / "demo"
    resolved = yaml.safe_load((run_dir / "config.resolved.yaml").read_text())
    assert resolved["objective"]["kind"] == "grpo"
    assert (run_dir / "completion.json").exists()

    assert main(["eval", str(run_dir), "--ks", "1,2"]) == EXIT_OK
    payload = json.loads((run_dir / "eval.json").read_text())
    assert payload["step"] == 4
    assert 0.0 <= payload["pass@1"] <= payload["pass@2"] <= 1.0
    assert (run_dir / "eval.csv").exists()

    assert main(["eval", str(run_dir), "--sft"]) == EXIT_CONFIG

    assert main(["report", "--out", str(tmp_path / "report")]) == EXIT_OK
    assert (tmp_path / "report" / "report.xlsx").exists()

    assert main(["train", "--config", str(config_path), "--run-id", "demo"]) == EXIT_CONFIG


def test_report_on_empty_directory(tmp_path):
    assert main(["report", "--runs", str(tmp_path), "--out", str(tmp_path / "out")]) == EXIT_CONFIG


def test_resume_of_unknown_run(tmp_path):
    assert main(["train", "--resume", str(tmp_path / "missing")]) == EXIT_CONFIG
