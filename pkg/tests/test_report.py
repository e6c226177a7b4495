import math
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from src.config import build_config
from src.errors import ConfigError, MissingInputError
from src.report import (
    build_report,
    comparison_by_step,
    load_runs,
    neglog_passk_vs_rollouts,
    sample_efficiency,
)
from src.trainer import run_experiment


@pytest.fixture
def runs_root(tmp_path, classifier_raw):
    root = tmp_path / "runs"
    for objective in ("maxrl", "grpo"):
        config = build_config(classifier_raw(objective={"kind": objective}))
        run_experiment(config, run_dir=root / objective)
    return root


def _fake_run(run_id, objective, values, ks=(1, 4)):
    """Minimale run met eval-records, zonder bestanden op schijf."""
    metrics = pd.DataFrame({
        "step": list(range(len(values))),
        "train_rollouts": [16 * s for s in range(len(values))],
        **{f"pass@{k}": [v[i] for v in values] for i, k in enumerate(ks)},
    })
    meta = {"run_id": run_id, "task": "classification", "objective": objective, "seed": 0}
    return SimpleNamespace(run_id=run_id, ks=list(ks), evals=metrics, metrics=metrics, meta=lambda: meta)


def test_report_writes_all_tables(runs_root, tmp_path):
    out = tmp_path / "report"
    written = build_report(runs_root, out, scatter="grad-vs-p", target_pass=0.01)
    assert set(written) == {"passk_vs_k", "neglog_passk_vs_rollouts", "fraction_solved", "peak_vs_final",
                            "sample_efficiency", "grad_vs_p", "report"}
    for path in written.values():
        assert path.exists()

    passk = pd.read_csv(written["passk_vs_k"])
    assert list(passk.columns) == ["run_id", "task", "objective", "seed", "step", "k", "pass_at_k"]
    assert len(passk) == 2 * 3
    assert set(passk["step"]) == {4}

    solved = pd.read_csv(written["fraction_solved"])
    assert sorted(solved[solved["run_id"] == "maxrl"]["step"]) == [1, 2, 3, 4]

    gradients = pd.read_csv(written["grad_vs_p"])
    assert set(gradients["run_id"]) == {"grpo", "maxrl"}
    assert gradients["pass_rate"].between(0, 1).all()

    sheets = pd.read_excel(written["report"], sheet_name=None, engine="openpyxl")
    assert list(sheets) == ["Overzicht", "Vergelijking", "passk_vs_k", "neglog_passk_vs_rollouts",
                            "fraction_solved", "peak_vs_final", "sample_efficiency", "grad_vs_p", "Logs"]
    assert set(sheets["Overzicht"]["objective"]) == {"grpo", "maxrl"}


def test_report_without_scatter_skips_gradients(runs_root, tmp_path):
    written = build_report(runs_root, tmp_path / "report")
    assert "grad_vs_p" not in written
    assert not (tmp_path / "report" / "grad_vs_p.csv").exists()


def test_comparison_marks_presence_per_run(runs_root):
    comparison = comparison_by_step(load_runs(runs_root))
    assert list(comparison["step"]) == [0, 2, 4]
    assert list(comparison.columns[:3]) == ["step", "Aanwezig_grpo", "Aanwezig_maxrl"]
    assert (comparison["Aanwezig_maxrl"] == "ja").all()
    assert "maxrl_pass@4" in comparison.columns


def test_comparison_with_unequal_eval_steps():
    short = _fake_run("a", "maxrl", [(0.1, 0.2), (0.3, 0.5)])
    long = _fake_run("b", "grpo", [(0.1, 0.2), (0.2, 0.4), (0.3, 0.6)])
    comparison = comparison_by_step([short, long])
    assert list(comparison["Aanwezig_a"]) == ["ja", "ja", "nee"]
    assert math.isnan(comparison["a_pass@1"].iloc[2])


def test_neglog_is_missing_where_pass_rate_is_zero():
    frame = neglog_passk_vs_rollouts([_fake_run("a", "maxrl", [(0.0, 0.5)])])
    by_k = frame.set_index("k")["neg_log_pass_at_k"]
    assert math.isnan(by_k[1])
    assert by_k[4] == pytest.approx(math.log(2))


def test_sample_efficiency_against_reference():
    runs = [
        _fake_run("m", "maxrl", [(0.6, 0.9)]),
        _fake_run("g", "grpo", [(0.2, 0.7)]),
        _fake_run("r", "reinforce", [(0.1, 0.3)]),
    ]
    frame = sample_efficiency(runs, target=0.5, reference="grpo").set_index("run_id")
    assert frame.loc["m", "k_needed"] == 1
    assert frame.loc["g", "k_needed"] == 4
    assert np.isnan(frame.loc["r", "k_needed"])
    assert frame.loc["m", "speedup"] == pytest.approx(4.0)
    assert frame.loc["g", "speedup"] == pytest.approx(1.0)


def test_missing_runs(tmp_path):
    with pytest.raises(MissingInputError):
        build_report(tmp_path / "nowhere", tmp_path / "out")
    (tmp_path / "empty").mkdir()
    with pytest.raises(MissingInputError):
        build_report(tmp_path / "empty", tmp_path / "out")


def test_invalid_report_arguments(runs_root, tmp_path):
    with pytest.raises(ConfigError):
        build_report(runs_root, tmp_path / "out", scatter="loss-vs-k")
    with pytest.raises(ConfigError):
        build_report(runs_root, tmp_path / "out", target_pass=0.0)
