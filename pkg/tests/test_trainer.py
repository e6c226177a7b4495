import json

import numpy as np
import pandas as pd
import pytest

from src import trainer
from src.config import build_config
from src.errors import ConfigError, NumericError, RunLockedError, SftFloorNotReached
from src.InputOutput.checkpoints import SFT_CHECKPOINT, list_checkpoints, load_checkpoint
from src.optim import build_optimizer
from src.trainer import (
    BatchSchedule,
    MetricsRecord,
    build_policy_for,
    build_task_source,
    classifier_train_step,
    maze_train_step,
    run_experiment,
    sft_pretrain,
    task_gradient_rows,
)


def _classifier_setup(config):
    source = build_task_source(config)
    policy = build_policy_for(config)
    optimizer = build_optimizer(policy.params, config.optimizer, config.steps)
    return source, policy, optimizer


@pytest.mark.parametrize("objective", ["maxrl", "grpo", "reinforce", "rloo"])
def test_all_failed_batch_leaves_parameters_unchanged(classifier_raw, monkeypatch, objective):
    config = build_config(classifier_raw(objective={"kind": objective}))
    source, policy, optimizer = _classifier_setup(config)
    tasks = source.batch(0, 4)
    wrong = (tasks.labels + 1) % tasks.num_classes

    def _never_correct(probs, rngs, n):
        return np.repeat(wrong[:, None], n, axis=1)

    monkeypatch.setattr(trainer, "sample_classes", _never_correct)
    before = policy.params.state_dict()
    record = classifier_train_step(policy, optimizer, tasks, config, step=0)
    assert record.update_skipped
    assert record.grad_norm == 0.0
    assert record.train_mean_reward == 0.0
    assert policy.params.step == 1
    for name, value in before.items():
        np.testing.assert_array_equal(policy.params[name].data, value)


def test_classifier_step_updates_parameters(classifier_config):
    source, policy, optimizer = _classifier_setup(classifier_config)
    before = policy.params.state_dict()
    record = classifier_train_step(policy, optimizer, source.batch(0, 4), classifier_config, step=0)
    assert record.train_rollouts == 16
    assert record.lr == pytest.approx(0.1)
    assert 0.0 <= record.fraction_solved <= 1.0
    if not record.update_skipped:
        assert any(not np.array_equal(before[n], policy.params[n].data) for n in before)


def _one_step_state(config):
    source, policy, optimizer = _classifier_setup(config)
    record = classifier_train_step(policy, optimizer, source.batch(0, 4), config, step=0)
    return record, policy.params.state_dict()


def test_zero_entropy_bonus_reproduces_base_update(classifier_raw):
    base_record, base = _one_step_state(build_config(classifier_raw()))
    off_record, off = _one_step_state(build_config(classifier_raw(entropy_coeff=0.0)))
    assert off_record.loss == base_record.loss
    for name, value in base.items():
        np.testing.assert_array_equal(off[name], value)

    _, bonus = _one_step_state(build_config(classifier_raw(entropy_coeff=0.01)))
    assert any(not np.array_equal(bonus[name], base[name]) for name in base)


def test_entropy_bonus_updates_all_failed_batch(classifier_raw, monkeypatch):
    config = build_config(classifier_raw(entropy_coeff=0.01))
    source, policy, optimizer = _classifier_setup(config)
    tasks = source.batch(0, 4)
    wrong = (tasks.labels + 1) % tasks.num_classes
    monkeypatch.setattr(trainer, "sample_classes", lambda probs, rngs, n: np.repeat(wrong[:, None], n, axis=1))
    before = policy.params.state_dict()
    record = classifier_train_step(policy, optimizer, tasks, config, step=0)
    assert not record.update_skipped
    assert record.grad_norm > 0
    assert any(not np.array_equal(before[n], policy.params[n].data) for n in before)


def test_exact_ml_step_uses_labels(classifier_raw):
    config = build_config(classifier_raw(objective={"kind": "exact_ml"}))
    source, policy, optimizer = _classifier_setup(config)
    tasks = source.batch(0, 4)
    record = classifier_train_step(policy, optimizer, tasks, config, step=0)
    assert record.loss > 0
    assert record.grad_norm > 0
    assert record.fraction_solved is None


def test_task_gradient_rows(classifier_config):
    source, policy, _ = _classifier_setup(classifier_config)
    rows = task_gradient_rows(policy, source.heldout, classifier_config, step=0)
    assert len(rows) == len(source.heldout)
    for row in rows:
        assert 0.0 < row["pass_rate"] < 1.0
        assert row["grad_norm"] == pytest.approx(row["weight"] * row["grad_p_norm"])
    assert policy.params.global_grad_norm() == 0.0


def test_metrics_record_rejects_non_finite_values():
    with pytest.raises(NumericError):
        MetricsRecord(step=1, loss=float("nan")).to_dict()
    payload = MetricsRecord(step=1, pass_at_k={8: 0.5, 1: 0.25}).to_dict()
    assert payload["pass@1"] == 0.25 and payload["pass@8"] == 0.5


def test_fixed_dataset_schedule_cycles_epochs(classifier_raw):
    config = build_config(classifier_raw(regime={"kind": "fixed_dataset", "dataset_size": 6, "num_epochs": 2}))
    source = build_task_source(config)
    schedule = BatchSchedule(config, source)
    assert schedule.steps_per_epoch == 2
    assert schedule.total_steps == 4
    epoch0 = np.concatenate([schedule.tasks(0).features, schedule.tasks(1).features])
    epoch1 = np.concatenate([schedule.tasks(2).features, schedule.tasks(3).features])
    assert len(epoch0) == 6
    assert sorted(map(tuple, epoch0)) == sorted(map(tuple, epoch1))
    assert sorted(map(tuple, epoch0)) == sorted(map(tuple, schedule.fixed.features))


def _metrics_bytes(run_dir):
    return (run_dir / "metrics.jsonl").read_bytes()


def test_classifier_run_is_byte_reproducible(tmp_path, classifier_config):
    first = run_experiment(classifier_config, run_dir=tmp_path / "a" / "run")
    second = run_experiment(classifier_config, run_dir=tmp_path / "b" / "run")
    assert first.final_step == 4
    assert _metrics_bytes(first.run_dir) == _metrics_bytes(second.run_dir)
    records = [json.loads(line) for line in _metrics_bytes(first.run_dir).splitlines()]
    assert [r["step"] for r in records] == [0, 1, 2, 3, 4]
    assert [("pass@1" in r) for r in records] == [True, False, True, False, True]
    assert records[-1]["train_rollouts"] == 4 * 16
    for name in ("manifest.json", "config.resolved.yaml", "metrics.csv", "completion.json", "task_gradients.csv"):
        assert (first.run_dir / name).exists()
    assert not (first.run_dir / "run.lock").exists()
    gradients = pd.read_csv(first.run_dir / "task_gradients.csv")
    assert sorted(gradients["step"].unique()) == [0, 2, 4]


def test_resume_reproduces_uninterrupted_run(tmp_path, classifier_config):
    reference = run_experiment(classifier_config, run_dir=tmp_path / "ref")
    interrupted = run_experiment(classifier_config, run_dir=tmp_path / "cut")
    last = interrupted.run_dir / "checkpoints" / "ckpt_0000004.bin"
    last.unlink()
    (interrupted.run_dir / "completion.json").unlink()
    resumed = run_experiment(classifier_config, run_dir=interrupted.run_dir, resume=True)
    assert resumed.final_step == 4
    assert _metrics_bytes(resumed.run_dir) == _metrics_bytes(reference.run_dir)
    assert [s for s, _ in list_checkpoints(resumed.run_dir)] == [2, 4]


def test_existing_run_requires_resume(tmp_path, classifier_config):
    run_experiment(classifier_config, run_dir=tmp_path / "run")
    with pytest.raises(ConfigError):
        run_experiment(classifier_config, run_dir=tmp_path / "run")


def test_locked_run_is_refused(tmp_path, classifier_config):
    run_dir = tmp_path / "run"
    run_dir.mkdir()
    (run_dir / "run.lock").write_text("123\n")
    with pytest.raises(RunLockedError):
        run_experiment(classifier_config, run_dir=run_dir)


def test_checkpoints_are_pruned(tmp_path, classifier_raw):
    config = build_config(classifier_raw(steps=6, checkpoint={"every": 1, "keep": 2}))
    result = run_experiment(config, run_dir=tmp_path / "run")
    assert [s for s, _ in list_checkpoints(result.run_dir)] == [5, 6]
    assert load_checkpoint(result.run_dir / "checkpoints" / "ckpt_0000006.bin").extra["train_rollouts"] == 6 * 16


@pytest.mark.slow
def test_maze_run_with_sft(tmp_path, maze_config):
    result = run_experiment(maze_config, run_dir=tmp_path / "maze")
    run_dir = result.run_dir
    assert result.final_step == 2
    assert (run_dir / SFT_CHECKPOINT).exists()
    sft_lines = (run_dir / "sft_metrics.jsonl").read_text().splitlines()
    assert json.loads(sft_lines[0])["phase"] == "sft"
    records = [json.loads(line) for line in _metrics_bytes(run_dir).splitlines()]
    assert [r["step"] for r in records] == [0, 1, 2]
    assert records[1]["entropy"] >= 0.0
    assert records[1]["train_rollouts"] == 4


@pytest.mark.slow
@pytest.mark.parametrize("aggregation", ["token", "sequence"])
def test_maze_train_step(maze_config, aggregation):
    config = maze_config.model_copy(update={"loss_aggregation": aggregation})
    source = build_task_source(config)
    policy = build_policy_for(config)
    optimizer = build_optimizer(policy.params, config.optimizer, config.steps)
    record = maze_train_step(policy, optimizer, source.batch(0, 2), config, step=0)
    assert record.train_rollouts == 4
    assert record.mean_response_length >= 1
    assert policy.params.step == 1


@pytest.mark.slow
def test_sft_floor_not_reached(maze_config):
    config = maze_config.model_copy(update={"sft": maze_config.sft.model_copy(update={"floor": 1.0,
                                                                                       "max_steps": 1})})
    source = build_task_source(config)
    policy = build_policy_for(config)
    with pytest.raises(SftFloorNotReached):
        sft_pretrain(policy, source, config)


@pytest.mark.slow
def test_maze_entropy_bonus_updates_all_failed_batch(maze_config, monkeypatch):
    config = maze_config.model_copy(update={"entropy_coeff": 0.01})
    sampled = trainer.rollout_mazes

    def _all_failed(*args, **kwargs):
        rollouts = sampled(*args, **kwargs)
        rollouts.rewards[:] = 0.0
        return rollouts

    monkeypatch.setattr(trainer, "rollout_mazes", _all_failed)
    source = build_task_source(config)
    policy = build_policy_for(config)
    optimizer = build_optimizer(policy.params, config.optimizer, config.steps)
    before = policy.params.state_dict()
    record = maze_train_step(policy, optimizer, source.batch(0, 2), config, step=0)
    assert record.train_mean_reward == 0.0
    assert not record.update_skipped
    assert record.grad_norm > 0
    assert any(not np.array_equal(before[n], policy.params[n].data) for n in before)
