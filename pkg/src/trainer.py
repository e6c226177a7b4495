"""On-policy trainingslus voor alle doelfuncties, beide taken en beide dataregimes.

Per stap: sample N rollouts per taak met de huidige parameters, bepaal de beloningen,
zet die via de estimators om in coëfficiënten per rollout en doe precies één optimizer-update.
"""
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from . import __version__
from .autodiff import Tensor, log_softmax, no_grad, softmax
from .classification import (
    ClassificationTaskSet,
    ClassificationTaskSource,
    correct_class_probabilities,
    get_profile,
    sample_classes,
)
from .config import (
    RegimeKind,
    TaskKind,
    TrainConfig,
    config_to_dict,
    dump_resolved_config,
    output_root,
)
from .errors import ConfigError, DomainError, NumericError, SftFloorNotReached
from .estimators import EstimatorVariant, RewardBatch, loss_coefficients
from .evaluation import EvalResult, evaluate, evaluate_maze, rollout_mazes
from .InputOutput.checkpoints import (
    SFT_CHECKPOINT,
    Checkpoint,
    checkpoint_path,
    latest_checkpoint,
    load_checkpoint,
    prune_checkpoints,
    save_checkpoint,
)
from .InputOutput.readers import METRICS_JSONL, read_jsonl, read_maze_dataset
from .InputOutput.writers import JsonlSink, truncate_jsonl_after, write_csv
from .logging_setup import attach_run_file_handler, detach_handler, get_logger
from .maze import VOCAB_SIZE, MazeGrid, MazeTaskSource, ground_truth_actions, max_generation_length, prompt_length, tokenize_maze
from .networks import PerceptronClassifier, SequencePolicy, build_policy
from .objectives import ObjectiveKind, weight
from .optim import Optimizer, build_optimizer
from .utils import (
    MANIFEST_NAME,
    STREAM_INIT,
    STREAM_SFT,
    STREAM_SHUFFLE,
    STREAM_TRAIN,
    RunLock,
    chunk_indices,
    make_run_id,
    rng_stream,
    utc_timestamp,
    write_json,
)

TRAIN_CHUNK = 32
METRICS_CSV = "metrics.csv"
SFT_METRICS = "sft_metrics.jsonl"
TIMINGS = "timings.jsonl"
TASK_GRADIENTS = "task_gradients.csv"
RUN_LOG_CSV = "run_log.csv"
COMPLETION = "completion.json"

Policy = Union[PerceptronClassifier, SequencePolicy]


@dataclass
class MetricsRecord:
    """Eén regel in metrics.jsonl; ontbrekende waarden zijn None."""

    step: int
    phase: str = "train"
    train_mean_reward: Optional[float] = None
    fraction_solved: Optional[float] = None
    pass_at_k: Dict[int, float] = field(default_factory=dict)
    mean_response_length: Optional[float] = None
    entropy: Optional[float] = None
    grad_norm: Optional[float] = None
    loss: Optional[float] = None
    train_rollouts: int = 0
    update_skipped: bool = False
    argmax_accuracy: Optional[float] = None
    eval_pass_rate: Optional[float] = None
    lr: Optional[float] = None

    def add_eval(self, result: EvalResult) -> "MetricsRecord":
        self.pass_at_k = dict(result.pass_at_k)
        self.argmax_accuracy = result.argmax_accuracy
        self.eval_pass_rate = result.mean_pass_rate
        return self

    def to_dict(self) -> Dict[str, object]:
        payload: Dict[str, object] = {
            "step": self.step,
            "phase": self.phase,
            "train_mean_reward": self.train_mean_reward,
            "fraction_solved": self.fraction_solved,
            "mean_response_length": self.mean_response_length,
            "entropy": self.entropy,
            "grad_norm": self.grad_norm,
            "loss": self.loss,
            "train_rollouts": self.train_rollouts,
            "update_skipped": self.update_skipped,
            "argmax_accuracy": self.argmax_accuracy,
            "eval_pass_rate": self.eval_pass_rate,
            "lr": self.lr,
        }
        for key, value in payload.items():
            if isinstance(value, float) and not math.isfinite(value):
                raise NumericError(f"Metriek '{key}' is niet eindig ({value}) bij stap {self.step}")
        for k, value in sorted(self.pass_at_k.items()):
            payload[f"pass@{k}"] = float(value)
        return payload


def variant_for(config: TrainConfig) -> EstimatorVariant:
    if config.objective.kind is ObjectiveKind.MAXRL:
        return EstimatorVariant(config.objective.kind, config.objective.cv_mode)
    return EstimatorVariant(config.objective.kind)


def _finite_loss(loss: Tensor, step: int) -> float:
    value = float(loss.data.sum())
    if not math.isfinite(value):
        raise NumericError(f"Niet-eindige loss ({value}) bij stap {step}; parameters ongewijzigd")
    return value


def _update(optimizer: Optimizer, skip: bool) -> Optional[float]:
    if skip:
        optimizer.skip()
        return 0.0
    return optimizer.step()


def classifier_train_step(
    policy: PerceptronClassifier,
    optimizer: Optimizer,
    tasks: ClassificationTaskSet,
    config: TrainConfig,
    step: int,
) -> MetricsRecord:
    """Eén on-policy update van de classifier; ExactML gebruikt -log pi(y*|x) zonder sampling."""
    policy.params.zero_grad()
    lr = optimizer.current_lr
    batch = len(tasks)
    logp = log_softmax(policy.logits(tasks.features), axis=-1)
    probs = np.exp(logp.data)
    entropy = float(np.mean(-np.sum(probs * logp.data, axis=-1)))
    p_correct = correct_class_probabilities(probs, tasks.labels)
    kind = config.objective.kind

    if kind is ObjectiveKind.EXACT_ML:
        onehot = np.zeros_like(probs)
        onehot[np.arange(batch), tasks.labels] = 1.0 / batch
        loss = -(logp * onehot).sum()
        loss_value = _finite_loss(loss, step)
        loss.backward()
        grad_norm = optimizer.step()
        return MetricsRecord(
            step=policy.params.step, train_mean_reward=float(np.mean(p_correct)), entropy=entropy,
            grad_norm=grad_norm, loss=loss_value, lr=lr,
        )

    n = config.rollouts_per_task
    rngs = [rng_stream(config.seed, STREAM_TRAIN, step, b) for b in range(batch)]
    classes = sample_classes(probs, rngs, n)
    rewards = (classes == tasks.labels[:, None]).astype(np.float64)
    coeffs = loss_coefficients(RewardBatch(rewards), variant_for(config), config.objective.eps)

    # Eén token per rollout: token- en sequentie-aggregatie vallen samen
    weights = np.zeros_like(probs)
    np.add.at(weights, (np.repeat(np.arange(batch), n), classes.reshape(-1)), coeffs.reshape(-1) / batch)
    loss = -(logp * weights).sum()
    if config.entropy_coeff > 0:
        loss = loss - config.entropy_coeff * (-(logp.exp() * logp).sum(axis=-1).mean())
    loss_value = _finite_loss(loss, step)
    skip = not np.any(coeffs) and config.entropy_coeff == 0
    if not skip:
        loss.backward()
    grad_norm = _update(optimizer, skip)
    return MetricsRecord(
        step=policy.params.step,
        train_mean_reward=float(rewards.mean()),
        fraction_solved=float(np.mean(rewards.sum(axis=1) > 0)),
        mean_response_length=1.0,
        entropy=entropy,
        grad_norm=grad_norm,
        loss=loss_value,
        train_rollouts=batch * n,
        update_skipped=skip,
        lr=lr,
    )


def maze_train_step(
    policy: SequencePolicy,
    optimizer: Optimizer,
    grids: Sequence[MazeGrid],
    config: TrainConfig,
    step: int,
) -> MetricsRecord:
    """Eén on-policy update van de sequentie-policy op een batch doolhoven."""
    policy.params.zero_grad()
    lr = optimizer.current_lr
    n = config.rollouts_per_task
    batch = len(grids)
    rollouts = rollout_mazes(policy, grids, n, config.seed, STREAM_TRAIN, step, temperature=1.0)
    coeffs = loss_coefficients(RewardBatch(rollouts.rewards), variant_for(config), config.objective.eps)
    total_tokens = max(rollouts.total_tokens, 1)
    if config.loss_aggregation == "token":
        row_weights = coeffs * n / total_tokens
    else:
        row_weights = coeffs / batch

    use_entropy = config.entropy_coeff > 0
    rows = [(b, i) for b in range(batch) for i in range(n) if use_entropy or row_weights[b, i] != 0.0]
    skip = not rows
    loss_value = 0.0
    for chunk in chunk_indices(len(rows), TRAIN_CHUNK):
        chunk_rows = [rows[j] for j in chunk]
        prompts = rollouts.prompt[[b for b, _ in chunk_rows]]
        responses = [rollouts.responses[b][i] for b, i in chunk_rows]
        logp, mask, token_entropy = policy.response_log_probs(prompts, responses, with_entropy=use_entropy)
        w = np.array([row_weights[b, i] for b, i in chunk_rows])
        loss = -(logp * (mask * w[:, None])).sum()
        if use_entropy:
            loss = loss - (config.entropy_coeff / total_tokens) * (token_entropy * mask).sum()
        loss_value += _finite_loss(loss, step)
        loss.backward()
    grad_norm = _update(optimizer, skip)
    return MetricsRecord(
        step=policy.params.step,
        train_mean_reward=float(rollouts.rewards.mean()),
        fraction_solved=float(np.mean(rollouts.rewards.sum(axis=1) > 0)),
        mean_response_length=float(rollouts.lengths.mean()),
        entropy=float(rollouts.entropy_sum.sum() / total_tokens),
        grad_norm=grad_norm,
        loss=loss_value,
        train_rollouts=batch * n,
        update_skipped=skip,
        lr=lr,
    )


def train_step(policy: Policy, optimizer: Optimizer, tasks, config: TrainConfig, step: int) -> MetricsRecord:
    """Kies de stap op basis van het taaktype."""
    if isinstance(tasks, ClassificationTaskSet):
        return classifier_train_step(policy, optimizer, tasks, config, step)
    return maze_train_step(policy, optimizer, list(tasks), config, step)


def task_gradient_rows(
    policy: PerceptronClassifier, tasks: ClassificationTaskSet, config: TrainConfig, step: int
) -> List[Dict[str, object]]:
    """Per heldout taak: pass rate p, ||grad p|| en de populatiegradiënt ||w(p) grad p|| van de doelfunctie."""
    kind = config.objective.kind
    order = config.objective.order or config.rollouts_per_task
    rows = []
    for b in range(len(tasks)):
        policy.params.zero_grad()
        sub = tasks.subset([b])
        prob = softmax(policy.logits(sub.features), axis=-1)[0, int(sub.labels[0])]
        prob.backward()
        grad_p = float(policy.params.global_grad_norm())
        p = float(prob.data)
        try:
            w = weight(kind, p, order if kind is ObjectiveKind.MAXRL else None)
        except DomainError:
            w = float("nan")
        rows.append({
            "step": step,
            "task": b,
            "objective": kind.value,
            "pass_rate": p,
            "grad_p_norm": grad_p,
            "weight": w,
            "grad_norm": w * grad_p,
        })
    policy.params.zero_grad()
    return rows


@dataclass
class SftReport:
    steps: int
    pass_at_1: Optional[float]
    reached_floor: bool
    losses: List[float] = field(default_factory=list)


def sft_loss(policy: SequencePolicy, grids: Sequence[MazeGrid]) -> Tensor:
    """Gemiddelde next-token cross-entropy over de acties van het grondwaarheidspad."""
    prompts = np.array([tokenize_maze(g) for g in grids], dtype=np.int64)
    targets = [np.asarray(ground_truth_actions(g), dtype=np.int64) for g in grids]
    logp, mask, _ = policy.response_log_probs(prompts, targets)
    return -(logp * (mask / mask.sum())).sum()


def sft_pretrain(
    policy: SequencePolicy,
    source: MazeTaskSource,
    config: TrainConfig,
    sink: Optional[JsonlSink] = None,
) -> SftReport:
    """Supervised pretraining op kortste paden tot heldout pass@1 de ondergrens haalt.

    max_steps = 0 slaat de fase over. Wordt de ondergrens niet gehaald, dan volgt SftFloorNotReached.
    """
    sft = config.sft
    if sft.max_steps == 0:
        get_logger().warning("SFT overgeslagen (max_steps = 0); de policy start ongetraind")
        return SftReport(0, None, False)
    optimizer = build_optimizer(policy.params, config.optimizer, sft.max_steps, lr=sft.lr)
    report = SftReport(0, None, False)
    for step in range(sft.max_steps):
        policy.params.zero_grad()
        loss = sft_loss(policy, source.batch(step, sft.batch_size, stream=STREAM_SFT))
        value = _finite_loss(loss, step)
        loss.backward()
        grad_norm = optimizer.step()
        report.steps = step + 1
        report.losses.append(value)
        record: Dict[str, object] = {"step": step + 1, "phase": "sft", "loss": value, "grad_norm": grad_norm}
        if (step + 1) % sft.eval_every == 0 or step + 1 == sft.max_steps:
            result = evaluate_maze(policy, source.heldout, sft.eval_n, [1], config.seed, step=step + 1)
            report.pass_at_1 = result.pass_at_k[1]
            record["pass@1"] = report.pass_at_1
            get_logger().info("SFT stap %d: loss %.4f, heldout pass@1 %.4f", step + 1, value, report.pass_at_1)
            if report.pass_at_1 >= sft.floor:
                report.reached_floor = True
        if sink is not None:
            sink.write(record)
        if report.reached_floor:
            break
    if not report.reached_floor:
        raise SftFloorNotReached(
            f"SFT haalde pass@1 {report.pass_at_1} na {report.steps} stappen; ondergrens is {sft.floor}. "
            "Verhoog sft.max_steps of verlaag sft.floor."
        )
    # Het RL-deel begint bij stap 0 met een eigen optimizer
    policy.params.step = 0
    return report


def build_task_source(config: TrainConfig):
    if config.task is TaskKind.CLASSIFICATION:
        cls = config.classification
        return ClassificationTaskSource(
            cls.num_classes, cls.feature_dim, cls.difficulty, cls.data_seed, config.eval.heldout_size
        )
    dataset = read_maze_dataset(config.maze.dataset) if config.maze.dataset is not None else None
    return MazeTaskSource(config.maze.side, config.maze.data_seed, config.eval.heldout_size, dataset)


def build_policy_for(config: TrainConfig) -> Policy:
    rng = rng_stream(config.seed, STREAM_INIT)
    if config.task is TaskKind.CLASSIFICATION:
        cls = config.classification
        profile = get_profile(cls.difficulty)
        return PerceptronClassifier.create(
            cls.feature_dim, cls.hidden_dim, cls.num_classes, profile.init_scale, rng, config.seed
        )
    maze = config.maze
    max_len = prompt_length(maze.side) + max_generation_length(maze.side)
    return SequencePolicy.create(
        VOCAB_SIZE, max_len, maze.d_model, maze.n_heads, maze.n_layers, maze.backbone, rng, config.seed
    )


class BatchSchedule:
    """Levert de taken per stap: vers per stap, of epochs over een vaste set met geschudde volgorde."""

    def __init__(self, config: TrainConfig, source):
        self.config = config
        self.source = source
        self.fixed = None
        self.total_steps = config.steps
        regime = config.regime
        if regime.kind is RegimeKind.FIXED_DATASET:
            self.fixed = source.fixed_dataset(regime.dataset_size)
            self.steps_per_epoch = math.ceil(regime.dataset_size / config.tasks_per_batch)
            if regime.num_epochs is not None:
                self.total_steps = regime.num_epochs * self.steps_per_epoch

    def tasks(self, step: int):
        size = self.config.tasks_per_batch
        if self.fixed is None:
            return self.source.batch(step, size)
        epoch, offset = divmod(step, self.steps_per_epoch)
        order = rng_stream(self.config.seed, STREAM_SHUFFLE, epoch).permutation(len(self.fixed))
        idx = order[offset * size:(offset + 1) * size]
        if isinstance(self.fixed, ClassificationTaskSet):
            return self.fixed.subset(idx)
        return [self.fixed[i] for i in idx]


def resolve_run_dir(config: TrainConfig, run_dir: Optional[Path] = None) -> Path:
    if run_dir is not None:
        return run_dir
    if config.run_id:
        return output_root() / config.run_id
    payload = config_to_dict(config)
    payload.pop("run_id", None)
    return output_root() / make_run_id(payload)


def _make_checkpoint(policy: Policy, optimizer: Optimizer, config: TrainConfig, phase: str,
                     train_rollouts: int) -> Checkpoint:
    return Checkpoint(
        step=policy.params.step,
        seed=config.seed,
        phase=phase,
        architecture=policy.architecture(),
        params=dict(policy.params.state_dict()),
        optimizer=optimizer.state_dict(),
        extra={"train_rollouts": train_rollouts},
    )


def restore_policy(ckpt: Checkpoint) -> Policy:
    """Policy met de vormen en waarden uit een checkpoint."""
    policy = build_policy(ckpt.architecture, ckpt.seed)
    policy.params.load_state_dict(ckpt.params)
    policy.params.step = ckpt.step
    return policy


def _truncate_task_gradients(path: Path, step: int) -> None:
    if path.exists():
        df = pd.read_csv(path)
        write_csv(df[df["step"] <= step], path)


@dataclass
class RunResult:
    run_dir: Path
    final_step: int
    records: int
    last_eval: Optional[EvalResult] = None


def run_experiment(
    config: TrainConfig,
    run_dir: Optional[Path] = None,
    resume: bool = False,
    log_rows: Optional[List[Dict[str, str]]] = None,
) -> RunResult:
    """Voer een volledige run uit met manifest, metrics, checkpoints en afronding."""
    logger = get_logger()
    run_dir = resolve_run_dir(config, run_dir)
    if config.run_id is None:
        config = config.model_copy(update={"run_id": run_dir.name})
    if (run_dir / MANIFEST_NAME).exists() and not resume:
        raise ConfigError(f"Run map {run_dir} bestaat al; gebruik --resume of kies een andere run id")

    with RunLock(run_dir):
        handler = attach_run_file_handler(logger, run_dir / "run.log")
        try:
            return _run_locked(config, run_dir, resume, log_rows)
        finally:
            detach_handler(logger, handler)


def _run_locked(config: TrainConfig, run_dir: Path, resume: bool, log_rows) -> RunResult:
    logger = get_logger()
    metrics_path = run_dir / METRICS_JSONL
    if not (run_dir / MANIFEST_NAME).exists():
        dump_resolved_config(config, run_dir)
        write_json(run_dir / MANIFEST_NAME, {
            "run_id": run_dir.name,
            "code_version": __version__,
            "config": config_to_dict(config),
            "seeds": {"seed": config.seed, "data_seed": _data_seed(config)},
            "started_at": utc_timestamp(),
            "outputs": {
                "metrics": METRICS_JSONL,
                "metrics_csv": METRICS_CSV,
                "checkpoints": "checkpoints",
                "config": "config.resolved.yaml",
            },
        })
    logger.info("Run %s gestart in %s", run_dir.name, run_dir)

    source = build_task_source(config)
    policy = build_policy_for(config)
    schedule = BatchSchedule(config, source)
    optimizer = build_optimizer(policy.params, config.optimizer, schedule.total_steps)
    train_rollouts = 0

    latest = latest_checkpoint(run_dir) if resume else None
    if latest is not None:
        ckpt = load_checkpoint(latest)
        policy.params.load_state_dict(ckpt.params)
        policy.params.step = ckpt.step
        optimizer.load_state_dict(ckpt.optimizer)
        train_rollouts = int(ckpt.extra.get("train_rollouts", 0))
        kept = truncate_jsonl_after(metrics_path, ckpt.step)
        _truncate_task_gradients(run_dir / TASK_GRADIENTS, ckpt.step)
        logger.info("Hervat vanaf stap %d (%d metriekregels behouden)", ckpt.step, kept)
    else:
        if metrics_path.exists():
            metrics_path.unlink()
        (run_dir / TASK_GRADIENTS).unlink(missing_ok=True)
        if config.task is TaskKind.MAZE and config.sft.enabled:
            _pretrain(policy, source, config, run_dir)

    last_eval: Optional[EvalResult] = None
    gradients_path = run_dir / TASK_GRADIENTS
    with JsonlSink(metrics_path) as sink, JsonlSink(run_dir / TIMINGS) as timings:
        if policy.params.step == 0:
            last_eval = _evaluate(policy, source, config, 0)
            sink.write(MetricsRecord(step=0, phase="eval").add_eval(last_eval).to_dict())
            _append_task_gradients(gradients_path, _task_gradients(policy, source, config, 0))
        while policy.params.step < schedule.total_steps:
            step = policy.params.step
            started = time.perf_counter()
            record = train_step(policy, optimizer, schedule.tasks(step), config, step)
            train_rollouts += record.train_rollouts
            record.train_rollouts = train_rollouts
            done = policy.params.step
            if done % config.eval.every == 0 or done == schedule.total_steps:
                last_eval = _evaluate(policy, source, config, done)
                record.add_eval(last_eval)
                _append_task_gradients(gradients_path, _task_gradients(policy, source, config, done))
                logger.info(
                    "Stap %d/%d: beloning %.4f, opgelost %.3f, pass@%d %.4f",
                    done, schedule.total_steps, record.train_mean_reward,
                    record.fraction_solved if record.fraction_solved is not None else float("nan"),
                    min(record.pass_at_k), record.pass_at_k[min(record.pass_at_k)],
                )
            sink.write(record.to_dict())
            timings.write({"step": done, "seconds": time.perf_counter() - started, "at": utc_timestamp()})
            if done % config.checkpoint.every == 0 or done == schedule.total_steps:
                save_checkpoint(checkpoint_path(run_dir, done),
                                _make_checkpoint(policy, optimizer, config, "rl", train_rollouts))
                prune_checkpoints(run_dir, config.checkpoint.keep)

    records = read_jsonl(metrics_path)
    write_csv(pd.DataFrame(records), run_dir / METRICS_CSV)
    if log_rows is not None:
        write_csv(pd.DataFrame(log_rows, columns=["Tijd", "Niveau", "Bericht"]), run_dir / RUN_LOG_CSV)
    write_json(run_dir / COMPLETION, {
        "run_id": run_dir.name,
        "status": "ok",
        "final_step": policy.params.step,
        "finished_at": utc_timestamp(),
    })
    logger.info("Run %s afgerond na %d stappen", run_dir.name, policy.params.step)
    return RunResult(run_dir, policy.params.step, len(records), last_eval)


def _data_seed(config: TrainConfig) -> int:
    if config.task is TaskKind.CLASSIFICATION:
        return config.classification.data_seed
    return config.maze.data_seed


def _pretrain(policy: SequencePolicy, source: MazeTaskSource, config: TrainConfig, run_dir: Path) -> None:
    sft_path = run_dir / SFT_CHECKPOINT
    if sft_path.exists():
        ckpt = load_checkpoint(sft_path)
        policy.params.load_state_dict(ckpt.params)
        policy.params.step = 0
        get_logger().info("SFT checkpoint geladen uit %s", sft_path)
        return
    with JsonlSink(run_dir / SFT_METRICS, truncate=True) as sink:
        report = sft_pretrain(policy, source, config, sink)
    if report.steps:
        save_checkpoint(sft_path, Checkpoint(
            step=0, seed=config.seed, phase="sft", architecture=policy.architecture(),
            params=dict(policy.params.state_dict()), extra={"sft_steps": report.steps},
        ))


def _evaluate(policy: Policy, source, config: TrainConfig, step: int) -> EvalResult:
    with no_grad():
        return evaluate(policy, source.heldout, config.eval.n, config.eval.ks, config.seed, step,
                        config.eval.temperature)


def _task_gradients(policy: Policy, source, config: TrainConfig, step: int) -> List[Dict[str, object]]:
    if config.task is not TaskKind.CLASSIFICATION:
        return []
    return task_gradient_rows(policy, source.heldout, config, step)


def _append_task_gradients(path: Path, rows: List[Dict[str, object]]) -> None:
    if not rows:
        return
    new = pd.DataFrame(rows)
    if path.exists():
        new = pd.concat([pd.read_csv(path), new], ignore_index=True)
    write_csv(new, path)
