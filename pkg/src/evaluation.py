"""pass@k schatting en evaluatie van classifier en doolhof-policy op een heldout set."""
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence

import numpy as np

from .classification import (
    ClassificationTaskSet,
    classifier_argmax_accuracy,
    classifier_coverage,
    correct_class_probabilities,
    sample_classes,
)
from .errors import DomainError, ShapeError
from .logging_setup import get_logger
from .maze import MazeGrid, STOP_TOKENS, Token, check_path, max_generation_length, tokenize_maze
from .utils import STREAM_EVAL, chunk_indices, rng_stream

ROLLOUT_CHUNK = 128


def pass_at_k_estimate(n: int, c: int, k: int) -> float:
    """Onvertekende pass@k uit c successen in n samples: 1 - prod_{i<k} (n-c-i)/(n-i)."""
    if n < 1 or not 0 <= c <= n:
        raise DomainError(f"Ongeldige telling c={c} bij n={n}")
    if k < 1:
        raise DomainError(f"k moet >= 1 zijn, kreeg {k}")
    if k > n:
        raise DomainError(f"k={k} is groter dan het aantal samples n={n}")
    if n - c < k:
        return 1.0
    fail = 1.0
    for i in range(k):
        fail *= (n - c - i) / (n - i)
    return 1.0 - fail


def mean_pass_at_k(counts: Sequence[int], n: int, ks: Sequence[int]) -> Dict[int, float]:
    """Gemiddelde pass_at_k_estimate over taken, per k."""
    counts = [int(c) for c in counts]
    return {int(k): float(np.mean([pass_at_k_estimate(n, c, k) for c in counts])) for k in ks}


@dataclass
class EvalResult:
    pass_at_k: Dict[int, float]
    mean_pass_rate: float
    num_tasks: int
    n: Optional[int] = None
    argmax_accuracy: Optional[float] = None
    mean_response_length: Optional[float] = None
    malformed_fraction: Optional[float] = None
    entropy: Optional[float] = None
    per_task: Dict[str, List[float]] = field(default_factory=dict)

    def to_dict(self) -> Dict[str, object]:
        payload: Dict[str, object] = {
            "num_tasks": self.num_tasks,
            "n": self.n,
            "mean_pass_rate": self.mean_pass_rate,
            "argmax_accuracy": self.argmax_accuracy,
            "mean_response_length": self.mean_response_length,
            "malformed_fraction": self.malformed_fraction,
            "entropy": self.entropy,
        }
        for k, value in sorted(self.pass_at_k.items()):
            payload[f"pass@{k}"] = value
        return payload


def evaluate_classifier(policy, tasks: ClassificationTaskSet, ks: Sequence[int]) -> EvalResult:
    """Analytische evaluatie: pass@k = 1 - (1 - pi(y*|x))^k zonder sampling."""
    if len(tasks) == 0:
        raise ShapeError("Lege heldout set")
    probs = policy.probabilities(tasks.features)
    p_correct = correct_class_probabilities(probs, tasks.labels)
    return EvalResult(
        pass_at_k=classifier_coverage(probs, tasks.labels, ks),
        mean_pass_rate=float(np.mean(p_correct)),
        num_tasks=len(tasks),
        argmax_accuracy=classifier_argmax_accuracy(probs, tasks.labels),
        per_task={"pass_rate": p_correct.tolist()},
    )


def evaluate_classifier_sampled(
    policy, tasks: ClassificationTaskSet, n: int, ks: Sequence[int], seed: int, step: int = 0
) -> EvalResult:
    """Sample-gebaseerde evaluatie van de classifier (controle op de analytische waarde)."""
    if len(tasks) == 0:
        raise ShapeError("Lege heldout set")
    probs = policy.probabilities(tasks.features)
    rngs = [rng_stream(seed, STREAM_EVAL, step, b) for b in range(len(tasks))]
    classes = sample_classes(probs, rngs, n)
    counts = (classes == tasks.labels[:, None]).sum(axis=1)
    return EvalResult(
        pass_at_k=mean_pass_at_k(counts, n, ks),
        mean_pass_rate=float(np.mean(counts / n)),
        num_tasks=len(tasks),
        n=n,
        argmax_accuracy=classifier_argmax_accuracy(probs, tasks.labels),
        per_task={"successes": counts.astype(float).tolist()},
    )


@dataclass
class MazeRollouts:
    """N rollouts voor elk van B doolhoven; arrays met vorm (B, N), responses rij-voor-rij."""

    prompt: np.ndarray
    responses: List[List[np.ndarray]]
    rewards: np.ndarray
    malformed: np.ndarray
    lengths: np.ndarray
    entropy_sum: np.ndarray

    @property
    def total_tokens(self) -> int:
        return int(self.lengths.sum())


def rollout_mazes(
    policy,
    grids: Sequence[MazeGrid],
    n: int,
    seed: int,
    stream: int,
    step: int,
    temperature: float = 1.0,
) -> MazeRollouts:
    """Sample n antwoorden per doolhof; rollout (b, i) trekt uit rng_stream(seed, stream, step, b, i)."""
    if not grids:
        raise ShapeError("Geen doolhoven om rollouts voor te maken")
    side = grids[0].side
    if any(g.side != side for g in grids):
        raise ShapeError("Alle doolhoven in een batch moeten dezelfde zijde hebben")
    prompts = np.array([tokenize_maze(g) for g in grids], dtype=np.int64)
    num = len(grids)
    rows = [(b, i) for b in range(num) for i in range(n)]
    max_new = max_generation_length(side)
    responses: List[List[np.ndarray]] = [[None] * n for _ in range(num)]
    entropy = np.zeros((num, n))
    for chunk in chunk_indices(len(rows), ROLLOUT_CHUNK):
        chunk_rows = [rows[j] for j in chunk]
        result = policy.sample(
            prompts[[b for b, _ in chunk_rows]],
            max_new,
            [rng_stream(seed, stream, step, b, i) for b, i in chunk_rows],
            temperature=temperature,
            stop_ids=STOP_TOKENS,
            pad_id=int(Token.PAD),
        )
        for (b, i), tokens, ent in zip(chunk_rows, result.tokens, result.entropy_sum):
            responses[b][i] = tokens
            entropy[b, i] = ent
    rewards = np.zeros((num, n))
    malformed = np.zeros((num, n), dtype=bool)
    lengths = np.zeros((num, n), dtype=np.int64)
    for b, grid in enumerate(grids):
        for i, tokens in enumerate(responses[b]):
            outcome = check_path(grid, tokens)
            rewards[b, i] = outcome.reward
            malformed[b, i] = outcome.malformed
            lengths[b, i] = len(tokens)
    return MazeRollouts(prompts, responses, rewards, malformed, lengths, entropy)


def evaluate_maze(
    policy,
    grids: Sequence[MazeGrid],
    n: int,
    ks: Sequence[int],
    seed: int,
    step: int = 0,
    temperature: float = 1.0,
) -> EvalResult:
    if not grids:
        raise ShapeError("Lege heldout set")
    if n < max(ks):
        raise DomainError(f"n={n} is kleiner dan max(ks)={max(ks)}")
    rollouts = rollout_mazes(policy, grids, n, seed, STREAM_EVAL, step, temperature)
    counts = rollouts.rewards.sum(axis=1).astype(int)
    total = max(rollouts.total_tokens, 1)
    return EvalResult(
        pass_at_k=mean_pass_at_k(counts, n, ks),
        mean_pass_rate=float(rollouts.rewards.mean()),
        num_tasks=len(grids),
        n=n,
        mean_response_length=float(rollouts.lengths.mean()),
        malformed_fraction=float(rollouts.malformed.mean()),
        entropy=float(rollouts.entropy_sum.sum() / total),
        per_task={"successes": counts.astype(float).tolist()},
    )


def evaluate(policy, heldout, n: int, ks: Sequence[int], seed: int, step: int = 0,
             temperature: float = 1.0, sampled: bool = False) -> EvalResult:
    """Kies het evaluatiepad op basis van het type heldout set."""
    if isinstance(heldout, ClassificationTaskSet):
        if sampled:
            return evaluate_classifier_sampled(policy, heldout, n, ks, seed, step)
        return evaluate_classifier(policy, heldout, ks)
    grids = list(heldout)
    if not grids:
        raise ShapeError("Lege heldout set")
    result = evaluate_maze(policy, grids, n, ks, seed, step, temperature)
    get_logger().debug("Evaluatie stap %d: pass@1 %.4f", step, result.pass_at_k.get(1, float("nan")))
    return result
