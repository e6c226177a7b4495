"""Synthetische softmax-classificatie als taak met verifieerbare beloning.

Elke taak is een featurevector x met een correcte klasse y*; de policy is de softmax over de
klasse-logits van een klein netwerk. Features zijn een vast prototype per klasse plus ruis.
"""
from dataclasses import dataclass
from typing import Dict, Iterable, List, Sequence

import numpy as np

from .errors import ConfigError, DomainError, ShapeError
from .utils import STREAM_HELDOUT, STREAM_TRAIN, rng_stream

# Naamruimtes binnen de data-seed
_PROTOTYPE_STREAM = 10
_FIXED_STREAM = 11


@dataclass(frozen=True)
class DifficultyProfile:
    """noise: standaardafwijking van de ruis rond het prototype; init_scale: schaal van de laatste laag."""

    name: str
    noise: float
    init_scale: float


PROFILES: Dict[str, DifficultyProfile] = {
    # Logits starten rond 0, dus pi(y*|x) ~ 1/m
    "uniform-hard": DifficultyProfile("uniform-hard", noise=0.5, init_scale=0.01),
    "noisy-hard": DifficultyProfile("noisy-hard", noise=1.5, init_scale=0.01),
}


def get_profile(name: str) -> DifficultyProfile:
    try:
        return PROFILES[name]
    except KeyError:
        raise ConfigError(f"Onbekend moeilijkheidsprofiel '{name}' (kies uit {', '.join(sorted(PROFILES))})")


@dataclass
class ClassificationTaskSet:
    features: np.ndarray
    labels: np.ndarray
    num_classes: int

    def __post_init__(self) -> None:
        if self.features.ndim != 2 or self.labels.shape != (self.features.shape[0],):
            raise ShapeError(f"Features {self.features.shape} en labels {self.labels.shape} passen niet")

    def __len__(self) -> int:
        return int(self.labels.shape[0])

    def subset(self, indices: Sequence[int]) -> "ClassificationTaskSet":
        idx = np.asarray(indices, dtype=np.int64)
        return ClassificationTaskSet(self.features[idx], self.labels[idx], self.num_classes)


def class_prototypes(num_classes: int, feature_dim: int, seed: int) -> np.ndarray:
    """Vast standaardnormaal prototype per klasse."""
    rng = rng_stream(seed, _PROTOTYPE_STREAM)
    return rng.standard_normal((num_classes, feature_dim))


def _draw_tasks(prototypes: np.ndarray, count: int, noise: float, rng: np.random.Generator) -> ClassificationTaskSet:
    num_classes, feature_dim = prototypes.shape
    labels = rng.integers(num_classes, size=count)
    features = prototypes[labels] + noise * rng.standard_normal((count, feature_dim))
    return ClassificationTaskSet(features, labels.astype(np.int64), num_classes)


def make_classification_dataset(
    num_tasks: int,
    num_classes: int,
    difficulty: str,
    seed: int,
    feature_dim: int = 32,
    split: str = "train",
) -> ClassificationTaskSet:
    """Vaste taakset; train en heldout komen uit gescheiden RNG streams van dezelfde prototypes."""
    if num_tasks < 1:
        raise ConfigError("num_tasks moet >= 1 zijn")
    if num_classes < 2:
        raise ConfigError("Classificatie vereist minstens 2 klassen")
    streams = {"train": _FIXED_STREAM, "heldout": STREAM_HELDOUT}
    if split not in streams:
        raise ConfigError(f"Onbekende split '{split}' (train of heldout)")
    profile = get_profile(difficulty)
    prototypes = class_prototypes(num_classes, feature_dim, seed)
    return _draw_tasks(prototypes, num_tasks, profile.noise, rng_stream(seed, streams[split]))


class ClassificationTaskSource:
    """Verse taken per stap (oneindige-data regime) en een vaste heldout set."""

    def __init__(self, num_classes: int, feature_dim: int, difficulty: str, seed: int, heldout_size: int):
        self.num_classes = num_classes
        self.feature_dim = feature_dim
        self.profile = get_profile(difficulty)
        self.seed = seed
        self.prototypes = class_prototypes(num_classes, feature_dim, seed)
        self.heldout = make_classification_dataset(
            heldout_size, num_classes, difficulty, seed, feature_dim, split="heldout"
        )

    def batch(self, step: int, size: int) -> ClassificationTaskSet:
        return _draw_tasks(self.prototypes, size, self.profile.noise, rng_stream(self.seed, STREAM_TRAIN, step))

    def fixed_dataset(self, size: int) -> ClassificationTaskSet:
        return make_classification_dataset(
            size, self.num_classes, self.profile.name, self.seed, self.feature_dim, split="train"
        )


def correct_class_probabilities(probs: np.ndarray, labels: np.ndarray) -> np.ndarray:
    """pi(y*|x) per taak."""
    probs = np.asarray(probs, dtype=np.float64)
    labels = np.asarray(labels, dtype=np.int64)
    return probs[np.arange(len(labels)), labels]


def classifier_pass_at_k(prob_correct, k: int):
    """Analytische pass@k = 1 - (1 - pi(y*|x))^k; werkt ook op arrays."""
    if int(k) != k or k < 1:
        raise DomainError(f"k moet een positief geheel getal zijn, kreeg {k!r}")
    p = np.asarray(prob_correct, dtype=np.float64)
    if np.any((p < 0.0) | (p > 1.0)):
        raise DomainError("Kans op de correcte klasse moet in [0, 1] liggen")
    result = 1.0 - (1.0 - p) ** int(k)
    return float(result) if result.ndim == 0 else result


def classifier_argmax_accuracy(probs: np.ndarray, labels: np.ndarray) -> float:
    """Fractie taken waarvoor argmax (laagste index bij gelijkspel) gelijk is aan y*."""
    probs = np.asarray(probs, dtype=np.float64)
    if probs.shape[0] == 0:
        raise ShapeError("Lege evaluatieset")
    return float(np.mean(np.argmax(probs, axis=-1) == np.asarray(labels)))


def classifier_coverage(probs: np.ndarray, labels: np.ndarray, ks: Iterable[int]) -> Dict[int, float]:
    """Gemiddelde analytische pass@k per k."""
    p_correct = correct_class_probabilities(probs, labels)
    return {int(k): float(np.mean(classifier_pass_at_k(p_correct, k))) for k in ks}


def sample_classes(probs: np.ndarray, rngs: List[np.random.Generator], n: int) -> np.ndarray:
    """n klassen per taak via inverse-CDF; taak b trekt uit rngs[b]. Vorm (B, n)."""
    probs = np.asarray(probs, dtype=np.float64)
    if len(rngs) != probs.shape[0]:
        raise ShapeError(f"{len(rngs)} RNG streams voor {probs.shape[0]} taken")
    cdf = np.cumsum(probs, axis=-1)
    idx = np.stack([np.searchsorted(row, rng.random(n), side="left") for row, rng in zip(cdf, rngs)])
    return np.minimum(idx, probs.shape[1] - 1)
