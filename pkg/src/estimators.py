"""Advantage- en coëfficiëntregels per doelfunctie.

Elke methode verschilt alleen in de scalar die de score S_i van rollout i vermenigvuldigt.
Alle regels werken op de laatste as van een beloningsmatrix van vorm (..., N), zodat dezelfde
functies per taak, per batch en over alle 2^N patronen van het oracle draaien.
"""
from dataclasses import dataclass
from enum import Enum
from typing import Sequence, Union

import numpy as np

from .errors import EstimatorError, ShapeError
from .objectives import ObjectiveKind

DEFAULT_EPS = 1e-6

ArrayLike = Union[Sequence[float], np.ndarray]


class CvMode(str, Enum):
    """Behandeling van de controlevariabele V_N in de MaxRL schatter."""

    NONE = "none"
    KEEP_VN_ON_FAILURE = "keep_vn_on_failure"
    DROP_ALL_ON_FAILURE = "drop_all_on_failure"


@dataclass(frozen=True)
class EstimatorVariant:
    kind: ObjectiveKind
    cv_mode: CvMode = CvMode.DROP_ALL_ON_FAILURE

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        object.__setattr__(self, "cv_mode", CvMode(self.cv_mode))
        if self.kind is not ObjectiveKind.MAXRL and self.cv_mode is not CvMode.DROP_ALL_ON_FAILURE:
            raise EstimatorError(f"cv_mode '{self.cv_mode.value}' geldt alleen voor MaxRL")

    @property
    def label(self) -> str:
        if self.kind is ObjectiveKind.MAXRL:
            return f"{self.kind.value}[{self.cv_mode.value}]"
        return self.kind.value


class RewardBatch:
    """Binaire beloningen van N rollouts per taak, eventueel met voorloop-assen."""

    def __init__(self, rewards: ArrayLike):
        arr = np.asarray(rewards, dtype=np.float64)
        if arr.ndim == 0:
            raise ShapeError("RewardBatch verwacht minstens één rollout-as")
        if arr.shape[-1] < 1:
            raise ShapeError("RewardBatch heeft N >= 1 nodig")
        if not np.all((arr == 0.0) | (arr == 1.0)):
            raise EstimatorError("Beloningen moeten 0 of 1 zijn")
        self.rewards = arr

    @property
    def n(self) -> int:
        return int(self.rewards.shape[-1])

    @property
    def successes(self) -> np.ndarray:
        """K per taak, met behouden as voor broadcasting."""
        return self.rewards.sum(axis=-1, keepdims=True)

    @property
    def mean(self) -> np.ndarray:
        return self.successes / self.n

    @property
    def std(self) -> np.ndarray:
        """Populatie-standaardafwijking sqrt(mu(1-mu))."""
        mu = self.mean
        return np.sqrt(mu * (1.0 - mu))

    def __len__(self) -> int:
        return self.n

    def __repr__(self) -> str:
        return f"RewardBatch(shape={self.rewards.shape})"


def _as_batch(batch: Union[RewardBatch, ArrayLike]) -> RewardBatch:
    return batch if isinstance(batch, RewardBatch) else RewardBatch(batch)


def _safe_divide(numerator: np.ndarray, denominator: np.ndarray) -> np.ndarray:
    """numerator / denominator, met 0 waar de noemer 0 is."""
    num, den = np.broadcast_arrays(numerator, denominator)
    out = np.zeros(num.shape, dtype=np.float64)
    np.divide(num, den, out=out, where=den != 0.0)
    return out


def advantages(
    batch: Union[RewardBatch, ArrayLike],
    variant: EstimatorVariant,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Advantage per rollout volgens de regel van de gekozen doelfunctie."""
    batch = _as_batch(batch)
    if eps < 0:
        raise EstimatorError(f"eps moet >= 0 zijn, kreeg {eps}")
    r = batch.rewards
    n = batch.n
    mu = batch.mean
    kind = variant.kind

    if kind is ObjectiveKind.EXACT_ML:
        raise EstimatorError("ExactML is niet sample-gebaseerd; gebruik het exacte gradiëntpad")
    if kind is ObjectiveKind.REINFORCE:
        return r - mu
    if kind is ObjectiveKind.RLOO:
        if n < 2:
            raise EstimatorError("RLOO vereist N >= 2")
        return r - (batch.successes - r) / (n - 1)
    if kind is ObjectiveKind.GRPO:
        return _safe_divide(r - mu, batch.std + eps)
    # MaxRL: nulvector bij K = 0
    solved = batch.successes > 0
    adv = _safe_divide(r - mu, mu + eps)
    return np.where(solved, adv, 0.0)


def maxrl_gradient_coefficients(
    batch: Union[RewardBatch, ArrayLike],
    variant: EstimatorVariant,
) -> np.ndarray:
    """Coëfficiënt c_i bij score S_i voor de MaxRL schatter in elk cv_mode."""
    batch = _as_batch(batch)
    if variant.kind is not ObjectiveKind.MAXRL:
        raise EstimatorError(f"maxrl_gradient_coefficients vereist MaxRL, kreeg {variant.kind.value}")
    r = batch.rewards
    n = batch.n
    k = batch.successes
    solved = k > 0
    conditional = _safe_divide(r, k)

    if variant.cv_mode is CvMode.NONE:
        return np.where(solved, conditional, 0.0)
    with_cv = conditional - 1.0 / n
    if variant.cv_mode is CvMode.KEEP_VN_ON_FAILURE:
        return np.where(solved, with_cv, -1.0 / n)
    return np.where(solved, with_cv, 0.0)


def loss_coefficients(
    batch: Union[RewardBatch, ArrayLike],
    variant: EstimatorVariant,
    eps: float = DEFAULT_EPS,
) -> np.ndarray:
    """Coëfficiënten waarmee de trainer log-kansen per rollout vermenigvuldigt.

    Voor alle methoden is dat advantage / N; MaxRL zonder drop_all gebruikt de exacte
    coëfficiënten van maxrl_gradient_coefficients.
    """
    batch = _as_batch(batch)
    if variant.kind is ObjectiveKind.MAXRL and variant.cv_mode is not CvMode.DROP_ALL_ON_FAILURE:
        return maxrl_gradient_coefficients(batch, variant)
    return advantages(batch, variant, eps) / batch.n


def task_gradient(coeffs: ArrayLike, scores: ArrayLike) -> np.ndarray:
    """sum_i c_i S_i in vaste volgorde i = 0..N-1."""
    c = np.asarray(coeffs, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if c.ndim != 1:
        raise ShapeError(f"Coëfficiënten per taak moeten 1-dimensionaal zijn, kreeg vorm {c.shape}")
    if s.ndim == 0 or s.shape[0] != c.shape[0]:
        raise ShapeError(f"{c.shape[0]} coëfficiënten tegenover scores met vorm {s.shape}")
    total = np.zeros(s.shape[1:], dtype=np.float64)
    for ci, si in zip(c, s):
        total += ci * si
    return total


def batch_gradient(coeffs: ArrayLike, scores: ArrayLike) -> np.ndarray:
    """Gemiddelde van task_gradient over |B| taken.

    Een 1-dimensionale coëfficiëntvector geldt als één taak.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    s = np.asarray(scores, dtype=np.float64)
    if c.ndim == 1:
        return task_gradient(c, s)
    if c.ndim != 2:
        raise ShapeError(f"Coëfficiënten moeten vorm (B, N) hebben, kreeg {c.shape}")
    if s.shape[:2] != c.shape:
        raise ShapeError(f"Scores met vorm {s.shape} passen niet bij coëfficiënten {c.shape}")
    total = np.zeros(s.shape[2:], dtype=np.float64)
    for task_coeffs, task_scores in zip(c, s):
        total += task_gradient(task_coeffs, task_scores)
    return total / c.shape[0]
