"""Gesloten-vorm functies van de pass rate: doelfuncties, truncaties, pass@k en gewichtsfuncties.

Alle functies zijn puur en rekenen in 64-bit floats. De MaxRL(T) familie is de orde-T
afkapping van de Maclaurin-reeks van log p in termen van fail@k:

    J_T(p) = -sum_{k=1..T} (1-p)^k / k,       w_T(p) = (1 - (1-p)^T) / p.

T = 1 geeft verwachte beloning, T -> oneindig geeft maximum likelihood.
"""
import math
from enum import Enum
from typing import Iterable, List, Optional, Sequence, Union

import numpy as np
import pandas as pd

from .errors import DomainError

INFINITE_ORDER = math.inf
SMALL_P_THRESHOLD = 1e-8
_MAX_EXPLICIT_SUM_ORDER = 10_000

Order = Union[int, float]


class ObjectiveKind(str, Enum):
    """Doelfuncties die het lab kent; bepaalt gewicht- en advantage-regels."""

    REINFORCE = "reinforce"
    RLOO = "rloo"
    GRPO = "grpo"
    MAXRL = "maxrl"
    EXACT_ML = "exact_ml"

    @property
    def is_sample_based(self) -> bool:
        return self is not ObjectiveKind.EXACT_ML


def check_pass_rate(p: float) -> float:
    """Valideer een pass rate en geef hem terug als float."""
    value = float(p)
    if not (0.0 <= value <= 1.0) or math.isnan(value):
        raise DomainError(f"Pass rate moet in [0, 1] liggen, kreeg {p!r}")
    return value


def check_order(order: Optional[Order]) -> Order:
    """Valideer een truncatie-orde T (positief geheel getal of INFINITE_ORDER)."""
    if order is None or order == INFINITE_ORDER:
        return INFINITE_ORDER
    if isinstance(order, float) and not order.is_integer():
        raise DomainError(f"Truncatie-orde moet een geheel getal zijn, kreeg {order!r}")
    value = int(order)
    if value < 1:
        raise DomainError(f"Truncatie-orde moet >= 1 zijn, kreeg {order!r}")
    return value


def _check_k(k: int) -> int:
    if int(k) != k or k < 1:
        raise DomainError(f"k moet een positief geheel getal zijn, kreeg {k!r}")
    return int(k)


def fail_at_k(p: float, k: int) -> float:
    """Kans dat k onafhankelijke samples allemaal falen: (1-p)^k."""
    p = check_pass_rate(p)
    k = _check_k(k)
    return (1.0 - p) ** k


def pass_at_k(p: float, k: int) -> float:
    """Kans op minstens één correct sample uit k: 1 - (1-p)^k."""
    return 1.0 - fail_at_k(p, k)


def pass_at_k_gradient_coefficient(p: float, k: int) -> float:
    """Factor c zodat grad pass@k = c * grad p, namelijk k (1-p)^(k-1)."""
    p = check_pass_rate(p)
    k = _check_k(k)
    return k * (1.0 - p) ** (k - 1)


def _geometric_weight(p: float, order: int) -> float:
    """sum_{k=1..T} (1-p)^(k-1), vaste optelvolgorde."""
    q = 1.0 - p
    return math.fsum(q ** j for j in range(order))


def maxrl_weight(p: float, order: Optional[Order]) -> float:
    """w_T(p) = (1 - (1-p)^T) / p met de ophefbare singulariteit w_T(0) = T."""
    p = check_pass_rate(p)
    order = check_order(order)
    if order == INFINITE_ORDER:
        if p == 0.0:
            raise DomainError("w_ML(p) = 1/p is niet gedefinieerd voor p = 0")
        return 1.0 / p
    if p == 0.0:
        return float(order)
    if p < SMALL_P_THRESHOLD and order <= _MAX_EXPLICIT_SUM_ORDER:
        return _geometric_weight(p, order)
    # -expm1(T log1p(-p)) = 1 - (1-p)^T zonder cancellation
    return -math.expm1(order * math.log1p(-p)) / p if p < 1.0 else 1.0


def weight(kind: ObjectiveKind, p: float, order: Optional[Order] = None) -> float:
    """Populatie-gewicht w(p) in grad J = E[w(p) grad p]."""
    kind = ObjectiveKind(kind)
    p = check_pass_rate(p)
    if kind in (ObjectiveKind.REINFORCE, ObjectiveKind.RLOO):
        return 1.0
    if kind is ObjectiveKind.GRPO:
        if p <= 0.0 or p >= 1.0:
            raise DomainError(f"w_GRPO is singulier in p = {p}")
        return 1.0 / math.sqrt(p * (1.0 - p))
    if kind is ObjectiveKind.EXACT_ML:
        if p == 0.0:
            raise DomainError("w_ML(p) = 1/p is niet gedefinieerd voor p = 0")
        return 1.0 / p
    return maxrl_weight(p, order)


def harmonic_mixture_weight(p: float, order: int) -> float:
    """sum_{k=1..T} (1/k) * k(1-p)^(k-1): het gewicht van de harmonische pass@k mengeling."""
    order = check_order(order)
    if order == INFINITE_ORDER:
        raise DomainError("De harmonische mengeling wordt alleen voor eindige T expliciet opgeteld")
    return math.fsum(pass_at_k_gradient_coefficient(p, k) / k for k in range(1, order + 1))


def truncated_objective(p: float, order: int) -> float:
    """J_T(p) = -sum_{k=1..T} (1-p)^k / k, eindig ook in p = 0."""
    p = check_pass_rate(p)
    order = check_order(order)
    if order == INFINITE_ORDER:
        return log_likelihood(p)
    q = 1.0 - p
    return -math.fsum(q ** k / k for k in range(1, order + 1))


def log_likelihood(p: float) -> float:
    """log p; p = 0 geeft een DomainError in plaats van -inf."""
    p = check_pass_rate(p)
    if p == 0.0:
        raise DomainError("log p is niet gedefinieerd voor p = 0 (ExactML)")
    return math.log(p)


def objective_value(kind: ObjectiveKind, p: float, order: Optional[Order] = None) -> float:
    """Waarde van de doelfunctie per taak als functie van de pass rate."""
    kind = ObjectiveKind(kind)
    p = check_pass_rate(p)
    if kind in (ObjectiveKind.REINFORCE, ObjectiveKind.RLOO):
        return p
    if kind is ObjectiveKind.GRPO:
        # Primitieve van 1/sqrt(p(1-p))
        return 2.0 * math.asin(math.sqrt(p))
    if kind is ObjectiveKind.EXACT_ML:
        return log_likelihood(p)
    return truncated_objective(p, check_order(order))


def maclaurin_remainder_bound(p: float, order: int) -> float:
    """Bovengrens (1-p)^(T+1) / ((T+1) p) op |J_T(p) - log p|."""
    p = check_pass_rate(p)
    order = check_order(order)
    if p == 0.0:
        return math.inf
    if order == INFINITE_ORDER:
        return 0.0
    return (1.0 - p) ** (order + 1) / ((order + 1) * p)


def truncated_gradient_weight_identity_check(p: float, order: int, tol: float = 1e-12) -> bool:
    """Controleer sum_{k=1..T} (1-p)^(k-1) == (1-(1-p)^T)/p binnen tol (limiet T bij p = 0)."""
    p = check_pass_rate(p)
    order = check_order(order)
    if order == INFINITE_ORDER:
        raise DomainError("De identiteit wordt alleen voor eindige T gecontroleerd")
    lhs = _geometric_weight(p, order)
    rhs = maxrl_weight(p, order)
    return abs(lhs - rhs) <= tol * max(1.0, abs(lhs))


def p_grid(points: int = 1000, low: float = 0.001, high: float = 0.999) -> np.ndarray:
    """Gelijkmatig p-rooster op [low, high]."""
    if points < 2:
        raise DomainError("Een p-rooster heeft minstens 2 punten nodig")
    if not (0.0 < low < high < 1.0):
        raise DomainError(f"Ongeldig p-interval ({low}, {high})")
    return np.linspace(low, high, points)


def weight_column_name(kind: ObjectiveKind, order: Optional[Order] = None) -> str:
    """Stabiele kolomnaam voor de gewichten-CSV."""
    kind = ObjectiveKind(kind)
    if kind is ObjectiveKind.MAXRL:
        return f"w_MaxRL_T{int(order)}"
    return {
        ObjectiveKind.REINFORCE: "w_RL",
        ObjectiveKind.RLOO: "w_RL",
        ObjectiveKind.GRPO: "w_GRPO",
        ObjectiveKind.EXACT_ML: "w_ML",
    }[kind]


def weights_table(grid: Iterable[float], orders: Sequence[int]) -> pd.DataFrame:
    """Tabel (p, w_RL, w_GRPO, w_MaxRL_T.. per T, w_ML) over een p-rooster."""
    checked_orders: List[int] = [int(check_order(t)) for t in orders]
    rows = []
    for p in grid:
        p = float(p)
        row = {
            "p": p,
            "w_RL": weight(ObjectiveKind.REINFORCE, p),
            "w_GRPO": weight(ObjectiveKind.GRPO, p),
        }
        for order in checked_orders:
            row[weight_column_name(ObjectiveKind.MAXRL, order)] = weight(ObjectiveKind.MAXRL, p, order)
        row["w_ML"] = weight(ObjectiveKind.EXACT_ML, p)
        rows.append(row)
    return pd.DataFrame(rows)
