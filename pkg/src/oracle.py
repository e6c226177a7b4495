"""Exacte controle van de schatters door uitputtende enumeratie van beloningspatronen.

Voor een Bernoulli-beleid zijn er 2^N patronen; per patroon is de schatter lineair in de scores,
dus g(patroon) = (sum_i c_i r_i) S_succ + (sum_i c_i (1 - r_i)) S_fail. De categorische variant
vervangt S_fail door de voorwaardelijke verwachting over de foute klassen (uitwisselbaarheid),
of telt met raw=True alle m^N klasse-reeksen af.
"""
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np
import pandas as pd

from .autodiff import Tensor, log_softmax
from .errors import DomainError, EnumerationBudgetError, EstimatorError
from .estimators import CvMode, EstimatorVariant, RewardBatch, maxrl_gradient_coefficients
from .logging_setup import get_logger
from .objectives import ObjectiveKind, maxrl_weight, pass_at_k_gradient_coefficient

MAX_ENUMERATION_N = 20
MAX_CATEGORICAL_CLASSES = 6
MAX_CATEGORICAL_N = 12
MAX_RAW_SEQUENCES = 2 ** 20
DEFAULT_TOLERANCE = 1e-10
DEFAULT_P_GRID = (0.01, 0.05, 0.1, 0.25, 0.5, 0.75, 0.9, 0.99)
DEFAULT_FEATURES = (1.0, -0.5, 0.25)

CoefficientFn = Callable[[np.ndarray], np.ndarray]

_logger = get_logger()


@dataclass(frozen=True)
class BernoulliPolicy:
    """Beleid met twee uitkomsten, p = sigmoid(phi . theta), met analytische gradiënten."""

    p: float
    grad_p: np.ndarray
    grad_log_p: np.ndarray

    @classmethod
    def logistic(cls, p: float, features: Sequence[float] = DEFAULT_FEATURES) -> "BernoulliPolicy":
        """Logistisch beleid op pass rate p: grad p = p(1-p) phi, grad log p = (1-p) phi."""
        if not (0.0 <= p <= 1.0):
            raise DomainError(f"Pass rate moet in [0, 1] liggen, kreeg {p}")
        phi = np.asarray(features, dtype=np.float64)
        return cls(p=float(p), grad_p=p * (1.0 - p) * phi, grad_log_p=(1.0 - p) * phi)

    @property
    def score_success(self) -> Optional[np.ndarray]:
        if self.p == 0.0:
            return None
        return self.grad_p / self.p

    @property
    def score_failure(self) -> Optional[np.ndarray]:
        if self.p == 1.0:
            return None
        return -self.grad_p / (1.0 - self.p)


@dataclass
class EnumerationReport:
    n: int
    expected_estimator: np.ndarray
    truncated_target: np.ndarray
    max_abs_error: float
    second_moment: float = math.nan
    variance: float = math.nan
    p: float = math.nan
    label: str = ""
    extra: Dict[str, float] = field(default_factory=dict)


def _check_n(n: int, limit: int = MAX_ENUMERATION_N) -> int:
    if int(n) != n or n < 1:
        raise EnumerationBudgetError(f"N moet een positief geheel getal zijn, kreeg {n!r}")
    if n > limit:
        raise EnumerationBudgetError(f"N = {n} is te groot voor exacte enumeratie (max {limit})")
    return int(n)


def reward_patterns(n: int) -> np.ndarray:
    """Alle 2^N binaire patronen als (2^N, N) matrix, bit i van de index op kolom i."""
    n = _check_n(n)
    codes = np.arange(2 ** n, dtype=np.int64)
    return ((codes[:, None] >> np.arange(n, dtype=np.int64)) & 1).astype(np.float64)


def pattern_probabilities(p: float, patterns: np.ndarray) -> np.ndarray:
    """p^K (1-p)^(N-K) per patroon."""
    n = patterns.shape[1]
    k = patterns.sum(axis=1)
    return np.power(p, k) * np.power(1.0 - p, n - k)


def harmonic_target(p: float, grad_p: np.ndarray, n: int) -> np.ndarray:
    """sum_{k=1..N} (1/k) grad pass@k, expliciet opgeteld."""
    coeff = math.fsum(pass_at_k_gradient_coefficient(p, k) / k for k in range(1, n + 1))
    return coeff * grad_p


def _variant_coefficients(variant: EstimatorVariant, normalization: str = "K") -> CoefficientFn:
    """Coëfficiëntfunctie voor een MaxRL variant; normalization='N' is de negatieve controle."""
    if variant.kind is not ObjectiveKind.MAXRL:
        raise EstimatorError(f"Enumeratie tegen de getrunceerde ML-gradiënt vereist MaxRL, kreeg {variant.kind.value}")
    if normalization not in ("K", "N"):
        raise EstimatorError(f"Onbekende normalisatie '{normalization}' (K of N)")

    def _coeffs(rewards: np.ndarray) -> np.ndarray:
        batch = RewardBatch(rewards)
        coeffs = maxrl_gradient_coefficients(batch, variant)
        if normalization == "N":
            k = batch.successes
            wrong = rewards / batch.n - np.divide(rewards, k, out=np.zeros_like(rewards), where=k > 0)
            coeffs = coeffs + np.where(k > 0, wrong, 0.0)
        return coeffs

    return _coeffs


def _enumerate(
    p: float,
    s_succ: Optional[np.ndarray],
    s_fail: Optional[np.ndarray],
    n: int,
    coefficient_fn: CoefficientFn,
) -> Tuple[np.ndarray, float]:
    """Verwachting en tweede moment van g = a S_succ + b S_fail over alle patronen."""
    patterns = reward_patterns(n)
    probs = pattern_probabilities(p, patterns)
    coeffs = coefficient_fn(patterns)
    a = (coeffs * patterns).sum(axis=1)
    b = (coeffs * (1.0 - patterns)).sum(axis=1)

    # Patronen met kans 0 tellen niet mee
    mask = probs > 0.0
    probs, a, b = probs[mask], a[mask], b[mask]

    dim_source = s_succ if s_succ is not None else s_fail
    zeros = np.zeros_like(dim_source)
    s = s_succ if s_succ is not None else zeros
    f = s_fail if s_fail is not None else zeros

    expected = float(np.dot(probs, a)) * s + float(np.dot(probs, b)) * f
    ss, sf, ff = float(np.dot(s, s)), float(np.dot(s, f)), float(np.dot(f, f))
    second = float(np.dot(probs, a * a * ss + 2.0 * a * b * sf + b * b * ff))
    return expected, second


def _report(
    n: int,
    expected: np.ndarray,
    target: np.ndarray,
    second: float,
    p: float,
    label: str,
) -> EnumerationReport:
    err = float(np.max(np.abs(expected - target))) if expected.size else 0.0
    variance = second - float(np.dot(expected, expected)) if not math.isnan(second) else math.nan
    return EnumerationReport(
        n=n,
        expected_estimator=expected,
        truncated_target=target,
        max_abs_error=err,
        second_moment=second,
        variance=variance,
        p=p,
        label=label,
    )


def enumerate_expectation(
    policy: BernoulliPolicy,
    n: int,
    variant: EstimatorVariant,
    normalization: str = "K",
) -> EnumerationReport:
    """E[g_N] over alle 2^N patronen, vergeleken met sum_{k<=N} (1/k) grad pass@k."""
    n = _check_n(n)
    expected, second = _enumerate(
        policy.p, policy.score_success, policy.score_failure, n, _variant_coefficients(variant, normalization)
    )
    target = harmonic_target(policy.p, policy.grad_p, n)
    return _report(n, expected, target, second, policy.p, variant.label)


def drop_all_target(policy: BernoulliPolicy, n: int) -> np.ndarray:
    """w_{N-1}(p) grad p, met w_0 = 0: de verwachting van de drop_all schatter."""
    if n <= 1:
        return np.zeros_like(policy.grad_p)
    return maxrl_weight(policy.p, n - 1) * policy.grad_p


def reinforce_enumeration(policy: BernoulliPolicy, n: int, baseline: bool = True) -> EnumerationReport:
    """REINFORCE zonder baseline (doel grad p) of met gemiddelde-baseline (doel (1-1/N) grad p)."""
    n = _check_n(n)

    def _coeffs(rewards: np.ndarray) -> np.ndarray:
        if baseline:
            return (rewards - rewards.mean(axis=1, keepdims=True)) / n
        return rewards / n

    expected, second = _enumerate(policy.p, policy.score_success, policy.score_failure, n, _coeffs)
    scale = (1.0 - 1.0 / n) if baseline else 1.0
    label = "reinforce[mean_baseline]" if baseline else "reinforce[plain]"
    return _report(n, expected, scale * policy.grad_p, second, policy.p, label)


def conditional_form_check(policy: BernoulliPolicy) -> float:
    """|E[score | succes] - grad log p| via de twee uitkomsten van het beleid."""
    if policy.p == 0.0:
        raise DomainError("De voorwaardelijke vorm is niet gedefinieerd voor p = 0")
    outcomes = [(policy.p, 1.0, policy.score_success)]
    if policy.score_failure is not None:
        outcomes.append((1.0 - policy.p, 0.0, policy.score_failure))
    weighted = sum(prob * reward * score for prob, reward, score in outcomes)
    conditional = weighted / policy.p
    return float(np.max(np.abs(conditional - policy.grad_log_p)))


def dropped_term_bias(policy: BernoulliPolicy, n: int) -> np.ndarray:
    """E[drop_all] - E[keep_vn_on_failure], door enumeratie.

    Gesloten vorm: -(1-p)^(N-1) grad p (zie dropped_term_bias_closed_form).
    """
    n = _check_n(n)
    drop = enumerate_expectation(policy, n, EstimatorVariant(ObjectiveKind.MAXRL, CvMode.DROP_ALL_ON_FAILURE))
    keep = enumerate_expectation(policy, n, EstimatorVariant(ObjectiveKind.MAXRL, CvMode.KEEP_VN_ON_FAILURE))
    return drop.expected_estimator - keep.expected_estimator


def dropped_term_bias_closed_form(policy: BernoulliPolicy, n: int) -> np.ndarray:
    return -((1.0 - policy.p) ** (n - 1)) * policy.grad_p


def _softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - np.max(logits)
    exp = np.exp(shifted)
    return exp / exp.sum()


def categorical_policy_at(p: float, num_classes: int, correct: int = 0) -> np.ndarray:
    """Logits waarbij de juiste klasse kans p krijgt en de rest uniform verdeeld is."""
    if not (0.0 < p < 1.0):
        raise DomainError(f"Categorisch beleid vereist p in (0, 1), kreeg {p}")
    logits = np.zeros(num_classes, dtype=np.float64)
    logits[correct] = math.log(p * (num_classes - 1) / (1.0 - p))
    return logits


def _check_categorical(logits: np.ndarray, correct: int) -> np.ndarray:
    logits = np.asarray(logits, dtype=np.float64)
    if logits.ndim != 1:
        raise EnumerationBudgetError("Categorische logits moeten een vector zijn")
    m = logits.shape[0]
    if m < 2 or m > MAX_CATEGORICAL_CLASSES:
        raise EnumerationBudgetError(f"m = {m} klassen valt buiten het budget 2..{MAX_CATEGORICAL_CLASSES}")
    if not (0 <= correct < m):
        raise EnumerationBudgetError(f"Juiste klasse {correct} bestaat niet bij m = {m}")
    return logits


def _class_sequences(m: int, n: int) -> np.ndarray:
    """Alle m^N klasse-reeksen als (m^N, N) matrix."""
    total = m ** n
    codes = np.arange(total, dtype=np.int64)
    return (codes[:, None] // (m ** np.arange(n, dtype=np.int64))) % m


def categorical_enumeration(
    logits: Sequence[float],
    correct: int,
    n: int,
    variant: EstimatorVariant,
    raw: bool = False,
) -> EnumerationReport:
    """Enumeratie voor een softmax-beleid over m klassen met één juiste klasse.

    De gradiënt is naar de logits; score(y) = e_y - pi en grad p = pi_c (e_c - pi).
    """
    logits = _check_categorical(logits, correct)
    m = logits.shape[0]
    n = _check_n(n, MAX_ENUMERATION_N if raw else MAX_CATEGORICAL_N)
    pi = _softmax(logits)
    p = float(pi[correct])
    eye = np.eye(m)
    grad_p = p * (eye[correct] - pi)
    target = harmonic_target(p, grad_p, n)
    coeff_fn = _variant_coefficients(variant)

    if not raw:
        s_succ = eye[correct] - pi
        wrong = [y for y in range(m) if y != correct]
        s_fail = sum(pi[y] * (eye[y] - pi) for y in wrong) / (1.0 - p)
        expected, _ = _enumerate(p, s_succ, s_fail, n, coeff_fn)
        report = _report(n, expected, target, math.nan, p, f"categorical[m={m}]:{variant.label}")
        return report

    if m ** n > MAX_RAW_SEQUENCES:
        raise EnumerationBudgetError(f"m^N = {m ** n} reeksen overschrijdt het budget {MAX_RAW_SEQUENCES}")
    seqs = _class_sequences(m, n)
    rewards = (seqs == correct).astype(np.float64)
    probs = np.prod(pi[seqs], axis=1)
    coeffs = coeff_fn(rewards)
    # sum_i c_i (e_{y_i} - pi) per reeks
    grads = np.zeros((seqs.shape[0], m), dtype=np.float64)
    rows = np.repeat(np.arange(seqs.shape[0]), n)
    np.add.at(grads, (rows, seqs.ravel()), coeffs.ravel())
    grads -= coeffs.sum(axis=1, keepdims=True) * pi
    expected = probs @ grads
    second = float(probs @ np.einsum("ij,ij->i", grads, grads))
    return _report(n, expected, target, second, p, f"categorical_raw[m={m}]:{variant.label}")


def categorical_conditional_form_check(logits: Sequence[float], correct: int) -> float:
    """|E[score | succes] - grad log pi_c|, met grad log pi_c uit de autodiff log-softmax."""
    logits = _check_categorical(logits, correct)
    m = logits.shape[0]
    pi = _softmax(logits)
    eye = np.eye(m)
    # E[r score] / p, met r = 1 alleen voor de juiste klasse
    conditional = sum(pi[y] * float(y == correct) * (eye[y] - pi) for y in range(m)) / pi[correct]

    theta = Tensor(logits, requires_grad=True)
    log_pi = log_softmax(theta, axis=-1)
    log_pi[correct].backward()
    return float(np.max(np.abs(conditional - theta.grad)))


def _row(check: str, label: str, p: float, n: Optional[int], report_err: float, tolerance: float,
         expected_norm: float = math.nan, target_norm: float = math.nan,
         second: float = math.nan, variance: float = math.nan) -> Dict[str, object]:
    return {
        "check": check,
        "variant": label,
        "p": p,
        "N": n,
        "expected_norm": expected_norm,
        "target_norm": target_norm,
        "max_abs_error": report_err,
        "second_moment": second,
        "variance": variance,
        "tolerance": tolerance,
        "passed": bool(report_err < tolerance),
    }


def _report_row(check: str, report: EnumerationReport, target: np.ndarray, tolerance: float) -> Dict[str, object]:
    err = float(np.max(np.abs(report.expected_estimator - target))) if target.size else 0.0
    return _row(
        check, report.label, report.p, report.n, err, tolerance,
        expected_norm=float(np.linalg.norm(report.expected_estimator)),
        target_norm=float(np.linalg.norm(target)),
        second=report.second_moment,
        variance=report.variance,
    )


def default_variants() -> List[EstimatorVariant]:
    return [
        EstimatorVariant(ObjectiveKind.MAXRL, CvMode.NONE),
        EstimatorVariant(ObjectiveKind.MAXRL, CvMode.KEEP_VN_ON_FAILURE),
        EstimatorVariant(ObjectiveKind.MAXRL, CvMode.DROP_ALL_ON_FAILURE),
    ]


def parse_variant(text: str) -> EstimatorVariant:
    """'maxrl:none', 'maxrl:keep_vn_on_failure', 'maxrl' (drop_all) of 'reinforce'."""
    kind, _, mode = text.partition(":")
    try:
        if mode:
            return EstimatorVariant(ObjectiveKind(kind.strip()), CvMode(mode.strip()))
        return EstimatorVariant(ObjectiveKind(kind.strip()))
    except ValueError as exc:
        raise EstimatorError(f"Onbekende variant '{text}': {exc}")


def run_oracle_grid(
    p_values: Sequence[float] = DEFAULT_P_GRID,
    n_range: Sequence[int] = tuple(range(1, 13)),
    variants: Optional[Sequence[EstimatorVariant]] = None,
    tolerance: float = DEFAULT_TOLERANCE,
    inject_normalization: str = "K",
    categorical_classes: Sequence[int] = (3,),
) -> pd.DataFrame:
    """Bouw het oracle-rapport: één rij per (controle, variant, p, N) in vaste volgorde."""
    variants = list(variants) if variants is not None else default_variants()
    rows: List[Dict[str, object]] = []

    for p in p_values:
        policy = BernoulliPolicy.logistic(float(p))
        rows.append(_row("conditional_form", "bernoulli", float(p), None, conditional_form_check(policy), tolerance))
        for m in categorical_classes:
            logits = categorical_policy_at(float(p), m)
            err = categorical_conditional_form_check(logits, 0)
            rows.append(_row("conditional_form", f"categorical[m={m}]", float(p), None, err, tolerance))

        for n in n_range:
            for variant in variants:
                if variant.kind is ObjectiveKind.REINFORCE:
                    for baseline in (False, True):
                        report = reinforce_enumeration(policy, n, baseline)
                        rows.append(_report_row("reinforce", report, report.truncated_target, tolerance))
                    continue
                report = enumerate_expectation(policy, n, variant, inject_normalization)
                if variant.cv_mode is CvMode.DROP_ALL_ON_FAILURE:
                    rows.append(_report_row("drop_all_equivalence", report, drop_all_target(policy, n), tolerance))
                else:
                    rows.append(_report_row("truncated_ml_gradient", report, report.truncated_target, tolerance))

            gap = dropped_term_bias(policy, n)
            gap_err = float(np.max(np.abs(gap - dropped_term_bias_closed_form(policy, n))))
            rows.append(_row("dropped_term_bias", "maxrl", float(p), n, gap_err, tolerance,
                             expected_norm=float(np.linalg.norm(gap))))

            for m in categorical_classes:
                if n > MAX_CATEGORICAL_N:
                    continue
                logits = categorical_policy_at(float(p), m)
                for variant in variants:
                    if variant.kind is not ObjectiveKind.MAXRL or variant.cv_mode is CvMode.DROP_ALL_ON_FAILURE:
                        continue
                    report = categorical_enumeration(logits, 0, n, variant)
                    rows.append(_report_row("categorical_truncated_ml_gradient", report, report.truncated_target, tolerance))

    frame = pd.DataFrame(rows)
    frame["N"] = frame["N"].astype("Int64")
    failed = int((~frame["passed"]).sum())
    _logger.info("Oracle: %d cellen, %d boven tolerantie %.1e", len(frame), failed, tolerance)
    return frame
