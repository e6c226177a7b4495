import numpy as np
import pytest

from src.errors import EnumerationBudgetError, EstimatorError
from src.estimators import CvMode, EstimatorVariant
from src.objectives import ObjectiveKind
from src.oracle import (
    BernoulliPolicy,
    categorical_enumeration,
    categorical_policy_at,
    conditional_form_check,
    dropped_term_bias,
    dropped_term_bias_closed_form,
    enumerate_expectation,
    parse_variant,
    reinforce_enumeration,
    reward_patterns,
    run_oracle_grid,
)

KEEP = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.KEEP_VN_ON_FAILURE)
NONE = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.NONE)
DROP = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.DROP_ALL_ON_FAILURE)


def test_reward_patterns_enumerate_all_bit_strings():
    patterns = reward_patterns(3)
    assert patterns.shape == (8, 3)
    assert len({tuple(row) for row in patterns}) == 8


@pytest.mark.parametrize("variant", [KEEP, NONE])
@pytest.mark.parametrize("n", [1, 2, 5, 9])
@pytest.mark.parametrize("p", [0.05, 0.5, 0.9])
def test_estimator_is_unbiased_for_truncated_gradient(p, n, variant):
    report = enumerate_expectation(BernoulliPolicy.logistic(p), n, variant)
    assert report.max_abs_error < 1e-10


def test_control_variate_reduces_variance_at_low_pass_rate():
    policy = BernoulliPolicy.logistic(0.1)
    with_cv = enumerate_expectation(policy, 8, KEEP)
    without = enumerate_expectation(policy, 8, NONE)
    assert with_cv.variance < without.variance


@pytest.mark.parametrize("n", [1, 2, 4, 8])
@pytest.mark.parametrize("p", [0.1, 0.5, 0.8])
def test_dropped_term_bias_closed_form(p, n):
    policy = BernoulliPolicy.logistic(p)
    gap = dropped_term_bias(policy, n)
    np.testing.assert_allclose(gap, dropped_term_bias_closed_form(policy, n), atol=1e-12)
    # Zelfde richting als -grad p
    assert np.dot(gap, policy.grad_p) < 0


def test_normalization_by_n_is_detected_for_n_at_least_two():
    policy = BernoulliPolicy.logistic(0.3)
    assert enumerate_expectation(policy, 1, KEEP, normalization="N").max_abs_error < 1e-10
    for n in (2, 3, 6):
        assert enumerate_expectation(policy, n, KEEP, normalization="N").max_abs_error > 1e-6


def test_reinforce_targets():
    policy = BernoulliPolicy.logistic(0.4)
    assert reinforce_enumeration(policy, 5, baseline=False).max_abs_error < 1e-12
    assert reinforce_enumeration(policy, 5, baseline=True).max_abs_error < 1e-12


def test_conditional_form_holds():
    assert conditional_form_check(BernoulliPolicy.logistic(0.37)) < 1e-12


@pytest.mark.parametrize("m", [2, 3, 4])
def test_categorical_reduced_and_raw_enumeration_agree(m):
    logits = categorical_policy_at(0.3, m)
    reduced = categorical_enumeration(logits, 0, 3, KEEP)
    raw = categorical_enumeration(logits, 0, 3, KEEP, raw=True)
    assert reduced.max_abs_error < 1e-10
    assert raw.max_abs_error < 1e-10
    np.testing.assert_allclose(reduced.expected_estimator, raw.expected_estimator, atol=1e-12)


def test_enumeration_budget():
    with pytest.raises(EnumerationBudgetError):
        reward_patterns(21)
    with pytest.raises(EnumerationBudgetError):
        categorical_enumeration(np.zeros(7), 0, 2, KEEP)


def test_grid_passes():
    frame = run_oracle_grid(p_values=(0.1, 0.5, 0.9), n_range=range(1, 7), categorical_classes=(3,))
    assert frame["passed"].all()
    assert set(frame["check"]) == {
        "conditional_form",
        "truncated_ml_gradient",
        "drop_all_equivalence",
        "dropped_term_bias",
        "categorical_truncated_ml_gradient",
    }


def test_grid_negative_control_fails_beyond_single_rollout():
    frame = run_oracle_grid(p_values=(0.25, 0.6), n_range=range(1, 5), variants=[KEEP, DROP],
                            inject_normalization="N", categorical_classes=())
    checked = frame[frame["check"].isin(["truncated_ml_gradient", "drop_all_equivalence"])]
    assert checked[checked["N"] == 1]["passed"].all()
    assert not checked[checked["N"] >= 2]["passed"].any()


def test_parse_variant():
    assert parse_variant("maxrl:none") == NONE
    assert parse_variant("maxrl") == DROP
    assert parse_variant("reinforce").kind is ObjectiveKind.REINFORCE
    with pytest.raises(EstimatorError):
        parse_variant("maxrl:sometimes")
