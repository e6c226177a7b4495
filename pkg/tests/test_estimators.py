import numpy as np
import pytest

from src.errors import EstimatorError, ShapeError
from src.estimators import (
    CvMode,
    EstimatorVariant,
    RewardBatch,
    advantages,
    batch_gradient,
    loss_coefficients,
    maxrl_gradient_coefficients,
    task_gradient,
)
from src.objectives import ObjectiveKind

MAXRL = EstimatorVariant(ObjectiveKind.MAXRL)
RLOO = EstimatorVariant(ObjectiveKind.RLOO)
GRPO = EstimatorVariant(ObjectiveKind.GRPO)
REINFORCE = EstimatorVariant(ObjectiveKind.REINFORCE)


def test_single_success_advantages():
    rewards = [1, 0, 0, 0]
    np.testing.assert_allclose(advantages(rewards, MAXRL, eps=0.0), [3.0, -1.0, -1.0, -1.0])
    np.testing.assert_allclose(advantages(rewards, RLOO), [1.0, -1 / 3, -1 / 3, -1 / 3])
    np.testing.assert_allclose(
        advantages(rewards, GRPO, eps=0.0), [1.7320508, -0.5773503, -0.5773503, -0.5773503], atol=1e-7
    )
    np.testing.assert_allclose(advantages(rewards, REINFORCE), [0.75, -0.25, -0.25, -0.25])


@pytest.mark.parametrize("variant", [MAXRL, RLOO, GRPO, REINFORCE])
@pytest.mark.parametrize("rewards", [[1, 0, 0, 0], [1, 1, 0, 1, 0], [0, 1], [1, 1, 1, 0, 0, 0, 0, 1]])
def test_advantages_sum_to_zero(variant, rewards):
    assert advantages(rewards, variant).sum() == pytest.approx(0.0, abs=1e-9)


@pytest.mark.parametrize("variant", [MAXRL, GRPO, REINFORCE, RLOO])
def test_uniform_rewards_give_zero_advantages(variant):
    np.testing.assert_array_equal(advantages([0, 0, 0, 0], variant), np.zeros(4))
    np.testing.assert_allclose(advantages([1, 1, 1, 1], variant), np.zeros(4), atol=1e-12)


def test_maxrl_advantage_without_eps_equals_exact_coefficients_times_n():
    rewards = np.array([[1, 0, 1, 0, 0], [0, 0, 0, 1, 0]], dtype=float)
    adv = advantages(rewards, MAXRL, eps=0.0)
    coeffs = maxrl_gradient_coefficients(rewards, MAXRL)
    np.testing.assert_allclose(adv / rewards.shape[1], coeffs)


def test_cv_modes_on_failure():
    rewards = [0, 0, 0, 0]
    keep = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.KEEP_VN_ON_FAILURE)
    none = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.NONE)
    np.testing.assert_allclose(maxrl_gradient_coefficients(rewards, keep), [-0.25] * 4)
    np.testing.assert_allclose(maxrl_gradient_coefficients(rewards, none), [0.0] * 4)
    np.testing.assert_allclose(maxrl_gradient_coefficients(rewards, MAXRL), [0.0] * 4)


def test_cv_mode_none_is_conditional_mean_of_successes():
    none = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.NONE)
    np.testing.assert_allclose(maxrl_gradient_coefficients([1, 0, 1, 0], none), [0.5, 0.0, 0.5, 0.0])


def test_loss_coefficients_use_exact_rule_outside_drop_all():
    keep = EstimatorVariant(ObjectiveKind.MAXRL, CvMode.KEEP_VN_ON_FAILURE)
    np.testing.assert_allclose(loss_coefficients([0, 0], keep), [-0.5, -0.5])
    np.testing.assert_allclose(loss_coefficients([1, 0, 0, 0], RLOO), np.array([1.0, -1 / 3, -1 / 3, -1 / 3]) / 4)


def test_batch_axis_is_independent_per_task():
    rewards = np.array([[1, 0, 0, 0], [0, 0, 0, 0], [1, 1, 0, 0]], dtype=float)
    batched = advantages(rewards, MAXRL)
    for row, expected in zip(rewards, batched):
        np.testing.assert_allclose(advantages(row, MAXRL), expected)


def test_variant_rejects_cv_mode_for_other_objectives():
    with pytest.raises(EstimatorError):
        EstimatorVariant(ObjectiveKind.GRPO, CvMode.NONE)


@pytest.mark.parametrize("rewards", [[0.5, 1.0], [2, 0]])
def test_non_binary_rewards_rejected(rewards):
    with pytest.raises(EstimatorError):
        RewardBatch(rewards)


def test_rloo_needs_two_rollouts():
    with pytest.raises(EstimatorError):
        advantages([1], RLOO)


def test_exact_ml_is_not_sample_based():
    with pytest.raises(EstimatorError):
        advantages([1, 0], EstimatorVariant(ObjectiveKind.EXACT_ML))


def test_task_and_batch_gradient():
    coeffs = np.array([[0.5, -0.5], [1.0, 0.0]])
    scores = np.array([[[1.0, 2.0], [3.0, 4.0]], [[1.0, 1.0], [9.0, 9.0]]])
    np.testing.assert_allclose(task_gradient(coeffs[0], scores[0]), [-1.0, -1.0])
    np.testing.assert_allclose(batch_gradient(coeffs, scores), [0.0, 0.0])
    with pytest.raises(ShapeError):
        task_gradient([1.0, 2.0, 3.0], scores[0])
