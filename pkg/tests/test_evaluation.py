import numpy as np
import pytest

from src.classification import ClassificationTaskSet
from src.errors import DomainError
from src.evaluation import (
    evaluate,
    evaluate_classifier,
    evaluate_classifier_sampled,
    evaluate_maze,
    mean_pass_at_k,
    pass_at_k_estimate,
    rollout_mazes,
)
from src.maze import MazeTaskSource, max_generation_length
from src.networks import PerceptronClassifier, SequencePolicy
from src.utils import STREAM_EVAL, rng_stream


@pytest.mark.parametrize("n, c, k, expected", [
    (4, 2, 2, 0.8333333),
    (10, 0, 5, 0.0),
    (5, 5, 3, 1.0),
    (8, 1, 1, 0.125),
    (3, 2, 2, 1.0),
])
def test_pass_at_k_estimate(n, c, k, expected):
    assert pass_at_k_estimate(n, c, k) == pytest.approx(expected, abs=1e-7)


def test_pass_at_k_estimate_rejects_bad_arguments():
    with pytest.raises(DomainError):
        pass_at_k_estimate(4, 1, 5)
    with pytest.raises(DomainError):
        pass_at_k_estimate(4, 5, 1)
    with pytest.raises(DomainError):
        pass_at_k_estimate(4, 1, 0)


def test_pass_at_k_estimate_is_unbiased_for_bernoulli_counts():
    # E_c[estimate] = 1 - (1-p)^k voor c ~ Binomiaal(n, p)
    from math import comb

    n, k, p = 6, 3, 0.3
    expectation = sum(comb(n, c) * p ** c * (1 - p) ** (n - c) * pass_at_k_estimate(n, c, k) for c in range(n + 1))
    assert expectation == pytest.approx(1 - (1 - p) ** k)


def test_mean_pass_at_k_averages_tasks():
    result = mean_pass_at_k([0, 4], 4, [1, 4])
    assert result == {1: pytest.approx(0.5), 4: pytest.approx(0.5)}


@pytest.fixture
def tiny_classifier():
    policy = PerceptronClassifier.create(3, 4, 3, 1.0, np.random.default_rng(0))
    tasks = ClassificationTaskSet(np.random.default_rng(1).standard_normal((5, 3)), np.array([0, 1, 2, 0, 1]), 3)
    return policy, tasks


def test_classifier_analytic_and_sampled_agree_roughly(tiny_classifier):
    policy, tasks = tiny_classifier
    analytic = evaluate_classifier(policy, tasks, [1, 4])
    sampled = evaluate_classifier_sampled(policy, tasks, 400, [1, 4], seed=0)
    assert sampled.pass_at_k[1] == pytest.approx(analytic.pass_at_k[1], abs=0.05)
    assert sampled.pass_at_k[4] == pytest.approx(analytic.pass_at_k[4], abs=0.05)
    assert analytic.num_tasks == 5
    assert "pass@4" in analytic.to_dict()


def test_evaluate_dispatches_on_heldout_type(tiny_classifier):
    policy, tasks = tiny_classifier
    assert evaluate(policy, tasks, 4, [1], seed=0).n is None
    assert evaluate(policy, tasks, 4, [1], seed=0, sampled=True).n == 4


@pytest.fixture
def tiny_sequence_policy():
    return SequencePolicy.create(32, 34 + max_generation_length(5), d_model=8, n_heads=2, n_layers=1, seed=3)


def test_maze_rollouts_are_reproducible(tiny_sequence_policy):
    grids = MazeTaskSource(5, seed=0, heldout_size=2).heldout
    first = rollout_mazes(tiny_sequence_policy, grids, 3, seed=4, stream=STREAM_EVAL, step=0)
    again = rollout_mazes(tiny_sequence_policy, grids, 3, seed=4, stream=STREAM_EVAL, step=0)
    assert first.rewards.shape == (2, 3)
    for b in range(2):
        for i in range(3):
            np.testing.assert_array_equal(first.responses[b][i], again.responses[b][i])
    assert first.total_tokens == int(first.lengths.sum())
    assert (first.lengths <= max_generation_length(5)).all()


def test_rollout_row_depends_only_on_its_own_stream(tiny_sequence_policy):
    grids = MazeTaskSource(5, seed=0, heldout_size=2).heldout
    two = rollout_mazes(tiny_sequence_policy, grids, 2, seed=4, stream=STREAM_EVAL, step=1)
    one = rollout_mazes(tiny_sequence_policy, grids[:1], 2, seed=4, stream=STREAM_EVAL, step=1)
    np.testing.assert_array_equal(two.responses[0][1], one.responses[0][1])


def test_evaluate_maze_reports_fractions(tiny_sequence_policy):
    grids = MazeTaskSource(5, seed=0, heldout_size=2).heldout
    result = evaluate_maze(tiny_sequence_policy, grids, 2, [1, 2], seed=0)
    assert 0.0 <= result.pass_at_k[1] <= result.pass_at_k[2] <= 1.0
    assert 0.0 <= result.malformed_fraction <= 1.0
    assert result.entropy >= 0.0
    with pytest.raises(DomainError):
        evaluate_maze(tiny_sequence_policy, grids, 1, [2], seed=0)


def test_rng_streams_are_independent_of_draw_order():
    a = rng_stream(5, 3, 0, 1).random(3)
    rng_stream(5, 3, 0, 0).random(100)
    np.testing.assert_array_equal(a, rng_stream(5, 3, 0, 1).random(3))
