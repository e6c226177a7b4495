import logging

import pytest

from src.config import build_config
from src.maze import MazeGrid

BOX_ROWS = (
    "#######",
    "#S#...#",
    "#.#.###",
    "#.....#",
    "#.###.#",
    "#.#..G#",
    "#######",
)


@pytest.fixture
def box_maze() -> MazeGrid:
    """Handgemaakt 7x7 doolhof met een uniek pad van START naar GOAL."""
    return MazeGrid.from_rows(BOX_ROWS)


@pytest.fixture(autouse=True)
def _quiet_logger():
    """Houd de maxrl logger stil en schoon tussen tests."""
    logger = logging.getLogger("maxrl")
    previous = logger.level
    logger.setLevel(logging.WARNING)
    yield
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
        handler.close()
    logger.setLevel(previous)


def _classifier_raw(**overrides):
    raw = {
        "task": "classification",
        "seed": 3,
        "steps": 4,
        "tasks_per_batch": 4,
        "rollouts_per_task": 4,
        "optimizer": {"name": "sgd", "lr": 0.1},
        "eval": {"every": 2, "n": 4, "ks": [1, 2, 4], "heldout_size": 6},
        "checkpoint": {"every": 2, "keep": 3},
        "classification": {"num_classes": 5, "feature_dim": 4, "hidden_dim": 8},
    }
    raw.update(overrides)
    return raw


@pytest.fixture
def classifier_raw():
    return _classifier_raw


@pytest.fixture
def classifier_config():
    return build_config(_classifier_raw())


@pytest.fixture
def maze_config():
    return build_config({
        "task": "maze",
        "seed": 1,
        "steps": 2,
        "tasks_per_batch": 2,
        "rollouts_per_task": 2,
        "eval": {"every": 1, "n": 2, "ks": [1, 2], "heldout_size": 2},
        "checkpoint": {"every": 1, "keep": 2},
        "maze": {"side": 5, "d_model": 8, "n_heads": 2, "n_layers": 1},
        "sft": {"max_steps": 2, "batch_size": 2, "eval_every": 1, "eval_n": 1, "floor": 0.0},
    })
