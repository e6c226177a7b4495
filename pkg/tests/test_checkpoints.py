import numpy as np
import pytest

from src.errors import ConfigError, MissingInputError
from src.InputOutput.checkpoints import (
    Checkpoint,
    checkpoint_path,
    decode_checkpoint,
    encode_checkpoint,
    latest_checkpoint,
    list_checkpoints,
    load_checkpoint,
    prune_checkpoints,
    save_checkpoint,
)


def _checkpoint(step: int = 3) -> Checkpoint:
    return Checkpoint(
        step=step,
        seed=7,
        phase="rl",
        architecture={"kind": "perceptron", "feature_dim": 2, "hidden_dim": 3, "num_classes": 2},
        params={"w1": np.arange(6.0).reshape(2, 3), "b1": np.array([0.5, -0.25, 1e-300])},
        optimizer={"t": 4, "m/w1": np.full((2, 3), 0.1)},
        extra={"train_rollouts": 96},
    )


def test_encoding_preserves_values_bit_for_bit():
    ckpt = _checkpoint()
    decoded = decode_checkpoint(encode_checkpoint(ckpt))
    assert decoded.step == 3 and decoded.seed == 7 and decoded.phase == "rl"
    assert list(decoded.params) == ["w1", "b1"]
    for name, value in ckpt.params.items():
        assert decoded.params[name].tobytes() == value.tobytes()
    assert decoded.optimizer["t"] == 4
    np.testing.assert_array_equal(decoded.optimizer["m/w1"], ckpt.optimizer["m/w1"])
    assert decoded.extra == {"train_rollouts": 96}


def test_encoding_is_deterministic():
    assert encode_checkpoint(_checkpoint()) == encode_checkpoint(_checkpoint())


@pytest.mark.parametrize("mutate", [
    lambda payload: payload[:-8],
    lambda payload: payload + b"\x00",
    lambda payload: payload.replace(b'"format_version": 1', b'"format_version": 9'),
    lambda payload: b"no header",
])
def test_corrupt_payloads_are_rejected(mutate):
    with pytest.raises(ConfigError):
        decode_checkpoint(mutate(encode_checkpoint(_checkpoint())))


def test_save_list_prune(tmp_path):
    for step in (2, 4, 6, 8):
        save_checkpoint(checkpoint_path(tmp_path, step), _checkpoint(step))
    (tmp_path / "checkpoints" / "notes.txt").write_text("x")
    assert [s for s, _ in list_checkpoints(tmp_path)] == [2, 4, 6, 8]
    removed = prune_checkpoints(tmp_path, keep=2)
    assert [p.name for p in removed] == ["ckpt_0000002.bin", "ckpt_0000004.bin"]
    assert latest_checkpoint(tmp_path).name == "ckpt_0000008.bin"
    assert load_checkpoint(latest_checkpoint(tmp_path)).step == 8


def test_missing_checkpoint(tmp_path):
    assert latest_checkpoint(tmp_path) is None
    with pytest.raises(MissingInputError):
        load_checkpoint(tmp_path / "sft.ckpt")
