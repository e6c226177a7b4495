import numpy as np
import pytest

from src.autodiff import ParameterVector
from src.config import OptimizerConfig
from src.errors import NumericError
import src.optim
from src.optim import AdamW, SGD, build_optimizer, clip_grad_norm, constant_schedule, cosine_schedule


def _params(values=(1.0, -2.0)):
    params = ParameterVector()
    params.add("w", np.array(values))
    return params


def test_adamw_first_step_moves_by_lr_times_sign():
    params = _params()
    params["w"].grad = np.array([0.5, -3.0])
    opt = AdamW(params, constant_schedule(0.1), eps=1e-12, clip_norm=None)
    opt.step()
    np.testing.assert_allclose(params["w"].data, [0.9, -1.9], atol=1e-9)
    assert params.step == 1
    assert opt.state["t"] == 1


def test_adamw_decoupled_weight_decay():
    params = _params((2.0, 2.0))
    params["w"].grad = np.zeros(2)
    AdamW(params, constant_schedule(0.1), weight_decay=0.5, clip_norm=None).step()
    np.testing.assert_allclose(params["w"].data, [1.9, 1.9])


def test_sgd_momentum_accumulates():
    params = _params((0.0, 0.0))
    opt = SGD(params, constant_schedule(1.0), momentum=0.9, clip_norm=None)
    for _ in range(2):
        params["w"].grad = np.array([1.0, 2.0])
        opt.step()
    np.testing.assert_allclose(params["w"].data, [-2.9, -5.8])


def test_clip_grad_norm_reports_norm_before_clipping():
    params = _params()
    params["w"].grad = np.array([3.0, 4.0])
    assert clip_grad_norm(params, 1.0) == pytest.approx(5.0)
    assert params.global_grad_norm() == pytest.approx(1.0, rel=1e-9)


def test_non_finite_gradient_refuses_update():
    params = _params()
    params["w"].grad = np.array([np.nan, 1.0])
    opt = AdamW(params, constant_schedule(0.1))
    with pytest.raises(NumericError):
        opt.step()
    np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])
    assert params.step == 0


def test_skip_counts_step_without_update():
    params = _params()
    opt = AdamW(params, constant_schedule(0.1))
    opt.skip()
    assert params.step == 1
    assert opt.state == {"t": 0}
    np.testing.assert_array_equal(params["w"].data, [1.0, -2.0])


def test_cosine_schedule_with_warmup():
    schedule = cosine_schedule(1.0, total_steps=10, warmup_steps=2)
    assert schedule(0) == pytest.approx(0.5)
    assert schedule(1) == pytest.approx(1.0)
    assert schedule(2) == pytest.approx(1.0)
    assert schedule(10) == pytest.approx(0.0)


def test_state_dict_round_trip_resumes_identically():
    first, second = _params(), _params()
    opt_a = AdamW(first, constant_schedule(0.05))
    for grad in ([1.0, 1.0], [0.5, -1.0]):
        first["w"].grad = np.array(grad)
        opt_a.step()
    opt_b = AdamW(second, constant_schedule(0.05))
    second.load_state_dict(first.state_dict())
    second.step = first.step
    opt_b.load_state_dict(opt_a.state_dict())
    for params, opt in ((first, opt_a), (second, opt_b)):
        params["w"].grad = np.array([-0.3, 0.2])
        opt.step()
    np.testing.assert_array_equal(first["w"].data, second["w"].data)


def test_build_optimizer_from_config():
    params = _params()
    opt = build_optimizer(params, OptimizerConfig(name="sgd", lr=0.3), total_steps=5)
    assert isinstance(opt, SGD)
    assert opt.current_lr == pytest.approx(0.3)
    sft = build_optimizer(params, OptimizerConfig(), total_steps=5, lr=5e-4)
    assert isinstance(sft, AdamW)
    assert sft.current_lr == pytest.approx(5e-4)


def test_module_is_documented():
    assert "AdamW" in src.optim.__doc__
