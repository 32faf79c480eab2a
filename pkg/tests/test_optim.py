import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from detect.errors import ConfigError, ContractError, DivergenceError, ScheduleExhaustedError
from detect.optim import LrSchedule, OptimizerState, adamw_step, clip_global_norm, lr_at
from detect.tensor import Tensor


# clipping -------------------------------------------------------------------

def test_clip_three_four_five():
    grads = {"w": np.array([3.0, 4.0])}
    scale = clip_global_norm(grads, 1.0)
    assert scale == pytest.approx(0.2)
    np.testing.assert_allclose(grads["w"], [0.6, 0.8], rtol=1e-15)


def test_clip_below_cap_is_untouched():
    grads = {"w": np.array([0.3, 0.4])}
    assert clip_global_norm(grads, 1.0) == 1.0
    np.testing.assert_array_equal(grads["w"], [0.3, 0.4])


def test_clip_uses_the_joint_norm():
    grads = {"a": np.array([1.0, 0.0]), "b": np.array([0.0, 1.0])}
    scale = clip_global_norm(grads, 1.0)
    assert scale == pytest.approx(1 / math.sqrt(2), rel=1e-15)
    np.testing.assert_allclose(grads["a"], [1 / math.sqrt(2), 0.0], rtol=1e-15)
    np.testing.assert_allclose(grads["b"], [0.0, 1 / math.sqrt(2)], rtol=1e-15)


def test_clip_names_the_non_finite_parameter():
    with pytest.raises(DivergenceError, match="'bad'") as info:
        clip_global_norm({"ok": np.ones(2), "bad": np.array([1.0, np.nan])}, 1.0)
    assert info.value.parameter == "bad"


grad_arrays = arrays(np.float64, st.integers(1, 6), elements=st.floats(-1e3, 1e3))


@given(grad_arrays, grad_arrays, st.floats(1e-3, 10.0))
def test_clip_bounds_norm_and_is_idempotent(a, b, cap):
    grads = {"a": a.copy(), "b": b.copy()}
    clip_global_norm(grads, cap)
    norm = math.sqrt(sum(float(g @ g) for g in grads.values()))
    assert norm <= cap + 1e-12
    once = {k: v.copy() for k, v in grads.items()}
    clip_global_norm(grads, cap)
    for k in grads:
        np.testing.assert_allclose(grads[k], once[k], rtol=1e-12, atol=0)


# schedule -------------------------------------------------------------------

def test_lr_ramp_start_peak_and_end():
    s = LrSchedule(warmup_steps=100, total_steps=1000, base_lr=0.001)
    assert lr_at(s, 0) == 0.0
    assert lr_at(s, 100) == 0.001
    assert lr_at(s, 1000) == pytest.approx(0.0, abs=1e-20)


def test_lr_past_end_raises():
    s = LrSchedule(10, 20, 0.1)
    with pytest.raises(ScheduleExhaustedError):
        lr_at(s, 21)


def test_schedule_validation():
    with pytest.raises(ConfigError):
        LrSchedule(30, 20, 0.1)
    with pytest.raises(ConfigError):
        LrSchedule(0, 20, 0.0)


def test_warmup_defaults_to_ten_percent():
    assert LrSchedule.with_warmup_fraction(1000, 0.001).warmup_steps == 100


@given(st.integers(0, 200), st.integers(1, 400))
def test_lr_shape_properties(warmup, extra):
    s = LrSchedule(warmup, warmup + extra, 0.001)
    lrs = [lr_at(s, k) for k in range(s.total_steps + 1)]
    up = lrs[: warmup + 1]
    down = lrs[warmup:]
    assert all(x <= y for x, y in zip(up, up[1:]))
    assert all(x >= y - 1e-18 for x, y in zip(down, down[1:]))
    assert lrs[warmup] == 0.001
    assert lrs[-1] == pytest.approx(0.0, abs=1e-18)
    if warmup:
        assert lrs[0] == 0.0
        # continuity at the boundary: neighbours differ by at most one ramp increment
        assert abs(lrs[warmup] - lrs[warmup - 1]) <= 0.001 / warmup + 1e-18


# AdamW ----------------------------------------------------------------------

def test_zero_gradient_is_pure_decay():
    theta = np.array([1.0, -2.0, 0.5])
    params = {"w": theta.copy()}
    state = OptimizerState.for_params(params, weight_decay=1e-4)
    adamw_step(params, {"w": np.zeros(3)}, state, lr=0.001)
    np.testing.assert_allclose(params["w"], theta * (1 - 0.001 * 1e-4), rtol=1e-15)
    assert not state.first_moment["w"].any() and not state.second_moment["w"].any()
    assert state.step_count == 1


def test_first_step_moves_by_lr_times_sign():
    g = np.array([0.5, -3.0, 1e-2])
    params = {"w": np.zeros(3)}
    state = OptimizerState.for_params(params, weight_decay=0.0)
    adamw_step(params, {"w": g}, state, lr=0.01)
    # bias-corrected first step: m_hat = g, v_hat = g^2
    expected = -0.01 * g / (np.abs(g) + state.eps_adam)
    np.testing.assert_allclose(params["w"], expected, rtol=1e-12)
    np.testing.assert_allclose(params["w"], -0.01 * np.sign(g), rtol=1e-5)


def test_zero_lr_zero_decay_is_bit_identical(rng):
    theta = rng.normal(size=(4, 3))
    params = {"w": Tensor(theta.copy())}
    state = OptimizerState.for_params(params, weight_decay=0.0)
    for _ in range(3):
        adamw_step(params, {"w": rng.normal(size=(4, 3))}, state, lr=0.0)
    assert np.array_equal(params["w"].data, theta)
    assert state.step_count == 3


def test_adamw_shape_mismatch():
    params = {"w": np.zeros(3)}
    state = OptimizerState.for_params(params)
    with pytest.raises(ContractError):
        adamw_step(params, {"w": np.zeros(4)}, state, lr=0.1)
    with pytest.raises(ContractError):
        adamw_step(params, {"v": np.zeros(3)}, state, lr=0.1)


def _run_steps(seed, n):
    rng = np.random.default_rng(seed)
    params = {"a": rng.normal(size=(3, 3)), "b": rng.normal(size=3)}
    state = OptimizerState.for_params(params)
    sched = LrSchedule.with_warmup_fraction(n, 0.01)
    for step in range(1, n + 1):
        grads = {k: rng.normal(size=v.shape) for k, v in params.items()}
        clip_global_norm(grads, 1.0)
        adamw_step(params, grads, state, lr_at(sched, step))
    return params


def test_optimizer_is_deterministic():
    a, b = _run_steps(3, 50), _run_steps(3, 50)
    for k in a:
        assert np.array_equal(a[k], b[k])
