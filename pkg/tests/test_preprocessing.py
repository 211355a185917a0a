import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from magnet.preprocessing import (PREFIX_LENGTH, Standardizer, TVConfig, add_gaussian_noise,
                                  add_observation_noise, apply_standardizer, fit_standardizer,
                                  prepare_noisy_states, tv_differentiate, tv_objective)

DT = 0.01


def test_fit_on_standard_data_is_identity():
    x = np.array([[-1.0], [1.0], [-1.0], [1.0]])
    std = fit_standardizer(x)
    assert std.mean[0] == 0.0 and std.std[0] == 1.0
    np.testing.assert_array_equal(std.forward(x), x)


def test_constant_dimension_clamped():
    x = np.column_stack([np.full(5, 3.0), np.arange(5.0)])
    std = fit_standardizer(x)
    assert std.std[0] == 1.0
    np.testing.assert_array_equal(std.forward(x)[:, 0], np.zeros(5))


def test_two_point_population_std():
    std = fit_standardizer(np.array([[1.0], [3.0]]))
    assert std.mean[0] == 2.0 and std.std[0] == 1.0
    np.testing.assert_array_equal(std.forward(np.array([[1.0], [3.0]]))[:, 0], [-1.0, 1.0])


def test_forward_of_mean_and_mean_plus_std():
    std = Standardizer(np.array([1.0, -2.0]), np.array([0.5, 4.0]))
    np.testing.assert_array_equal(std.forward(std.mean), [0.0, 0.0])
    np.testing.assert_array_equal(std.forward(std.mean + std.std), [1.0, 1.0])


def test_empty_and_mismatched_inputs():
    with pytest.raises(ValueError):
        fit_standardizer(np.zeros((0, 3)))
    with pytest.raises(ValueError):
        apply_standardizer(np.zeros((2, 3)), Standardizer.identity(2))
    with pytest.raises(ValueError):
        apply_standardizer(np.zeros((2, 2)), Standardizer.identity(2), "sideways")


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(2, 30), st.integers(1, 4)),
              elements=st.floats(-1e3, 1e3)))
def test_standardizer_properties(x):
    std = fit_standardizer(x)
    z = std.forward(x)
    np.testing.assert_allclose(std.inverse(z), x, rtol=0, atol=1e-12 * max(1.0, np.abs(x).max()))
    assert np.all(np.abs(z.mean(axis=0)) < 1e-10)
    spread = x.std(axis=0) >= 1e-6
    np.testing.assert_allclose(z.var(axis=0)[spread], 1.0, atol=1e-10)


def test_noise_zero_scale_and_determinism():
    rng = np.random.default_rng(0)
    x = rng.normal(size=(10, 3))
    np.testing.assert_array_equal(add_gaussian_noise(x, 0.0, seed=1), x)
    a = add_gaussian_noise(x, 0.1, seed=1)
    assert a.tobytes() == add_gaussian_noise(x, 0.1, seed=1).tobytes()
    assert a.shape == x.shape
    with pytest.raises(ValueError):
        add_gaussian_noise(x, -0.1, seed=1)


def test_noise_std_statistics():
    rng = np.random.default_rng(1)
    x = rng.normal(size=(100_000, 2)) * np.array([3.0, 0.2]) + np.array([5.0, -1.0])
    noisy = add_gaussian_noise(x, 0.01, seed=2)
    target = 0.01 * x.std(axis=0)
    got = (noisy - x).std(axis=0)
    np.testing.assert_allclose(got, target, rtol=0.02)


def test_observation_noise_independent_per_sequence():
    x = np.zeros((3, 50, 2, 2))
    x[..., 0] = np.linspace(0, 1, 50)[None, :, None]
    x[..., 1] = 2.0
    x[1, ..., 1] = -2.0
    noisy = add_observation_noise(x, 0.05, seed=3)
    assert noisy.shape == x.shape
    delta = noisy - x
    assert not np.allclose(delta[0], delta[1])
    # same index and seed -> same standard-normal draws; sigma comes from the whole stack
    sub = x[:2]
    again = add_observation_noise(sub, 0.05, seed=3)
    sigma_full = 0.05 * x.reshape(-1, 2).std(axis=0)
    sigma_sub = 0.05 * sub.reshape(-1, 2).std(axis=0)
    np.testing.assert_allclose((again[0] - x[0]) / sigma_sub, delta[0] / sigma_full,
                               rtol=1e-12, atol=1e-12)


def test_tv_constant_series():
    u = tv_differentiate(np.full(50, 3.0), DT)
    assert np.abs(u).max() < 1e-6


def test_tv_clean_ramp():
    t = np.arange(200) * DT
    u = tv_differentiate(2 * t, DT)
    np.testing.assert_allclose(u[5:-5], 2.0, rtol=0.01)
    assert u.shape == t.shape


@pytest.mark.parametrize("seed", range(5))
def test_tv_noisy_ramp_beats_naive_differences(seed):
    t = np.arange(200) * DT
    y = 2 * t + np.random.default_rng(seed).normal(0, 0.05, t.size)
    u = tv_differentiate(y, DT)
    assert np.abs(u - 2).mean() < 0.05 * 2
    naive = np.diff(y) / DT
    assert np.abs(naive - 2).mean() > 0.5 * 2


@pytest.mark.parametrize("alpha", [1e-3, 1e-2, 1e-1])
def test_tv_objective_monotone(alpha):
    rng = np.random.default_rng(4)
    y = np.cumsum(rng.normal(size=80)) * DT + np.sin(np.arange(80) * 0.2)
    config = TVConfig(alpha=alpha, iterations=40)
    u, history = tv_differentiate(y, DT, config, return_history=True)
    assert len(history) == 41
    steps = np.diff(history)
    assert np.all(steps <= 1e-12 * np.abs(np.asarray(history[:-1])))
    assert history[-1] == pytest.approx(tv_objective(u, y, DT, config), rel=1e-14)


def test_tv_input_validation():
    with pytest.raises(ValueError):
        tv_differentiate(np.ones(2), DT)
    with pytest.raises(ValueError):
        TVConfig(alpha=0.0)
    with pytest.raises(ValueError):
        TVConfig(iterations=0)


def test_tv_deterministic():
    y = np.random.default_rng(5).normal(size=40)
    assert tv_differentiate(y, DT).tobytes() == tv_differentiate(y, DT).tobytes()


def constant_velocity_positions(n_steps, velocity, start):
    t = np.arange(n_steps) * DT
    return start[None, :, :] + t[:, None, None] * velocity[None, :, :]


def test_prepare_constant_velocity():
    v = np.array([[1.5, -0.7], [0.2, 0.4], [-2.0, 0.0]])
    p = constant_velocity_positions(PREFIX_LENGTH, v, np.zeros((3, 2)) + 0.3)
    state = prepare_noisy_states(p, DT, evaluation=True)
    assert state.shape == (3, 4)
    np.testing.assert_array_equal(state[:, :2], p[-1])
    np.testing.assert_allclose(state[:, 2:], v, rtol=0.01, atol=1e-12)


def test_prepare_zero_motion_and_training_shape():
    p = np.full((2, 30, 4, 2), 0.5)
    states = prepare_noisy_states(p, DT)
    assert states.shape == (2, 30, 4, 4)
    assert np.abs(states[..., 2:]).max() < 1e-6


def test_prepare_uses_last_16_samples_in_evaluation():
    v = np.array([[1.0, 2.0]])
    p = constant_velocity_positions(40, v, np.zeros((1, 2)))
    p[:10] += 5.0  # corrupt samples outside the prefix window
    state = prepare_noisy_states(p, DT, evaluation=True)
    np.testing.assert_allclose(state[:, 2:], v, rtol=0.01)


def test_prepare_short_prefix_rejected():
    with pytest.raises(ValueError, match="16"):
        prepare_noisy_states(np.zeros((15, 2, 2)), DT, evaluation=True)
