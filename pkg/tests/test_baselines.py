import numpy as np
import pytest

from magnet.baselines import (LSTM_WINDOW, LinearMotion, build_lstm_baseline, build_mlp_baseline,
                              linear_motion_predict)
from magnet.engine import Tensor

from gradcheck import max_relative_error


def test_linear_motion_examples():
    s = np.array([0.3, -1.0])
    np.testing.assert_array_equal(linear_motion_predict(s, s), s)
    assert linear_motion_predict(np.array(0.0), np.array(1.0)) == 2.0
    with pytest.raises(ValueError):
        linear_motion_predict(np.zeros(2), np.zeros(3))


def test_linear_motion_exact_on_constant_velocity():
    t = np.arange(30)[None, :, None, None]
    traj = 0.5 + 0.25 * t * np.ones((3, 30, 2, 4))
    pred = LinearMotion().predict_sequence(traj[:, :2], 29)
    assert pred.shape == (3, 29, 2, 4)
    np.testing.assert_allclose(pred, traj[:, 1:], rtol=0, atol=1e-12)


def test_mlp_shapes_and_count():
    model = build_mlp_baseline(4, 4, seed=0)
    widths = [model.layers[0].weight.shape[1]] + [layer.weight.shape[0] for layer in model.layers]
    assert widths == [16, 64, 64, 64, 16, 16]
    per_layer = [layer.weight.data.size + layer.bias.data.size for layer in model.layers]
    assert per_layer == [1088, 4160, 4160, 1040, 272]
    assert sum(per_layer) == 10720
    assert [layer.activation for layer in model.layers] == ["relu"] * 4 + ["identity"]


def test_mlp_zero_input_gives_zero_output():
    model = build_mlp_baseline(4, 4, seed=1)
    for layer in model.layers:
        layer.bias.data[:] = 0.0
    assert not model.forward(Tensor(np.zeros((1, 16)))).data.any()


def test_mlp_deterministic_per_seed():
    a, b = build_mlp_baseline(3, 2, seed=7), build_mlp_baseline(3, 2, seed=7)
    x = np.random.default_rng(0).normal(size=(3, 3, 2))
    assert a.predict_sequence(x[:, None], 5).tobytes() == b.predict_sequence(x[:, None], 5).tobytes()


def test_lstm_output_length_and_determinism():
    model = build_lstm_baseline(4, 4, seed=2)
    window = np.random.default_rng(1).normal(size=(2, LSTM_WINDOW, 16))
    out = model.forward(Tensor(window))
    assert out.shape == (2, 16)
    again = build_lstm_baseline(4, 4, seed=2).forward(Tensor(window))
    assert out.data.tobytes() == again.data.tobytes()


def test_lstm_zero_weights_emit_output_bias():
    model = build_lstm_baseline(3, 2, seed=3)
    bias = model.output_layer.bias.data.copy()
    for name, t in model.named_tensors():
        if name != "output.bias":
            t.data[...] = 0.0
    window = np.random.default_rng(2).normal(size=(5, LSTM_WINDOW, 6))
    np.testing.assert_array_equal(model.forward(Tensor(window)).data, np.tile(bias, (5, 1)))


def test_lstm_rejects_short_window():
    model = build_lstm_baseline(2, 2, seed=0)
    with pytest.raises(ValueError, match="window"):
        model.forward(Tensor(np.zeros((1, 3, 4))))
    with pytest.raises(ValueError):
        model.predict_sequence(np.zeros((1, 3, 2, 2)), 5)


def test_lstm_rollout_feeds_back_predictions():
    model = build_lstm_baseline(2, 2, seed=4)
    hist = np.random.default_rng(3).normal(size=(1, 6, 2, 2))
    pred = model.predict_sequence(hist, 4)
    np.testing.assert_allclose(pred[:, 0], hist[:, -1], rtol=0, atol=1e-15)
    window = hist[:, -LSTM_WINDOW:].reshape(1, LSTM_WINDOW, 4)
    first = model.forward(Tensor(window)).data
    np.testing.assert_allclose(pred[:, 1].reshape(1, 4), first, rtol=0, atol=1e-15)
    window2 = np.concatenate([window[:, 1:], first[:, None]], axis=1)
    np.testing.assert_allclose(pred[:, 2].reshape(1, 4), model.forward(Tensor(window2)).data,
                               rtol=0, atol=1e-15)


def test_lstm_examples_use_four_past_states():
    model = build_lstm_baseline(1, 1, seed=0)
    states = np.arange(7.0).reshape(1, 7, 1, 1)
    x, y = model.make_examples(states)
    np.testing.assert_array_equal(x[:, :, 0], [[0, 1, 2, 3], [1, 2, 3, 4], [2, 3, 4, 5]])
    np.testing.assert_array_equal(y[:, 0], [4, 5, 6])


@pytest.mark.parametrize("build", [build_mlp_baseline, build_lstm_baseline])
def test_baseline_loss_gradcheck(build):
    rng = np.random.default_rng(5)
    model = build(3, 2, seed=1)
    states = rng.normal(size=(1, 6, 3, 2))
    x, y = model.make_examples(states)
    err = max_relative_error(lambda: model.loss(x, y), model.parameters(), rng)
    assert err < 1e-5


def test_baselines_reject_wrapper_only():
    with pytest.raises(ValueError):
        build_mlp_baseline(2, 2, seed=0).trainable_parameters("wrapper-only")
