"""Comparison predictors: constant-velocity extrapolation, MLP and LSTM.

The learned baselines see the concatenated state of every agent and
predict the next concatenated state directly. They expose the same
``make_examples``/``loss``/``predict_sequence`` surface as the interaction
model so a single trainer and evaluator serve all of them.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import engine as E
from .engine import DenseLayer, LSTMWeights, Tensor
from .preprocessing import Standardizer

HIDDEN = 64
LSTM_WINDOW = 4


def linear_motion_predict(s_prev: np.ndarray, s_curr: np.ndarray) -> np.ndarray:
    s_prev = np.asarray(s_prev, dtype=np.float64)
    s_curr = np.asarray(s_curr, dtype=np.float64)
    if s_prev.shape != s_curr.shape:
        raise ValueError(f"shape mismatch: {s_prev.shape} vs {s_curr.shape}")
    return 2.0 * s_curr - s_prev


class LinearMotion:
    """Extrapolates every state channel at the velocity of the last two samples."""

    kind = "linear"
    history = 2

    def predict_sequence(self, history: np.ndarray, total: int) -> np.ndarray:
        if history.shape[1] < 2:
            raise ValueError("linear motion needs two past states")
        out = [history[:, -2], history[:, -1]]
        while len(out) < total + 1:
            out.append(linear_motion_predict(out[-2], out[-1]))
        # first returned entry is the last history state
        return np.stack(out[1:total + 1], axis=1)


@dataclass
class MlpBaseline:
    n_agents: int
    state_dim: int
    layers: list[DenseLayer]
    standardizer: Standardizer
    dt: float = 0.01
    validation_loss: float = float("nan")

    kind = "mlp"
    history = 1

    @property
    def width(self) -> int:
        return self.n_agents * self.state_dim

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = []
        for k, layer in enumerate(self.layers):
            out.append((f"layer{k}.weight", layer.weight))
            out.append((f"layer{k}.bias", layer.bias))
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def trainable_parameters(self, mode: str = "full") -> list[Tensor]:
        if mode != "full":
            raise ValueError("baselines only support full training")
        return self.parameters()

    def set_trainable(self, mode: str) -> None:
        for t in self.trainable_parameters(mode):
            t.requires_grad = t._tracked = True

    def forward(self, x: Tensor) -> Tensor:
        for layer in self.layers:
            x = layer(x)
        return x

    def make_examples(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m, length = states.shape[:2]
        flat = states.reshape(m, length, -1)
        return flat[:, :-1].reshape(-1, self.width), flat[:, 1:].reshape(-1, self.width)

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> Tensor:
        return E.smooth_l1(self.forward(Tensor(inputs)), Tensor(targets))

    def predict_sequence(self, history: np.ndarray, total: int) -> np.ndarray:
        batch = history.shape[0]
        s = self.standardizer.forward(history[:, -1]).reshape(batch, self.width)
        out = [s]
        for _ in range(1, total):
            s = self.forward(Tensor(s)).data
            out.append(s)
        traj = np.stack(out, axis=1).reshape(batch, total, self.n_agents, self.state_dim)
        return self.standardizer.inverse(traj)


def build_mlp_baseline(n_agents: int, state_dim: int, seed: int, dt: float = 0.01,
                       standardizer: Standardizer | None = None) -> MlpBaseline:
    """Widths w -> 64 -> 64 -> 64 -> w -> w with w = N * state_dim.

    Hidden layers and the penultimate layer use relu; the output layer is
    linear and its bias starts at zero.
    """
    if n_agents < 1 or state_dim < 1:
        raise ValueError("agent count and state dimension must be >= 1")
    rng = np.random.default_rng(seed)
    w = n_agents * state_dim
    widths = [w, HIDDEN, HIDDEN, HIDDEN, w, w]
    layers = []
    for k in range(len(widths) - 1):
        last = k == len(widths) - 2
        layer = DenseLayer.init(rng, widths[k], widths[k + 1],
                                activation="identity" if last else "relu", name=f"layer{k}")
        if last:
            layer.bias.data[:] = 0.0
        layers.append(layer)
    return MlpBaseline(n_agents, state_dim, layers,
                       standardizer or Standardizer.identity(state_dim), dt)


@dataclass
class LstmBaseline:
    n_agents: int
    state_dim: int
    input_layer: DenseLayer
    cells: list[LSTMWeights]
    output_layer: DenseLayer
    standardizer: Standardizer
    dt: float = 0.01
    validation_loss: float = float("nan")

    kind = "lstm"
    history = LSTM_WINDOW

    @property
    def width(self) -> int:
        return self.n_agents * self.state_dim

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        out = [("input.weight", self.input_layer.weight), ("input.bias", self.input_layer.bias)]
        for k, cell in enumerate(self.cells):
            out += [(f"lstm{k}.w_ih", cell.w_ih), (f"lstm{k}.w_hh", cell.w_hh),
                    (f"lstm{k}.bias", cell.bias)]
        out += [("output.weight", self.output_layer.weight),
                ("output.bias", self.output_layer.bias)]
        return out

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    trainable_parameters = MlpBaseline.trainable_parameters
    set_trainable = MlpBaseline.set_trainable

    def forward(self, window: Tensor) -> Tensor:
        """Next state from a (B, T>=4, w) window; only the last four steps are used."""
        window = E.as_tensor(window)
        if window.shape[-2] < LSTM_WINDOW:
            raise ValueError(f"LSTM needs a window of {LSTM_WINDOW} states, "
                             f"got {window.shape[-2]}")
        batch = window.shape[0]
        start = window.shape[-2] - LSTM_WINDOW
        hidden = [Tensor(np.zeros((batch, HIDDEN))) for _ in self.cells]
        cell = [Tensor(np.zeros((batch, HIDDEN))) for _ in self.cells]
        for t in range(start, window.shape[-2]):
            x = self.input_layer(window[:, t])
            for k, weights in enumerate(self.cells):
                hidden[k], cell[k] = E.lstm_cell_forward(x, hidden[k], cell[k], weights)
                x = hidden[k]
        return self.output_layer(hidden[-1])

    def make_examples(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        m, length = states.shape[:2]
        if length <= LSTM_WINDOW:
            raise ValueError(f"sequences must be longer than {LSTM_WINDOW} samples")
        flat = states.reshape(m, length, -1)
        idx = np.arange(LSTM_WINDOW)[None, :] + np.arange(length - LSTM_WINDOW)[:, None]
        x = flat[:, idx]  # (m, L-4, 4, w)
        y = flat[:, LSTM_WINDOW:]
        return x.reshape(-1, LSTM_WINDOW, self.width), y.reshape(-1, self.width)

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> Tensor:
        return E.smooth_l1(self.forward(Tensor(inputs)), Tensor(targets))

    def predict_sequence(self, history: np.ndarray, total: int) -> np.ndarray:
        """Warm up on the last four observed states, then feed predictions back."""
        batch, k = history.shape[:2]
        if k < LSTM_WINDOW:
            raise ValueError(f"LSTM rollout needs {LSTM_WINDOW} observed states, got {k}")
        window = list(self.standardizer.forward(history[:, -LSTM_WINDOW:])
                      .reshape(batch, LSTM_WINDOW, self.width).transpose(1, 0, 2))
        out = [window[-1]]
        while len(out) < total:
            nxt = self.forward(Tensor(np.stack(window[-LSTM_WINDOW:], axis=1))).data
            window.append(nxt)
            out.append(nxt)
        traj = np.stack(out, axis=1).reshape(batch, total, self.n_agents, self.state_dim)
        return self.standardizer.inverse(traj)


def build_lstm_baseline(n_agents: int, state_dim: int, seed: int, dt: float = 0.01,
                        standardizer: Standardizer | None = None) -> LstmBaseline:
    if n_agents < 1 or state_dim < 1:
        raise ValueError("agent count and state dimension must be >= 1")
    rng = np.random.default_rng(seed)
    w = n_agents * state_dim
    return LstmBaseline(
        n_agents, state_dim,
        DenseLayer.init(rng, w, HIDDEN, name="input"),
        [LSTMWeights.init(rng, HIDDEN, HIDDEN, f"lstm{k}") for k in range(2)],
        DenseLayer.init(rng, HIDDEN, w, name="output"),
        standardizer or Standardizer.identity(state_dim), dt,
    )
