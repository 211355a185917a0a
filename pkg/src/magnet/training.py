"""Single-step training, frozen-core re-tuning, threshold monitoring and
rollout evaluation.

All learned predictors (interaction model and the MLP/LSTM baselines) go
through :func:`train_single_step`; they only differ in how they cut
sequences into examples and compute the loss.
"""
from __future__ import annotations

import hashlib
import logging
import math
import os
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .preprocessing import fit_standardizer
from .systems import KURAMOTO, POINT_MASS, PREDATOR_SWARM

log = logging.getLogger(__name__)

FULL = "full"
WRAPPER_ONLY = "wrapper-only"
EVAL_CHUNK = 8


@dataclass
class TrainConfig:
    epochs: int = 100
    batch_size: int = 32
    learning_rate: float = 1e-3
    decay: float = 0.95
    min_learning_rate: float = 1e-4
    mode: str = FULL
    seed: int = 0
    validation_fraction: float = 0.1
    min_stream_length: int = 100

    def __post_init__(self):
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.batch_size < 1:
            raise ValueError("batch size must be >= 1")
        if not 0 < self.decay <= 1:
            raise ValueError("decay must lie in (0, 1]")
        if self.learning_rate <= 0:
            raise ValueError("learning rate must be positive")
        if not 0 <= self.min_learning_rate <= self.learning_rate:
            raise ValueError("learning-rate floor must lie in [0, initial rate]")
        if self.mode not in (FULL, WRAPPER_ONLY):
            raise ValueError(f"mode must be {FULL!r} or {WRAPPER_ONLY!r}")
        if not 0 <= self.validation_fraction < 1:
            raise ValueError("validation fraction must lie in [0, 1)")

    @classmethod
    def retune_defaults(cls, **overrides) -> "TrainConfig":
        base = dict(epochs=20, learning_rate=5e-4, decay=0.95, min_learning_rate=0.0,
                    mode=WRAPPER_ONLY)
        base.update(overrides)
        return cls(**base)


def learning_rate(config: TrainConfig, epoch: int) -> float:
    return max(config.learning_rate * config.decay ** epoch, config.min_learning_rate)


@dataclass
class TrainResult:
    model: object
    train_losses: list[float] = field(default_factory=list)
    val_losses: list[float] = field(default_factory=list)  # entry 0 is before training
    learning_rates: list[float] = field(default_factory=list)


def _split_sequences(states: np.ndarray, fraction: float) -> tuple[np.ndarray, np.ndarray | None]:
    """Hold out the last ``fraction`` of sequences (or of time, for one sequence)."""
    if fraction == 0:
        return states, None
    m, length = states.shape[:2]
    if m > 1:
        n_val = max(1, int(round(fraction * m)))
        if n_val >= m:
            n_val = m - 1
        return states[:m - n_val], states[m - n_val:]
    n_val = max(2, int(round(fraction * length)))
    if n_val >= length - 1:
        raise ValueError("sequence too short to hold out validation steps")
    return states[:, :length - n_val], states[:, length - n_val:]


def batched_loss(model, inputs: np.ndarray, targets: np.ndarray, chunk: int = 1024) -> float:
    total = 0.0
    for start in range(0, len(inputs), chunk):
        sl = slice(start, start + chunk)
        total += model.loss(inputs[sl], targets[sl]).item() * len(inputs[sl])
    return total / len(inputs)


def _fit(model, train_states, val_states, config: TrainConfig, keep_best: bool) -> TrainResult:
    model.set_trainable(config.mode)
    params = model.trainable_parameters(config.mode)
    x, y = model.make_examples(train_states)
    xv, yv = model.make_examples(val_states) if val_states is not None else (None, None)
    result = TrainResult(model)

    def validate() -> float:
        return batched_loss(model, xv, yv) if xv is not None else float("nan")

    best = validate()
    result.val_losses.append(best)
    best_state = [p.data.copy() for p in params] if keep_best else None

    opt = E.Adam(params, lr=config.learning_rate)
    rng = np.random.default_rng(config.seed)
    n = len(x)
    for epoch in range(config.epochs):
        opt.lr = learning_rate(config, epoch)
        result.learning_rates.append(opt.lr)
        order = rng.permutation(n)
        epoch_loss = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            idx = order[start:start + config.batch_size]
            with E.GradientTape() as tape:
                loss = model.loss(x[idx], y[idx])
            value = loss.item()
            if not math.isfinite(value):
                raise FloatingPointError(f"non-finite loss at epoch {epoch}, batch {b}")
            opt.step(tape.gradient(loss, params))
            epoch_loss += value * len(idx)
        result.train_losses.append(epoch_loss / n)
        val = validate()
        result.val_losses.append(val)
        log.info("epoch %d lr %.3g train %.6g val %.6g", epoch, opt.lr,
                 result.train_losses[-1], val)
        if keep_best and val < best:
            best = val
            best_state = [p.data.copy() for p in params]

    if keep_best and best_state is not None:
        for p, saved in zip(params, best_state):
            p.data[...] = saved
        model.validation_loss = best
    else:
        model.validation_loss = result.val_losses[-1]
    return result


def train_single_step(model, states: np.ndarray, config: TrainConfig) -> TrainResult:
    """Fit ``model`` to map each state to the next one.

    ``states`` are physical (M, L, N, d) sequences. The standardizer is
    refit on the training split in full mode and kept as-is in
    wrapper-only mode.
    """
    states = getattr(states, "states", states)
    if states.shape[-2] != model.n_agents:
        raise ValueError(f"data has {states.shape[-2]} agents, model expects {model.n_agents}")
    train, val = _split_sequences(states, config.validation_fraction)
    if config.mode == FULL:
        model.standardizer = fit_standardizer(train)
    std = model.standardizer
    return _fit(model, std.forward(train), None if val is None else std.forward(val), config,
                keep_best=config.mode == WRAPPER_ONLY)


def core_digest(model) -> str:
    h = hashlib.sha256()
    for name, t in model.core.items():
        h.update(name.encode())
        h.update(np.ascontiguousarray(t.data).tobytes())
    return h.hexdigest()


def retune_wrapper(model, stream: np.ndarray, config: TrainConfig) -> TrainResult:
    """Re-fit only the wrapper on one long observation sequence (L, N, d).

    The returned model holds the wrapper with the best held-out loss seen
    during the run, so its validation loss never exceeds the starting one.
    """
    if config.mode != WRAPPER_ONLY:
        raise ValueError("re-tuning requires mode='wrapper-only'")
    stream = np.asarray(getattr(stream, "states", stream), dtype=np.float64)
    if stream.ndim == 4:
        if stream.shape[0] != 1:
            raise ValueError("re-tuning consumes a single observation sequence")
        stream = stream[0]
    if len(stream) < config.min_stream_length:
        raise ValueError(f"stream has {len(stream)} observations, need at least "
                         f"{config.min_stream_length}")
    return train_single_step(model, stream[None], config)


# --- online monitoring ---------------------------------------------------------------

@dataclass
class RetuneEvent:
    trigger_step: int
    rolling_error: float
    observations_consumed: int
    post_retune_loss: float | None = None


class ThresholdMonitor:
    """Rolling mean of single-step errors; fires once when it exceeds the threshold."""

    def __init__(self, threshold: float, window: int = 50):
        if threshold <= 0:
            raise ValueError("threshold must be positive")
        if window < 1:
            raise ValueError("window must be >= 1")
        self.threshold = threshold
        self.window = window
        self._recent: list[float] = []
        self._step = -1
        self.event: RetuneEvent | None = None

    def update(self, error: float) -> RetuneEvent | None:
        self._step += 1
        self._recent.append(float(error))
        if len(self._recent) > self.window:
            self._recent.pop(0)
        if self.event is not None:
            return None
        rolling = float(np.mean(self._recent))
        if rolling > self.threshold:
            self.event = RetuneEvent(self._step, rolling, self._step + 1)
            return self.event
        return None


def single_step_errors(model, stream: np.ndarray) -> np.ndarray:
    """Standardized MSE of each one-step prediction along an (L, N, d) stream."""
    s = model.standardizer.forward(np.asarray(stream, dtype=np.float64))
    pred = model.step(E.Tensor(s[:-1])).data
    return np.mean((pred - s[1:]) ** 2, axis=(-2, -1))


def monitor_and_trigger(stream: np.ndarray, model, threshold: float | None = None,
                        window: int = 50) -> RetuneEvent | None:
    """Replay a stream through the monitor. Threshold defaults to 10x the
    model's recorded validation loss."""
    if threshold is None:
        threshold = 10.0 * model.validation_loss
        if not math.isfinite(threshold) or threshold <= 0:
            raise ValueError("model has no recorded validation loss; pass a threshold")
    monitor = ThresholdMonitor(threshold, window)
    for err in single_step_errors(model, stream):
        monitor.update(err)
    return monitor.event


# --- evaluation ---------------------------------------------------------------------------

METRIC_CHANNELS = {POINT_MASS: (0, 1), KURAMOTO: (0,), PREDATOR_SWARM: (0, 1)}


@dataclass
class EvalReport:
    mse_mean: np.ndarray  # index k is the error k steps after the rollout origin (k = 1..H)
    ci_half_width: np.ndarray
    n_sequences: int
    horizon: int
    channels: tuple[int, ...]

    @property
    def ci_low(self) -> np.ndarray:
        return self.mse_mean - self.ci_half_width

    @property
    def ci_high(self) -> np.ndarray:
        return self.mse_mean + self.ci_half_width

    def at(self, step: int) -> float:
        return float(self.mse_mean[step - 1])

    def to_csv(self, path) -> None:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("timestep,mse_mean,ci_low,ci_high\n")
            for k in range(self.horizon):
                row = (float(self.mse_mean[k]), float(self.ci_low[k]), float(self.ci_high[k]))
                fh.write(f"{k + 1}," + ",".join(repr(v) for v in row) + "\n")


def _threads() -> int:
    env = os.environ.get("MAGNET_THREADS")
    if env:
        return max(1, int(env))
    return os.cpu_count() or 1


def evaluate_rollout(predictor, test_states: np.ndarray, horizon: int,
                     channels: tuple[int, ...] = (0, 1), origin: int | None = None,
                     initial_states: np.ndarray | None = None) -> EvalReport:
    """Per-step rollout MSE with a 95% confidence band across sequences.

    Each sequence is predicted from the observations up to ``origin`` (the
    predictor consumes as many as its ``history`` needs) and compared with
    the truth for steps ``origin+1 .. origin+horizon``. ``initial_states``
    (M, N, d) replaces the observed state at the origin, e.g. with a
    denoised estimate.
    """
    test_states = np.asarray(getattr(test_states, "states", test_states), dtype=np.float64)
    m = test_states.shape[0]
    if m == 0:
        raise ValueError("empty test set")
    k = predictor.history
    origin = k - 1 if origin is None else origin
    if origin < k - 1:
        raise ValueError(f"origin {origin} leaves fewer than {k} observed states")
    if origin + horizon >= test_states.shape[1]:
        raise ValueError(f"horizon {horizon} from origin {origin} exceeds sequence length "
                         f"{test_states.shape[1]}")
    history = test_states[:, origin - k + 1:origin + 1].copy()
    if initial_states is not None:
        history[:, -1] = initial_states
    truth = test_states[:, origin:origin + horizon + 1]
    ch = list(channels)

    def run(sl: slice) -> np.ndarray:
        pred = predictor.predict_sequence(history[sl], horizon + 1)
        if pred.shape[1] < horizon + 1:
            pad = np.full((pred.shape[0], horizon + 1 - pred.shape[1]) + pred.shape[2:], np.nan)
            pred = np.concatenate([pred, pad], axis=1)
        sq = (pred[..., ch] - truth[sl][..., ch]) ** 2
        return sq.mean(axis=(-2, -1))[:, 1:]

    chunks = [slice(s, s + EVAL_CHUNK) for s in range(0, m, EVAL_CHUNK)]
    workers = min(_threads(), len(chunks))
    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            parts = list(pool.map(run, chunks))
    else:
        parts = [run(c) for c in chunks]
    per_seq = np.concatenate(parts, axis=0)
    mean = per_seq.mean(axis=0)
    if m > 1:
        half = 1.96 * per_seq.std(axis=0, ddof=1) / np.sqrt(m)
    else:
        half = np.zeros(horizon)
    return EvalReport(mean, half, m, horizon, tuple(channels))
