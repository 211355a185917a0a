"""Standardization, observation noise, and TV-regularized differentiation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

PREFIX_LENGTH = 16


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.std = np.asarray(self.std, dtype=np.float64)
        if self.mean.shape != self.std.shape or self.mean.ndim != 1:
            raise ValueError("mean and std must be 1-D arrays of equal length")
        if np.any(self.std < 1e-12):
            raise ValueError("stored std values must be >= 1e-12")

    @property
    def dim(self) -> int:
        return len(self.mean)

    @classmethod
    def identity(cls, dim: int) -> "Standardizer":
        return cls(np.zeros(dim), np.ones(dim))

    def forward(self, states: np.ndarray) -> np.ndarray:
        return apply_standardizer(states, self, "forward")

    def inverse(self, states: np.ndarray) -> np.ndarray:
        return apply_standardizer(states, self, "inverse")


def fit_standardizer(states: np.ndarray) -> Standardizer:
    """Per-dimension (last axis) mean and population std over every other axis."""
    states = np.asarray(states, dtype=np.float64)
    if states.size == 0:
        raise ValueError("cannot fit a standardizer on an empty dataset")
    flat = states.reshape(-1, states.shape[-1])
    mean = flat.mean(axis=0)
    std = flat.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return Standardizer(mean, std)


def apply_standardizer(states: np.ndarray, standardizer: Standardizer,
                       direction: str = "forward") -> np.ndarray:
    states = np.asarray(states, dtype=np.float64)
    if states.shape[-1] != standardizer.dim:
        raise ValueError(
            f"state dimension {states.shape[-1]} does not match standardizer dimension "
            f"{standardizer.dim}")
    if direction == "forward":
        return (states - standardizer.mean) / standardizer.std
    if direction == "inverse":
        return states * standardizer.std + standardizer.mean
    raise ValueError(f"direction must be 'forward' or 'inverse', got {direction!r}")


def add_gaussian_noise(trajectory: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Add zero-mean noise whose std per last-axis dimension is ``scale`` times
    the clean data's std in that dimension."""
    if scale < 0:
        raise ValueError("noise scale must be non-negative")
    trajectory = np.asarray(trajectory, dtype=np.float64)
    if scale == 0:
        return trajectory.copy()
    sigma = scale * trajectory.reshape(-1, trajectory.shape[-1]).std(axis=0)
    rng = np.random.default_rng(seed)
    return trajectory + rng.standard_normal(trajectory.shape) * sigma


def add_observation_noise(sequences: np.ndarray, scale: float, seed: int) -> np.ndarray:
    """Noise for a stack of sequences (M, ...): the std is fitted on the whole
    stack, each sequence draws from its own sub-seed ``[seed, index]``."""
    if scale < 0:
        raise ValueError("noise scale must be non-negative")
    sequences = np.asarray(sequences, dtype=np.float64)
    sigma = scale * sequences.reshape(-1, sequences.shape[-1]).std(axis=0)
    out = sequences.copy()
    for i in range(len(sequences)):
        rng = np.random.default_rng([seed, i])
        out[i] += rng.standard_normal(sequences[i].shape) * sigma
    return out


@dataclass
class TVConfig:
    alpha: float = 1e-2
    iterations: int = 200
    epsilon: float = 1e-8

    def __post_init__(self):
        if self.alpha <= 0:
            raise ValueError("alpha must be positive")
        if self.iterations < 1:
            raise ValueError("iterations must be >= 1")
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")


def _integration_matrix(n: int, dt: float) -> np.ndarray:
    """Trapezoidal cumulative integral: (A u)_k = integral of u from t_0 to t_k."""
    a = np.zeros((n, n))
    for k in range(1, n):
        a[k, 0] = 0.5
        a[k, 1:k] = 1.0
        a[k, k] = 0.5
    return a * dt


def tv_objective(u: np.ndarray, y: np.ndarray, dt: float, config: TVConfig) -> float:
    a = _integration_matrix(len(y), dt)
    du = np.diff(u)
    resid = a @ u - (y - y[0])
    return float(config.alpha * np.sum(np.sqrt(du * du + config.epsilon)) + 0.5 * resid @ resid)


def tv_differentiate(samples: np.ndarray, dt: float, config: TVConfig | None = None,
                     return_history: bool = False):
    """Derivative of a noisy 1-D series by total-variation regularization.

    Minimizes ``alpha * sum sqrt((Du)^2 + eps) + 0.5 * ||A u - (y - y0)||^2``
    with lagged-diffusivity fixed-point iterations. Each iteration solves the
    quadratic majorizer exactly, so the objective never increases.
    """
    config = config or TVConfig()
    y = np.asarray(samples, dtype=np.float64)
    if y.ndim != 1 or len(y) < 3:
        raise ValueError("need a 1-D series of at least 3 samples")
    n = len(y)
    a = _integration_matrix(n, dt)
    ata = a.T @ a
    rhs = a.T @ (y - y[0])
    u = np.gradient(y, dt)
    history = [tv_objective(u, y, dt, config)] if return_history else None
    idx = np.arange(n)
    for it in range(config.iterations):
        du = np.diff(u)
        weights = config.alpha / np.sqrt(du * du + config.epsilon)
        # D^T diag(w) D is tridiagonal
        lhs = ata.copy()
        lhs[idx[:-1], idx[:-1]] += weights
        lhs[idx[1:], idx[1:]] += weights
        lhs[idx[:-1], idx[1:]] -= weights
        lhs[idx[1:], idx[:-1]] -= weights
        u = np.linalg.solve(lhs, rhs)
        if not np.all(np.isfinite(u)):
            raise FloatingPointError(f"TV differentiation diverged at iteration {it}")
        if return_history:
            history.append(tv_objective(u, y, dt, config))
    if return_history:
        return u, history
    return u


def prepare_noisy_states(positions: np.ndarray, dt: float, config: TVConfig | None = None,
                         evaluation: bool = False) -> np.ndarray:
    """Build ``(position, velocity)`` states from noisy positions.

    ``positions`` is ``(..., T, N, p)``; velocities are TV derivatives along
    the time axis. In evaluation mode the series must be the 16-sample
    prefix and only the state at its last sample is returned, shaped
    ``(..., N, 2p)``.
    """
    positions = np.asarray(positions, dtype=np.float64)
    t_axis = positions.ndim - 3
    if t_axis < 0:
        raise ValueError("positions must be shaped (..., T, N, p)")
    T = positions.shape[t_axis]
    if evaluation and T < PREFIX_LENGTH:
        raise ValueError(f"evaluation needs a {PREFIX_LENGTH}-sample prefix, got {T}")
    if evaluation:
        positions = positions[..., T - PREFIX_LENGTH:, :, :]
    series = np.moveaxis(positions, t_axis, -1)
    flat = series.reshape(-1, series.shape[-1])
    vel = np.stack([tv_differentiate(s, dt, config) for s in flat]).reshape(series.shape)
    velocities = np.moveaxis(vel, -1, t_axis)
    states = np.concatenate([positions, velocities], axis=-1)
    if evaluation:
        return states[..., -1, :, :]
    return states
