"""Ground-truth multi-agent systems and dataset generation.

Three systems are provided: springs plus softened inverse-square repulsion
between point masses, Kuramoto phase oscillators, and a prey swarm chased by
a single predator. All are integrated with fixed-step classical RK4.

State layouts (per agent, last axis):

* point-mass: ``(px, py, vx, vy)``
* Kuramoto: ``(theta,)``, unwrapped
* predator-swarm: ``(x, y)``; the predator is the last agent
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Union

import numpy as np

POINT_MASS = "point_mass"
KURAMOTO = "kuramoto"
PREDATOR_SWARM = "predator_swarm"
SYSTEM_IDS = {POINT_MASS: 0, KURAMOTO: 1, PREDATOR_SWARM: 2}
SYSTEM_NAMES = {v: k for k, v in SYSTEM_IDS.items()}


def _check_coupling(mat: np.ndarray, n: int, label: str) -> np.ndarray:
    mat = np.asarray(mat, dtype=np.float64)
    if mat.shape != (n, n):
        raise ValueError(f"{label} must be {n}x{n}, got {mat.shape}")
    if not np.array_equal(mat, mat.T):
        raise ValueError(f"{label} must be symmetric")
    if np.any(np.diag(mat) != 0):
        raise ValueError(f"{label} must have a zero diagonal")
    return mat


@dataclass
class PointMassSpec:
    masses: np.ndarray
    springs: np.ndarray
    repulsion: float = 1.0
    clip: float = 10.0
    dt: float = 0.01
    substeps: int = 10
    # initial-state sampling box
    position_range: tuple[float, float] = (-2.0, 2.0)
    velocity_range: tuple[float, float] = (-1.0, 1.0)

    def __post_init__(self):
        self.masses = np.asarray(self.masses, dtype=np.float64)
        self.springs = _check_coupling(self.springs, len(self.masses), "spring matrix")
        if np.any(self.springs < 0):
            raise ValueError("spring constants must be non-negative")
        if self.repulsion < 0:
            raise ValueError("repulsion coefficient must be non-negative")
        if self.clip <= 0:
            raise ValueError("clip constant must be positive")

    @property
    def n_agents(self) -> int:
        return len(self.masses)

    state_dim = 4

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator, mass_range=(0.5, 2.5),
               spring_range=(0.5, 2.0), **kwargs) -> "PointMassSpec":
        _check_range(mass_range, "mass_range")
        _check_range(spring_range, "spring_range")
        masses = rng.uniform(*mass_range, size=n)
        upper = np.triu(rng.uniform(*spring_range, size=(n, n)), k=1)
        return cls(masses=masses, springs=upper + upper.T, **kwargs)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        _check_range(self.position_range, "position_range")
        _check_range(self.velocity_range, "velocity_range")
        p = rng.uniform(*self.position_range, size=(self.n_agents, 2))
        v = rng.uniform(*self.velocity_range, size=(self.n_agents, 2))
        return np.concatenate([p, v], axis=1)

    def deriv(self, state: np.ndarray) -> np.ndarray:
        acc = point_mass_deriv(state[:, :2], state[:, 2:], self)
        return np.concatenate([state[:, 2:], acc], axis=1)

    def to_json(self) -> dict:
        return {"masses": self.masses.tolist(), "springs": self.springs.tolist(),
                "repulsion": self.repulsion, "clip": self.clip, "dt": self.dt,
                "substeps": self.substeps, "position_range": list(self.position_range),
                "velocity_range": list(self.velocity_range)}


@dataclass
class KuramotoSpec:
    frequencies: np.ndarray
    coupling: np.ndarray
    dt: float = 0.01
    substeps: int = 10
    phase_range: tuple[float, float] = (0.0, 2 * np.pi)

    def __post_init__(self):
        self.frequencies = np.asarray(self.frequencies, dtype=np.float64)
        self.coupling = _check_coupling(self.coupling, len(self.frequencies), "coupling matrix")

    @property
    def n_agents(self) -> int:
        return len(self.frequencies)

    state_dim = 1

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator, frequency_range=(1.0, 10.0),
               coupling_range=(0.2, 2.0), **kwargs) -> "KuramotoSpec":
        _check_range(frequency_range, "frequency_range")
        _check_range(coupling_range, "coupling_range")
        omega = rng.uniform(*frequency_range, size=n)
        upper = np.triu(rng.uniform(*coupling_range, size=(n, n)), k=1)
        return cls(frequencies=omega, coupling=upper + upper.T, **kwargs)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        _check_range(self.phase_range, "phase_range")
        return rng.uniform(*self.phase_range, size=(self.n_agents, 1))

    def deriv(self, state: np.ndarray) -> np.ndarray:
        return kuramoto_deriv(state[:, 0], self)[:, None]

    def to_json(self) -> dict:
        return {"frequencies": self.frequencies.tolist(), "coupling": self.coupling.tolist(),
                "dt": self.dt, "substeps": self.substeps, "phase_range": list(self.phase_range)}


@dataclass
class PredatorSwarmSpec:
    n_prey: int
    a: float = 1.0
    b: float = 0.2
    c: float = 1.5
    dt: float = 0.01
    substeps: int = 10
    collision_guard: float = 1e-6
    prey_range: tuple[float, float] = (-1.0, 1.0)
    predator_range: tuple[float, float] = (-2.0, 2.0)

    def __post_init__(self):
        if min(self.a, self.b, self.c) <= 0:
            raise ValueError("swarm constants a, b, c must be positive")
        if self.collision_guard <= 0:
            raise ValueError("collision guard must be positive")
        if self.n_prey < 1:
            raise ValueError("need at least one prey")

    @property
    def n_agents(self) -> int:
        return self.n_prey + 1

    state_dim = 2

    @classmethod
    def sample(cls, n: int, rng: np.random.Generator, **kwargs) -> "PredatorSwarmSpec":
        # nothing random about the constants; ``n`` counts prey
        return cls(n_prey=n, **kwargs)

    def initial_state(self, rng: np.random.Generator) -> np.ndarray:
        _check_range(self.prey_range, "prey_range")
        _check_range(self.predator_range, "predator_range")
        prey = rng.uniform(*self.prey_range, size=(self.n_prey, 2))
        predator = rng.uniform(*self.predator_range, size=(1, 2))
        return np.concatenate([prey, predator], axis=0)

    def deriv(self, state: np.ndarray) -> np.ndarray:
        dx, dz = predator_swarm_deriv(state[:-1], state[-1], self)
        return np.concatenate([dx, dz[None, :]], axis=0)

    def to_json(self) -> dict:
        return {"n_prey": self.n_prey, "a": self.a, "b": self.b, "c": self.c, "dt": self.dt,
                "substeps": self.substeps, "collision_guard": self.collision_guard,
                "prey_range": list(self.prey_range), "predator_range": list(self.predator_range)}


SystemSpec = Union[PointMassSpec, KuramotoSpec, PredatorSwarmSpec]
SPEC_TYPES = {POINT_MASS: PointMassSpec, KURAMOTO: KuramotoSpec, PREDATOR_SWARM: PredatorSwarmSpec}


def system_name(spec: SystemSpec) -> str:
    for name, cls in SPEC_TYPES.items():
        if isinstance(spec, cls):
            return name
    raise TypeError(f"unknown system spec {type(spec).__name__}")


def spec_from_json(system: str, params: dict) -> SystemSpec:
    cls = SPEC_TYPES[system]
    params = dict(params)
    for key in ("position_range", "velocity_range", "phase_range", "prey_range", "predator_range"):
        if key in params:
            params[key] = tuple(params[key])
    return cls(**params)


def _check_range(r, label: str) -> None:
    lo, hi = r
    if not (np.isfinite(lo) and np.isfinite(hi) and lo < hi):
        raise ValueError(f"invalid range for {label}: {r!r}")


# --- derivatives ---------------------------------------------------------------

def point_mass_deriv(positions: np.ndarray, velocities: np.ndarray,
                     spec: PointMassSpec) -> np.ndarray:
    """Accelerations from pairwise spring + clipped repulsion forces.

    ``velocities`` is accepted for signature symmetry; the forces only
    depend on positions.
    """
    positions = np.asarray(positions, dtype=np.float64)
    if np.any(spec.masses <= 0):
        raise ValueError("masses must be positive")
    if not np.all(np.isfinite(positions)):
        raise ValueError("positions must be finite")
    m = spec.masses
    diff = positions[:, None, :] - positions[None, :, :]  # p_i - p_j
    dist = np.sqrt(np.sum(diff * diff, axis=-1))
    scale = -spec.springs + spec.repulsion * np.outer(m, m) / (spec.clip + dist) ** 3
    np.fill_diagonal(scale, 0.0)
    forces = scale[:, :, None] * diff  # F_ij
    return forces.sum(axis=1) / m[:, None]


def kuramoto_deriv(phases: np.ndarray, spec: KuramotoSpec) -> np.ndarray:
    phases = np.asarray(phases, dtype=np.float64)
    if phases.shape != spec.frequencies.shape:
        raise ValueError(f"expected {spec.frequencies.shape} phases, got {phases.shape}")
    return spec.frequencies + np.sum(spec.coupling * np.sin(phases[None, :] - phases[:, None]),
                                     axis=1)


def predator_swarm_deriv(prey: np.ndarray, predator: np.ndarray,
                         spec: PredatorSwarmSpec) -> tuple[np.ndarray, np.ndarray]:
    """Prey and predator velocities; distances are clamped at the collision guard."""
    prey = np.asarray(prey, dtype=np.float64)
    predator = np.asarray(predator, dtype=np.float64)
    n = prey.shape[0]
    eps2 = spec.collision_guard ** 2

    diff = prey[:, None, :] - prey[None, :, :]  # x_i - x_j
    r2 = np.maximum(np.sum(diff * diff, axis=-1), eps2)
    pair = diff / r2[:, :, None] - spec.a * diff
    pair[np.arange(n), np.arange(n)] = 0.0  # self term excluded
    away = prey - predator
    d2 = np.maximum(np.sum(away * away, axis=-1), eps2)[:, None]
    dx = pair.sum(axis=1) / n + spec.b * away / d2
    dz = spec.c / n * np.sum(away / d2, axis=0)
    return dx, dz


# --- integration -----------------------------------------------------------------

def rk4_integrate(spec: SystemSpec, initial: np.ndarray, n_samples: int,
                  substeps: int | None = None) -> np.ndarray:
    """Sample ``n_samples`` states spaced ``spec.dt`` apart, starting at ``initial``."""
    substeps = spec.substeps if substeps is None else substeps
    if substeps < 1:
        raise ValueError("substeps must be >= 1")
    if n_samples < 1:
        raise ValueError("need at least one sample")
    f: Callable[[np.ndarray], np.ndarray] = spec.deriv
    h = spec.dt / substeps
    state = np.array(initial, dtype=np.float64)
    out = np.empty((n_samples,) + state.shape)
    out[0] = state
    for t in range(1, n_samples):
        # overflow is reported below with the sample index instead of as a warning
        with np.errstate(over="ignore", invalid="ignore"):
            for _ in range(substeps):
                k1 = f(state)
                k2 = f(state + 0.5 * h * k1)
                k3 = f(state + 0.5 * h * k2)
                k4 = f(state + h * k3)
                state = state + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if not np.all(np.isfinite(state)):
            raise FloatingPointError(f"non-finite state during integration at sample {t}")
        out[t] = state
    return out


# --- datasets ----------------------------------------------------------------------

@dataclass
class Dataset:
    system: str
    dt: float
    states: np.ndarray  # (M, L, N, d)
    seed: int | None = None
    spec: dict = field(default_factory=dict)

    def __post_init__(self):
        self.states = np.asarray(self.states, dtype=np.float64)
        if self.states.ndim != 4:
            raise ValueError(f"states must be (M, L, N, d), got shape {self.states.shape}")
        if self.system not in SYSTEM_IDS:
            raise ValueError(f"unknown system {self.system!r}")

    @property
    def n_sequences(self) -> int:
        return self.states.shape[0]

    @property
    def length(self) -> int:
        return self.states.shape[1]

    @property
    def n_agents(self) -> int:
        return self.states.shape[2]

    @property
    def state_dim(self) -> int:
        return self.states.shape[3]

    def subset(self, index) -> "Dataset":
        states = self.states[index]
        if states.ndim == 3:
            states = states[None]
        return Dataset(self.system, self.dt, states, self.seed, self.spec)


def sequence_rng(seed: int, index: int) -> np.random.Generator:
    return np.random.default_rng([seed, index])


def parameter_rng(seed: int) -> np.random.Generator:
    return np.random.default_rng([seed, 2**32 - 1, 0])


def make_spec(system: str, n: int, seed: int, **kwargs) -> SystemSpec:
    """Draw a system's physical parameters once from ``seed``."""
    return SPEC_TYPES[system].sample(n, parameter_rng(seed), **kwargs)


def generate_dataset(spec: SystemSpec, n_sequences: int, length: int, seed: int) -> Dataset:
    """Integrate ``n_sequences`` random initial conditions for ``length`` samples each."""
    if n_sequences < 1 or length < 1:
        raise ValueError("sequence count and length must both be >= 1")
    seqs = [rk4_integrate(spec, spec.initial_state(sequence_rng(seed, i)), length)
            for i in range(n_sequences)]
    return Dataset(system_name(spec), spec.dt, np.stack(seqs), seed, spec.to_json())
