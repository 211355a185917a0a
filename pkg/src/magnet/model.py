"""Core + wrapper interaction network with Euler single-step updates.

The model predicts a per-agent derivative

    d_i = g2_i(g1(s_i)) + sum_{j != i} I_ij . f(h(s_i) - h(s_j))

where ``h``, ``f`` and ``g1`` form the shared core and the ``I_ij`` and
per-agent ``g2_i`` dot-product layers form the wrapper. Everything runs in
standardized coordinates; ``rollout`` converts back to physical units.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from . import engine as E
from .engine import Tensor
from .preprocessing import Standardizer
from .systems import KURAMOTO, POINT_MASS, PREDATOR_SWARM

log = logging.getLogger(__name__)

FIRST_ORDER = "first"
SECOND_ORDER = "second"


@dataclass
class ArchConfig:
    input_dim: int
    output_dim: int
    h_widths: tuple[int, int] = (64, 64)
    f_widths: tuple[int, int] = (64, 8)
    g_width: int = 4

    def __post_init__(self):
        self.h_widths = tuple(self.h_widths)
        self.f_widths = tuple(self.f_widths)
        if self.input_dim < 1 or self.output_dim < 1:
            raise ValueError("state dimensions must be positive")
        if len(self.h_widths) != 2 or len(self.f_widths) != 2:
            raise ValueError("h and f each have exactly two layers")
        if min(self.h_widths + self.f_widths + (self.g_width,)) < 1:
            raise ValueError("layer widths must be positive")
        if self.f_widths[-1] % self.output_dim:
            raise ValueError(
                f"f output length {self.f_widths[-1]} not divisible by d={self.output_dim}")
        if self.g_width % self.output_dim:
            raise ValueError(f"g width {self.g_width} not divisible by d={self.output_dim}")

    @property
    def pair_rows(self) -> int:
        """l: rows of each I_ij matrix."""
        return self.f_widths[-1] // self.output_dim

    @property
    def self_rows(self) -> int:
        return self.g_width // self.output_dim

    @classmethod
    def for_system(cls, system: str) -> "ArchConfig":
        if system == POINT_MASS:
            return cls(input_dim=4, output_dim=2)
        if system == KURAMOTO:
            return cls(input_dim=1, output_dim=1)
        if system == PREDATOR_SWARM:
            return cls(input_dim=2, output_dim=2)
        raise ValueError(f"unknown system {system!r}")

    def to_json(self) -> dict:
        return {"input_dim": self.input_dim, "output_dim": self.output_dim,
                "h_widths": list(self.h_widths), "f_widths": list(self.f_widths),
                "g_width": self.g_width}


def default_order(system: str) -> str:
    return SECOND_ORDER if system == POINT_MASS else FIRST_ORDER


def _uniform(rng, fan_in, shape, name) -> Tensor:
    bound = np.sqrt(1.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape), True, name)


@dataclass
class MagnetModel:
    arch: ArchConfig
    n_agents: int
    dt: float
    order: str
    standardizer: Standardizer
    core: dict[str, Tensor]
    wrapper: dict[str, Tensor]
    core_frozen: bool = False
    validation_loss: float = float("nan")
    kind: str = field(default="magnet", init=False)

    def __post_init__(self):
        if self.order not in (FIRST_ORDER, SECOND_ORDER):
            raise ValueError(f"integration order must be 'first' or 'second', got {self.order!r}")
        if self.order == SECOND_ORDER and self.arch.input_dim != 2 * self.arch.output_dim:
            raise ValueError("second-order mode requires input dim = 2 * derivative dim")
        if self.order == FIRST_ORDER and self.arch.input_dim != self.arch.output_dim:
            raise ValueError("first-order mode requires input dim = derivative dim")
        if self.standardizer.dim != self.arch.input_dim:
            raise ValueError("standardizer dimension does not match the input dimension")
        expected = len(wrapper_names(self.n_agents))
        if len(self.wrapper) != expected:
            raise ValueError(f"wrapper holds {len(self.wrapper)} tensors, expected {expected} "
                             f"for {self.n_agents} agents")

    # parameter bookkeeping

    def named_tensors(self) -> list[tuple[str, Tensor]]:
        return list(self.core.items()) + list(self.wrapper.items())

    def parameters(self) -> list[Tensor]:
        return [t for _, t in self.named_tensors()]

    def trainable_parameters(self, mode: str = "full") -> list[Tensor]:
        if mode == "wrapper-only":
            return list(self.wrapper.values())
        if mode == "full":
            if self.core_frozen:
                raise RuntimeError("core is frozen; only wrapper-only training is allowed")
            return self.parameters()
        raise ValueError(f"unknown training mode {mode!r}")

    def set_trainable(self, mode: str) -> None:
        wanted = {id(t) for t in self.trainable_parameters(mode)}
        for t in self.parameters():
            t.requires_grad = t._tracked = id(t) in wanted

    # forward path

    def encode(self, x: Tensor) -> Tensor:
        c = self.core
        x = E.relu(E.linear(x, c["h1.weight"], c["h1.bias"]))
        return E.relu(E.linear(x, c["h2.weight"], c["h2.bias"]))

    def interaction(self, u: Tensor) -> Tensor:
        """The bias-free tanh network f; odd in ``u``."""
        u = E.tanh(E.linear(u, self.core["f1.weight"]))
        return E.tanh(E.linear(u, self.core["f2.weight"]))

    def pair_kernels(self, diagonal: np.ndarray | None = None) -> Tensor:
        """All I_ij stacked to (N, N, l, d). The diagonal is zero unless
        ``diagonal`` (N, l, d) is given."""
        n = self.n_agents
        zero = Tensor(np.zeros((self.arch.pair_rows, self.arch.output_dim)))
        rows = []
        for i in range(n):
            for j in range(n):
                if i == j:
                    rows.append(zero if diagonal is None else Tensor(diagonal[i]))
                else:
                    rows.append(self.wrapper[f"I.{i}.{j}"])
        return E.reshape(E.stack(rows), (n, n, self.arch.pair_rows, self.arch.output_dim))

    def predict_derivative(self, states: Tensor, diagonal: np.ndarray | None = None) -> Tensor:
        """Per-agent derivative estimates for standardized ``states`` (B, N, in)."""
        states = E.as_tensor(states)
        if states.shape[-2] != self.n_agents:
            raise ValueError(f"got {states.shape[-2]} agents, wrapper is built for "
                             f"{self.n_agents}")
        if states.shape[-1] != self.arch.input_dim:
            raise ValueError(f"state dim {states.shape[-1]} != {self.arch.input_dim}")
        n = self.n_agents
        batch = states.shape[:-2]
        c, w = self.core, self.wrapper

        g1 = E.relu(E.linear(states, c["g1.weight"], c["g1.bias"]))
        g2w = E.stack([w[f"g2.{i}.weight"] for i in range(n)])
        g2b = E.stack([w[f"g2.{i}.bias"] for i in range(n)])
        out = E.dot_product(g1, g2w, g2b)
        if n == 1:
            return out

        h = self.encode(states)
        width = h.shape[-1]
        diff = E.sub(E.reshape(h, batch + (n, 1, width)), E.reshape(h, batch + (1, n, width)))
        feats = self.interaction(diff)
        pair = E.dot_product(feats, self.pair_kernels(diagonal))
        return E.add(out, E.sum(pair, axis=-2))

    def step(self, states: Tensor) -> Tensor:
        """One Euler update of standardized states."""
        states = E.as_tensor(states)
        deriv = self.predict_derivative(states)
        if self.order == FIRST_ORDER:
            return E.add(states, E.mul(deriv, self.dt))
        d = self.arch.output_dim
        pos = states[..., :d]
        vel = states[..., d:]
        vel_next = E.add(vel, E.mul(deriv, self.dt))
        # position advances with the physical velocity, expressed in standardized units
        mu, sd = self.standardizer.mean, self.standardizer.std
        scale = self.dt * sd[d:] / sd[:d]
        offset = self.dt * mu[d:] / sd[:d]
        pos_next = E.add(pos, E.add(E.mul(vel_next, scale), offset))
        return E.concat([pos_next, vel_next], axis=-1)

    # training interface shared with the baselines

    history = 1

    def make_examples(self, states: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """(s_t, s_{t+1}) pairs from standardized (M, L, N, in) sequences."""
        n, din = states.shape[-2:]
        x = states[:, :-1].reshape(-1, n, din)
        y = states[:, 1:].reshape(-1, n, din)
        return x, y

    def loss(self, inputs: np.ndarray, targets: np.ndarray) -> Tensor:
        return E.smooth_l1(self.step(Tensor(inputs)), Tensor(targets))

    # inference

    def rollout(self, initial: np.ndarray, n_steps: int) -> np.ndarray:
        """Iterate ``step`` from physical ``initial`` (N, in) or (B, N, in).

        Returns ``n_steps`` states including the initial one, in physical
        units. If the state goes non-finite the trajectory is truncated.
        """
        if n_steps < 1:
            raise ValueError("rollout horizon must be >= 1")
        initial = np.asarray(initial, dtype=np.float64)
        s = self.standardizer.forward(initial)
        out = [s]
        for t in range(1, n_steps):
            s = self.step(Tensor(s)).data
            if not np.all(np.isfinite(s)):
                log.warning("rollout produced a non-finite state at step %d; truncating", t)
                break
            out.append(s)
        traj = self.standardizer.inverse(np.stack(out, axis=-3))
        traj[..., 0, :, :] = initial  # exact, not a standardize round trip
        return traj

    def predict_sequence(self, history: np.ndarray, total: int) -> np.ndarray:
        """``history`` is (B, k, N, in) physical; extrapolate from its last state."""
        return self.rollout(history[:, -1], total)


def core_names() -> list[str]:
    return ["h1.weight", "h1.bias", "h2.weight", "h2.bias", "f1.weight", "f2.weight",
            "g1.weight", "g1.bias"]


def wrapper_names(n_agents: int) -> list[str]:
    pairs = [f"I.{i}.{j}" for i in range(n_agents) for j in range(n_agents) if i != j]
    selfs = [f"g2.{i}.{part}" for i in range(n_agents) for part in ("weight", "bias")]
    return pairs + selfs


def build_model(arch: ArchConfig, n_agents: int, seed: int, dt: float = 0.01,
                order: str | None = None, standardizer: Standardizer | None = None,
                system: str | None = None) -> MagnetModel:
    """Freshly initialized model; weights uniform in +-sqrt(1/fan_in)."""
    if n_agents < 1:
        raise ValueError("need at least one agent")
    if order is None:
        order = default_order(system) if system else (
            SECOND_ORDER if arch.input_dim == 2 * arch.output_dim else FIRST_ORDER)
    rng = np.random.default_rng(seed)
    din, d = arch.input_dim, arch.output_dim
    (h1, h2), (f1, f2) = arch.h_widths, arch.f_widths
    core = {
        "h1.weight": _uniform(rng, din, (h1, din), "h1.weight"),
        "h1.bias": _uniform(rng, din, (h1,), "h1.bias"),
        "h2.weight": _uniform(rng, h1, (h2, h1), "h2.weight"),
        "h2.bias": _uniform(rng, h1, (h2,), "h2.bias"),
        "f1.weight": _uniform(rng, h2, (f1, h2), "f1.weight"),
        "f2.weight": _uniform(rng, f1, (f2, f1), "f2.weight"),
        "g1.weight": _uniform(rng, din, (arch.g_width, din), "g1.weight"),
        "g1.bias": _uniform(rng, din, (arch.g_width,), "g1.bias"),
    }
    wrapper = {}
    for name in wrapper_names(n_agents):
        if name.startswith("I."):
            wrapper[name] = _uniform(rng, arch.pair_rows, (arch.pair_rows, d), name)
        elif name.endswith("weight"):
            wrapper[name] = _uniform(rng, arch.self_rows, (arch.self_rows, d), name)
        else:
            wrapper[name] = _uniform(rng, arch.self_rows, (d,), name)
    return MagnetModel(arch, n_agents, dt, order, standardizer or Standardizer.identity(din),
                       core, wrapper)


def init_wrapper_from_pretrained(pretrained: MagnetModel, n_new: int) -> MagnetModel:
    """New-population model sharing the pretrained core; every wrapper entry
    starts at the mean of the corresponding pretrained entries."""
    if n_new < 2:
        raise ValueError("the new population needs at least two agents")
    n_old = pretrained.n_agents
    old_pairs = [t.data for name, t in pretrained.wrapper.items() if name.startswith("I.")]
    if not old_pairs:
        raise ValueError("pretrained wrapper has no pairwise kernels to average")
    mean_pair = np.mean(old_pairs, axis=0)
    mean_w = np.mean([pretrained.wrapper[f"g2.{i}.weight"].data for i in range(n_old)], axis=0)
    mean_b = np.mean([pretrained.wrapper[f"g2.{i}.bias"].data for i in range(n_old)], axis=0)
    wrapper = {}
    for name in wrapper_names(n_new):
        if name.startswith("I."):
            src = mean_pair
        elif name.endswith("weight"):
            src = mean_w
        else:
            src = mean_b
        wrapper[name] = Tensor(src.copy(), True, name)
    return MagnetModel(pretrained.arch, n_new, pretrained.dt, pretrained.order,
                       pretrained.standardizer, pretrained.core, wrapper, core_frozen=True,
                       validation_loss=pretrained.validation_loss)


def count_params(model) -> tuple[int, int]:
    """(core, wrapper) parameter counts, summed over stored tensors."""
    core = sum(t.data.size for t in model.core.values())
    wrapper = sum(t.data.size for t in model.wrapper.values())
    return core, wrapper


def permute_agents(model: MagnetModel, perm: np.ndarray) -> MagnetModel:
    """Model whose agent ``perm[i]`` plays the role of agent ``i`` here."""
    perm = [int(p) for p in perm]
    wrapper = {}
    for i in range(model.n_agents):
        for j in range(model.n_agents):
            if i != j:
                wrapper[f"I.{perm[i]}.{perm[j]}"] = model.wrapper[f"I.{i}.{j}"]
        wrapper[f"g2.{perm[i]}.weight"] = model.wrapper[f"g2.{i}.weight"]
        wrapper[f"g2.{perm[i]}.bias"] = model.wrapper[f"g2.{i}.bias"]
    ordered = {name: wrapper[name] for name in wrapper_names(model.n_agents)}
    return MagnetModel(model.arch, model.n_agents, model.dt, model.order, model.standardizer,
                       model.core, ordered)
