"""Small tape-based reverse-mode autodiff engine over float64 numpy arrays.

Only the handful of ops needed by the interaction model and the MLP/LSTM
baselines are provided. Ops executed inside an active :class:`GradientTape`
whose inputs are tracked get recorded; :meth:`GradientTape.gradient` then
replays the records in reverse.
"""
from __future__ import annotations

from typing import Callable, Iterable, Sequence

import numpy as np

_ACTIVE_TAPES: list["GradientTape"] = []


class Tensor:
    """A float64 array plus a flag saying whether gradients flow into it.

    Narrower inputs are widened to float64; ``np.longdouble`` data is kept as
    is so finite-difference references can be computed in extended precision.
    """

    __slots__ = ("data", "requires_grad", "name", "_tracked")

    def __init__(self, data, requires_grad: bool = False, name: str | None = None):
        arr = np.asarray(data)
        if arr.dtype != np.longdouble:
            arr = arr.astype(np.float64, copy=False)
        if arr.ndim > 0 and 0 in arr.shape:
            raise ValueError(f"tensor shape must have positive dimensions, got {arr.shape}")
        self.data = arr
        self.requires_grad = requires_grad
        self.name = name
        self._tracked = requires_grad

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def numpy(self) -> np.ndarray:
        return self.data

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = f" name={self.name!r}" if self.name else ""
        return f"Tensor(shape={self.shape}{label})"

    # operator sugar
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __getitem__(self, index):
        return take(self, index)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = tuple(shape[0])
        return reshape(self, shape)


def as_tensor(x) -> Tensor:
    return x if isinstance(x, Tensor) else Tensor(x)


class GradientTape:
    """Records ops so a scalar can be differentiated w.r.t. tracked tensors.

    Use as a context manager::

        with GradientTape() as tape:
            loss = smooth_l1(model(x), y)
        grads = tape.gradient(loss, params)
    """

    def __init__(self):
        self._records: list[tuple[Tensor, tuple[Tensor, ...], Callable]] = []

    def __enter__(self) -> "GradientTape":
        _ACTIVE_TAPES.append(self)
        return self

    def __exit__(self, *exc) -> None:
        _ACTIVE_TAPES.remove(self)

    def __len__(self) -> int:
        return len(self._records)

    def record(self, out: Tensor, inputs: tuple[Tensor, ...], backward: Callable) -> None:
        self._records.append((out, inputs, backward))

    def gradient(self, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
        if not self._records:
            raise RuntimeError("backward on an empty tape: no operations were recorded")
        if loss.data.size != 1:
            raise ValueError(f"loss must be a scalar, got shape {loss.shape}")
        if self._records[-1][0] is not loss and not any(r[0] is loss for r in self._records):
            raise ValueError("loss was not produced on this tape")
        grads: dict[int, np.ndarray] = {id(loss): np.ones_like(loss.data)}
        # records are appended in execution order, so reversed is a valid topological order
        for out, inputs, backward in reversed(self._records):
            g = grads.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward(g)):
                if gi is None or not inp._tracked:
                    continue
                key = id(inp)
                if key in grads:
                    grads[key] = grads[key] + gi
                else:
                    grads[key] = gi
        return [grads.get(id(p), np.zeros_like(p.data)) for p in params]


def backward(tape: GradientTape, loss: Tensor, params: Sequence[Tensor]) -> list[np.ndarray]:
    return tape.gradient(loss, params)


def _emit(out_data: np.ndarray, inputs: tuple[Tensor, ...], backward: Callable) -> Tensor:
    out = Tensor.__new__(Tensor)
    out.data = out_data
    out.requires_grad = False
    out.name = None
    out._tracked = False
    if _ACTIVE_TAPES and any(t._tracked for t in inputs):
        out._tracked = True
        _ACTIVE_TAPES[-1].record(out, inputs, backward)
    return out


def _unbroadcast(g: np.ndarray, shape: tuple[int, ...]) -> np.ndarray:
    if g.shape == shape:
        return g
    extra = g.ndim - len(shape)
    if extra:
        g = g.sum(axis=tuple(range(extra)))
    axes = tuple(i for i, n in enumerate(shape) if n == 1 and g.shape[i] != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True)
    return g


# --- elementwise -----------------------------------------------------------

def add(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data + b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(g, b.shape)))


def sub(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data - b.data, (a, b),
                 lambda g: (_unbroadcast(g, a.shape), _unbroadcast(-g, b.shape)))


def mul(a, b) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    return _emit(a.data * b.data, (a, b),
                 lambda g: (_unbroadcast(g * b.data, a.shape), _unbroadcast(g * a.data, b.shape)))


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _emit(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,))


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _emit(y, (x,), lambda g: (g * (1.0 - y * y),))


def sigmoid(x: Tensor) -> Tensor:
    y = 0.5 * (1.0 + np.tanh(0.5 * x.data))
    return _emit(y, (x,), lambda g: (g * y * (1.0 - y),))


def identity(x: Tensor) -> Tensor:
    return x


ACTIVATIONS: dict[str, Callable[[Tensor], Tensor]] = {
    "relu": relu,
    "tanh": tanh,
    "identity": identity,
}


# --- shape ops ---------------------------------------------------------------

def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    src = x.shape
    return _emit(x.data.reshape(shape), (x,), lambda g: (g.reshape(src),))


def take(x: Tensor, index) -> Tensor:
    """Basic (non-fancy) indexing."""
    src = x.shape

    def back(g):
        full = np.zeros(src)
        full[index] = g
        return (full,)

    return _emit(x.data[index], (x,), back)


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.stack([t.data for t in tensors], axis=axis)
    n = len(tensors)

    def back(g):
        return tuple(np.take(g, i, axis=axis) for i in range(n))

    return _emit(out, tensors, back)


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = tuple(as_tensor(t) for t in tensors)
    out = np.concatenate([t.data for t in tensors], axis=axis)
    splits = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def back(g):
        return tuple(np.split(g, splits, axis=axis))

    return _emit(out, tensors, back)


# --- reductions ---------------------------------------------------------------

def sum(x: Tensor, axis=None, keepdims: bool = False) -> Tensor:  # noqa: A001
    src = x.shape

    def back(g):
        if axis is not None and not keepdims:
            g = np.expand_dims(g, axis)
        return (np.broadcast_to(g, src).copy(),)

    return _emit(np.sum(x.data, axis=axis, keepdims=keepdims), (x,), back)


def mean(x: Tensor) -> Tensor:
    n = x.size
    src = x.shape
    return _emit(np.asarray(x.data.mean()), (x,), lambda g: (np.full(src, g / n),))


# --- layers -------------------------------------------------------------------

def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """``x @ W.T + b`` over the last axis of ``x``; ``W`` is (out, in)."""
    if x.shape[-1] != weight.shape[1]:
        raise ValueError(
            f"shape mismatch: input has inner dimension {x.shape[-1]} "
            f"but weight is {weight.shape[0]}x{weight.shape[1]}"
        )
    out = x.data @ weight.data.T
    if bias is not None:
        if bias.shape != (weight.shape[0],):
            raise ValueError(f"bias shape {bias.shape} does not match weight rows {weight.shape[0]}")
        out = out + bias.data
    xd, wd = x.data, weight.data

    def back(g):
        gx = g @ wd
        gw = g.reshape(-1, g.shape[-1]).T @ xd.reshape(-1, xd.shape[-1])
        if bias is None:
            return gx, gw
        return gx, gw, g.reshape(-1, g.shape[-1]).sum(axis=0)

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return _emit(out, inputs, back)


def dot_product(feature: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """Column-wise dot-product layer.

    ``feature`` has trailing length ``l*d`` and is read column-major as an
    ``l x d`` matrix ``[e_1 ... e_d]``; ``weight`` is ``(..., l, d)`` with
    columns ``w_k``. Output ``k`` is ``e_k . w_k`` (plus ``bias[k]``).
    Leading dimensions broadcast, which lets one call apply a different
    weight matrix per agent or per agent pair.
    """
    l, d = weight.shape[-2:]
    if feature.shape[-1] != l * d:
        raise ValueError(
            f"feature length {feature.shape[-1]} is not l*d = {l}*{d} for a {l}x{d} weight"
        )
    # (..., d, l): row k of this view is e_k
    e = feature.data.reshape(feature.shape[:-1] + (d, l))
    wt = np.swapaxes(weight.data, -1, -2)
    out = np.einsum("...kl,...kl->...k", e, wt)
    if bias is not None:
        out = out + bias.data
    fshape, wshape = feature.shape, weight.shape

    def back(g):
        ge = g[..., :, None] * wt
        ge = np.broadcast_to(ge, np.broadcast_shapes(ge.shape, e.shape))
        ge = _unbroadcast(ge.reshape(ge.shape[:-2] + (d * l,)), fshape)
        gw = np.swapaxes(g[..., :, None] * e, -1, -2)
        gw = _unbroadcast(gw, wshape)
        if bias is None:
            return ge, gw
        return ge, gw, _unbroadcast(g, bias.shape)

    inputs = (feature, weight) if bias is None else (feature, weight, bias)
    return _emit(out, inputs, back)


def smooth_l1(pred: Tensor, target) -> Tensor:
    """Mean of 0.5 x^2 (|x| < 1) or |x| - 0.5 over all elements."""
    target = as_tensor(target)
    if pred.shape != target.shape:
        raise ValueError(f"shape mismatch: prediction {pred.shape} vs target {target.shape}")
    diff = pred.data - target.data
    absd = np.abs(diff)
    small = absd < 1.0
    val = np.where(small, 0.5 * diff * diff, absd - 0.5).mean()
    n = diff.size

    def back(g):
        gd = np.where(small, diff, np.sign(diff)) * (g / n)
        return gd, -gd

    return _emit(np.asarray(val), (pred, target), back)


class DenseLayer:
    """Fully connected layer ``act(W x + b)``; ``bias=False`` drops ``b``."""

    def __init__(self, weight: Tensor, bias: Tensor | None = None, activation: str = "identity"):
        if activation not in ACTIVATIONS:
            raise ValueError(f"unknown activation {activation!r}")
        self.weight = weight
        self.bias = bias
        self.activation = activation

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, n_out: int, *, bias: bool = True,
             activation: str = "identity", name: str = "") -> "DenseLayer":
        bound = np.sqrt(1.0 / n_in)
        w = Tensor(rng.uniform(-bound, bound, size=(n_out, n_in)), True, f"{name}.weight")
        b = Tensor(rng.uniform(-bound, bound, size=n_out), True, f"{name}.bias") if bias else None
        return cls(w, b, activation)

    def __call__(self, x: Tensor) -> Tensor:
        return dense_forward(x, self)

    def parameters(self) -> list[Tensor]:
        return [self.weight] if self.bias is None else [self.weight, self.bias]


def dense_forward(x: Tensor, layer: DenseLayer) -> Tensor:
    return ACTIVATIONS[layer.activation](linear(x, layer.weight, layer.bias))


class DotProductLayer:
    def __init__(self, weight: Tensor, bias: Tensor | None = None):
        self.weight = weight
        self.bias = bias

    def __call__(self, feature: Tensor) -> Tensor:
        return dot_product_forward(feature, self)


def dot_product_forward(feature: Tensor, layer: DotProductLayer) -> Tensor:
    if feature.shape[-1] % layer.weight.shape[-1]:
        raise ValueError(
            f"feature length {feature.shape[-1]} not divisible by d={layer.weight.shape[-1]}")
    return dot_product(feature, layer.weight, layer.bias)


# --- LSTM -------------------------------------------------------------------------

class LSTMWeights:
    """Weights of one LSTM layer, gates stacked in (input, forget, cell, output) order."""

    def __init__(self, w_ih: Tensor, w_hh: Tensor, bias: Tensor):
        self.w_ih = w_ih
        self.w_hh = w_hh
        self.bias = bias

    @property
    def hidden_size(self) -> int:
        return self.w_hh.shape[1]

    @classmethod
    def init(cls, rng: np.random.Generator, n_in: int, hidden: int, name: str = "") -> "LSTMWeights":
        bound = np.sqrt(1.0 / hidden)
        return cls(
            Tensor(rng.uniform(-bound, bound, size=(4 * hidden, n_in)), True, f"{name}.w_ih"),
            Tensor(rng.uniform(-bound, bound, size=(4 * hidden, hidden)), True, f"{name}.w_hh"),
            Tensor(rng.uniform(-bound, bound, size=4 * hidden), True, f"{name}.bias"),
        )

    def parameters(self) -> list[Tensor]:
        return [self.w_ih, self.w_hh, self.bias]


def lstm_cell_forward(x: Tensor, hidden: Tensor, cell: Tensor,
                      weights: LSTMWeights) -> tuple[Tensor, Tensor]:
    H = weights.hidden_size
    if weights.w_ih.shape != (4 * H, x.shape[-1]):
        raise ValueError(f"input width {x.shape[-1]} does not match w_ih {weights.w_ih.shape}")
    if hidden.shape[-1] != H or cell.shape[-1] != H:
        raise ValueError(
            f"hidden/cell widths {hidden.shape[-1]}/{cell.shape[-1]} must equal layer size {H}")
    z = add(linear(x, weights.w_ih, weights.bias), linear(hidden, weights.w_hh))
    i = sigmoid(z[..., 0:H])
    f = sigmoid(z[..., H:2 * H])
    g = tanh(z[..., 2 * H:3 * H])
    o = sigmoid(z[..., 3 * H:4 * H])
    cell_next = f * cell + i * g
    hidden_next = o * tanh(cell_next)
    return hidden_next, cell_next


# --- optimizer --------------------------------------------------------------------

class Adam:
    """Adam with bias-corrected moments (Kingma & Ba form).

    ``step`` updates parameter arrays in place. Learning rate may be changed
    between steps through ``self.lr``.
    """

    def __init__(self, params: Iterable[Tensor], lr: float = 1e-3, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.params = list(params)
        self.lr = lr
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self, grads: Sequence[np.ndarray]) -> None:
        if len(grads) != len(self.params):
            raise ValueError(f"expected {len(self.params)} gradients, got {len(grads)}")
        for k, (p, g) in enumerate(zip(self.params, grads)):
            if g.shape != p.shape:
                raise ValueError(f"gradient shape {g.shape} != parameter shape {p.shape}")
            if not np.all(np.isfinite(g)):
                label = p.name or f"parameter #{k}"
                raise FloatingPointError(f"non-finite gradient for {label}")
        self.t += 1
        b1, b2 = self.beta1, self.beta2
        c1 = 1.0 - b1 ** self.t
        c2 = 1.0 - b2 ** self.t
        for p, g, m, v in zip(self.params, grads, self.m, self.v):
            m *= b1
            m += (1.0 - b1) * g
            v *= b2
            v += (1.0 - b2) * (g * g)
            p.data -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.eps)

    def state_dict(self) -> dict:
        return {"t": self.t, "m": [m.copy() for m in self.m], "v": [v.copy() for v in self.v]}


def adam_step(params: Sequence[Tensor], grads: Sequence[np.ndarray], state: Adam) -> Adam:
    if len(params) != len(state.params) or any(a is not b for a, b in zip(params, state.params)):
        raise ValueError("parameters do not match the optimizer state")
    state.step(grads)
    return state
