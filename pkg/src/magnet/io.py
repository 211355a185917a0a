"""Binary dataset (MAGD) and checkpoint (MAGC) files.

All integers and floats are little-endian.

Dataset file::

    b"MAGD" | u16 version | u8 system id | u32 N | u32 d | u32 M | u32 L | f64 dt
    | M*L*N*d f64 values in [sequence][time][agent][dim] order

with a JSON sidecar ``<name>.meta.json`` holding the system parameters and
seed.

Checkpoint file::

    b"MAGC" | u16 version | u8 kind (0 magnet, 1 mlp, 2 lstm)
    | u32 byte length + UTF-8 JSON metadata (arch, N, integration order, dt, ...)
    | u32 D | D f64 standardizer means | D f64 standardizer stds
    | f64 recorded validation loss
    | u32 tensor count
    | per tensor: u16 name length + UTF-8 name | u8 rank | rank * u32 dims | f64 data
"""
from __future__ import annotations

import json
import os
import struct
from pathlib import Path

import numpy as np

from .baselines import LstmBaseline, MlpBaseline, build_lstm_baseline, build_mlp_baseline
from .engine import Tensor
from .model import ArchConfig, MagnetModel, core_names, wrapper_names
from .preprocessing import Standardizer
from .systems import SYSTEM_IDS, SYSTEM_NAMES, Dataset

DATASET_MAGIC = b"MAGD"
CHECKPOINT_MAGIC = b"MAGC"
FORMAT_VERSION = 1
KIND_IDS = {"magnet": 0, "mlp": 1, "lstm": 2}
KIND_NAMES = {v: k for k, v in KIND_IDS.items()}

_DATASET_HEADER = struct.Struct("<4sHBIIIId")


class FormatError(ValueError):
    pass


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def write_dataset(path, dataset: Dataset) -> None:
    m, length, n, d = dataset.states.shape
    header = _DATASET_HEADER.pack(DATASET_MAGIC, FORMAT_VERSION, SYSTEM_IDS[dataset.system],
                                  n, d, m, length, dataset.dt)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(dataset.states, dtype="<f8").tobytes())
    meta = {"system": dataset.system, "seed": dataset.seed, "spec": dataset.spec}
    sidecar_path(path).write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                  encoding="utf-8")


def read_dataset(path) -> Dataset:
    raw = Path(path).read_bytes()
    if len(raw) < _DATASET_HEADER.size or raw[:4] != DATASET_MAGIC:
        raise FormatError(f"{path}: not a MAGD file")
    magic, version, system_id, n, d, m, length, dt = _DATASET_HEADER.unpack_from(raw)
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported MAGD version {version}")
    if system_id not in SYSTEM_NAMES:
        raise FormatError(f"{path}: unknown system id {system_id}")
    expected = 8 * m * length * n * d
    payload = raw[_DATASET_HEADER.size:]
    if len(payload) != expected:
        raise FormatError(f"{path}: payload is {len(payload)} bytes, header "
                          f"(N={n}, d={d}, M={m}, L={length}) implies {expected}")
    states = np.frombuffer(payload, dtype="<f8").astype(np.float64).reshape(m, length, n, d)
    seed, spec = None, {}
    side = sidecar_path(path)
    if side.exists():
        meta = json.loads(side.read_text(encoding="utf-8"))
        seed, spec = meta.get("seed"), meta.get("spec", {})
    return Dataset(SYSTEM_NAMES[system_id], dt, states, seed, spec)


def dataset_io(mode: str, path, dataset: Dataset | None = None):
    if mode == "write":
        write_dataset(path, dataset)
        return path
    if mode == "read":
        return read_dataset(path)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


# --- checkpoints ---------------------------------------------------------------------

def _metadata(model) -> dict:
    if model.kind == "magnet":
        return {"arch": model.arch.to_json(), "n_agents": model.n_agents,
                "order": model.order, "dt": model.dt, "core_frozen": model.core_frozen}
    return {"n_agents": model.n_agents, "state_dim": model.state_dim, "dt": model.dt}


def write_checkpoint(path, model) -> None:
    kind = getattr(model, "kind", None)
    if kind not in KIND_IDS:
        raise FormatError(f"cannot checkpoint model of kind {kind!r}")
    names = [name for name, _ in model.named_tensors()]
    if len(set(names)) != len(names):
        raise FormatError("tensor names must be unique")
    meta = json.dumps(_metadata(model), sort_keys=True).encode("utf-8")
    std = model.standardizer
    parts = [CHECKPOINT_MAGIC, struct.pack("<HB", FORMAT_VERSION, KIND_IDS[kind]),
             struct.pack("<I", len(meta)), meta,
             struct.pack("<I", std.dim), std.mean.astype("<f8").tobytes(),
             std.std.astype("<f8").tobytes(),
             struct.pack("<d", model.validation_loss),
             struct.pack("<I", len(names))]
    for name, t in model.named_tensors():
        encoded = name.encode("utf-8")
        parts.append(struct.pack("<H", len(encoded)))
        parts.append(encoded)
        parts.append(struct.pack("<B", t.data.ndim))
        parts.append(struct.pack(f"<{t.data.ndim}I", *t.data.shape))
        parts.append(np.ascontiguousarray(t.data, dtype="<f8").tobytes())
    tmp = f"{path}.tmp"
    with open(tmp, "wb") as fh:
        fh.write(b"".join(parts))
    os.replace(tmp, path)


class _Reader:
    def __init__(self, raw: bytes, path):
        self.raw = raw
        self.pos = 0
        self.path = path

    def take(self, n: int) -> bytes:
        if self.pos + n > len(self.raw):
            raise FormatError(f"{self.path}: truncated checkpoint (needed {n} bytes at offset "
                              f"{self.pos}, file has {len(self.raw)})")
        out = self.raw[self.pos:self.pos + n]
        self.pos += n
        return out

    def unpack(self, fmt: str):
        s = struct.Struct(fmt)
        return s.unpack(self.take(s.size))

    def floats(self, count: int) -> np.ndarray:
        return np.frombuffer(self.take(8 * count), dtype="<f8").astype(np.float64)


def read_checkpoint(path):
    raw = Path(path).read_bytes()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise FormatError(f"{path}: not a MAGC file")
    r = _Reader(raw, path)
    r.take(4)
    version, kind_id = r.unpack("<HB")
    if version != FORMAT_VERSION:
        raise FormatError(f"{path}: unsupported MAGC version {version}")
    if kind_id not in KIND_NAMES:
        raise FormatError(f"{path}: unknown model kind tag {kind_id}")
    kind = KIND_NAMES[kind_id]
    (meta_len,) = r.unpack("<I")
    meta = json.loads(r.take(meta_len).decode("utf-8"))
    (dim,) = r.unpack("<I")
    standardizer = Standardizer(r.floats(dim), r.floats(dim))
    (val_loss,) = r.unpack("<d")
    (count,) = r.unpack("<I")
    tensors: dict[str, np.ndarray] = {}
    for _ in range(count):
        (name_len,) = r.unpack("<H")
        name = r.take(name_len).decode("utf-8")
        (rank,) = r.unpack("<B")
        shape = r.unpack(f"<{rank}I") if rank else ()
        data = r.floats(int(np.prod(shape, dtype=np.int64))).reshape(shape)
        if name in tensors:
            raise FormatError(f"{path}: duplicate tensor {name!r}")
        tensors[name] = data
    if r.pos != len(raw):
        raise FormatError(f"{path}: {len(raw) - r.pos} trailing bytes after tensor table")
    model = _assemble(kind, meta, standardizer, tensors, path)
    model.validation_loss = val_loss
    return model


def _take_tensors(tensors: dict, names: list[str], path) -> dict[str, Tensor]:
    missing = [n for n in names if n not in tensors]
    if missing:
        raise FormatError(f"{path}: missing tensors {missing}")
    return {n: Tensor(tensors[n], True, n) for n in names}


def _load_into(model, tensors: dict, path) -> None:
    expected = dict(model.named_tensors())
    if set(expected) != set(tensors):
        raise FormatError(f"{path}: tensor table does not match a {model.kind} model")
    for name, t in expected.items():
        if t.data.shape != tensors[name].shape:
            raise FormatError(f"{path}: tensor {name!r} has shape {tensors[name].shape}, "
                              f"expected {t.data.shape}")
        t.data = tensors[name].copy()


def _assemble(kind: str, meta: dict, standardizer: Standardizer, tensors: dict, path):
    if kind == "magnet":
        arch = ArchConfig(**meta["arch"])
        n = meta["n_agents"]
        if set(tensors) != set(core_names()) | set(wrapper_names(n)):
            raise FormatError(f"{path}: tensor table does not match a {n}-agent model")
        core = _take_tensors(tensors, core_names(), path)
        wrapper = _take_tensors(tensors, wrapper_names(n), path)
        return MagnetModel(arch, n, meta["dt"], meta["order"], standardizer, core, wrapper,
                           core_frozen=meta.get("core_frozen", False))
    build = build_mlp_baseline if kind == "mlp" else build_lstm_baseline
    model = build(meta["n_agents"], meta["state_dim"], seed=0, dt=meta["dt"],
                  standardizer=standardizer)
    _load_into(model, tensors, path)
    return model


def checkpoint_io(mode: str, path, model=None):
    if mode == "write":
        write_checkpoint(path, model)
        return path
    if mode == "read":
        return read_checkpoint(path)
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")


__all__ = ["FormatError", "read_dataset", "write_dataset", "dataset_io", "read_checkpoint",
           "write_checkpoint", "checkpoint_io", "sidecar_path", "MlpBaseline", "LstmBaseline"]
