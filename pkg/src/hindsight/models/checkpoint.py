"""Versioned binary checkpoint container shared by all models.

Layout: magic bytes, format version, a JSON header (role tag, latent/obs
specs, trainer config, training-step counter), then named little-endian
parameter and optimizer-moment blobs. Forward and reverse world models and
the policy share the format, distinguished by the role tag.
"""
from __future__ import annotations

import json
import struct
from dataclasses import asdict
from pathlib import Path

import numpy as np
import torch

MAGIC = b"HSWM"
VERSION = 1

_DTYPES = {0: np.float32, 1: np.int64, 2: np.float64}
_DTYPE_CODES = {np.dtype(np.float32): 0, np.dtype(np.int64): 1, np.dtype(np.float64): 2}


class CheckpointError(RuntimeError):
    pass


def _write_blob(fh, name: str, array: np.ndarray) -> None:
    encoded = name.encode()
    array = np.ascontiguousarray(array)
    if array.dtype not in _DTYPE_CODES:
        array = array.astype(np.float32)
    fh.write(struct.pack("<H", len(encoded)))
    fh.write(encoded)
    fh.write(struct.pack("<BB", _DTYPE_CODES[array.dtype], array.ndim))
    fh.write(struct.pack(f"<{array.ndim}I", *array.shape))
    raw = array.tobytes()
    fh.write(struct.pack("<Q", len(raw)))
    fh.write(raw)


def _read_blob(fh) -> tuple[str, np.ndarray]:
    (name_len,) = struct.unpack("<H", fh.read(2))
    name = fh.read(name_len).decode()
    code, ndim = struct.unpack("<BB", fh.read(2))
    shape = struct.unpack(f"<{ndim}I", fh.read(4 * ndim)) if ndim else ()
    (nbytes,) = struct.unpack("<Q", fh.read(8))
    array = np.frombuffer(fh.read(nbytes), dtype=_DTYPES[code]).reshape(shape)
    return name, array


def _collect_blobs(model) -> dict[str, np.ndarray]:
    blobs = {f"param.{k}": v.detach().cpu().numpy() for k, v in model.state_dict().items()}
    param_names = {id(p): name for name, p in model.named_parameters()}
    for param, state in model.opt.state.items():
        name = param_names.get(id(param))
        if name is None:
            continue
        for key in ("exp_avg", "exp_avg_sq", "step"):
            if key in state:
                value = state[key]
                value = value.detach().cpu().numpy() if torch.is_tensor(value) else np.float32(value)
                blobs[f"opt.{name}.{key}"] = np.asarray(value)
    return blobs


def save_model(path: Path | str, model) -> None:
    header = {
        "role": model.role,
        "latent_spec": asdict(model.latent),
        "obs_spec": asdict(model.obs_spec),
        "config": asdict(model.config),
        "train_steps": model.train_steps,
    }
    blobs = _collect_blobs(model)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        header_bytes = json.dumps(header, sort_keys=True).encode()
        fh.write(struct.pack("<I", len(header_bytes)))
        fh.write(header_bytes)
        fh.write(struct.pack("<I", len(blobs)))
        for name in sorted(blobs):
            _write_blob(fh, name, blobs[name])


def read_checkpoint(path: Path | str) -> tuple[dict, dict[str, np.ndarray]]:
    path = Path(path)
    with path.open("rb") as fh:
        if fh.read(4) != MAGIC:
            raise CheckpointError(f"{path}: bad magic bytes")
        (version,) = struct.unpack("<I", fh.read(4))
        if version != VERSION:
            raise CheckpointError(f"{path}: unsupported version {version}")
        (header_len,) = struct.unpack("<I", fh.read(4))
        header = json.loads(fh.read(header_len))
        (count,) = struct.unpack("<I", fh.read(4))
        blobs = dict(_read_blob(fh) for _ in range(count))
    return header, blobs


def peek_role(path: Path | str) -> str:
    header, _ = read_checkpoint(path)
    return header["role"]


def load_model(path: Path | str, expected_role: str | None = None):
    """Rebuild a model from its checkpoint, including optimizer moments."""
    from .encoding import ObsSpec
    from .nets import LatentSpec
    from .worldmodel import ForwardWorldModel, WorldModelConfig

    header, blobs = read_checkpoint(path)
    role = header["role"]
    if expected_role is not None and role != expected_role:
        raise CheckpointError(f"{path}: role {role!r}, expected {expected_role!r}")
    obs_spec = ObsSpec(**header["obs_spec"])
    latent = LatentSpec(**header["latent_spec"])
    if role == "forward":
        model = ForwardWorldModel(obs_spec, latent, WorldModelConfig(**header["config"]))
    elif role == "reverse":
        from .reverse import ReverseWorldModel

        model = ReverseWorldModel(obs_spec, latent, WorldModelConfig(**header["config"]))
    elif role == "policy":
        from ..agent import ActorCritic, PolicyConfig

        model = ActorCritic(latent, PolicyConfig(**header["config"]))
    else:
        raise CheckpointError(f"{path}: unknown role {role!r}")

    state = {k[len("param.") :]: torch.as_tensor(v.copy()) for k, v in blobs.items() if k.startswith("param.")}
    model.load_state_dict(state)
    model.train_steps = int(header["train_steps"])

    param_by_name = dict(model.named_parameters())
    opt_state = {}
    for key, value in blobs.items():
        if not key.startswith("opt."):
            continue
        name, field = key[len("opt.") :].rsplit(".", 1)
        if name in param_by_name:
            opt_state.setdefault(param_by_name[name], {})[field] = torch.as_tensor(value.copy())
    for param, state_entry in opt_state.items():
        model.opt.state[param] = state_entry
    return model
