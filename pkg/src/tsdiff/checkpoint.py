"""Versioned checkpoint container: named arrays + preprocessing state.

A checkpoint is a single .npz holding every parameter (row-major float64),
the Adam moment buffers, and a JSON metadata entry with the format version,
the full run configuration, the standardization table, the horizon variance,
and the training-loop state needed for bit-identical resumption.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .autodiff import ParameterStore
from .config import Config
from .errors import CheckpointError

FORMAT_NAME = "tsdiff-checkpoint"
FORMAT_VERSION = 1


@dataclass
class TrainState:
    epoch: int = 0
    rng_state: dict | None = None


@dataclass
class Checkpoint:
    params: ParameterStore
    config: Config
    feature_mean: np.ndarray | None = None
    feature_std: np.ndarray | None = None
    horizon_variance: float = 0.0
    train_state: TrainState = field(default_factory=TrainState)


def save_checkpoint(path, ckpt: Checkpoint) -> None:
    meta = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "config": ckpt.config.to_dict(),
        "horizon_variance": float(ckpt.horizon_variance),
        "standardized": ckpt.feature_mean is not None,
        "adam_step": ckpt.params.step_count,
        "epoch": ckpt.train_state.epoch,
        "rng_state": ckpt.train_state.rng_state,
        "param_names": ckpt.params.names(),
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode("utf-8"), dtype=np.uint8)}
    for name, value in ckpt.params.params.items():
        arrays[f"param/{name}"] = value
        arrays[f"adam_m/{name}"] = ckpt.params.adam_m[name]
        arrays[f"adam_v/{name}"] = ckpt.params.adam_v[name]
    if ckpt.feature_mean is not None:
        arrays["std/mean"] = ckpt.feature_mean
        arrays["std/std"] = ckpt.feature_std
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)


def load_checkpoint(path) -> Checkpoint:
    try:
        with np.load(path) as data:
            arrays = {k: data[k] for k in data.files}
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if "__meta__" not in arrays:
        raise CheckpointError(f"{path}: not a checkpoint (missing metadata)")
    meta = json.loads(bytes(arrays["__meta__"].tobytes()).decode("utf-8"))
    if meta.get("format") != FORMAT_NAME:
        raise CheckpointError(f"{path}: unknown container format {meta.get('format')!r}")
    if meta.get("version") != FORMAT_VERSION:
        raise CheckpointError(
            f"{path}: checkpoint version {meta.get('version')} != supported {FORMAT_VERSION}"
        )
    ps = ParameterStore()
    for name in meta["param_names"]:
        key = f"param/{name}"
        if key not in arrays:
            raise CheckpointError(f"{path}: missing parameter payload {name!r}")
        ps.add(name, arrays[key])
        ps.adam_m[name] = np.asarray(arrays[f"adam_m/{name}"], dtype=np.float64)
        ps.adam_v[name] = np.asarray(arrays[f"adam_v/{name}"], dtype=np.float64)
    ps.step_count = int(meta.get("adam_step", 0))
    mean = arrays.get("std/mean")
    std = arrays.get("std/std")
    return Checkpoint(
        params=ps,
        config=Config.from_dict(meta["config"]),
        feature_mean=None if mean is None else np.asarray(mean, dtype=np.float64),
        feature_std=None if std is None else np.asarray(std, dtype=np.float64),
        horizon_variance=float(meta.get("horizon_variance", 0.0)),
        train_state=TrainState(
            epoch=int(meta.get("epoch", 0)),
            rng_state=meta.get("rng_state"),
        ),
    )
