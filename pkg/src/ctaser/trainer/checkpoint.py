"""Checkpoints: params.json + one SEQF file per parameter tensor.

The directory also carries ``config.json`` with the full run configuration,
the stream geometry, and the epoch/metric that selected the snapshot, so a
checkpoint alone is enough to rebuild the model and reproduce its forward
pass bit-exactly.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ctaser.config import RunConfig, config_from_dict
from ctaser.features.seqf import read_seqf, write_seqf
from ctaser.fusion import build_model


class CheckpointError(ValueError):
    pass


def save_checkpoint(out_dir, params: dict, run_config: RunConfig, stream_dims: dict,
                    selection: dict) -> None:
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    index = {}
    for name, p in params.items():
        arr = np.asarray(p.data if hasattr(p, "data") else p)
        fname = f"{name}.seqf"
        stored = arr
        if arr.ndim == 1:
            stored = arr.reshape(1, -1)  # SEQF carries 2-D/3-D; true shape kept in the index
        write_seqf(out_dir / fname, stored)
        index[name] = {"shape": list(arr.shape), "dtype": str(arr.dtype), "file": fname}
    with open(out_dir / "params.json", "w", encoding="utf-8") as fh:
        json.dump(index, fh, indent=1, sort_keys=True)
    meta = {
        "config": run_config.to_dict(),
        "stream_dims": {k: list(v) for k, v in stream_dims.items()},
        "n_classes": len(run_config.train.classes),
        "selection": selection,
    }
    with open(out_dir / "config.json", "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=1, sort_keys=True)


def load_checkpoint(ckpt_dir):
    """Returns (run_config, stream_dims, selection, {name: np.ndarray})."""
    ckpt_dir = Path(ckpt_dir)
    try:
        index = json.loads((ckpt_dir / "params.json").read_text(encoding="utf-8"))
        meta = json.loads((ckpt_dir / "config.json").read_text(encoding="utf-8"))
    except FileNotFoundError as e:
        raise CheckpointError(f"{ckpt_dir}: not a checkpoint directory ({e.filename} missing)") from e
    run_config = config_from_dict(meta["config"])
    stream_dims = {k: tuple(v) for k, v in meta["stream_dims"].items()}
    arrays = {}
    for name, entry in index.items():
        arr = read_seqf(ckpt_dir / entry["file"])
        arrays[name] = arr.reshape(entry["shape"]).astype(entry["dtype"], copy=False)
    return run_config, stream_dims, meta["selection"], arrays


def restore_model(ckpt_dir):
    """Rebuild the model a checkpoint was saved from and load its weights."""
    run_config, stream_dims, selection, arrays = load_checkpoint(ckpt_dir)
    rng = np.random.default_rng(0)  # initializer values are overwritten below
    model = build_model(run_config.model, stream_dims, len(run_config.train.classes), rng)
    params = model.parameters()
    missing = sorted(set(params) - set(arrays))
    extra = sorted(set(arrays) - set(params))
    if missing or extra:
        raise CheckpointError(f"{ckpt_dir}: parameter mismatch (missing {missing}, unexpected {extra})")
    for name, p in params.items():
        if tuple(arrays[name].shape) != p.shape:
            raise CheckpointError(
                f"{ckpt_dir}: {name} has shape {arrays[name].shape}, model expects {p.shape}"
            )
        p.data = arrays[name].astype(p.data.dtype, copy=True)
    return model, run_config, stream_dims, selection
