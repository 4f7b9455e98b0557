"""Checkpoint archives: one zip holding named tensors and a JSON manifest.

The archive layout is `manifest.json` plus `params.npz` (named arrays).
Manifests carry everything needed to rebuild the model: config, skeleton
descriptions, and the seed of the producing run.
"""

from __future__ import annotations

import hashlib
import io
import json
import zipfile

import numpy as np
import torch

from .config import ModelConfig
from .errors import ConfigError
from .skeleton import Skeleton


def save_checkpoint(path, state_dict, manifest):
    """Write parameters (name -> tensor/array) and a manifest dict."""
    arrays = {
        name: tensor.detach().cpu().numpy() if torch.is_tensor(tensor) else
        np.asarray(tensor)
        for name, tensor in state_dict.items()
    }
    buf = io.BytesIO()
    np.savez(buf, **arrays)
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
        zf.writestr("manifest.json", json.dumps(manifest, indent=2, sort_keys=True))
        zf.writestr("params.npz", buf.getvalue())


def load_checkpoint(path):
    """Read back (params: {name: ndarray}, manifest: dict)."""
    try:
        with zipfile.ZipFile(path, "r") as zf:
            manifest = json.loads(zf.read("manifest.json"))
            with zf.open("params.npz") as f:
                archive = np.load(io.BytesIO(f.read()))
                params = {name: archive[name] for name in archive.files}
    except (OSError, KeyError, zipfile.BadZipFile, json.JSONDecodeError) as exc:
        raise ConfigError(f"unreadable checkpoint {path}: {exc}") from exc
    return params, manifest


def checkpoint_hash(path):
    """sha256 of the archive file, for run manifests."""
    digest = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            digest.update(chunk)
    return digest.hexdigest()


def _load_into(model, params):
    state = {name: torch.as_tensor(array) for name, array in params.items()}
    model.load_state_dict(state)
    return model.eval()


def save_stage_one(path, model, seed=None):
    manifest = {
        "kind": "stage1",
        "config": model.config.to_dict(),
        "skeleton": model.skeleton.to_dict(),
        "seed": seed,
    }
    save_checkpoint(path, model.state_dict(), manifest)


def load_stage_one(path):
    from .style_embedding import StageOneModel

    params, manifest = load_checkpoint(path)
    if manifest.get("kind") != "stage1":
        raise ConfigError(
            f"{path} is a {manifest.get('kind')!r} checkpoint, expected stage1"
        )
    model = StageOneModel(
        Skeleton.from_dict(manifest["skeleton"]),
        ModelConfig.from_dict(manifest["config"]),
    )
    return _load_into(model, params)


def save_tsd(path, model, seed=None, schedule=None):
    manifest = {
        "kind": "tsd",
        "config": model.config.to_dict(),
        "skeleton": model.skeleton.to_dict(),
        "stage1_config": model.stage1.config.to_dict(),
        "stage1_skeleton": model.stage1.skeleton.to_dict(),
        "fps": model.fps,
        "seed": seed,
        "schedule": schedule,
    }
    save_checkpoint(path, model.state_dict(), manifest)


def load_tsd(path):
    from .diffusion import TsdModel
    from .style_embedding import StageOneModel

    params, manifest = load_checkpoint(path)
    if manifest.get("kind") != "tsd":
        raise ConfigError(
            f"{path} is a {manifest.get('kind')!r} checkpoint, expected tsd"
        )
    stage1 = StageOneModel(
        Skeleton.from_dict(manifest["stage1_skeleton"]),
        ModelConfig.from_dict(manifest["stage1_config"]),
    )
    model = TsdModel(
        stage1,
        Skeleton.from_dict(manifest["skeleton"]),
        ModelConfig.from_dict(manifest["config"]),
        fps=manifest.get("fps", 30.0),
    )
    _load_into(model, params)
    return model, manifest
