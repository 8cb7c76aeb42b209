"""Versioned single-file checkpoints for field and pose-network models.

Layout: a dict with a magic string, format version, model kind, config echo,
parameter tensors, and model-specific extras. Loading verifies the header
and, when the caller supplies an expected config, refuses mismatches instead
of silently reshaping.
"""

from __future__ import annotations

import dataclasses
from pathlib import Path

import numpy as np
import torch

MAGIC = "featloc-checkpoint"
FORMAT_VERSION = 1


class BadCheckpoint(ValueError):
    """File is not a readable checkpoint of the expected kind/version."""


class ConfigMismatch(ValueError):
    """Checkpoint config does not match the expected model config."""


def _config_dict(config) -> dict:
    return dataclasses.asdict(config)


def save_checkpoint(path, kind: str, config, state_dict: dict, extras: dict = None):
    payload = {
        "magic": MAGIC,
        "format_version": FORMAT_VERSION,
        "kind": kind,
        "config": _config_dict(config),
        "state_dict": {k: v.detach().cpu() for k, v in state_dict.items()},
        "extras": extras or {},
    }
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save(payload, path)


def load_checkpoint(path, kind: str, expected_config=None) -> dict:
    try:
        payload = torch.load(path, map_location="cpu", weights_only=False)
    except Exception as e:
        raise BadCheckpoint(f"{path}: cannot read ({e})") from None
    if not isinstance(payload, dict) or payload.get("magic") != MAGIC:
        raise BadCheckpoint(f"{path}: missing checkpoint magic")
    if payload.get("format_version") != FORMAT_VERSION:
        raise BadCheckpoint(f"{path}: unsupported format version "
                            f"{payload.get('format_version')}")
    if payload.get("kind") != kind:
        raise BadCheckpoint(f"{path}: checkpoint kind {payload.get('kind')!r}, "
                            f"expected {kind!r}")
    if expected_config is not None:
        want = _config_dict(expected_config)
        if payload["config"] != want:
            raise ConfigMismatch(f"{path}: config {payload['config']} does not "
                                 f"match expected {want}")
    return payload


def save_nerf(path, model):
    save_checkpoint(path, "hist_nerf", model.config, model.state_dict(),
                    extras={"alignment": model.alignment.matrix().tolist()})


def load_nerf(path, expected_config=None):
    from .geometry import Pose
    from .hist_nerf.encoding import EncodingConfig
    from .hist_nerf.model import HistNerfModel, NerfConfig

    payload = load_checkpoint(path, "hist_nerf", expected_config)
    cfg_dict = dict(payload["config"])
    cfg_dict["encoding"] = EncodingConfig(**cfg_dict["encoding"])
    model = HistNerfModel(NerfConfig(**cfg_dict))
    model.load_state_dict(payload["state_dict"])
    model.alignment = Pose.from_matrix(np.array(payload["extras"]["alignment"]))
    return model


def save_posenet(path, model):
    save_checkpoint(path, "posenet", model.config, model.state_dict())


def load_posenet(path, expected_config=None):
    from .posenet.model import PoseNetConfig, PoseRegressor

    payload = load_checkpoint(path, "posenet", expected_config)
    model = PoseRegressor(PoseNetConfig(**payload["config"]))
    model.load_state_dict(payload["state_dict"])
    return model
