"""Flat key=value run configuration.

One file configures a whole experiment; stage-specific keys live under the
section prefixes ``nerf.``, ``dfnet.``, ``rvs.``, ``dm.`` (plus ``toy.`` for
fixture generation). Unknown keys are hard errors naming the key, so typos
cannot silently fall back to defaults. ``--override key=value`` applies after
the file; the FEATLOC_SEED environment variable overrides ``seed`` last.
"""

from __future__ import annotations

import os
from pathlib import Path

SEED_ENV_VAR = "FEATLOC_SEED"


class ConfigError(ValueError):
    """Malformed configuration: unknown key, bad value, or bad syntax."""


def _bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("true", "yes", "1", "on"):
        return True
    if lowered in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _ints(text: str) -> tuple:
    return tuple(int(part) for part in text.split(","))


def _floats(text: str) -> tuple:
    return tuple(float(part) for part in text.split(","))


def _names(text: str) -> tuple:
    return tuple(part.strip() for part in text.split(",") if part.strip())


# key -> (parser, default). Defaults mirror the library constructors at
# paper scale; toy-scale runs override them in the config file.
SCHEMA = {
    "scene_dir": (str, ""),
    "output_dir": (str, ""),
    "seed": (int, 0),
    # which pose checkpoint eval/refine/plot use: auto picks the
    # direct-matching finetuned one when present
    "pose_checkpoint": (str, "auto"),
    # render this many validation frames for the eval report's PSNR block
    # (0 skips rendering; requires nerf.ckpt)
    "eval_psnr_frames": (int, 8),

    "toy.n_blobs": (int, 5),
    "toy.n_train": (int, 100),
    "toy.n_val": (int, 50),
    "toy.n_unlabeled": (int, 20),
    "toy.image_size": (int, 60),
    "toy.exposure_split": (_bool, True),
    "toy.n_quad": (int, 768),

    "nerf.mlp_width": (int, 128),
    "nerf.base_depth": (int, 8),
    "nerf.head_depth": (int, 4),
    "nerf.n_freqs_position": (int, 10),
    "nerf.n_freqs_direction": (int, 4),
    # 0 means auto: 1 / far bound of the scene
    "nerf.position_scale": (float, 0.0),
    "nerf.epochs": (int, 600),
    "nerf.lr": (float, 5e-4),
    "nerf.lr_decay": (float, 5e-4),
    "nerf.ray_batch": (int, 1024),
    # 0 means every training pixel once per epoch
    "nerf.rays_per_epoch": (int, 0),
    "nerf.n_coarse": (int, 64),
    "nerf.n_fine": (int, 64),
    "nerf.lambda_u": (float, 0.01),
    "nerf.use_histogram": (_bool, True),
    "nerf.ray_chunk": (int, 4096),
    "nerf.render_split": (str, "val"),
    "nerf.render_count": (int, 8),
    "nerf.render_mode": (str, "composite"),
    # 0 renders at the dataset's native resolution
    "nerf.render_short_side": (int, 0),

    "dfnet.widths": (_ints, (16, 32, 64, 96, 96)),
    "dfnet.feature_kernels": (int, 64),
    "dfnet.feature_channels": (int, 128),
    "dfnet.feature_taps": (_ints, (1, 3, 5)),
    "dfnet.input_short_side": (int, 240),
    "dfnet.fc_dim": (int, 64),
    "dfnet.epochs": (int, 300),
    "dfnet.lr": (float, 1e-4),
    "dfnet.batch_size": (int, 8),
    "dfnet.margin": (float, 1.0),
    "dfnet.feature_levels": (_names, ("fine",)),
    "dfnet.feature_mode": (str, "triplet"),
    "dfnet.patience": (int, 200),
    "dfnet.plateau_decay": (float, 0.95),
    "dfnet.plateau_window": (int, 50),
    "dfnet.render_short_side": (int, 60),
    "dfnet.restore_best": (_bool, True),

    "rvs.enabled": (_bool, True),
    "rvs.t_psi": (float, 0.2),
    "rvs.r_phi_deg": (float, 10.0),
    "rvs.d_max": (float, 0.2),
    "rvs.refresh_every": (int, 20),
    "rvs.pool_multiplier": (float, 1.0),
    "rvs.max_attempts": (int, 16),
    "rvs.render_short_side": (int, 60),

    "dm.learning_rate": (float, 1e-5),
    "dm.batch_size": (int, 1),
    "dm.feature_levels": (_names, ("fine",)),
    "dm.max_steps": (int, 100),
    "dm.early_stop_patience": (int, 200),
    "dm.loss_reduction": (str, "sum"),
    "dm.render_short_side": (int, 60),
    "dm.refine_steps": (int, 100),
    "dm.refine_frame": (str, "val/frame-000000"),
    "dm.landscape_frames": (int, 8),
    "dm.landscape_translations": (_floats, (0.0, 0.05, 0.1, 0.15, 0.2, 0.3)),
    "dm.landscape_rotations_deg": (_floats, (0.0, 2.0, 5.0, 10.0)),
}


def _apply(config: dict, key: str, value: str, where: str):
    if key not in SCHEMA:
        raise ConfigError(f"unknown config key: {key} ({where})")
    parser, _ = SCHEMA[key]
    try:
        config[key] = parser(value)
    except ValueError as exc:
        raise ConfigError(f"bad value for {key}: {exc} ({where})") from exc


def parse_config_text(text: str, where: str = "config") -> dict:
    """Defaults plus the assignments in `text` (one `key = value` per line;
    blank lines and # comments ignored)."""
    config = {key: default for key, (_, default) in SCHEMA.items()}
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(
                f"expected key = value, got {line!r} ({where}:{lineno})")
        key, value = (part.strip() for part in line.split("=", 1))
        _apply(config, key, value, f"{where}:{lineno}")
    return config


def load_config(path, overrides: tuple = (), env: dict = None) -> dict:
    """Resolved configuration: file, then --override pairs, then the seed
    environment variable."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    config = parse_config_text(path.read_text(), where=str(path))
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override must be key=value, got {item!r}")
        key, value = (part.strip() for part in item.split("=", 1))
        _apply(config, key, value, "--override")
    env = os.environ if env is None else env
    seed_text = env.get(SEED_ENV_VAR, "")
    if seed_text:
        try:
            config["seed"] = int(seed_text)
        except ValueError as exc:
            raise ConfigError(
                f"bad value for {SEED_ENV_VAR}: {seed_text!r}") from exc
    return config


def require(config: dict, key: str) -> str:
    value = config[key]
    if not value:
        raise ConfigError(f"missing required config key: {key}")
    return value
