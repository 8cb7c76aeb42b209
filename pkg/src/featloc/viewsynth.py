"""Synthetic-view pool generation: perturb training poses, render the
perturbed views with the exposure (histogram embedding) of the nearest
training image, and feed them back as extra pose-supervision samples.

The pool is cheap to regenerate (low-resolution static renders), so training
refreshes it periodically to keep showing the pose network novel views.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
import torch

from .geometry import Pose, nearest_training_pose, perturb_pose, pose_error, save_pose_file
from .hist_nerf import RenderSettings, embed_histogram, render_image


@dataclass(frozen=True)
class ViewSynthConfig:
    # translation noise bound (scene units) and rotation noise bound (degrees)
    t_psi: float = 0.2
    r_phi_deg: float = 10.0
    # maximum allowed distance from a perturbed pose to its nearest training pose
    d_max: float = 0.2
    # regenerate the pool every this many epochs
    refresh_every: int = 20
    # pool size as a fraction of the training-set size
    pool_multiplier: float = 1.0
    # rejection-sampling cap before falling back to an unperturbed translation
    max_attempts: int = 16
    # renders use this short side; consumers upsample to their input size
    render_short_side: int = 60

    def __post_init__(self):
        if min(self.t_psi, self.r_phi_deg, self.d_max) < 0:
            raise ValueError("noise bounds must be nonnegative")
        if self.refresh_every < 1 or self.max_attempts < 1:
            raise ValueError("refresh_every and max_attempts must be >= 1")
        if self.pool_multiplier <= 0:
            raise ValueError("pool_multiplier must be positive")


@dataclass(frozen=True, eq=False)
class ViewSynthSample:
    """One synthetic training sample: the perturbed pose, its render, and the
    index of the training frame it was perturbed from."""

    pose: Pose
    image: np.ndarray
    source_index: int


def _draw_pose(source: Pose, train_poses: list, cfg: ViewSynthConfig,
               rng: np.random.Generator) -> Pose:
    """Perturb `source`, rejecting draws that stray more than d_max from the
    nearest training pose; after max_attempts, keep the translation fixed so
    the bound holds by construction."""
    for _ in range(cfg.max_attempts):
        cand = perturb_pose(source, cfg.t_psi, cfg.r_phi_deg, rng)
        nearest = nearest_training_pose(cand, train_poses)
        d = float(np.linalg.norm(cand.translation
                                 - train_poses[nearest].translation))
        if d <= cfg.d_max:
            return cand
    return perturb_pose(source, 0.0, cfg.r_phi_deg, rng)


def generate_pool(train_frames: list, nerf_model, cfg: ViewSynthConfig,
                  rng: np.random.Generator,
                  render_settings: RenderSettings) -> list:
    """Build a pool of ViewSynthSamples from a frozen field model.

    Each selected training pose is perturbed within (t_psi, r_phi_deg) and
    rendered static-mode at cfg.render_short_side using the histogram
    embedding of the training image nearest (in camera center) to the
    perturbed pose. Deterministic given the rng state.
    """
    if not train_frames:
        raise ValueError("train_frames must be nonempty")
    train_poses = [f.pose for f in train_frames]
    n_pool = max(1, round(cfg.pool_multiplier * len(train_frames)))
    # cycle through training poses so multiplier 1.0 perturbs each exactly once
    source_indices = [i % len(train_frames) for i in range(n_pool)]
    pool = []
    for src in source_indices:
        frame = train_frames[src]
        cand = _draw_pose(frame.pose, train_poses, cfg, rng)
        nearest = nearest_training_pose(cand, train_poses)
        _check_bounds(cand, frame.pose, train_poses[nearest], cfg)
        embedding = embed_histogram(train_frames[nearest].histogram, nerf_model)
        intr = frame.intrinsics.scaled_to_short_side(cfg.render_short_side)
        out = render_image(nerf_model, cand, intr, embedding, render_settings,
                           mode="static")
        pool.append(ViewSynthSample(pose=cand, image=out.rgb_static,
                                    source_index=src))
    return pool


def _check_bounds(cand: Pose, source: Pose, nearest: Pose, cfg: ViewSynthConfig):
    err = pose_error(cand, source)
    tol = 1e-9
    # the arccos in the angle extraction is noisy near identity, so the
    # rotation bound gets the repo-wide 1e-5 degree slack
    if err.translation_error > cfg.t_psi + tol or \
            err.rotation_error > cfg.r_phi_deg + 1e-5:
        raise AssertionError("perturbed pose escaped its noise bounds")
    d = float(np.linalg.norm(cand.translation - nearest.translation))
    if d > cfg.d_max + tol:
        raise AssertionError("perturbed pose violates the d_max bound")


def sample_pose_loss(sample: ViewSynthSample, model) -> torch.Tensor:
    """Pose-supervision term for one pool sample: L2 distance between the
    sample's pose and the network's prediction on its rendered image, on
    flattened 3x4 matrices."""
    from .posenet.losses import pose_l2
    from .posenet.model import image_to_tensor

    x = image_to_tensor(sample.image, model.config.input_short_side,
                        next(model.parameters()).dtype)
    raw, _ = model(x, levels=())
    target = torch.as_tensor(sample.pose.matrix34(), dtype=raw.dtype)
    return pose_l2(raw[0], target).squeeze(0)


def dump_pool(pool: list, directory) -> None:
    """Optional offline inspection dump: posed-folder layout plus a manifest
    of (pose file, image file, source_index) triples."""
    from .data.images import write_image

    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = []
    for i, sample in enumerate(pool):
        stem = f"sample-{i:06d}"
        save_pose_file(directory / f"{stem}.pose.txt", sample.pose)
        write_image(directory / f"{stem}.ppm", sample.image)
        lines.append(f"{stem}.pose.txt {stem}.ppm {sample.source_index}")
    (directory / "manifest.txt").write_text("\n".join(lines) + "\n")
