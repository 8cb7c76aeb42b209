"""Feature-metric direct matching: compare a real image against a render at
the predicted pose in feature space, and descend that loss.

Used three ways: semi-supervised finetuning of the pose estimator on
unlabeled images, single-image pose refinement, and the offset-vs-loss
landscape diagnostic. Gradients flow from the loss through the feature
extractor, the render, and the differentiable ray construction back into
the pose prediction; the feature pathway (backbone + heads) defines the
matching metric and stays frozen during optimization.
"""

from __future__ import annotations

import copy
import hashlib
import math
import time
from dataclasses import dataclass

import numpy as np
import torch

from .geometry import Intrinsics, Pose, axis_angle_rotation
from .hist_nerf import RenderSettings, embed_histogram, render_image
from .hist_nerf.render import render_rays
from .posenet.losses import cosine_dissimilarity_map
from .posenet.model import (
    PoseRegressor,
    image_to_tensor,
    images_to_batch,
    raw_to_pose,
    resize_to_short_side,
)

LOSS_REDUCTIONS = ("sum", "mean")


@dataclass(frozen=True)
class MatchConfig:
    learning_rate: float = 1e-5
    batch_size: int = 1
    feature_levels: tuple = ("fine",)
    # total optimizer steps (one step = one batch)
    max_steps: int = 100
    # stop after this many steps without a new best loss
    early_stop_patience: int = 200
    loss_reduction: str = "sum"
    render_short_side: int = 60

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not self.feature_levels:
            raise ValueError("feature_levels must be nonempty")
        if self.loss_reduction not in LOSS_REDUCTIONS:
            raise ValueError(f"loss_reduction must be one of {LOSS_REDUCTIONS}")
        if self.batch_size < 1 or self.max_steps < 0:
            raise ValueError("batch_size >= 1 and max_steps >= 0 required")


def dm_loss(m: torch.Tensor, m_tilde: torch.Tensor,
            reduction: str = "sum") -> torch.Tensor:
    """Direct-matching loss: per-location cosine dissimilarity, summed over
    locations (paper form) or averaged (resolution-independent form).
    Zero-norm locations contribute exactly 1."""
    if reduction not in LOSS_REDUCTIONS:
        raise ValueError(f"reduction must be one of {LOSS_REDUCTIONS}")
    dmap = cosine_dissimilarity_map(m, m_tilde)
    return dmap.sum() if reduction == "sum" else dmap.mean()


def gram_schmidt_rotation(m: torch.Tensor) -> torch.Tensor:
    """Differentiable projection of a 3x3 matrix onto a rotation.

    Orthonormalizes the first two columns and completes with their cross
    product, so det is +1 by construction. Unlike the SVD projection this
    has a stable backward pass, which matters because matching gradients
    flow through the rotation into the rays.
    """
    c0, c1 = m[..., :, 0], m[..., :, 1]
    b0 = c0 / torch.linalg.vector_norm(c0, dim=-1, keepdim=True).clamp(min=1e-12)
    c1 = c1 - (b0 * c1).sum(dim=-1, keepdim=True) * b0
    b1 = c1 / torch.linalg.vector_norm(c1, dim=-1, keepdim=True).clamp(min=1e-12)
    b2 = torch.linalg.cross(b0, b1, dim=-1)
    return torch.stack([b0, b1, b2], dim=-1)


def pose_rays_torch(rotation: torch.Tensor, translation: torch.Tensor,
                    intr: Intrinsics) -> tuple:
    """Differentiable twin of geometry.pixel_rays: world rays through every
    pixel center, row-major, unit directions."""
    dtype = rotation.dtype
    cx, cy = intr.principal_point
    u = torch.arange(intr.width, dtype=dtype) + 0.5
    v = torch.arange(intr.height, dtype=dtype) + 0.5
    vv, uu = torch.meshgrid(v, u, indexing="ij")
    d_cam = torch.stack([(uu - cx) / intr.focal, (vv - cy) / intr.focal,
                         torch.ones_like(uu)], dim=-1).reshape(-1, 3)
    d = d_cam @ rotation.T
    d = d / torch.linalg.vector_norm(d, dim=-1, keepdim=True)
    o = translation.expand_as(d)
    return o, d


def render_static_at_pose(nerf_model, rotation: torch.Tensor,
                          translation: torch.Tensor, intr: Intrinsics,
                          embedding, settings: RenderSettings,
                          detach_sampling: bool = True) -> torch.Tensor:
    """Static-mode render at a pose given as tensors, keeping the gradient
    path from the output image back to (rotation, translation) open.
    Returns (H, W, 3); values lie in [0, 1) by construction (weights sum
    below 1, colors from a sigmoid), so no clamp cuts the gradients."""
    align = nerf_model.alignment
    a_r = torch.as_tensor(align.rotation, dtype=rotation.dtype)
    a_t = torch.as_tensor(align.translation, dtype=rotation.dtype)
    o, d = pose_rays_torch(a_r @ rotation, a_r @ translation + a_t, intr)
    rows = []
    for lo in range(0, o.shape[0], settings.ray_chunk):
        out = render_rays(nerf_model, o[lo:lo + settings.ray_chunk],
                          d[lo:lo + settings.ray_chunk], embedding, settings,
                          mode="static", deterministic=True,
                          detach_sampling=detach_sampling)
        rows.append(out["rgb_static"])
    return torch.cat(rows, dim=0).reshape(intr.height, intr.width, 3)


def parameter_hash(module: torch.nn.Module) -> str:
    """SHA-256 over all named parameters and buffers (so frozen weights AND
    frozen normalization statistics are both covered)."""
    h = hashlib.sha256()
    items = sorted(list(module.named_parameters()) + list(module.named_buffers()))
    for name, tensor in items:
        h.update(name.encode())
        h.update(tensor.detach().cpu().numpy().tobytes())
    return h.hexdigest()


class _FrozenFeatureExtractor:
    """Context: the feature pathway (backbone blocks + feature heads) takes
    no gradient and runs in eval mode (frozen normalization statistics), so
    the matching metric — features of real images and of renders — is
    identical before and after matching-based optimization. Only the pose
    head may move. Everything is restored on exit, and a parameter/buffer
    hash asserts the metric really did not drift."""

    def __init__(self, model: PoseRegressor):
        self.model = model
        self.modules = (model.blocks, model.feature_heads)

    def __enter__(self):
        self.requires = [[p.requires_grad for p in m.parameters()]
                         for m in self.modules]
        self.training = [m.training for m in self.modules]
        for m in self.modules:
            for p in m.parameters():
                p.requires_grad_(False)
            m.eval()
        self.hashes_before = [parameter_hash(m) for m in self.modules]
        return self

    def __exit__(self, *exc):
        for m, flags, training in zip(self.modules, self.requires,
                                      self.training):
            for p, r in zip(m.parameters(), flags):
                p.requires_grad_(r)
            m.train(training)
        if [parameter_hash(m) for m in self.modules] != self.hashes_before:
            raise AssertionError("feature extractor changed during matching")
        return False


def _matching_step(model: PoseRegressor, nerf_model, frames: list,
                   cfg: MatchConfig, settings: RenderSettings,
                   optimizer) -> tuple:
    """One optimizer step on a batch of frames; returns (loss, grad_norm)."""
    x = images_to_batch([f.image for f in frames],
                        model.config.input_short_side,
                        next(model.parameters()).dtype)
    raw, feats_real = model(x, cfg.feature_levels)
    rendered = []
    for b, frame in enumerate(frames):
        rotation = gram_schmidt_rotation(raw[b, :, :3])
        translation = raw[b, :, 3]
        embedding = embed_histogram(frame.histogram, nerf_model)
        intr = frame.intrinsics.scaled_to_short_side(cfg.render_short_side)
        img = render_static_at_pose(nerf_model, rotation, translation, intr,
                                    embedding, settings)
        rendered.append(img.permute(2, 0, 1))
    syn = resize_to_short_side(torch.stack(rendered),
                               model.config.input_short_side)
    _, feats_syn = model(syn, cfg.feature_levels)
    loss = None
    for level in cfg.feature_levels:
        term = dm_loss(feats_real[level], feats_syn[level], cfg.loss_reduction)
        loss = term if loss is None else loss + term
    loss = loss / len(cfg.feature_levels)
    optimizer.zero_grad()
    loss.backward()
    grad_sq = 0.0
    for group in optimizer.param_groups:
        for p in group["params"]:
            if p.grad is not None:
                grad_sq += float(p.grad.detach().square().sum())
    optimizer.step()
    return float(loss.detach()), math.sqrt(grad_sq)


def finetune_unlabeled(model: PoseRegressor, nerf_model, unlabeled: list,
                       cfg: MatchConfig, settings: RenderSettings) -> tuple:
    """Semi-supervised finetuning on images without pose labels.

    Per batch: predict poses, render at the predictions (fresh every step so
    pose gradients flow), and descend the feature-matching loss with respect
    to the pose head only — the feature pathway is the matching metric and
    stays frozen, otherwise the objective can be gamed by drifting the
    features themselves. Returns (model, per-step log).
    """
    if not unlabeled:
        raise ValueError("no unlabeled frames")
    for frame in unlabeled:
        if frame.pose is not None:
            raise ValueError("unlabeled frames must not carry poses; "
                             "finetuning never reads ground truth")
    log = []
    optimizer = torch.optim.Adam(model.pose_fc.parameters(),
                                 lr=cfg.learning_rate)
    best, best_step = float("inf"), 0
    step = 0
    with _FrozenFeatureExtractor(model):
        model.pose_fc.train()
        while step < cfg.max_steps:
            for lo in range(0, len(unlabeled), cfg.batch_size):
                if step >= cfg.max_steps:
                    break
                frames = unlabeled[lo:lo + cfg.batch_size]
                t0 = time.time()
                loss, grad_norm = _matching_step(model, nerf_model, frames,
                                                 cfg, settings, optimizer)
                log.append({"step": step, "loss": loss,
                            "grad_norm": grad_norm,
                            "frames": [f.name for f in frames],
                            "seconds": time.time() - t0})
                if loss < best:
                    best, best_step = loss, step
                step += 1
            if step - best_step >= cfg.early_stop_patience:
                break
    return model, log


def refine_single(model: PoseRegressor, nerf_model, image: np.ndarray,
                  intrinsics: Intrinsics, cfg: MatchConfig,
                  steps: int, settings: RenderSettings) -> list:
    """Single-image refinement on a throwaway copy of the pose estimator.

    Returns the pose trajectory: the initial prediction followed by the
    prediction after each optimizer step (length steps + 1)."""
    from .data.dataset import make_frame

    work = copy.deepcopy(model)
    frame = make_frame(image, None, intrinsics, "refine-target",
                       n_bins=nerf_model.config.n_bins)
    optimizer = torch.optim.Adam(work.pose_fc.parameters(),
                                 lr=cfg.learning_rate)
    trajectory = [_current_pose(work, image)]
    with _FrozenFeatureExtractor(work):
        work.pose_fc.train()
        for _ in range(steps):
            _matching_step(work, nerf_model, [frame], cfg, settings, optimizer)
            trajectory.append(_current_pose(work, image))
    return trajectory


def _current_pose(model: PoseRegressor, image: np.ndarray) -> Pose:
    # restore per-module training flags: a blanket .train() would unfreeze
    # the feature heads' normalization statistics
    modes = [(m, m.training) for m in model.modules()]
    model.eval()
    with torch.no_grad():
        x = image_to_tensor(image, model.config.input_short_side,
                            next(model.parameters()).dtype)
        raw, _ = model(x, levels=())
    for module, training in modes:
        module.training = training
    return raw_to_pose(raw[0])


def offset_pose(pose: Pose, delta_t: float, delta_r_deg: float,
                seed: int = 0) -> Pose:
    """Perturb a pose by exactly delta_t scene units and delta_r_deg degrees
    in directions that are a pure function of (delta_t, delta_r_deg, seed),
    so repeated offsets reproduce the same perturbed pose."""
    ss = np.random.SeedSequence([seed, int(round(delta_t * 1e9)),
                                 int(round(delta_r_deg * 1e9))])
    rng = np.random.default_rng(ss)

    def unit():
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
        while n < 1e-12:
            v = rng.normal(size=3)
            n = np.linalg.norm(v)
        return v / n

    translation = pose.translation + unit() * delta_t
    rotation = axis_angle_rotation(unit(), math.radians(delta_r_deg)) @ pose.rotation
    return Pose(rotation=rotation, translation=translation)


def loss_landscape(model: PoseRegressor, nerf_model, frame, offsets: list,
                   cfg: MatchConfig, settings: RenderSettings,
                   seed: int = 0) -> list:
    """Evaluate dm_loss at poses offset from a posed frame's ground truth.

    Returns rows (delta_t, delta_r_deg, dm_loss); pure evaluation, no
    training. Duplicate offsets yield identical loss values.
    """
    if frame.pose is None:
        raise ValueError("loss_landscape needs a posed frame")
    was_training = model.training
    model.eval()
    dtype = next(model.parameters()).dtype
    embedding = embed_histogram(frame.histogram, nerf_model)
    intr = frame.intrinsics.scaled_to_short_side(cfg.render_short_side)
    rows = []
    with torch.no_grad():
        x = image_to_tensor(frame.image, model.config.input_short_side, dtype)
        _, feats_real = model(x, cfg.feature_levels)
        for delta_t, delta_r in offsets:
            pose = offset_pose(frame.pose, delta_t, delta_r, seed)
            out = render_image(nerf_model, pose, intr, embedding, settings,
                               mode="static")
            syn = image_to_tensor(out.rgb_static,
                                  model.config.input_short_side, dtype)
            _, feats_syn = model(syn, cfg.feature_levels)
            value = 0.0
            for level in cfg.feature_levels:
                value += float(dm_loss(feats_real[level], feats_syn[level],
                                       cfg.loss_reduction))
            rows.append((delta_t, delta_r, value / len(cfg.feature_levels)))
    if was_training:
        model.train()
    return rows
