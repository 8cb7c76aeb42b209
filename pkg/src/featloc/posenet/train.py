"""Siamese training of the pose network against a frozen field model.

Each training image is paired with a synthetic render at its ground-truth
pose (static mode, the image's own histogram embedding). Batches supervise
pose regression on both branches, a feature term that keeps the extracted
features domain-invariant yet pose-discriminative, and an optional
synthetic-view pool term for generalization to unseen viewpoints.
"""

from __future__ import annotations

import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..geometry import pose_error
from ..hist_nerf import RenderSettings, embed_histogram, render_image
from ..report import median_metrics
from ..viewsynth import ViewSynthConfig, generate_pool
from .losses import (
    TripletBatch,
    pose_l2,
    posenet_loss,
    triplet_loss_mined,
    triplet_loss_original,
)
from .model import PoseRegressor, images_to_batch, raw_to_pose

FEATURE_MODES = ("triplet", "original", "mse")


@dataclass(frozen=True)
class PoseNetSchedule:
    epochs: int = 300
    lr: float = 1e-4
    batch_size: int = 8
    margin: float = 1.0
    feature_levels: tuple = ("fine",)
    # triplet: mined hardest negative; original: fixed negative; mse: plain
    # squared error on the positive pair (the collapse-prone baseline)
    feature_mode: str = "triplet"
    seed: int = 0
    # early stopping: epochs without a new best validation translation median
    patience: int = 200
    # multiply lr by plateau_decay when validation stalls for plateau_window epochs
    plateau_decay: float = 0.95
    plateau_window: int = 50
    # synthetic branch render resolution (upsampled to the network input)
    render_short_side: int = 60
    restore_best: bool = True

    def __post_init__(self):
        if self.epochs < 1:
            raise ValueError("epochs must be >= 1")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 (in-batch negatives)")
        if self.feature_mode not in FEATURE_MODES:
            raise ValueError(f"feature_mode must be one of {FEATURE_MODES}")
        if not self.feature_levels:
            raise ValueError("feature_levels must be nonempty")
        if self.margin <= 0:
            raise ValueError("margin must be positive")


def render_synthetic_view(nerf_model, frame, short_side: int,
                          settings: RenderSettings) -> np.ndarray:
    """Static render at a frame's pose with its own histogram embedding."""
    embedding = embed_histogram(frame.histogram, nerf_model)
    intr = frame.intrinsics.scaled_to_short_side(short_side)
    return render_image(nerf_model, frame.pose, intr, embedding, settings,
                        mode="static").rgb_static


def predict_poses(model: PoseRegressor, images: list, chunk: int = 16) -> list:
    """Eval-mode pose predictions (SVD-projected) for a list of images."""
    was_training = model.training
    model.eval()
    x = images_to_batch(images, model.config.input_short_side,
                        next(model.parameters()).dtype)
    poses = []
    with torch.no_grad():
        for lo in range(0, x.shape[0], chunk):
            raw, _ = model(x[lo:lo + chunk], levels=())
            poses.extend(raw_to_pose(r) for r in raw)
    if was_training:
        model.train()
    return poses


def validation_errors(model: PoseRegressor, frames: list) -> list:
    preds = predict_poses(model, [f.image for f in frames])
    return [pose_error(p, f.pose) for p, f in zip(preds, frames)]


def cross_pose_feature_variance(model: PoseRegressor, images: list,
                                level: str = "fine") -> float:
    """Mean over feature elements of the variance across poses — near zero
    when the feature extractor has collapsed to a constant output."""
    was_training = model.training
    model.eval()
    x = images_to_batch(images, model.config.input_short_side,
                        next(model.parameters()).dtype)
    with torch.no_grad():
        _, feats = model(x, levels=(level,))
    if was_training:
        model.train()
    return float(feats[level].var(dim=0, unbiased=False).mean())


def _feature_term(feats_r: dict, feats_s: dict, schedule: PoseNetSchedule):
    """Feature alignment term, plus (for the mined mode) the smallest
    mined-minus-original loss gap across levels — mining picks the hardest
    negative, so the gap must never be negative."""
    total, gap = None, None
    for level in schedule.feature_levels:
        fr, fs = feats_r[level], feats_s[level]
        if schedule.feature_mode == "mse":
            term = ((fr - fs) ** 2).mean()
        else:
            batch = TripletBatch(fr, fs, fr.roll(1, dims=0), fs.roll(1, dims=0))
            if schedule.feature_mode == "triplet":
                term = triplet_loss_mined(batch, schedule.margin)
                with torch.no_grad():
                    original = triplet_loss_original(batch, schedule.margin)
                    delta = float(term.detach()) - float(original)
                gap = delta if gap is None else min(gap, delta)
            else:
                term = triplet_loss_original(batch, schedule.margin)
        total = term if total is None else total + term
    return total / len(schedule.feature_levels), gap


def train_posenet(dataset, nerf_model, model: PoseRegressor,
                  schedule: PoseNetSchedule, render_settings: RenderSettings,
                  rvs: Optional[ViewSynthConfig] = None) -> tuple:
    """Train the pose network; returns (model, per-epoch metrics list).

    The field model is frozen throughout (synthetic views are pure function
    outputs, so the per-pose renders are computed once and the view-synthesis
    pool every `rvs.refresh_every` epochs). Validation tracks the median
    pose error each epoch; early stopping and the plateau learning-rate decay
    both key off the translation median. Deterministic under the schedule
    seed.
    """
    if not dataset.train:
        raise ValueError("dataset has no training frames")
    if not dataset.val:
        raise ValueError("dataset has no validation frames")
    torch.manual_seed(schedule.seed)
    gen = torch.Generator().manual_seed(schedule.seed)
    rng = np.random.default_rng(schedule.seed)
    dtype = next(model.parameters()).dtype
    short = model.config.input_short_side
    train = dataset.train

    real_x = images_to_batch([f.image for f in train], short, dtype)
    syn_x = images_to_batch(
        [render_synthetic_view(nerf_model, f, schedule.render_short_side,
                               render_settings) for f in train], short, dtype)
    gt34 = torch.stack([torch.as_tensor(f.pose.matrix34(), dtype=dtype)
                        for f in train])

    pool_x = pool_p34 = None

    def refresh_pool():
        nonlocal pool_x, pool_p34
        pool = generate_pool(train, nerf_model, rvs, rng, render_settings)
        pool_x = images_to_batch([s.image for s in pool], short, dtype)
        pool_p34 = torch.stack([torch.as_tensor(s.pose.matrix34(), dtype=dtype)
                                for s in pool])

    if rvs is not None:
        refresh_pool()

    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    lr = schedule.lr
    best_t, best_epoch, best_state = float("inf"), -1, None
    last_decay = 0
    n = len(train)
    metrics = []
    for epoch in range(schedule.epochs):
        t0 = time.time()
        refreshed = (rvs is not None and epoch > 0
                     and epoch % rvs.refresh_every == 0)
        if refreshed:
            refresh_pool()
        model.train()
        perm = torch.randperm(n, generator=gen)
        sums = {"loss": 0.0, "feature": 0.0, "rvs": 0.0, "pose": 0.0}
        n_batches = 0
        min_gap = None
        for lo in range(0, n, schedule.batch_size):
            idx = perm[lo:lo + schedule.batch_size]
            if idx.numel() < 2:
                continue  # a singleton tail has no in-batch negative
            raw_r, feats_r = model(real_x[idx], schedule.feature_levels)
            raw_s, feats_s = model(syn_x[idx], schedule.feature_levels)
            gt = gt34[idx]
            feature, gap = _feature_term(feats_r, feats_s, schedule)
            if gap is not None:
                min_gap = gap if min_gap is None else min(min_gap, gap)
            if pool_x is not None:
                pidx = torch.randint(pool_x.shape[0], (idx.numel(),),
                                     generator=gen)
                raw_p, _ = model(pool_x[pidx], levels=())
                rvs_term = pose_l2(raw_p, pool_p34[pidx]).mean()
            else:
                rvs_term = torch.zeros((), dtype=dtype)
            loss = posenet_loss(gt, raw_r, raw_s, feature, rvs_term)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            pose_term = float(loss.detach()) - float(feature.detach()) \
                - float(rvs_term.detach())
            sums["loss"] += float(loss.detach())
            sums["feature"] += float(feature.detach())
            sums["rvs"] += float(rvs_term.detach())
            sums["pose"] += pose_term
            n_batches += 1

        errors = validation_errors(model, dataset.val)
        val_t, val_r = median_metrics(errors)
        if val_t < best_t:
            best_t, best_epoch = val_t, epoch
            best_state = {k: v.detach().clone()
                          for k, v in model.state_dict().items()}
        elif epoch - max(best_epoch, last_decay) >= schedule.plateau_window:
            lr *= schedule.plateau_decay
            last_decay = epoch
            for group in optimizer.param_groups:
                group["lr"] = lr

        metrics.append({
            "epoch": epoch,
            **{k: v / max(n_batches, 1) for k, v in sums.items()},
            "val_translation": val_t,
            "val_rotation": val_r,
            "lr": lr,
            "pool_refreshed": refreshed,
            # smallest (mined - original) triplet gap seen this epoch; the
            # mined loss upper-bounds the original, so this is never negative
            "mined_minus_original_min": min_gap,
            "seconds": time.time() - t0,
        })
        if epoch - best_epoch >= schedule.patience:
            break

    if schedule.restore_best and best_state is not None:
        model.load_state_dict(best_state)
    return model, metrics
