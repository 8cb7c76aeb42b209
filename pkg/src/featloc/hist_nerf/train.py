"""Field training: uncertainty-weighted photometric loss and the epoch loop."""

from __future__ import annotations

import math
import time
from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..geometry import pixel_rays, recenter_poses
from .model import HistNerfModel
from .render import RenderSettings, render_rays


@dataclass(frozen=True)
class NerfSchedule:
    epochs: int = 600
    lr: float = 5e-4
    # lr(epoch) = lr * exp(-lr_decay * epoch)
    lr_decay: float = 5e-4
    ray_batch: int = 1024
    # rays drawn per epoch; None means every training pixel once
    rays_per_epoch: Optional[int] = None
    n_coarse: int = 64
    n_fine: int = 64
    lambda_u: float = 0.01
    seed: int = 0
    use_histogram: bool = True
    # per-epoch PSNR is tracked on this many rays from held-out frames
    holdout_rays: int = 512


def nerf_loss(output: dict, target_rgb: torch.Tensor, lambda_u: float = 0.01) -> torch.Tensor:
    """Training loss for a ray batch.

    Coarse term: squared error of the base-only composite. Fine term:
    squared error attenuated by the per-ray uncertainty, plus log beta^2 / 2,
    plus lambda_u times the mean transient density. Channel residuals are
    summed per ray; all terms are averaged over rays.
    """
    coarse = ((output["rgb_coarse"] - target_rgb) ** 2).sum(dim=-1).mean()
    beta = output["beta"]
    fine = (((output["rgb_composite"] - target_rgb) ** 2).sum(dim=-1)
            / (2.0 * beta**2)).mean()
    fine = fine + torch.log(beta**2).mean() / 2.0
    fine = fine + lambda_u * output["sigma_transient"].mean()
    return coarse + fine


def train_nerf(dataset, model: HistNerfModel, schedule: NerfSchedule) -> tuple:
    """Train the field on a posed dataset; returns (model, per-epoch metrics).

    Poses are recentered (alignment stored on the model); each ray is
    conditioned on its own frame's histogram. Deterministic under a fixed
    schedule seed.
    """
    if not dataset.train:
        raise ValueError("dataset has no training frames")
    torch.manual_seed(schedule.seed)
    gen = torch.Generator().manual_seed(schedule.seed)

    recentered, alignment = recenter_poses([f.pose for f in dataset.train])
    model.alignment = alignment
    near, far = dataset.scene_bounds
    settings = RenderSettings(near=near, far=far, n_coarse=schedule.n_coarse,
                              n_fine=schedule.n_fine)
    dtype = model.embed_static.weight.dtype

    rays_o, rays_d, targets, hists = [], [], [], []
    for frame, pose in zip(dataset.train, recentered):
        o, d = pixel_rays(pose, frame.intrinsics)
        rays_o.append(torch.as_tensor(o, dtype=dtype))
        rays_d.append(torch.as_tensor(d, dtype=dtype))
        targets.append(torch.as_tensor(frame.image.reshape(-1, 3), dtype=dtype))
        h = torch.as_tensor(frame.histogram.bins, dtype=dtype)
        hists.append(h.expand(o.shape[0], -1))
    rays_o = torch.cat(rays_o)
    rays_d = torch.cat(rays_d)
    targets = torch.cat(targets)
    hists = torch.cat(hists)
    n_total = rays_o.shape[0]

    holdout = _holdout_rays(dataset, model, schedule, dtype, gen)
    optimizer = torch.optim.Adam(model.parameters(), lr=schedule.lr)
    metrics = []
    for epoch in range(schedule.epochs):
        lr = schedule.lr * math.exp(-schedule.lr_decay * epoch)
        for group in optimizer.param_groups:
            group["lr"] = lr
        order = torch.randperm(n_total, generator=gen)
        if schedule.rays_per_epoch is not None:
            order = order[: schedule.rays_per_epoch]
        epoch_loss, n_batches = 0.0, 0
        t0 = time.time()
        for lo in range(0, order.shape[0], schedule.ray_batch):
            idx = order[lo:lo + schedule.ray_batch]
            if schedule.use_histogram:
                embedding = model.embed_bins(hists[idx])
            else:
                embedding = model.zero_embedding((idx.shape[0],))
            out = render_rays(model, rays_o[idx], rays_d[idx], embedding, settings,
                              mode="composite", deterministic=False, generator=gen)
            loss = nerf_loss(out, targets[idx], schedule.lambda_u)
            optimizer.zero_grad()
            loss.backward()
            optimizer.step()
            epoch_loss += float(loss.detach())
            n_batches += 1
        metrics.append({
            "epoch": epoch,
            "loss": epoch_loss / max(n_batches, 1),
            "psnr_holdout": _eval_holdout(model, holdout, settings, schedule),
            "lr": lr,
            "seconds": time.time() - t0,
        })
    return model, metrics


def _holdout_rays(dataset, model, schedule, dtype, gen) -> Optional[dict]:
    """A fixed ray subset from held-out frames (val when present, else the
    tail of train) for the per-epoch PSNR track."""
    frames = dataset.val if dataset.val else dataset.train[-2:]
    o_all, d_all, rgb_all, hist_all = [], [], [], []
    for frame in frames:
        pose = model.alignment.compose(frame.pose) if frame.pose else None
        if pose is None:
            continue
        o, d = pixel_rays(pose, frame.intrinsics)
        o_all.append(torch.as_tensor(o, dtype=dtype))
        d_all.append(torch.as_tensor(d, dtype=dtype))
        rgb_all.append(torch.as_tensor(frame.image.reshape(-1, 3), dtype=dtype))
        h = torch.as_tensor(frame.histogram.bins, dtype=dtype)
        hist_all.append(h.expand(o.shape[0], -1))
    if not o_all:
        return None
    o = torch.cat(o_all)
    pick = torch.randperm(o.shape[0], generator=gen)[: schedule.holdout_rays]
    return {"o": o[pick], "d": torch.cat(d_all)[pick],
            "rgb": torch.cat(rgb_all)[pick], "hist": torch.cat(hist_all)[pick]}


def _eval_holdout(model, holdout, settings, schedule) -> float:
    if holdout is None:
        return float("nan")
    with torch.no_grad():
        if schedule.use_histogram:
            embedding = model.embed_bins(holdout["hist"])
        else:
            embedding = model.zero_embedding((holdout["o"].shape[0],))
        out = render_rays(model, holdout["o"], holdout["d"], embedding, settings,
                          mode="composite", deterministic=True)
        mse = float(((out["rgb_composite"].clamp(0, 1) - holdout["rgb"]) ** 2).mean())
    return 10.0 * math.log10(1.0 / mse) if mse > 0 else float("inf")
