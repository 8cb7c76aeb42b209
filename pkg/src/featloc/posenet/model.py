"""Pose-regression network with multi-level feature heads.

A five-block convolutional encoder feeds two outputs: a pose head that
regresses 12 numbers (a 3x4 camera-to-world matrix, rotation block projected
onto SO(3)), and per-level feature heads tapped from the end of the first,
third, and fifth blocks before pooling. Feature maps are bilinearly
upsampled back to the input resolution so they can be compared
location-by-location across images.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..geometry import Pose, svd_orthonormalize

LEVEL_NAMES = ("fine", "middle", "coarse")


@dataclass(frozen=True)
class PoseNetConfig:
    # channel width after each of the five encoder blocks
    widths: tuple = (16, 32, 64, 96, 96)
    # feature heads: Conv(kernels) -> ReLU -> Conv(channels) -> BatchNorm
    feature_kernels: int = 64
    feature_channels: int = 128
    # encoder blocks whose pre-pool activations feed the fine/middle/coarse heads
    feature_taps: tuple = (1, 3, 5)
    # images are resized so their shorter side matches this before the network
    input_short_side: int = 240
    fc_dim: int = 64

    def __post_init__(self):
        if len(self.widths) != 5 or any(w < 1 for w in self.widths):
            raise ValueError("widths must be five positive channel counts")
        taps = tuple(self.feature_taps)
        if len(taps) != 3 or list(taps) != sorted(set(taps)) or \
                taps[0] < 1 or taps[-1] > 5:
            raise ValueError("feature_taps must be three increasing blocks in 1..5")
        if min(self.feature_kernels, self.feature_channels, self.fc_dim,
               self.input_short_side) < 1:
            raise ValueError("layer sizes must be positive")
        object.__setattr__(self, "widths", tuple(int(w) for w in self.widths))
        object.__setattr__(self, "feature_taps", taps)


@dataclass(frozen=True)
class FeatureMap:
    """One upsampled feature map: data is (H, W, C), level names the tap."""

    data: np.ndarray
    level: str

    def __post_init__(self):
        if self.level not in LEVEL_NAMES:
            raise ValueError(f"level must be one of {LEVEL_NAMES}")
        if self.data.ndim != 3:
            raise ValueError("feature data must be H x W x C")


class _Block(nn.Module):
    """Two 3x3 conv + ReLU layers, then 2x max pooling."""

    def __init__(self, c_in: int, c_out: int):
        super().__init__()
        self.convs = nn.Sequential(
            nn.Conv2d(c_in, c_out, 3, padding=1), nn.ReLU(),
            nn.Conv2d(c_out, c_out, 3, padding=1), nn.ReLU(),
        )
        self.pool = nn.MaxPool2d(2, ceil_mode=True)


def _feature_head(c_in: int, kernels: int, channels: int) -> nn.Sequential:
    return nn.Sequential(
        nn.Conv2d(c_in, kernels, 3, padding=1), nn.ReLU(),
        nn.Conv2d(kernels, channels, 3, padding=1),
        nn.BatchNorm2d(channels),
    )


class PoseRegressor(nn.Module):
    """The pose estimator (encoder + pose head) plus the feature extractor
    heads that share its encoder."""

    def __init__(self, config: PoseNetConfig = PoseNetConfig()):
        super().__init__()
        self.config = config
        c_in = 3
        blocks = []
        for w in config.widths:
            blocks.append(_Block(c_in, w))
            c_in = w
        self.blocks = nn.ModuleList(blocks)
        self.feature_heads = nn.ModuleDict({
            name: _feature_head(config.widths[tap - 1], config.feature_kernels,
                                config.feature_channels)
            for name, tap in zip(LEVEL_NAMES, config.feature_taps)
        })
        self.pose_fc = nn.Sequential(
            nn.Linear(config.widths[-1], config.fc_dim), nn.ReLU(),
            nn.Linear(config.fc_dim, 12),
        )

    @property
    def tap_for_level(self) -> dict:
        return dict(zip(LEVEL_NAMES, self.config.feature_taps))

    def pose_estimator_parameters(self):
        """Parameters of the pose estimator only (encoder + pose head);
        excludes the feature heads."""
        yield from self.blocks.parameters()
        yield from self.pose_fc.parameters()

    def forward(self, x: torch.Tensor, levels: tuple = LEVEL_NAMES) -> tuple:
        """(B, 3, H, W) -> (raw (B, 3, 4) pose matrices, {level: (B, C, H, W)}).

        Only the requested levels' heads are evaluated. The raw pose output
        is not orthonormalized; see predicted_pose / rotation gradients in
        the matching stage for the two projection paths.
        """
        unknown = set(levels) - set(LEVEL_NAMES)
        if unknown:
            raise ValueError(f"unknown feature levels {sorted(unknown)}")
        size = x.shape[-2:]
        level_of_tap = {tap: name for name, tap in self.tap_for_level.items()}
        feats = {}
        h = x
        for i, block in enumerate(self.blocks, start=1):
            h = block.convs(h)
            name = level_of_tap.get(i)
            if name is not None and name in levels:
                f = self.feature_heads[name](h)
                feats[name] = F.interpolate(f, size=size, mode="bilinear",
                                            align_corners=False)
            h = block.pool(h)
        pooled = F.adaptive_avg_pool2d(h, 1).flatten(1)
        raw = self.pose_fc(pooled).view(-1, 3, 4)
        return raw, feats


def image_to_tensor(image: np.ndarray, short_side: int,
                    dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """(H, W, 3) array in [0, 1] -> (1, 3, h, w) tensor with the shorter side
    resized to `short_side` (bilinear)."""
    if image.ndim != 3 or image.shape[2] != 3:
        raise ValueError("image must be H x W x 3")
    t = torch.as_tensor(np.ascontiguousarray(image), dtype=dtype)
    t = t.permute(2, 0, 1).unsqueeze(0)
    return resize_to_short_side(t, short_side)


def resize_to_short_side(t: torch.Tensor, short_side: int) -> torch.Tensor:
    """Resize (B, C, H, W) so min(H, W) == short_side, preserving aspect."""
    h, w = t.shape[-2:]
    if min(h, w) == short_side:
        return t
    s = short_side / min(h, w)
    return F.interpolate(t, size=(max(1, round(h * s)), max(1, round(w * s))),
                         mode="bilinear", align_corners=False)


def images_to_batch(images: list, short_side: int,
                    dtype: torch.dtype = torch.float32) -> torch.Tensor:
    """Stack same-shape images into one (B, 3, h, w) batch."""
    return torch.cat([image_to_tensor(im, short_side, dtype) for im in images])


def raw_to_pose(raw: torch.Tensor) -> Pose:
    """One raw (3, 4) network output -> valid Pose via SVD projection."""
    m = raw.detach().cpu().numpy().reshape(3, 4).astype(np.float64)
    return Pose(rotation=svd_orthonormalize(m[:, :3]), translation=m[:, 3])


def predict_pose(model: PoseRegressor, image: np.ndarray,
                 levels: tuple = LEVEL_NAMES) -> tuple:
    """Convenience inference: (Pose, [FeatureMap ...]) for one image.

    Runs in eval mode without gradients; the rotation block is projected
    onto the nearest rotation so the result always satisfies Pose invariants.
    """
    was_training = model.training
    model.eval()
    try:
        with torch.no_grad():
            x = image_to_tensor(image, model.config.input_short_side,
                                next(model.parameters()).dtype)
            raw, feats = model(x, levels)
    finally:
        if was_training:
            model.train()
    maps = [FeatureMap(data=feats[name][0].permute(1, 2, 0).numpy(), level=name)
            for name in LEVEL_NAMES if name in feats]
    return raw_to_pose(raw[0]), maps
