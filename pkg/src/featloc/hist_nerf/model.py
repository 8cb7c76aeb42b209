"""Histogram-conditioned radiance field.

Three subnetworks: a base MLP mapping encoded position to a sampling density
and a feature vector z, a static head mapping (z, encoded view direction,
static histogram embedding) to the scene's persistent density and color, and
a transient head mapping (z, transient histogram embedding) to a
per-capture density, color, and uncertainty beta. The histogram embeddings
are learned linear maps of the image's luminance histogram, so rendering can
be conditioned on a target image's exposure.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass, field

import torch
import torch.nn.functional as F
from torch import nn

from ..data.histogram import LuminanceHistogram
from ..geometry import Pose
from .encoding import EncodingConfig, directional_encode, positional_encode


class BinCountMismatch(ValueError):
    """Histogram bin count does not match the model's configured count."""


@dataclass(frozen=True)
class NerfConfig:
    mlp_width: int = 128
    base_depth: int = 8
    head_depth: int = 4
    encoding: EncodingConfig = field(default_factory=EncodingConfig)
    n_bins: int = 10
    static_embed_dim: int = 50
    transient_embed_dim: int = 20
    beta_min: float = 0.03
    # positions are multiplied by this before encoding; set to ~1/far so the
    # encoded coordinates land in the unit range the frequencies cover
    position_scale: float = 1.0

    def __post_init__(self):
        if self.mlp_width < 1 or self.base_depth < 1 or self.head_depth < 1:
            raise ValueError("network dimensions must be positive")
        if self.beta_min <= 0:
            raise ValueError("beta_min must be positive")


@dataclass(frozen=True)
class HistogramEmbedding:
    """Learned static/transient conditioning vectors for one histogram."""

    static_vec: torch.Tensor
    transient_vec: torch.Tensor

    def __post_init__(self):
        if not bool(torch.isfinite(self.static_vec).all()) or \
           not bool(torch.isfinite(self.transient_vec).all()):
            raise ValueError("embedding entries must be finite")


FieldOutputs = namedtuple("FieldOutputs", [
    "sigma_base", "z", "sigma_static", "color_static",
    "sigma_transient", "color_transient", "beta"])


def _head_mlp(in_dim: int, width: int, depth: int) -> nn.Sequential:
    layers = [nn.Linear(in_dim, width), nn.ReLU()]
    for _ in range(depth - 1):
        layers += [nn.Linear(width, width), nn.ReLU()]
    return nn.Sequential(*layers)


class HistNerfModel(nn.Module):
    """Base/static/transient networks plus histogram embedding maps.

    `alignment` is the world-frame normalization applied to training poses;
    rendering composes it onto incoming poses so callers stay in the
    original dataset frame.
    """

    def __init__(self, config: NerfConfig = NerfConfig()):
        super().__init__()
        self.config = config
        enc = config.encoding
        pos_dim, dir_dim = enc.position_dim(), enc.direction_dim()
        w = config.mlp_width
        # base trunk, with the standard re-injection of the encoded input
        # halfway down when deep enough to benefit
        self.skip_at = config.base_depth // 2 if config.base_depth >= 5 else None
        layers = []
        for i in range(config.base_depth):
            d_in = pos_dim if i == 0 else w
            if self.skip_at is not None and i == self.skip_at:
                d_in = w + pos_dim
            layers.append(nn.Linear(d_in, w))
        self.base_layers = nn.ModuleList(layers)
        self.base_sigma = nn.Linear(w, 1)
        # color used only for the coarse pass's own photometric supervision
        self.base_color = nn.Linear(w, 3)
        self.static_mlp = _head_mlp(w + dir_dim + config.static_embed_dim, w, config.head_depth)
        self.static_sigma = nn.Linear(w, 1)
        self.static_color = nn.Linear(w, 3)
        self.transient_mlp = _head_mlp(w + config.transient_embed_dim, w, config.head_depth)
        self.transient_sigma = nn.Linear(w, 1)
        self.transient_color = nn.Linear(w, 3)
        self.transient_beta = nn.Linear(w, 1)
        self.embed_static = nn.Linear(config.n_bins, config.static_embed_dim)
        self.embed_transient = nn.Linear(config.n_bins, config.transient_embed_dim)
        self.alignment = Pose.identity()

    @property
    def beta_min(self) -> float:
        return self.config.beta_min

    def query_base(self, points: torch.Tensor) -> tuple:
        """Encoded-position trunk: (..., 3) -> sigma_base (...,), z (..., W),
        coarse color (..., 3)."""
        x = positional_encode(points * self.config.position_scale, self.config.encoding)
        h = x
        for i, layer in enumerate(self.base_layers):
            if self.skip_at is not None and i == self.skip_at:
                h = torch.cat([h, x], dim=-1)
            h = F.relu(layer(h))
        sigma = F.softplus(self.base_sigma(h)).squeeze(-1)
        color = torch.sigmoid(self.base_color(h))
        return sigma, h, color

    def query_static(self, z: torch.Tensor, directions: torch.Tensor,
                     static_vec: torch.Tensor) -> tuple:
        """(z, unit view direction, static embedding) -> sigma_s, color_s."""
        d = directions / directions.norm(dim=-1, keepdim=True)
        d_enc = directional_encode(d, self.config.encoding)
        h = self.static_mlp(torch.cat([z, d_enc, static_vec], dim=-1))
        return F.softplus(self.static_sigma(h)).squeeze(-1), torch.sigmoid(self.static_color(h))

    def query_transient(self, z: torch.Tensor, transient_vec: torch.Tensor) -> tuple:
        """(z, transient embedding) -> sigma_t, color_t, beta >= beta_min."""
        h = self.transient_mlp(torch.cat([z, transient_vec], dim=-1))
        sigma = F.softplus(self.transient_sigma(h)).squeeze(-1)
        color = torch.sigmoid(self.transient_color(h))
        beta = self.config.beta_min + F.softplus(self.transient_beta(h)).squeeze(-1)
        return sigma, color, beta

    def embed_bins(self, bins: torch.Tensor) -> HistogramEmbedding:
        """Linear maps from (..., n_bins) histogram mass to the two
        conditioning vectors."""
        if bins.shape[-1] != self.config.n_bins:
            raise BinCountMismatch(
                f"model expects {self.config.n_bins} bins, got {bins.shape[-1]}")
        return HistogramEmbedding(self.embed_static(bins), self.embed_transient(bins))

    def zero_embedding(self, batch_shape: tuple = ()) -> HistogramEmbedding:
        """All-zero conditioning vectors (the ablation arm)."""
        p = self.embed_static.weight
        return HistogramEmbedding(
            torch.zeros(*batch_shape, self.config.static_embed_dim, dtype=p.dtype, device=p.device),
            torch.zeros(*batch_shape, self.config.transient_embed_dim, dtype=p.dtype, device=p.device))


def embed_histogram(h: LuminanceHistogram, model: HistNerfModel) -> HistogramEmbedding:
    """Embed one luminance histogram with the model's learned linear maps."""
    if h.n_bins != model.config.n_bins:
        raise BinCountMismatch(f"model expects {model.config.n_bins} bins, got {h.n_bins}")
    p = model.embed_static.weight
    bins = torch.as_tensor(h.bins, dtype=p.dtype, device=p.device)
    return model.embed_bins(bins)


def query_field(model: HistNerfModel, points: torch.Tensor, directions: torch.Tensor,
                embedding: HistogramEmbedding) -> FieldOutputs:
    """Evaluate all three subnetworks at a batch of points.

    `points` and `directions` share leading shape (..., 3); embedding vectors
    are broadcast over the leading dimensions when 1-D.
    """
    sigma_b, z, _ = model.query_base(points)
    static_vec = embedding.static_vec.expand(*points.shape[:-1], -1)
    transient_vec = embedding.transient_vec.expand(*points.shape[:-1], -1)
    sigma_s, color_s = model.query_static(z, directions, static_vec)
    sigma_t, color_t, beta = model.query_transient(z, transient_vec)
    return FieldOutputs(sigma_b, z, sigma_s, color_s, sigma_t, color_t, beta)
