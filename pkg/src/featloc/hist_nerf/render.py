"""Volumetric rendering: stratified coarse sampling, inverse-transform fine
sampling, alpha compositing, and full-image rendering."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np
import torch

from ..geometry import Intrinsics, Pose, pixel_rays
from .model import HistNerfModel, HistogramEmbedding


class NonMonotonicDepths(ValueError):
    """Sample depths along a ray must be strictly increasing."""


@dataclass(frozen=True)
class RenderSettings:
    near: float
    far: float
    n_coarse: int = 64
    n_fine: int = 64
    short_side: int = 60
    white_background: bool = False
    ray_chunk: int = 4096

    def __post_init__(self):
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        if self.n_coarse < 1 or self.n_fine < 1:
            raise ValueError("sample counts must be at least 1")


@dataclass(frozen=True)
class RenderOutput:
    """Full-image render: color maps in [0,1], per-ray depth and uncertainty,
    per-sample compositing weights."""

    rgb_static: np.ndarray
    rgb_composite: np.ndarray
    rgb_coarse: np.ndarray
    depth: np.ndarray
    uncertainty: np.ndarray
    weights: np.ndarray


def _deltas(t: torch.Tensor, far: float) -> torch.Tensor:
    if bool((t[..., 1:] <= t[..., :-1]).any()):
        raise NonMonotonicDepths("sample depths must be strictly increasing")
    last = (far - t[..., -1:]).clamp(min=0.0)
    return torch.cat([t[..., 1:] - t[..., :-1], last], dim=-1)


def composite(sigma: torch.Tensor, color: torch.Tensor, t: torch.Tensor,
              far: float, white_background: bool = False) -> tuple:
    """Single-field alpha compositing.

    alpha_i = 1 - exp(-sigma_i * delta_i) with the last delta running to
    `far`; transmittance T_i = prod_{j<i}(1 - alpha_j); weight w_i = T_i
    alpha_i. Returns (rgb (...,3), depth (...), weights (...,S)).
    """
    delta = _deltas(t, far)
    alpha = 1.0 - torch.exp(-sigma * delta)
    trans = torch.cumprod(torch.cat([torch.ones_like(alpha[..., :1]),
                                     1.0 - alpha + 1e-10], dim=-1), dim=-1)[..., :-1]
    weights = alpha * trans
    rgb = (weights[..., None] * color).sum(dim=-2)
    if white_background:
        rgb = rgb + (1.0 - weights.sum(dim=-1, keepdim=True))
    depth = (weights * t).sum(dim=-1)
    return rgb, depth, weights


def composite_dual(sigma_s: torch.Tensor, color_s: torch.Tensor,
                   sigma_t: torch.Tensor, color_t: torch.Tensor,
                   beta: torch.Tensor, t: torch.Tensor, far: float,
                   beta_min: float) -> dict:
    """Static+transient compositing.

    Transmittance comes from the summed densities; each branch contributes
    its own alpha times that shared transmittance. Per-ray uncertainty is
    beta_min plus the transient-weighted excess over beta_min, so empty rays
    degrade to beta_min instead of zero.
    """
    delta = _deltas(t, far)
    alpha = 1.0 - torch.exp(-(sigma_s + sigma_t) * delta)
    trans = torch.cumprod(torch.cat([torch.ones_like(alpha[..., :1]),
                                     1.0 - alpha + 1e-10], dim=-1), dim=-1)[..., :-1]
    alpha_s = 1.0 - torch.exp(-sigma_s * delta)
    alpha_t = 1.0 - torch.exp(-sigma_t * delta)
    w_s, w_t = trans * alpha_s, trans * alpha_t
    rgb = (w_s[..., None] * color_s).sum(dim=-2) + (w_t[..., None] * color_t).sum(dim=-2)
    weights = trans * alpha
    depth = (weights * t).sum(dim=-1)
    beta_ray = beta_min + (w_t * (beta - beta_min)).sum(dim=-1)
    return {"rgb": rgb, "depth": depth, "weights": weights, "beta": beta_ray}


def sample_pdf(bins: torch.Tensor, weights: torch.Tensor, n_samples: int,
               deterministic: bool = True,
               generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Inverse-transform sampling of a piecewise-constant density.

    bins: (..., M+1) edges; weights: (..., M) unnormalized mass per bin.
    Returns (..., n_samples) sorted sample positions. Deterministic mode uses
    midpoint quantiles instead of uniform draws.
    """
    w = weights + 1e-5
    pdf = w / w.sum(dim=-1, keepdim=True)
    cdf = torch.cumsum(pdf, dim=-1)
    cdf = torch.cat([torch.zeros_like(cdf[..., :1]), cdf], dim=-1)
    # force the endpoint to exactly 1 so no draw lands past the last bin
    cdf = cdf / cdf[..., -1:].clamp(min=1e-12)
    shape = cdf.shape[:-1] + (n_samples,)
    if deterministic:
        u = (torch.arange(n_samples, dtype=cdf.dtype, device=cdf.device) + 0.5) / n_samples
        u = u.expand(shape).contiguous()
    else:
        u = torch.rand(shape, dtype=cdf.dtype, device=cdf.device, generator=generator)
    idx = torch.searchsorted(cdf, u, right=True)
    below = (idx - 1).clamp(min=0)
    above = idx.clamp(max=cdf.shape[-1] - 1)
    cdf_lo = torch.gather(cdf, -1, below)
    cdf_hi = torch.gather(cdf, -1, above)
    bin_lo = torch.gather(bins, -1, below)
    bin_hi = torch.gather(bins, -1, above)
    span = (cdf_hi - cdf_lo).clamp(min=1e-12)
    frac = (u - cdf_lo) / span
    return (bin_lo + frac * (bin_hi - bin_lo)).sort(dim=-1).values


def coarse_depths(n_rays: int, settings: RenderSettings, dtype: torch.dtype,
                  deterministic: bool, generator: Optional[torch.Generator] = None) -> torch.Tensor:
    """Stratified depths: one sample per equal-width bin (midpoint when
    deterministic)."""
    n = settings.n_coarse
    edges = torch.linspace(settings.near, settings.far, n + 1, dtype=dtype)
    lo, hi = edges[:-1], edges[1:]
    if deterministic:
        t = 0.5 * (lo + hi)
        return t.expand(n_rays, n).contiguous()
    u = torch.rand(n_rays, n, dtype=dtype, generator=generator)
    return lo + u * (hi - lo)


def render_rays(model: HistNerfModel, rays_o: torch.Tensor, rays_d: torch.Tensor,
                embedding: HistogramEmbedding, settings: RenderSettings,
                mode: str = "composite", deterministic: bool = True,
                generator: Optional[torch.Generator] = None,
                detach_sampling: bool = True) -> dict:
    """Render a batch of rays; the differentiable core of every render path.

    Coarse pass scores stratified samples with the base density to place the
    fine samples (inverse-transform over coarse weights, union of both sets);
    the fine pass runs the conditioned heads. `static` mode never evaluates
    the transient head. Returns per-ray tensors, colors unclamped.

    detach_sampling cuts the gradient path through fine-sample placement
    (the standard training estimator); pass False to make autograd track the
    exact derivative, e.g. for finite-difference verification.
    """
    if mode not in ("static", "composite"):
        raise ValueError(f"unknown render mode {mode!r}")
    n_rays = rays_o.shape[0]
    t_coarse = coarse_depths(n_rays, settings, rays_o.dtype, deterministic, generator)
    pts = rays_o[:, None, :] + t_coarse[..., None] * rays_d[:, None, :]
    sigma_b, _, color_b = model.query_base(pts)
    rgb_coarse, _, w_coarse = composite(sigma_b, color_b, t_coarse, settings.far,
                                        settings.white_background)

    # fine locations from the coarse weight distribution; interior bin edges
    # at coarse midpoints
    mid = 0.5 * (t_coarse[..., 1:] + t_coarse[..., :-1])
    edges = torch.cat([t_coarse[..., :1], mid, t_coarse[..., -1:]], dim=-1)
    w_for_pdf = w_coarse.detach() if detach_sampling else w_coarse
    t_fine = sample_pdf(edges, w_for_pdf, settings.n_fine,
                        deterministic, generator)
    t_all = torch.sort(torch.cat([t_coarse, t_fine], dim=-1), dim=-1).values
    # the union can contain exact duplicates (e.g. uniform coarse weights put
    # deterministic fine quantiles on the coarse midpoints); a few-ulp ramp
    # keeps depths strictly increasing without perceptible effect
    step = 4.0 * torch.finfo(t_all.dtype).eps * settings.far
    t_all = t_all + torch.arange(t_all.shape[-1], dtype=t_all.dtype) * step
    pts = rays_o[:, None, :] + t_all[..., None] * rays_d[:, None, :]
    dirs = rays_d[:, None, :].expand_as(pts)

    _, z, _ = model.query_base(pts)
    svec = embedding.static_vec
    tvec = embedding.transient_vec
    if svec.dim() == 1:
        svec = svec.expand(n_rays, -1)
        tvec = tvec.expand(n_rays, -1)
    svec = svec[:, None, :].expand(*pts.shape[:-1], -1)
    sigma_s, color_s = model.query_static(z, dirs, svec)
    rgb_static, depth_static, w_static = composite(sigma_s, color_s, t_all, settings.far,
                                                   settings.white_background)
    out = {"rgb_coarse": rgb_coarse, "rgb_static": rgb_static, "t": t_all}
    if mode == "static":
        out.update({
            "rgb_composite": rgb_static,
            "depth": depth_static,
            "weights": w_static,
            "beta": torch.full_like(depth_static, model.beta_min),
            "sigma_transient": torch.zeros_like(sigma_s),
        })
        return out
    tvec = tvec[:, None, :].expand(*pts.shape[:-1], -1)
    sigma_t, color_t, beta = model.query_transient(z, tvec)
    dual = composite_dual(sigma_s, color_s, sigma_t, color_t, beta, t_all,
                          settings.far, model.beta_min)
    out.update({
        "rgb_composite": dual["rgb"],
        "depth": dual["depth"],
        "weights": dual["weights"],
        "beta": dual["beta"],
        "sigma_transient": sigma_t,
    })
    return out


def rays_for_pose(model: HistNerfModel, pose: Pose, intr: Intrinsics) -> tuple:
    """Pixel rays for a dataset-frame pose, mapped into the model's
    recentered frame, as torch tensors of the model's dtype."""
    aligned = model.alignment.compose(pose)
    o, d = pixel_rays(aligned, intr)
    dtype = model.embed_static.weight.dtype
    return torch.as_tensor(o, dtype=dtype), torch.as_tensor(d, dtype=dtype)


def render_image(model: HistNerfModel, pose: Pose, intr: Intrinsics,
                 embedding: HistogramEmbedding, settings: RenderSettings,
                 mode: str = "composite") -> RenderOutput:
    """Render a full image (deterministic sampling, no gradients)."""
    rays_o, rays_d = rays_for_pose(model, pose, intr)
    chunks = {"rgb_static": [], "rgb_composite": [], "rgb_coarse": [],
              "depth": [], "beta": [], "weights": []}
    with torch.no_grad():
        for lo in range(0, rays_o.shape[0], settings.ray_chunk):
            out = render_rays(model, rays_o[lo:lo + settings.ray_chunk],
                              rays_d[lo:lo + settings.ray_chunk],
                              embedding, settings, mode=mode, deterministic=True)
            for k in chunks:
                chunks[k].append(out[k])
    cat = {k: torch.cat(v, dim=0).numpy() for k, v in chunks.items()}
    h, w = intr.height, intr.width
    return RenderOutput(
        rgb_static=np.clip(cat["rgb_static"], 0.0, 1.0).reshape(h, w, 3),
        rgb_composite=np.clip(cat["rgb_composite"], 0.0, 1.0).reshape(h, w, 3),
        rgb_coarse=np.clip(cat["rgb_coarse"], 0.0, 1.0).reshape(h, w, 3),
        depth=cat["depth"].reshape(h, w),
        uncertainty=cat["beta"].reshape(h, w),
        weights=cat["weights"].reshape(h, w, -1),
    )


def psnr(rendered: np.ndarray, target: np.ndarray) -> float:
    """Peak signal-to-noise ratio for images in [0,1]: 10*log10(1/MSE)."""
    mse = float(np.mean((np.asarray(rendered, dtype=np.float64)
                         - np.asarray(target, dtype=np.float64)) ** 2))
    if mse == 0:
        return float("inf")
    return 10.0 * float(np.log10(1.0 / mse))
