"""Feature-metric distances and the pose-network training losses.

The same cosine dissimilarity underlies both training stages: the triplet
loss that keeps features pose-discriminative across the real/synthetic
domain gap, and the direct-matching loss used later for refinement.
"""

from __future__ import annotations

from dataclasses import dataclass

import torch


class ShapeMismatch(ValueError):
    """Feature maps being compared must share one shape."""


def _check_same_shape(a: torch.Tensor, b: torch.Tensor):
    if a.shape != b.shape:
        raise ShapeMismatch(f"feature shapes differ: {tuple(a.shape)} vs "
                            f"{tuple(b.shape)}")
    if a.dim() not in (3, 4):
        raise ShapeMismatch("expected (C, H, W) or (B, C, H, W) features")


def cosine_dissimilarity_map(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Per-location 1 - cos(a, b) over the channel axis.

    (C, H, W) -> (H, W); (B, C, H, W) -> (B, H, W). A zero-norm vector is
    treated as having similarity 0, so it contributes exactly 1.
    """
    _check_same_shape(a, b)
    num = (a * b).sum(dim=-3)
    # the epsilon keeps the denominator (and its gradient) finite at zero
    # vectors while leaving the zero-numerator similarity exactly 0
    na = a.square().sum(dim=-3).add(1e-24).sqrt()
    nb = b.square().sum(dim=-3).add(1e-24).sqrt()
    return 1.0 - num / (na * nb)


def _distance_per_item(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Mean per-location dissimilarity, one scalar per batch element."""
    d = cosine_dissimilarity_map(a, b)
    if d.dim() == 2:
        return d.mean().unsqueeze(0)
    return d.mean(dim=(-2, -1))


def feature_distance(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Scalar feature distance: mean over locations (and batch) of the
    per-location cosine dissimilarity. Symmetric, zero on identical inputs,
    bounded in [0, 2]."""
    return _distance_per_item(a, b).mean()


@dataclass(frozen=True, eq=False)
class TripletBatch:
    """The four feature maps of the siamese scheme: real/synthetic at pose P
    and at a different pose Pbar (Pbar drawn from a distinct batch element)."""

    m_real_p: torch.Tensor
    m_syn_p: torch.Tensor
    m_real_pbar: torch.Tensor
    m_syn_pbar: torch.Tensor

    def __post_init__(self):
        for other in (self.m_syn_p, self.m_real_pbar, self.m_syn_pbar):
            _check_same_shape(self.m_real_p, other)


def negative_distances(t: TripletBatch) -> torch.Tensor:
    """Per-item distances of the four cross-pose (negative) pairs, stacked
    (4, B) in the fixed order: (real_p, real_pbar), (real_p, syn_pbar),
    (syn_p, real_pbar), (syn_p, syn_pbar)."""
    return torch.stack([
        _distance_per_item(t.m_real_p, t.m_real_pbar),
        _distance_per_item(t.m_real_p, t.m_syn_pbar),
        _distance_per_item(t.m_syn_p, t.m_real_pbar),
        _distance_per_item(t.m_syn_p, t.m_syn_pbar),
    ])


def min_negative_distance(t: TripletBatch) -> tuple:
    """Hardest (minimum-distance) negative pair per batch item.

    The argmin selection is taken as a prior, non-differentiated step (ties
    resolve to the first index in the `negative_distances` order); gradients
    flow only through the selected pair. Returns (values (B,), indices (B,)).
    """
    d = negative_distances(t)
    with torch.no_grad():
        idx = d.argmin(dim=0)
    return d.gather(0, idx.unsqueeze(0)).squeeze(0), idx


def q_minus(t: TripletBatch) -> torch.Tensor:
    """Minimum distance among the four negative pairs (batch mean)."""
    values, _ = min_negative_distance(t)
    return values.mean()


def triplet_loss_mined(t: TripletBatch, margin: float = 1.0) -> torch.Tensor:
    """Hinge on the positive-pair distance against the mined hardest
    negative: max{d(real_p, syn_p) - q_minus + margin, 0}, batch mean."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    pos = _distance_per_item(t.m_real_p, t.m_syn_p)
    neg, _ = min_negative_distance(t)
    return (pos - neg + margin).clamp(min=0.0).mean()


def triplet_loss_original(t: TripletBatch, margin: float = 1.0) -> torch.Tensor:
    """Baseline hinge using only the (real_p, syn_pbar) negative, batch mean.
    Always <= the mined loss, since the mined minimum ranges over a superset
    of negatives."""
    if margin <= 0:
        raise ValueError("margin must be positive")
    pos = _distance_per_item(t.m_real_p, t.m_syn_p)
    neg = _distance_per_item(t.m_real_p, t.m_syn_pbar)
    return (pos - neg + margin).clamp(min=0.0).mean()


def pose_l2(pred: torch.Tensor, target: torch.Tensor) -> torch.Tensor:
    """L2 norm of the flattened 3x4 pose difference, one value per item.

    Accepts (3, 4) or (B, 3, 4); returns (B,) (B = 1 for the unbatched form).
    """
    if pred.shape != target.shape:
        raise ShapeMismatch(f"pose shapes differ: {tuple(pred.shape)} vs "
                            f"{tuple(target.shape)}")
    diff = (pred - target).reshape(-1, 12) if pred.dim() == 3 else \
        (pred - target).reshape(1, 12)
    return torch.linalg.vector_norm(diff, dim=-1)


def posenet_loss(pose_gt: torch.Tensor, pose_real_pred: torch.Tensor,
                 pose_syn_pred: torch.Tensor, triplet: torch.Tensor,
                 rvs_term: torch.Tensor) -> torch.Tensor:
    """Combined training loss: triplet term + synthetic-pool term + half the
    summed pose L2 errors of the real and synthetic branches (batch means)."""
    pose_term = 0.5 * (pose_l2(pose_real_pred, pose_gt).mean()
                       + pose_l2(pose_syn_pred, pose_gt).mean())
    return triplet + rvs_term + pose_term
