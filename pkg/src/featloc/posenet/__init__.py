"""Pose regression with domain-invariant feature extraction."""

from .losses import (
    ShapeMismatch,
    TripletBatch,
    cosine_dissimilarity_map,
    feature_distance,
    min_negative_distance,
    negative_distances,
    pose_l2,
    posenet_loss,
    q_minus,
    triplet_loss_mined,
    triplet_loss_original,
)
from .model import (
    LEVEL_NAMES,
    FeatureMap,
    PoseNetConfig,
    PoseRegressor,
    image_to_tensor,
    images_to_batch,
    predict_pose,
    raw_to_pose,
    resize_to_short_side,
)
from .train import (
    PoseNetSchedule,
    cross_pose_feature_variance,
    predict_poses,
    render_synthetic_view,
    train_posenet,
    validation_errors,
)

__all__ = [
    "LEVEL_NAMES",
    "FeatureMap",
    "PoseNetConfig",
    "PoseNetSchedule",
    "PoseRegressor",
    "ShapeMismatch",
    "TripletBatch",
    "cosine_dissimilarity_map",
    "cross_pose_feature_variance",
    "feature_distance",
    "image_to_tensor",
    "images_to_batch",
    "min_negative_distance",
    "negative_distances",
    "pose_l2",
    "posenet_loss",
    "predict_pose",
    "predict_poses",
    "q_minus",
    "raw_to_pose",
    "render_synthetic_view",
    "resize_to_short_side",
    "train_posenet",
    "triplet_loss_mined",
    "triplet_loss_original",
    "validation_errors",
]
