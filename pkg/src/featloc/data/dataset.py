"""Scene datasets on disk.

Layout: ``<root>/{train,val,unlabeled}/frame-NNNNNN.{png|ppm}`` with a
``frame-NNNNNN.pose.txt`` sidecar (4x4 row-major camera-to-world), plus
``intrinsics.txt`` ("focal cx cy width height") and ``bounds.txt``
("near far") at the root. A flat folder of images is also accepted: posed
images become the train split, images without a pose file go to unlabeled.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np

from ..geometry import Intrinsics, Pose, load_pose_file, save_pose_file
from .histogram import DEFAULT_BINS, LuminanceHistogram, compute_luminance_histogram
from .images import read_image, write_image

IMAGE_EXTENSIONS = (".png", ".ppm")


class MissingPose(ValueError):
    """Raised when an image in a posed split has no pose file."""


@dataclass(frozen=True)
class Frame:
    """One observation: image in [0,1], optional ground-truth pose, camera
    intrinsics, and the image's luminance histogram."""

    image: np.ndarray
    pose: Optional[Pose]
    intrinsics: Intrinsics
    histogram: LuminanceHistogram
    name: str = ""

    def __post_init__(self):
        img = np.asarray(self.image)
        if img.ndim != 3 or img.shape[2] != 3:
            raise ValueError(f"image must be HxWx3, got {img.shape}")
        if img.min() < 0.0 or img.max() > 1.0:
            raise ValueError("pixel values must lie in [0, 1]")
        recomputed = compute_luminance_histogram(img, self.histogram.n_bins)
        if np.max(np.abs(recomputed.bins - self.histogram.bins)) > 1e-6:
            raise ValueError("histogram does not match image")


@dataclass(frozen=True)
class SceneDataset:
    """Immutable posed/unposed frame collections plus ray depth bounds."""

    train: list
    val: list
    unlabeled: list
    scene_bounds: tuple  # (near, far) in scene units

    def __post_init__(self):
        near, far = self.scene_bounds
        if not (0 < near < far):
            raise ValueError(f"need 0 < near < far, got {self.scene_bounds}")
        for f in self.train:
            if f.pose is None:
                raise ValueError("train frames require poses")
        object.__setattr__(self, "scene_bounds", (float(near), float(far)))


def make_frame(image: np.ndarray, pose: Optional[Pose], intr: Intrinsics,
               name: str = "", n_bins: int = DEFAULT_BINS) -> Frame:
    return Frame(np.asarray(image, dtype=np.float32), pose, intr,
                 compute_luminance_histogram(image, n_bins), name)


def auto_spacing(n_frames: int) -> int:
    """Training-set spacing window: 5 for scenes up to 2000 frames, else 10."""
    return 5 if n_frames <= 2000 else 10


def subsample_training(frames: list, d: int) -> list:
    """Keep frames at indices 0, d, 2d, ..."""
    if d < 1:
        raise ValueError("spacing must be at least 1")
    return list(frames[::d])


def load_intrinsics_file(path) -> Intrinsics:
    tokens = Path(path).read_text().split()
    if len(tokens) != 5:
        raise ValueError(f"{path}: expected 'focal cx cy width height'")
    focal, cx, cy = (float(t) for t in tokens[:3])
    return Intrinsics(focal, (cx, cy), int(tokens[3]), int(tokens[4]))


def save_intrinsics_file(path, intr: Intrinsics):
    cx, cy = intr.principal_point
    Path(path).write_text(f"{intr.focal:.17g} {cx:.17g} {cy:.17g} {intr.width} {intr.height}\n")


def _pose_path(image_path: Path) -> Path:
    return image_path.parent / (image_path.stem + ".pose.txt")


def _load_split(directory: Path, intr: Intrinsics, require_pose: bool,
                with_pose: bool, n_bins: int) -> list:
    frames = []
    for img_path in sorted(p for p in directory.iterdir()
                           if p.suffix.lower() in IMAGE_EXTENSIONS):
        pose_path = _pose_path(img_path)
        pose = None
        if with_pose:
            if pose_path.exists():
                pose = load_pose_file(pose_path)
            elif require_pose:
                raise MissingPose(f"{img_path} has no pose file {pose_path.name}")
        frames.append(make_frame(read_image(img_path), pose, intr,
                                 name=f"{directory.name}/{img_path.stem}", n_bins=n_bins))
    return frames


def load_scene(root, n_bins: int = DEFAULT_BINS) -> SceneDataset:
    """Load a posed-folder dataset.

    Frames sort lexicographically by filename; histograms are computed
    eagerly. train/ and val/ images must have pose files; unlabeled/ poses
    are withheld even if sidecar files exist.
    """
    root = Path(root)
    intr = load_intrinsics_file(root / "intrinsics.txt")
    bounds_path = root / "bounds.txt"
    if not bounds_path.exists():
        raise FileNotFoundError(f"{bounds_path} missing (expected 'near far')")
    near, far = (float(t) for t in bounds_path.read_text().split())

    splits = {"train": [], "val": [], "unlabeled": []}
    structured = any((root / s).is_dir() for s in splits)
    if structured:
        for split in splits:
            d = root / split
            if d.is_dir():
                splits[split] = _load_split(d, intr, require_pose=(split != "unlabeled"),
                                            with_pose=(split != "unlabeled"), n_bins=n_bins)
    else:
        # flat folder: posed images train, unposed images unlabeled
        for img_path in sorted(p for p in root.iterdir()
                               if p.suffix.lower() in IMAGE_EXTENSIONS):
            pose_path = root / (img_path.stem + ".pose.txt")
            pose = load_pose_file(pose_path) if pose_path.exists() else None
            frame = make_frame(read_image(img_path), pose, intr,
                               name=img_path.stem, n_bins=n_bins)
            splits["train" if pose is not None else "unlabeled"].append(frame)
    return SceneDataset(splits["train"], splits["val"], splits["unlabeled"], (near, far))


def save_scene(dataset: SceneDataset, root, image_format: str = "ppm"):
    """Write a dataset in the posed-folder layout (16-bit PPM by default)."""
    root = Path(root)
    root.mkdir(parents=True, exist_ok=True)
    if not dataset.train:
        raise ValueError("cannot save a dataset with no train frames")
    intr = dataset.train[0].intrinsics
    save_intrinsics_file(root / "intrinsics.txt", intr)
    near, far = dataset.scene_bounds
    (root / "bounds.txt").write_text(f"{near:.17g} {far:.17g}\n")
    for split, frames in (("train", dataset.train), ("val", dataset.val),
                          ("unlabeled", dataset.unlabeled)):
        if not frames:
            continue
        d = root / split
        d.mkdir(exist_ok=True)
        for i, frame in enumerate(frames):
            stem = f"frame-{i:06d}"
            write_image(d / f"{stem}.{image_format}", frame.image)
            if frame.pose is not None and split != "unlabeled":
                save_pose_file(d / f"{stem}.pose.txt", frame.pose)


def frame_sizes(frames: list) -> tuple:
    f = frames[0]
    return f.image.shape[0], f.image.shape[1]
