"""Procedural toy scenes: Gaussian density blobs on a black background,
cameras on a sphere looking at the origin, optional per-frame exposure
perturbations.

The ground-truth renderer here integrates the emission-absorption equation
by midpoint quadrature of the transmittance integral. It shares no
compositing code with the learned renderer so it can serve as an oracle.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..geometry import Intrinsics, Pose, look_at_pose, pixel_rays
from .dataset import SceneDataset, load_scene, make_frame, save_scene
from .images import quantize16

RAY_CHUNK = 1024


@dataclass(frozen=True)
class Blob:
    """Isotropic Gaussian density lobe with a flat color."""

    center: np.ndarray
    radius: float
    color: np.ndarray
    amplitude: float

    def __post_init__(self):
        c = np.asarray(self.center, dtype=np.float64).reshape(3)
        col = np.asarray(self.color, dtype=np.float64).reshape(3)
        if self.radius <= 0:
            raise ValueError("blob radius must be positive")
        if self.amplitude < 0:
            raise ValueError("blob amplitude must be nonnegative")
        if col.min() < 0 or col.max() > 1:
            raise ValueError("blob color must lie in [0, 1]")
        object.__setattr__(self, "center", c)
        object.__setattr__(self, "color", col)


@dataclass(frozen=True)
class ToyScene:
    """Blob list plus per-frame exposure model (gain, gamma) keyed by frame name."""

    blobs: list
    background_color: np.ndarray
    exposures: dict
    near: float
    far: float

    def __post_init__(self):
        bg = np.asarray(self.background_color, dtype=np.float64).reshape(3)
        if bg.min() < 0 or bg.max() > 1:
            raise ValueError("background color must lie in [0, 1]")
        if not (0 < self.near < self.far):
            raise ValueError("need 0 < near < far")
        for g, gamma in self.exposures.values():
            if g <= 0 or gamma <= 0:
                raise ValueError("exposure gain and gamma must be positive")
        object.__setattr__(self, "background_color", bg)


def scene_density_color(scene: ToyScene, points: np.ndarray) -> tuple:
    """Density and emitted color at an (..., 3) array of points.

    sigma(x) = sum_i amplitude_i * exp(-|x - c_i|^2 / r_i^2); color is the
    density-weighted blend of blob colors (zero where density vanishes).
    """
    shape = points.shape[:-1]
    pts = points.reshape(-1, 3)
    if not scene.blobs:
        return np.zeros(shape), np.zeros(shape + (3,))
    centers = np.stack([b.center for b in scene.blobs])
    radii2 = np.array([b.radius**2 for b in scene.blobs])
    amps = np.array([b.amplitude for b in scene.blobs])
    colors = np.stack([b.color for b in scene.blobs])
    # |p - c|^2 expanded so the cross term is a single matmul
    d2 = (np.sum(pts**2, axis=1)[:, None] - 2.0 * pts @ centers.T
          + np.sum(centers**2, axis=1)[None, :])
    w = amps * np.exp(-np.maximum(d2, 0.0) / radii2)
    sigma = w.sum(axis=1)
    weighted = w @ colors
    color = np.zeros_like(weighted)
    np.divide(weighted, sigma[:, None], out=color, where=sigma[:, None] > 0)
    return sigma.reshape(shape), color.reshape(shape + (3,))


def apply_exposure(image: np.ndarray, gain: float, gamma: float) -> np.ndarray:
    """Exposure model: clip(gain * I, 0, 1) ** gamma."""
    return np.clip(gain * np.asarray(image, dtype=np.float64), 0.0, 1.0) ** gamma


def oracle_render(scene: ToyScene, pose: Pose, intr: Intrinsics,
                  n_quad: int = 1024) -> np.ndarray:
    """Ground-truth render by emission-absorption quadrature.

    C = integral of T(t) sigma(t) c(t) dt + T(far) * background, with the
    transmittance integral accumulated at sample midpoints. Deterministic.
    """
    if n_quad < 256:
        raise ValueError("n_quad must be at least 256")
    origins, dirs = pixel_rays(pose, intr)
    h = (scene.far - scene.near) / n_quad
    t = scene.near + (np.arange(n_quad) + 0.5) * h
    out = np.empty((len(origins), 3))
    for lo in range(0, len(origins), RAY_CHUNK):
        o = origins[lo:lo + RAY_CHUNK]
        d = dirs[lo:lo + RAY_CHUNK]
        pts = o[:, None, :] + t[None, :, None] * d[:, None, :]
        sigma, color = scene_density_color(scene, pts)
        # optical depth to each midpoint: full steps before it plus a half step
        tau = np.cumsum(sigma, axis=1) * h - 0.5 * h * sigma
        trans = np.exp(-tau)
        trans_far = np.exp(-np.sum(sigma, axis=1) * h)
        radiance = np.sum((trans * sigma * h)[..., None] * color, axis=1)
        out[lo:lo + RAY_CHUNK] = radiance + trans_far[:, None] * scene.background_color
    return np.clip(out, 0.0, 1.0).reshape(intr.height, intr.width, 3)


def _uniform_in_ball(rng: np.random.Generator, radius: float) -> np.ndarray:
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    return v * radius * rng.uniform() ** (1.0 / 3.0)


def _sphere_camera(rng: np.random.Generator, radius_range: tuple) -> Pose:
    v = rng.normal(size=3)
    v /= np.linalg.norm(v)
    eye = v * rng.uniform(*radius_range)
    return look_at_pose(eye, np.zeros(3))


def make_toy_scene(seed: int, n_blobs: int = 5, n_train: int = 100,
                   n_val: int = 50, image_size: int = 60,
                   exposure_split: bool = True, n_unlabeled: int = 0,
                   n_quad: int = 768) -> tuple:
    """Generate a ToyScene and a SceneDataset rendered by the oracle.

    Cameras sample a shell of radius about 4 looking at the origin. When
    exposure_split is set, half of each split (chosen by the seeded rng)
    gets gain in [0.7, 1.3] and gamma in [0.8, 1.25]; the rest are identity
    exposure. Images land on the 16-bit grid so file round-trips are exact.
    """
    if n_blobs < 1:
        raise ValueError("need at least one blob")
    rng = np.random.default_rng(seed)
    blobs = []
    for _ in range(n_blobs):
        blobs.append(Blob(center=_uniform_in_ball(rng, 1.0),
                          radius=rng.uniform(0.35, 0.7),
                          color=rng.uniform(0.25, 1.0, size=3),
                          amplitude=rng.uniform(3.0, 8.0)))
    near, far = 1.5, 6.5
    focal = 1.1 * image_size
    intr = Intrinsics(focal, (image_size / 2.0, image_size / 2.0),
                      image_size, image_size)

    split_sizes = (("train", n_train), ("val", n_val), ("unlabeled", n_unlabeled))
    poses, order = {}, []
    for split, n in split_sizes:
        for i in range(n):
            name = f"{split}/frame-{i:06d}"
            poses[name] = _sphere_camera(rng, (3.7, 4.3))
            order.append(name)

    exposures = {}
    for split, n in split_sizes:
        names = [f"{split}/frame-{i:06d}" for i in range(n)]
        perturbed = set()
        if exposure_split and n > 0:
            perturbed = set(rng.permutation(n)[: n // 2].tolist())
        for i, name in enumerate(names):
            if i in perturbed:
                exposures[name] = (float(rng.uniform(0.7, 1.3)),
                                   float(rng.uniform(0.8, 1.25)))
            else:
                exposures[name] = (1.0, 1.0)

    scene = ToyScene(blobs, np.zeros(3), exposures, near, far)
    frames = {s: [] for s, _ in split_sizes}
    for name in order:
        split = name.split("/")[0]
        linear = oracle_render(scene, poses[name], intr, n_quad=n_quad)
        g, gamma = exposures[name]
        img = quantize16(apply_exposure(linear, g, gamma))
        pose = poses[name] if split != "unlabeled" else None
        frames[split].append(make_frame(img, pose, intr, name=name))
    dataset = SceneDataset(frames["train"], frames["val"], frames["unlabeled"],
                           (near, far))
    # ground-truth poses for unlabeled frames travel in the manifest only
    scene_meta = {name: poses[name] for name in order}
    return scene, dataset, scene_meta


def save_toy_scene(scene: ToyScene, dataset: SceneDataset, scene_meta: dict, root):
    """Write the posed-folder layout plus a self-describing scene manifest."""
    root = Path(root)
    save_scene(dataset, root, image_format="ppm")
    manifest = {
        "blobs": [{"center": b.center.tolist(), "radius": b.radius,
                   "color": b.color.tolist(), "amplitude": b.amplitude}
                  for b in scene.blobs],
        "background_color": scene.background_color.tolist(),
        "near": scene.near,
        "far": scene.far,
        "exposures": {k: list(v) for k, v in scene.exposures.items()},
        "true_poses": {k: p.matrix().tolist() for k, p in scene_meta.items()},
    }
    (root / "scene.json").write_text(json.dumps(manifest, indent=1))


def load_toy_scene(root) -> tuple:
    """Read back (ToyScene, SceneDataset, true_poses) from a saved toy folder."""
    root = Path(root)
    manifest = json.loads((root / "scene.json").read_text())
    blobs = [Blob(np.array(b["center"]), b["radius"], np.array(b["color"]),
                  b["amplitude"]) for b in manifest["blobs"]]
    scene = ToyScene(blobs, np.array(manifest["background_color"]),
                     {k: tuple(v) for k, v in manifest["exposures"].items()},
                     manifest["near"], manifest["far"])
    true_poses = {k: Pose.from_matrix(np.array(m))
                  for k, m in manifest["true_poses"].items()}
    return scene, load_scene(root), true_poses
