"""SE(3) pose utilities: representation, metrics, perturbation, recentering.

Poses are camera-to-world transforms: `rotation` maps camera-frame vectors
into the world frame and `translation` is the camera center in world
coordinates. This matches the 4x4 row-major text files used by the dataset
loaders (last row ``0 0 0 1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

ROTATION_TOL = 1e-6


class DegenerateMatrix(ValueError):
    """Raised when a matrix cannot be projected onto SO(3)."""


class MalformedPoseFile(ValueError):
    """Raised when a pose text file does not contain a valid 4x4 transform."""


@dataclass(frozen=True)
class Pose:
    """Rigid camera-to-world transform.

    rotation: (3, 3) orthonormal matrix with det +1.
    translation: (3,) camera center in scene units.
    """

    rotation: np.ndarray
    translation: np.ndarray

    def __post_init__(self):
        R = np.asarray(self.rotation, dtype=np.float64)
        t = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if R.shape != (3, 3):
            raise ValueError(f"rotation must be 3x3, got {R.shape}")
        if not np.all(np.isfinite(R)) or not np.all(np.isfinite(t)):
            raise ValueError("pose entries must be finite")
        err = np.max(np.abs(R.T @ R - np.eye(3)))
        if err > 1e-4:
            raise ValueError(f"rotation is not orthonormal (max |R^T R - I| = {err:.2e})")
        if abs(np.linalg.det(R) - 1.0) > 1e-4:
            raise ValueError("rotation must have det +1")
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.eye(3), np.zeros(3))

    @staticmethod
    def from_matrix(m: np.ndarray) -> "Pose":
        m = np.asarray(m, dtype=np.float64)
        if m.shape != (4, 4):
            raise ValueError(f"expected 4x4 matrix, got {m.shape}")
        return Pose(svd_orthonormalize(m[:3, :3]), m[:3, 3])

    def matrix(self) -> np.ndarray:
        """Return the 4x4 homogeneous transform."""
        m = np.eye(4)
        m[:3, :3] = self.rotation
        m[:3, 3] = self.translation
        return m

    def matrix34(self) -> np.ndarray:
        """Return the 3x4 [R | t] block (the regression target layout)."""
        return np.concatenate([self.rotation, self.translation[:, None]], axis=1)

    def inverse(self) -> "Pose":
        return Pose(self.rotation.T, -self.rotation.T @ self.translation)

    def compose(self, other: "Pose") -> "Pose":
        """Return self * other (apply `other` first, then `self`)."""
        return Pose(self.rotation @ other.rotation,
                    self.rotation @ other.translation + self.translation)


@dataclass(frozen=True)
class Intrinsics:
    """Pinhole camera intrinsics. Pixel coordinates follow OpenCV (+z forward)."""

    focal: float
    principal_point: tuple
    width: int
    height: int

    def __post_init__(self):
        if self.focal <= 0:
            raise ValueError("focal must be positive")
        if self.width <= 0 or self.height <= 0:
            raise ValueError("image dimensions must be positive")
        cx, cy = self.principal_point
        if not (0 <= cx <= self.width and 0 <= cy <= self.height):
            raise ValueError("principal point must lie within image bounds")
        object.__setattr__(self, "principal_point", (float(cx), float(cy)))

    def scaled(self, factor: float) -> "Intrinsics":
        cx, cy = self.principal_point
        return Intrinsics(self.focal * factor, (cx * factor, cy * factor),
                          max(1, round(self.width * factor)),
                          max(1, round(self.height * factor)))

    def scaled_to_short_side(self, short_side: int) -> "Intrinsics":
        return self.scaled(short_side / min(self.width, self.height))


@dataclass(frozen=True)
class PoseError:
    """Translation error in scene units, rotation error in degrees."""

    translation_error: float
    rotation_error: float

    def __post_init__(self):
        if self.translation_error < 0:
            raise ValueError("translation_error must be nonnegative")
        if not (0.0 <= self.rotation_error <= 180.0 + 1e-9):
            raise ValueError("rotation_error must be in [0, 180] degrees")


def svd_orthonormalize(m: np.ndarray) -> np.ndarray:
    """Project a 3x3 matrix onto the nearest rotation (Frobenius sense).

    Reflections are corrected by flipping the sign of the last singular
    direction so det is always +1.
    """
    m = np.asarray(m, dtype=np.float64)
    if m.shape != (3, 3) or not np.all(np.isfinite(m)):
        raise DegenerateMatrix("input must be a finite 3x3 matrix")
    u, s, vt = np.linalg.svd(m)
    if s[-1] <= 1e-8:
        raise DegenerateMatrix(f"matrix is rank deficient (smallest singular value {s[-1]:.2e})")
    d = np.sign(np.linalg.det(u @ vt))
    return u @ np.diag([1.0, 1.0, d]) @ vt


def rotation_angle_deg(r_a: np.ndarray, r_b: np.ndarray) -> float:
    """Geodesic angle between two rotations, in degrees."""
    c = (np.trace(r_a.T @ r_b) - 1.0) / 2.0
    return math.degrees(math.acos(min(1.0, max(-1.0, c))))


def pose_error(a: Pose, b: Pose) -> PoseError:
    t_err = float(np.linalg.norm(a.translation - b.translation))
    return PoseError(t_err, rotation_angle_deg(a.rotation, b.rotation))


def axis_angle_rotation(axis: np.ndarray, angle_rad: float) -> np.ndarray:
    """Rodrigues formula for a unit axis and angle in radians."""
    axis = np.asarray(axis, dtype=np.float64)
    k = np.array([[0, -axis[2], axis[1]],
                  [axis[2], 0, -axis[0]],
                  [-axis[1], axis[0], 0]])
    return np.eye(3) + math.sin(angle_rad) * k + (1 - math.cos(angle_rad)) * (k @ k)


def _random_unit_vector(rng: np.random.Generator) -> np.ndarray:
    v = rng.normal(size=3)
    n = np.linalg.norm(v)
    while n < 1e-12:
        v = rng.normal(size=3)
        n = np.linalg.norm(v)
    return v / n


def perturb_pose(p: Pose, psi: float, phi_deg: float, rng: np.random.Generator) -> Pose:
    """Perturb a pose by bounded noise.

    Translation offset is uniform in the radius-`psi` ball; rotation noise is
    a uniformly random axis with angle uniform in [0, phi_deg]. psi = phi = 0
    returns the input exactly. Deterministic given the generator state.
    """
    if psi < 0 or phi_deg < 0:
        raise ValueError("noise magnitudes must be nonnegative")
    if psi == 0 and phi_deg == 0:
        return p
    offset = _random_unit_vector(rng) * psi * rng.uniform() ** (1.0 / 3.0)
    axis = _random_unit_vector(rng)
    angle = math.radians(rng.uniform(0.0, phi_deg))
    return Pose(axis_angle_rotation(axis, angle) @ p.rotation, p.translation + offset)


def _rotation_between(v_from: np.ndarray, v_to: np.ndarray) -> np.ndarray:
    """Smallest rotation mapping unit vector v_from onto v_to."""
    c = float(np.clip(np.dot(v_from, v_to), -1.0, 1.0))
    axis = np.cross(v_from, v_to)
    n = np.linalg.norm(axis)
    if n < 1e-12:
        if c > 0:
            return np.eye(3)
        # antiparallel: rotate 180 deg about any axis orthogonal to v_from
        helper = np.array([1.0, 0.0, 0.0])
        if abs(v_from[0]) > 0.9:
            helper = np.array([0.0, 1.0, 0.0])
        axis = np.cross(v_from, helper)
        axis /= np.linalg.norm(axis)
        return axis_angle_rotation(axis, math.pi)
    return axis_angle_rotation(axis / n, math.atan2(n, c))


def recenter_poses(poses: list) -> tuple:
    """Express poses in a centroid-origin frame with the mean view direction
    mapped onto +z.

    Returns (recentered poses, alignment) where alignment is the transform A
    with ``recentered = A.compose(original)``; applying ``A.inverse()`` maps
    results back to the input frame.
    """
    if not poses:
        raise ValueError("recenter_poses requires at least one pose")
    centers = np.stack([p.translation for p in poses])
    centroid = centers.mean(axis=0)
    # camera forward axis is the rotation's third column (+z convention)
    forward = np.stack([p.rotation[:, 2] for p in poses]).mean(axis=0)
    n = np.linalg.norm(forward)
    r_align = np.eye(3) if n < 1e-12 else _rotation_between(forward / n, np.array([0.0, 0.0, 1.0]))
    alignment = Pose(r_align, -r_align @ centroid)
    return [alignment.compose(p) for p in poses], alignment


def nearest_training_pose(query: Pose, train: list) -> int:
    """Index of the training pose closest in camera-center distance (ties -> lowest index)."""
    if not train:
        raise ValueError("train must be nonempty")
    d = [np.linalg.norm(query.translation - p.translation) for p in train]
    return int(np.argmin(d))


def look_at_pose(eye: np.ndarray, target: np.ndarray,
                 up: np.ndarray = None) -> Pose:
    """Camera-to-world pose at `eye` with +z toward `target` and +y down
    (image-row direction), matching the pixel ray convention below."""
    eye = np.asarray(eye, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    up = np.array([0.0, 1.0, 0.0]) if up is None else np.asarray(up, dtype=np.float64)
    z = target - eye
    n = np.linalg.norm(z)
    if n < 1e-12:
        raise ValueError("eye and target coincide")
    z = z / n
    if abs(np.dot(z, up)) > 0.999:
        up = np.array([1.0, 0.0, 0.0])
    x = np.cross(z, up)
    x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return Pose(np.stack([x, y, z], axis=1), eye)


def pixel_rays(pose: Pose, intr: Intrinsics) -> tuple:
    """World-space rays through every pixel center, row-major order.

    Returns (origins, directions), each (H*W, 3); directions are unit length
    so ray parameters are Euclidean distances. Pixel (u, v) maps to camera
    direction ((u+0.5-cx)/f, (v+0.5-cy)/f, 1).
    """
    cx, cy = intr.principal_point
    u = np.arange(intr.width) + 0.5
    v = np.arange(intr.height) + 0.5
    uu, vv = np.meshgrid(u, v)
    d_cam = np.stack([(uu - cx) / intr.focal, (vv - cy) / intr.focal,
                      np.ones_like(uu)], axis=-1).reshape(-1, 3)
    d = d_cam @ pose.rotation.T
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    o = np.broadcast_to(pose.translation, d.shape).copy()
    return o, d


def load_pose_file(path) -> Pose:
    """Read one 4x4 row-major pose (whitespace-separated floats, last row 0 0 0 1)."""
    try:
        with open(path) as f:
            values = [float(tok) for tok in f.read().split()]
    except ValueError as e:
        raise MalformedPoseFile(f"{path}: non-numeric token ({e})") from None
    if len(values) != 16:
        raise MalformedPoseFile(f"{path}: expected 16 numbers, got {len(values)}")
    m = np.array(values, dtype=np.float64).reshape(4, 4)
    if np.max(np.abs(m[3] - np.array([0.0, 0.0, 0.0, 1.0]))) > 1e-5:
        raise MalformedPoseFile(f"{path}: last row must be 0 0 0 1")
    try:
        return Pose.from_matrix(m)
    except (ValueError, DegenerateMatrix) as e:
        raise MalformedPoseFile(f"{path}: {e}") from None


def save_pose_file(path, pose: Pose):
    m = pose.matrix()
    with open(path, "w") as f:
        for row in m:
            f.write(" ".join(f"{v:.17g}" for v in row) + "\n")
