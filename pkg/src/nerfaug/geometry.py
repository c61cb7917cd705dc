"""Camera model, pose algebra, ray casting and stratified ray sampling.

Conventions (fixed for the whole package):
  * quaternions are scalar-first [w, x, y, z] and encode world-from-camera rotation
  * camera looks along +z in the camera frame, x right, y down
  * pixel (i, j) = (column, row), sampled at the half-pixel center (i+0.5, j+0.5)
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
import torch

_UNIT_TOL = 1e-9


# ---------------------------------------------------------------------------
# quaternion helpers (numpy, f64)
# ---------------------------------------------------------------------------

def quat_normalize(q: np.ndarray) -> np.ndarray:
    q = np.asarray(q, dtype=np.float64)
    n = np.linalg.norm(q)
    if n == 0.0 or not np.isfinite(n):
        raise ValueError("cannot normalize zero or non-finite quaternion")
    return q / n


def quat_multiply(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_conjugate(q: np.ndarray) -> np.ndarray:
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_to_matrix(q: np.ndarray) -> np.ndarray:
    w, x, y, z = q
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_axis_angle(omega: np.ndarray) -> np.ndarray:
    """Exponential map from an axis-angle 3-vector to a unit quaternion."""
    omega = np.asarray(omega, dtype=np.float64)
    theta = np.linalg.norm(omega)
    if theta < 1e-12:
        # first-order expansion keeps the map exact at zero
        return quat_normalize(np.array([1.0, *(0.5 * omega)]))
    axis = omega / theta
    half = 0.5 * theta
    return np.array([math.cos(half), *(math.sin(half) * axis)])


def quat_to_axis_angle(q: np.ndarray) -> np.ndarray:
    q = quat_normalize(q)
    if q[0] < 0:
        q = -q
    w = min(q[0], 1.0)
    sin_half = np.linalg.norm(q[1:])
    if sin_half < 1e-12:
        return 2.0 * q[1:]
    theta = 2.0 * math.atan2(sin_half, w)
    return (theta / sin_half) * q[1:]


def rotation_angle_between(qa: np.ndarray, qb: np.ndarray) -> float:
    """Geodesic angle (radians) between two unit quaternions."""
    dot = abs(float(np.dot(quat_normalize(qa), quat_normalize(qb))))
    return 2.0 * math.acos(min(dot, 1.0))


# ---------------------------------------------------------------------------
# domain types
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class Pose:
    """World-from-camera rigid transform: p_world = R(q) @ p_cam + t."""

    q: np.ndarray
    t: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "q", quat_normalize(self.q))
        object.__setattr__(self, "t", np.asarray(self.t, dtype=np.float64).reshape(3))

    @staticmethod
    def identity() -> "Pose":
        return Pose(np.array([1.0, 0.0, 0.0, 0.0]), np.zeros(3))

    def rotation_matrix(self) -> np.ndarray:
        return quat_to_matrix(self.q)

    def compose(self, other: "Pose") -> "Pose":
        """self ∘ other: apply `other` in camera coordinates, then self."""
        return Pose(quat_multiply(self.q, other.q),
                    self.rotation_matrix() @ other.t + self.t)

    def inverse(self) -> "Pose":
        qi = quat_conjugate(self.q)
        return Pose(qi, -(quat_to_matrix(qi) @ self.t))


@dataclass(frozen=True)
class CameraIntrinsics:
    fx: float
    fy: float
    cx: float
    cy: float
    width: int
    height: int

    def __post_init__(self):
        if self.fx <= 0 or self.fy <= 0:
            raise ValueError("focal lengths must be positive")
        if not (0 <= self.cx < self.width and 0 <= self.cy < self.height):
            raise ValueError("principal point must lie inside the image")

    def scaled(self, width: int, height: int) -> "CameraIntrinsics":
        sx, sy = width / self.width, height / self.height
        return CameraIntrinsics(self.fx * sx, self.fy * sy,
                                self.cx * sx, self.cy * sy, width, height)


@dataclass(frozen=True)
class Ray:
    origin: np.ndarray
    direction: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "origin", np.asarray(self.origin, dtype=np.float64).reshape(3))
        d = np.asarray(self.direction, dtype=np.float64).reshape(3)
        n = np.linalg.norm(d)
        if abs(n - 1.0) > 1e-6:
            raise ValueError("ray direction must be unit length")
        object.__setattr__(self, "direction", d / n)


@dataclass(frozen=True)
class RaySample:
    position: np.ndarray
    theta: float
    phi: float
    delta: float

    def __post_init__(self):
        if self.delta <= 0:
            raise ValueError("segment length must be positive")


@dataclass
class PoseCorrection:
    """Learnable per-image SE(3) delta; both fields start at exactly zero."""

    rotation: np.ndarray = field(default_factory=lambda: np.zeros(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(3)
        if np.linalg.norm(self.rotation) >= math.pi:
            raise ValueError("rotation delta must stay in the principal branch")


@dataclass(frozen=True)
class BoundingBox:
    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lo", np.asarray(self.lo, dtype=np.float64).reshape(3))
        object.__setattr__(self, "hi", np.asarray(self.hi, dtype=np.float64).reshape(3))
        if not np.all(self.hi > self.lo):
            raise ValueError("bounding box must have positive extent")

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    @property
    def radius(self) -> float:
        return 0.5 * float(np.linalg.norm(self.hi - self.lo))

    def contains(self, p: np.ndarray) -> np.ndarray:
        p = np.asarray(p)
        return np.all((p >= self.lo) & (p <= self.hi), axis=-1)


# ---------------------------------------------------------------------------
# ray casting
# ---------------------------------------------------------------------------

def pixel_camera_directions(intrinsics: CameraIntrinsics, pixels: np.ndarray) -> np.ndarray:
    """Unnormalized camera-frame pinhole directions for (i, j) pixel indices."""
    pixels = np.asarray(pixels, dtype=np.float64).reshape(-1, 2)
    i, j = pixels[:, 0], pixels[:, 1]
    if np.any(i < 0) or np.any(i >= intrinsics.width) or np.any(j < 0) or np.any(j >= intrinsics.height):
        raise ValueError("pixel index outside image bounds")
    return np.stack([
        (i + 0.5 - intrinsics.cx) / intrinsics.fx,
        (j + 0.5 - intrinsics.cy) / intrinsics.fy,
        np.ones_like(i),
    ], axis=-1)


def cast_ray_bundle(pose: Pose, intrinsics: CameraIntrinsics, pixels: np.ndarray):
    """Batched ray casting; returns (origins (N,3), unit directions (N,3))."""
    d_cam = pixel_camera_directions(intrinsics, pixels)
    d_world = d_cam @ pose.rotation_matrix().T
    d_world /= np.linalg.norm(d_world, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.t, d_world.shape).copy()
    return origins, d_world


def cast_rays(pose: Pose, intrinsics: CameraIntrinsics, pixels) -> list:
    origins, dirs = cast_ray_bundle(pose, intrinsics, np.asarray(pixels))
    return [Ray(o, d) for o, d in zip(origins, dirs)]


def all_pixels(intrinsics: CameraIntrinsics) -> np.ndarray:
    """All (i, j) pixel indices of an image in row-major order."""
    jj, ii = np.meshgrid(np.arange(intrinsics.height), np.arange(intrinsics.width), indexing="ij")
    return np.stack([ii.ravel(), jj.ravel()], axis=-1)


def project_to_pixel(pose: Pose, intrinsics: CameraIntrinsics, points: np.ndarray) -> np.ndarray:
    """Inverse pinhole map: world points to continuous (i, j) pixel coordinates."""
    points = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    inv = pose.inverse()
    p_cam = points @ inv.rotation_matrix().T + inv.t
    if np.any(p_cam[:, 2] <= 0):
        raise ValueError("point behind camera")
    i = intrinsics.fx * p_cam[:, 0] / p_cam[:, 2] + intrinsics.cx - 0.5
    j = intrinsics.fy * p_cam[:, 1] / p_cam[:, 2] + intrinsics.cy - 0.5
    return np.stack([i, j], axis=-1)


def apply_pose_correction(pose: Pose, corr: PoseCorrection) -> Pose:
    """Compose a pose with an SE(3) delta: R' = R·exp(ω), t' = t + u."""
    return Pose(quat_multiply(pose.q, quat_from_axis_angle(corr.rotation)),
                pose.t + corr.translation)


# ---------------------------------------------------------------------------
# stratified sampling
# ---------------------------------------------------------------------------

def direction_to_angles(d: np.ndarray):
    """Unit direction -> (θ, φ) with θ ∈ [0, π] (polar from +z), φ ∈ [−π, π)."""
    d = np.asarray(d, dtype=np.float64)
    theta = np.arccos(np.clip(d[..., 2], -1.0, 1.0))
    phi = np.arctan2(d[..., 1], d[..., 0])
    phi = np.where(phi >= math.pi, phi - 2 * math.pi, phi)
    return theta, phi


def stratified_depths(near: float, far: float, n_samples: int,
                      jitter: bool, rng: np.random.Generator | None = None,
                      n_rays: int = 1) -> np.ndarray:
    """Depths (n_rays, n_samples): one uniform draw per equal bin of [near, far]."""
    if near >= far:
        raise ValueError("require near < far")
    if near <= 0:
        raise ValueError("require near > 0")
    if n_samples < 1:
        raise ValueError("require n_samples >= 1")
    edges = np.linspace(near, far, n_samples + 1)
    lo, hi = edges[:-1], edges[1:]
    if jitter:
        if rng is None:
            raise ValueError("jitter requires an rng")
        u = rng.random((n_rays, n_samples))
    else:
        u = np.full((n_rays, n_samples), 0.5)
    return lo + u * (hi - lo)


def depth_deltas(depths: np.ndarray, bin_width: float) -> np.ndarray:
    """δ_k = depth_{k+1} − depth_k, with the final δ equal to the bin width."""
    deltas = np.diff(depths, axis=-1)
    last = np.full(depths.shape[:-1] + (1,), bin_width)
    return np.concatenate([deltas, last], axis=-1)


def sample_along_ray(ray: Ray, near: float, far: float, n_samples: int,
                     jitter_seed: int | None = None) -> list:
    """Stratified samples along one ray; deterministic given the seed.

    jitter_seed None disables jitter (bin midpoints).
    """
    rng = None if jitter_seed is None else np.random.default_rng(jitter_seed)
    depths = stratified_depths(near, far, n_samples, jitter_seed is not None, rng)[0]
    deltas = depth_deltas(depths[None, :], (far - near) / n_samples)[0]
    theta, phi = direction_to_angles(ray.direction)
    return [RaySample(ray.origin + t * ray.direction, float(theta), float(phi), float(dl))
            for t, dl in zip(depths, deltas)]


def near_far_for_pose(pose: Pose, bbox: BoundingBox, margin: float = 1.5):
    """Scene near/far bounds: bbox-sphere center ± margin·radius along the view axis."""
    dist = float(np.linalg.norm(pose.t - bbox.center))
    r = margin * bbox.radius
    near = max(dist - r, 1e-3 * max(r, 1.0))
    return near, dist + r


# ---------------------------------------------------------------------------
# torch helpers for the differentiable training path
# ---------------------------------------------------------------------------

def axis_angle_to_matrix_t(omega: torch.Tensor) -> torch.Tensor:
    """Batched Rodrigues formula, differentiable through ω = 0."""
    theta2 = (omega * omega).sum(-1, keepdim=True).unsqueeze(-1)
    theta = torch.sqrt(theta2.clamp_min(1e-30))
    small = theta2 < 1e-12
    a = torch.where(small, 1.0 - theta2 / 6.0, torch.sin(theta) / theta)
    b = torch.where(small, 0.5 - theta2 / 24.0, (1.0 - torch.cos(theta)) / theta2.clamp_min(1e-30))
    zeros = torch.zeros_like(omega[..., 0])
    wx, wy, wz = omega[..., 0], omega[..., 1], omega[..., 2]
    K = torch.stack([
        torch.stack([zeros, -wz, wy], -1),
        torch.stack([wz, zeros, -wx], -1),
        torch.stack([-wy, wx, zeros], -1),
    ], -2)
    eye = torch.eye(3, dtype=omega.dtype, device=omega.device).expand(K.shape)
    return eye + a * K + b * (K @ K)


def quat_to_matrix_t(q: torch.Tensor) -> torch.Tensor:
    w, x, y, z = q.unbind(-1)
    row0 = torch.stack([1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)], -1)
    row1 = torch.stack([2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)], -1)
    row2 = torch.stack([2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)], -1)
    return torch.stack([row0, row1, row2], -2)


def direction_to_angles_t(d: torch.Tensor):
    theta = torch.acos(d[..., 2].clamp(-1.0, 1.0))
    phi = torch.atan2(d[..., 1], d[..., 0])
    return theta, phi
