"""Procedural toy scene: an analytic Lambertian ray tracer over spheres and
axis-aligned boxes, with exact silhouette masks and per-image light
directions. Serves as ground truth for reconstruction and mask tests.

Optionally exports noisy pose labels (images are always rendered from the
true poses) to exercise pose-label refinement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

from .geometry import (BoundingBox, CameraIntrinsics, Pose, all_pixels,
                       cast_ray_bundle, quat_from_axis_angle, quat_multiply)

_AMBIENT = 0.08


@dataclass
class Sphere:
    center: tuple
    radius: float
    albedo: float = 0.8


@dataclass
class Box:
    lo: tuple
    hi: tuple
    albedo: float = 0.6


@dataclass
class ToySceneSpec:
    spheres: list = dc_field(default_factory=list)
    boxes: list = dc_field(default_factory=list)
    image_size: int = 64
    view_count: int = 100
    orbit_radius: float = 3.0
    elevation_range: tuple = (-0.5, 0.5)      # radians
    light_cone_half_angle: float = 0.5        # radians around the mean light
    light_intensity_range: tuple = (0.85, 1.1)
    pose_noise_rotation_deg: float = 0.0
    pose_noise_translation_frac: float = 0.0  # fraction of orbit radius
    bbox_half_extent: float = 1.5
    texture_scale: float = 0.0                # spatial frequency of albedo bands, 0 = flat

    @property
    def bbox(self) -> BoundingBox:
        h = self.bbox_half_extent
        return BoundingBox(np.array([-h, -h, -h]), np.array([h, h, h]))

    @staticmethod
    def default() -> "ToySceneSpec":
        return ToySceneSpec(
            spheres=[Sphere(center=(0.35, 0.0, 0.1), radius=0.55, albedo=0.85)],
            boxes=[Box(lo=(-0.9, -0.45, -0.45), hi=(-0.1, 0.45, 0.45), albedo=0.6)])


def default_intrinsics(size: int) -> CameraIntrinsics:
    return CameraIntrinsics(fx=float(size), fy=float(size),
                            cx=size / 2.0, cy=size / 2.0, width=size, height=size)


def look_at_pose(eye: np.ndarray, target: np.ndarray) -> Pose:
    """World-from-camera pose with +z toward the target, y pointing down."""
    fwd = target - eye
    fwd = fwd / np.linalg.norm(fwd)
    up = np.array([0.0, 0.0, 1.0])
    if abs(np.dot(fwd, up)) > 0.999:
        up = np.array([0.0, 1.0, 0.0])
    x = np.cross(fwd, up)
    x /= np.linalg.norm(x)
    y = np.cross(fwd, x)
    rot = np.stack([x, y, fwd], axis=-1)
    return Pose(_matrix_to_quat(rot), eye)


def _matrix_to_quat(m: np.ndarray) -> np.ndarray:
    w = math.sqrt(max(0.0, 1.0 + m[0, 0] + m[1, 1] + m[2, 2])) / 2.0
    if w > 1e-6:
        return np.array([w,
                         (m[2, 1] - m[1, 2]) / (4 * w),
                         (m[0, 2] - m[2, 0]) / (4 * w),
                         (m[1, 0] - m[0, 1]) / (4 * w)])
    # fallback for 180-degree rotations
    d = np.diag(m)
    k = int(np.argmax(d))
    q = np.zeros(4)
    q[k + 1] = math.sqrt(max(0.0, 1 + 2 * d[k] - np.trace(m))) / 2.0
    denom = 4 * q[k + 1]
    if k == 0:
        q[0] = (m[2, 1] - m[1, 2]) / denom
        q[2] = (m[0, 1] + m[1, 0]) / denom
        q[3] = (m[0, 2] + m[2, 0]) / denom
    elif k == 1:
        q[0] = (m[0, 2] - m[2, 0]) / denom
        q[1] = (m[0, 1] + m[1, 0]) / denom
        q[3] = (m[1, 2] + m[2, 1]) / denom
    else:
        q[0] = (m[1, 0] - m[0, 1]) / denom
        q[1] = (m[0, 2] + m[2, 0]) / denom
        q[2] = (m[1, 2] + m[2, 1]) / denom
    return q


# ---------------------------------------------------------------------------
# analytic intersections
# ---------------------------------------------------------------------------

def _intersect_sphere(origins, dirs, sphere: Sphere):
    oc = origins - np.asarray(sphere.center)
    b = np.sum(oc * dirs, axis=-1)
    c = np.sum(oc * oc, axis=-1) - sphere.radius ** 2
    disc = b * b - c
    hit = disc >= 0
    sq = np.sqrt(np.maximum(disc, 0.0))
    t = -b - sq
    t2 = -b + sq
    t = np.where(t > 1e-6, t, t2)
    hit &= t > 1e-6
    t = np.where(hit, t, np.inf)
    p = origins + t[..., None] * dirs
    n = (p - np.asarray(sphere.center)) / sphere.radius
    return t, n


def _intersect_box(origins, dirs, box: Box):
    lo, hi = np.asarray(box.lo), np.asarray(box.hi)
    inv = 1.0 / np.where(np.abs(dirs) < 1e-12, 1e-12, dirs)
    t0 = (lo - origins) * inv
    t1 = (hi - origins) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    t_near = tmin.max(axis=-1)
    t_far = tmax.min(axis=-1)
    hit = (t_far >= t_near) & (t_far > 1e-6)
    t = np.where(t_near > 1e-6, t_near, t_far)
    t = np.where(hit, t, np.inf)
    # normal of the entered face
    axis = np.argmax(tmin, axis=-1)
    sign = -np.sign(np.take_along_axis(dirs, axis[..., None], axis=-1)[..., 0])
    n = np.zeros_like(dirs)
    np.put_along_axis(n, axis[..., None], sign[..., None], axis=-1)
    return t, n


def trace_image(spec: ToySceneSpec, pose: Pose, intrinsics: CameraIntrinsics,
                light_dir: np.ndarray, light_intensity: float):
    """Render one grayscale image and its exact mask."""
    pixels = all_pixels(intrinsics)
    origins, dirs = cast_ray_bundle(pose, intrinsics, pixels)
    best_t = np.full(origins.shape[0], np.inf)
    best_n = np.zeros_like(dirs)
    best_albedo = np.zeros(origins.shape[0])
    for prim, fn in ([(s, _intersect_sphere) for s in spec.spheres] +
                     [(b, _intersect_box) for b in spec.boxes]):
        t, n = fn(origins, dirs, prim)
        closer = t < best_t
        best_t = np.where(closer, t, best_t)
        best_n = np.where(closer[..., None], n, best_n)
        best_albedo = np.where(closer, prim.albedo, best_albedo)
    hit = np.isfinite(best_t)
    if spec.texture_scale > 0:
        # world-anchored albedo bands; gives surfaces spatial detail that a
        # per-view color adjustment cannot mimic, which sharpens pose signals
        p = origins + np.where(hit, best_t, 0.0)[..., None] * dirs
        bands = np.sin(spec.texture_scale * p)
        best_albedo = best_albedo * (0.75 + 0.25 * bands.prod(axis=-1))
    lam = np.maximum(0.0, -(best_n @ light_dir)) * light_intensity
    shade = best_albedo * np.minimum(lam + _AMBIENT, 1.0)
    img = np.where(hit, shade, 0.0).reshape(intrinsics.height, intrinsics.width)
    mask = hit.reshape(intrinsics.height, intrinsics.width)
    return img.astype(np.float32), mask


def hit_mask(spec: ToySceneSpec, pose: Pose, intrinsics: CameraIntrinsics) -> np.ndarray:
    """Exact analytic silhouette for a pose (the mask oracle)."""
    pixels = all_pixels(intrinsics)
    origins, dirs = cast_ray_bundle(pose, intrinsics, pixels)
    hit = np.zeros(origins.shape[0], dtype=bool)
    for prim, fn in ([(s, _intersect_sphere) for s in spec.spheres] +
                     [(b, _intersect_box) for b in spec.boxes]):
        t, _ = fn(origins, dirs, prim)
        hit |= np.isfinite(t)
    return hit.reshape(intrinsics.height, intrinsics.width)


@dataclass
class ToySceneData:
    spec: ToySceneSpec
    intrinsics: CameraIntrinsics
    images: list            # float32 (H, W) in [0, 1]
    masks: list             # bool (H, W)
    true_poses: list        # poses used for rendering
    exported_poses: list    # noisy labels (equal to true poses at noise 0)
    light_dirs: list
    light_intensities: list


def generate_toy_scene(spec: ToySceneSpec, rng: np.random.Generator) -> ToySceneData:
    """Ray-trace the scene from an orbit of viewpoints with varying lights."""
    intrinsics = default_intrinsics(spec.image_size)
    mean_light = np.array([-0.4, 0.25, -0.85])
    mean_light /= np.linalg.norm(mean_light)

    images, masks, true_poses, exported, lds, lis = [], [], [], [], [], []
    for v in range(spec.view_count):
        az = rng.uniform(0.0, 2 * math.pi)
        el = rng.uniform(*spec.elevation_range)
        eye = spec.orbit_radius * np.array([
            math.cos(el) * math.cos(az), math.cos(el) * math.sin(az), math.sin(el)])
        pose = look_at_pose(eye, np.zeros(3))

        light = _sample_cone(mean_light, spec.light_cone_half_angle, rng)
        intensity = rng.uniform(*spec.light_intensity_range)
        img, mask = trace_image(spec, pose, intrinsics, light, intensity)

        label = pose
        if spec.pose_noise_rotation_deg > 0 or spec.pose_noise_translation_frac > 0:
            angle = math.radians(spec.pose_noise_rotation_deg)
            axis = rng.normal(size=3)
            axis /= np.linalg.norm(axis)
            dq = quat_from_axis_angle(axis * angle * rng.uniform(0.5, 1.0))
            dt = rng.normal(size=3)
            dt *= (spec.pose_noise_translation_frac * spec.orbit_radius
                   * rng.uniform(0.5, 1.0) / np.linalg.norm(dt))
            label = Pose(quat_multiply(pose.q, dq), pose.t + dt)

        images.append(img)
        masks.append(mask)
        true_poses.append(pose)
        exported.append(label)
        lds.append(light)
        lis.append(intensity)
    return ToySceneData(spec=spec, intrinsics=intrinsics, images=images,
                        masks=masks, true_poses=true_poses,
                        exported_poses=exported, light_dirs=lds,
                        light_intensities=lis)


def _sample_cone(mean: np.ndarray, half_angle: float, rng: np.random.Generator) -> np.ndarray:
    if half_angle <= 0:
        return mean.copy()
    while True:
        v = mean + rng.normal(scale=math.tan(half_angle) / 1.5, size=3)
        n = np.linalg.norm(v)
        if n > 1e-6:
            v = v / n
            if float(np.dot(v, mean)) >= math.cos(half_angle):
                return v
