"""Training of the two radiance fields.

Appearance mode optimizes the photometric loss and learns embeddings plus
per-image pose corrections. Geometry mode adds the per-ray density loss
(unit weights), freezes the pose corrections and consumes the corrections
learned in appearance mode as fixed inputs.
"""

from __future__ import annotations

import math
import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .field import FieldConfig, RadianceField
from .geometry import (BoundingBox, CameraIntrinsics,
                       axis_angle_to_matrix_t, near_far_for_pose,
                       pixel_camera_directions, quat_to_matrix_t)
from .renderer import RenderConfig, composite, render_image


@dataclass
class RayDatasetEntry:
    origin: np.ndarray
    direction: np.ndarray
    pixel: np.ndarray
    mask: float
    image_index: int


class RayDataset:
    """Flat per-pixel ray dataset built from posed, masked images."""

    def __init__(self, origins, cam_dirs, dirs, pixels, masks, image_idx,
                 poses, intrinsics: CameraIntrinsics, bbox: BoundingBox):
        self.origins = origins
        self.cam_dirs = cam_dirs          # camera-frame pinhole dirs, unnormalized
        self.dirs = dirs                  # world-frame unit dirs (uncorrected)
        self.pixels = pixels
        self.masks = masks
        self.image_idx = image_idx
        self.poses = poses
        self.intrinsics = intrinsics
        self.bbox = bbox

    def __len__(self):
        return self.origins.shape[0]

    @property
    def n_images(self):
        return len(self.poses)

    def entry(self, i: int) -> RayDatasetEntry:
        return RayDatasetEntry(origin=self.origins[i], direction=self.dirs[i],
                               pixel=self.pixels[i], mask=float(self.masks[i]),
                               image_index=int(self.image_idx[i]))


def preprocess(images, poses, masks, intrinsics: CameraIntrinsics,
               bbox: BoundingBox) -> RayDataset:
    """Zero out background pixels and cast one ray per pixel of every image."""
    if not (len(images) == len(poses) == len(masks)):
        raise ValueError("images, poses and masks must have equal counts")
    if len(images) == 0:
        raise ValueError("empty dataset")
    h, w = intrinsics.height, intrinsics.width
    jj, ii = np.meshgrid(np.arange(h), np.arange(w), indexing="ij")
    pix_idx = np.stack([ii.ravel(), jj.ravel()], axis=-1)
    cam_dirs_one = pixel_camera_directions(intrinsics, pix_idx)

    origins, cam_dirs, dirs, values, mvals, img_idx = [], [], [], [], [], []
    for a, (img, pose, mask) in enumerate(zip(images, poses, masks)):
        img = np.asarray(img, dtype=np.float32)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        if img.shape[:2] != (h, w) or mask.shape != (h, w):
            raise ValueError(f"image/mask {a} does not match the intrinsics size")
        m = np.asarray(mask, dtype=np.float32).ravel()
        v = img.reshape(-1, 3) * m[:, None]      # remove background content
        rot = pose.rotation_matrix()
        d = cam_dirs_one @ rot.T
        d /= np.linalg.norm(d, axis=-1, keepdims=True)
        origins.append(np.broadcast_to(pose.t, d.shape).copy())
        cam_dirs.append(cam_dirs_one)
        dirs.append(d)
        values.append(v)
        mvals.append(m)
        img_idx.append(np.full(h * w, a, dtype=np.int64))
    return RayDataset(
        origins=np.concatenate(origins).astype(np.float32),
        cam_dirs=np.concatenate(cam_dirs).astype(np.float32),
        dirs=np.concatenate(dirs).astype(np.float32),
        pixels=np.concatenate(values),
        masks=np.concatenate(mvals),
        image_idx=np.concatenate(img_idx),
        poses=list(poses), intrinsics=intrinsics, bbox=bbox)


# ---------------------------------------------------------------------------
# losses
# ---------------------------------------------------------------------------

def photometric_loss(predicted: torch.Tensor, observed: torch.Tensor) -> torch.Tensor:
    """Mean squared error over the batch and channels."""
    if predicted.numel() == 0:
        raise ValueError("empty batch")
    if predicted.shape != observed.shape:
        raise ValueError("batch shapes must match")
    return ((predicted - observed) ** 2).mean()


def density_loss(sigma: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
    """Per-ray Σ_n σ_n² (1 − m), averaged over the mini-batch.

    sigma: (B, S) non-negative densities; mask: (B,) values in {0, 1}.
    """
    per_ray = (sigma ** 2).sum(dim=-1) * (1.0 - mask)
    return per_ray.mean()


def psnr_from_mse(mse: float) -> float:
    if mse <= 0:
        return 99.0
    return min(-10.0 * math.log10(mse), 99.0)


# ---------------------------------------------------------------------------
# batching
# ---------------------------------------------------------------------------

class RayBatcher:
    """Permutation sampler: each epoch visits every entry exactly once."""

    def __init__(self, n: int, batch_size: int, rng: np.random.Generator):
        self.n = n
        self.batch_size = batch_size
        self.rng = rng
        self._perm = rng.permutation(n)
        self._pos = 0

    def next_batch(self) -> np.ndarray:
        if self._pos >= self.n:
            self._perm = self.rng.permutation(self.n)
            self._pos = 0
        batch = self._perm[self._pos:self._pos + self.batch_size]
        self._pos += self.batch_size
        return batch


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

@dataclass
class TrainConfig:
    batch_size: int = 4096
    iterations: int = 30000
    samples_per_ray: int = 32
    lr_grids: float = 1e-2
    lr_mlps: float = 1e-3
    lr_embeddings: float = 1e-3
    lr_pose_corrections: float = 1e-4
    weight_photometric: float = 1.0
    weight_density: float = 1.0
    seed: int = 0
    jitter: bool = True
    log_every: int = 100
    checkpoint_every: int = 0          # 0 disables periodic checkpoints
    max_nonfinite: int = 3

    def __post_init__(self):
        for name in ("lr_grids", "lr_mlps", "lr_embeddings", "lr_pose_corrections"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")

    @staticmethod
    def toy() -> "TrainConfig":
        """Desk-scale preset sized for single-core CPU runs."""
        return TrainConfig(batch_size=2048, iterations=1500)


@dataclass
class TrainResult:
    field: RadianceField
    history: list = dc_field(default_factory=list)


class DivergenceError(RuntimeError):
    pass


def corrected_rays(field: RadianceField, q: torch.Tensor, t: torch.Tensor,
                   cam_dirs: torch.Tensor, image_idx: torch.Tensor,
                   corrections: torch.Tensor | None = None):
    """Differentiable pose-corrected rays for a batch of dataset entries."""
    corr = field.pose_corrections if corrections is None else corrections
    c = corr[image_idx]
    rot = quat_to_matrix_t(q[image_idx]) @ axis_angle_to_matrix_t(c[:, :3])
    d = (rot @ cam_dirs.unsqueeze(-1)).squeeze(-1)
    d = d / d.norm(dim=-1, keepdim=True)
    o = t[image_idx] + c[:, 3:]
    return o, d


def train_model(dataset: RayDataset, cfg: TrainConfig, mode: str,
                field_config: FieldConfig | None = None,
                pose_corrections: torch.Tensor | None = None,
                on_checkpoint=None) -> TrainResult:
    """Train one radiance field on a ray dataset.

    mode "appearance": photometric loss only, pose corrections learnable.
    mode "geometry": photometric + density loss (unit weights by default),
    pose corrections frozen to `pose_corrections` (zeros if not given).
    """
    if mode not in ("appearance", "geometry"):
        raise ValueError("mode must be 'appearance' or 'geometry'")
    if len(dataset) == 0:
        raise ValueError("empty dataset")

    if field_config is None:
        field_config = FieldConfig()
    field_config.n_images = dataset.n_images
    field_config.bbox_lo = tuple(dataset.bbox.lo)
    field_config.bbox_hi = tuple(dataset.bbox.hi)
    torch.manual_seed(cfg.seed)
    field = RadianceField(field_config)

    if mode == "geometry":
        with torch.no_grad():
            if pose_corrections is not None:
                field.pose_corrections.copy_(pose_corrections.detach())
        field.pose_corrections.requires_grad_(False)

    groups = field.parameter_groups()
    param_groups = [
        {"params": groups["grids"], "lr": cfg.lr_grids},
        {"params": groups["mlps"], "lr": cfg.lr_mlps},
        {"params": groups["embeddings"], "lr": cfg.lr_embeddings},
    ]
    if mode == "appearance":
        param_groups.append({"params": groups["pose_corrections"],
                             "lr": cfg.lr_pose_corrections})
    optimizer = torch.optim.Adam(param_groups, betas=(0.9, 0.999))

    dtype = torch.get_default_dtype()
    q = torch.tensor(np.stack([p.q for p in dataset.poses]), dtype=dtype)
    t = torch.tensor(np.stack([p.t for p in dataset.poses]), dtype=dtype)
    bounds = [near_far_for_pose(p, dataset.bbox) for p in dataset.poses]
    near_t = torch.tensor([b[0] for b in bounds], dtype=dtype)
    far_t = torch.tensor([b[1] for b in bounds], dtype=dtype)

    cam_dirs = torch.tensor(dataset.cam_dirs, dtype=dtype)
    pixels = torch.tensor(dataset.pixels, dtype=dtype)
    masks = torch.tensor(dataset.masks, dtype=dtype)
    image_idx = torch.tensor(dataset.image_idx)

    rng = np.random.default_rng(cfg.seed)
    gen = torch.Generator().manual_seed(cfg.seed)
    batcher = RayBatcher(len(dataset), cfg.batch_size, rng)
    s = cfg.samples_per_ray
    frac_edges = torch.linspace(0.0, 1.0, s + 1, dtype=dtype)
    frac_lo, frac_w = frac_edges[:-1], torch.diff(frac_edges)

    history = []
    nonfinite_streak = 0
    t_start = time.time()
    for it in range(cfg.iterations):
        idx = torch.tensor(batcher.next_batch())
        img = image_idx[idx]
        o, d = corrected_rays(field, q, t, cam_dirs[idx], img)

        near = near_t[img].unsqueeze(-1)
        span = (far_t[img] - near_t[img]).unsqueeze(-1)
        if cfg.jitter:
            u = torch.rand(idx.shape[0], s, generator=gen, dtype=dtype)
        else:
            u = torch.full((idx.shape[0], s), 0.5, dtype=dtype)
        z = near + (frac_lo + u * frac_w) * span
        deltas = torch.cat([torch.diff(z, dim=-1), (span * frac_w[-1])], dim=-1)

        positions = o[:, None, :] + z[..., None] * d[:, None, :]
        sigma, feats = field.density(positions.reshape(-1, 3))
        sigma = sigma.view(idx.shape[0], s)
        view_dirs = d[:, None, :].expand(-1, s, -1).reshape(-1, 3)
        e = field.embeddings[img][:, None, :].expand(-1, s, -1).reshape(-1, field.config.embedding_dim)
        sh = field.direction_encoder(view_dirs)
        rgb = torch.sigmoid(field.color_mlp(torch.cat([feats, sh, e], dim=-1)))
        rgb = rgb.view(idx.shape[0], s, 3)

        res = composite(sigma, rgb, deltas)
        if mode == "geometry":
            # Expected photometric error when both render and observation are
            # composited over a background whose channels are black or white
            # with equal probability. In closed form this is a mid-gray
            # composite plus an opacity-agreement term of weight 1/4. Against
            # a fixed background a translucent surface can always repaint its
            # color to fit; the expectation over backgrounds cannot be fooled
            # and is zero only when opacity matches the mask exactly.
            gap = masks[idx] - res.opacity
            pred = res.color + (1.0 - res.opacity).unsqueeze(-1) * 0.5
            target = pixels[idx] + (1.0 - masks[idx]).unsqueeze(-1) * 0.5
            l_photo = photometric_loss(pred, target) + 0.25 * (gap ** 2).mean()
            l_sigma = density_loss(sigma, masks[idx])
            loss = cfg.weight_photometric * l_photo + cfg.weight_density * l_sigma
        else:
            l_photo = photometric_loss(res.color, pixels[idx])
            l_sigma = torch.zeros(())
            loss = cfg.weight_photometric * l_photo

        if not torch.isfinite(loss):
            nonfinite_streak += 1
            if nonfinite_streak >= cfg.max_nonfinite:
                raise DivergenceError(
                    f"non-finite loss for {nonfinite_streak} consecutive batches "
                    f"at iteration {it}")
            optimizer.zero_grad()
            continue
        nonfinite_streak = 0

        optimizer.zero_grad()
        loss.backward()
        optimizer.step()

        if it % cfg.log_every == 0 or it == cfg.iterations - 1:
            history.append({
                "iteration": it,
                "loss_photometric": float(l_photo.detach()),
                "loss_density": float(l_sigma.detach()),
                "psnr": psnr_from_mse(float(l_photo.detach())),
                "wall_time": time.time() - t_start,
            })
        if cfg.checkpoint_every and on_checkpoint and (it + 1) % cfg.checkpoint_every == 0:
            on_checkpoint(field, it + 1)

    return TrainResult(field=field, history=history)


def evaluate_psnr(field: RadianceField, images, poses,
                  intrinsics: CameraIntrinsics, render_cfg: RenderConfig,
                  trained_image_indices=None) -> float:
    """Mean PSNR over a held-out set.

    Images whose index appears in `trained_image_indices` (a mapping from
    position to embedding row) are rendered with their own embedding; all
    others use the mean embedding.
    """
    if len(images) == 0:
        raise ValueError("empty evaluation set")
    mean_e = field.mean_embedding()
    total = 0.0
    for pos, (img, pose) in enumerate(zip(images, poses)):
        img = np.asarray(img, dtype=np.float32)
        if img.ndim == 2:
            img = np.repeat(img[..., None], 3, axis=-1)
        if trained_image_indices is not None and pos in trained_image_indices:
            e = field.embeddings.detach()[trained_image_indices[pos]]
        else:
            e = mean_e
        rendered, _ = render_image(field, pose, intrinsics, e, render_cfg)
        total += psnr_from_mse(float(np.mean((rendered - img) ** 2)))
    return total / len(images)
