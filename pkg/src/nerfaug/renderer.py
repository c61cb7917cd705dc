"""Differentiable alpha compositing and full-image rendering.

Per-ray recurrence (front-to-back):
    α_n = 1 − exp(−σ_n δ_n)
    T_n = Π_{m<n} (1 − α_m)
    w_n = T_n α_n
    color = Σ w_n rgb_n,   opacity = Σ w_n
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from .field import Mlp, RadianceField
from .geometry import (CameraIntrinsics, Pose, all_pixels, cast_ray_bundle,
                       depth_deltas, near_far_for_pose, stratified_depths)


@dataclass
class RenderConfig:
    width: int = 64
    height: int = 64
    samples_per_ray: int = 32
    mask_threshold: float = 0.5
    jitter: bool = False
    chunk_rays: int = 8192
    near: float | None = None   # None: derive from the field's bbox
    far: float | None = None

    def __post_init__(self):
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError("mask threshold must lie in (0, 1)")
        if self.samples_per_ray < 1:
            raise ValueError("need at least one sample per ray")


@dataclass
class CompositeResult:
    color: torch.Tensor         # (..., 3)
    opacity: torch.Tensor       # (...)
    weights: torch.Tensor       # (..., S)
    transmittance: torch.Tensor  # (..., S)


def compositing_weights(sigma: torch.Tensor, delta: torch.Tensor):
    """Per-sample weights and transmittances from densities and intervals."""
    alpha = 1.0 - torch.exp(-sigma * delta)
    surv = 1.0 - alpha
    trans = torch.cumprod(
        torch.cat([torch.ones_like(surv[..., :1]), surv[..., :-1]], dim=-1), dim=-1)
    return trans * alpha, trans


def composite(sigma: torch.Tensor, rgb: torch.Tensor, delta: torch.Tensor) -> CompositeResult:
    """Alpha-composite per-sample outputs, batched over leading dims."""
    weights, trans = compositing_weights(sigma, delta)
    color = (weights.unsqueeze(-1) * rgb).sum(dim=-2)
    return CompositeResult(color=color, opacity=weights.sum(dim=-1),
                           weights=weights, transmittance=trans)


def composite_samples(samples) -> CompositeResult:
    """Spec-shaped entry point: samples is a list of (σ, rgb, δ) for one ray."""
    sigma = torch.tensor([float(s[0]) for s in samples], dtype=torch.float64)
    rgb = torch.tensor([[float(c) for c in s[1]] for s in samples], dtype=torch.float64)
    delta = torch.tensor([float(s[2]) for s in samples], dtype=torch.float64)
    if (sigma < 0).any() or (delta <= 0).any():
        raise ValueError("require σ ≥ 0 and δ > 0")
    return composite(sigma, rgb, delta)


def _ray_bounds(field: RadianceField, pose: Pose, cfg: RenderConfig):
    if cfg.near is not None and cfg.far is not None:
        return cfg.near, cfg.far
    near, far = near_far_for_pose(pose, field.config.bbox)
    return (cfg.near or near), (cfg.far or far)


@torch.no_grad()
def render_rays(field: RadianceField, origins: np.ndarray, dirs: np.ndarray,
                near: float, far: float, n_samples: int, embedding: torch.Tensor,
                jitter_rng: np.random.Generator | None = None,
                color_mlp: Mlp | None = None):
    """Composite a batch of rays; returns (color (N,3), opacity (N,))."""
    dtype = field.encoder.planes.dtype
    n = origins.shape[0]
    depths = stratified_depths(near, far, n_samples, jitter_rng is not None,
                               jitter_rng, n_rays=n)
    deltas = depth_deltas(depths, (far - near) / n_samples)
    o = torch.as_tensor(origins, dtype=dtype)
    d = torch.as_tensor(dirs, dtype=dtype)
    z = torch.as_tensor(depths, dtype=dtype)
    positions = o[:, None, :] + z[..., None] * d[:, None, :]
    sigma, feats = field.density(positions.reshape(-1, 3))
    sigma = sigma.view(n, n_samples)
    feats = feats.view(n, n_samples, -1)
    view_dirs = d[:, None, :].expand(n, n_samples, 3).reshape(-1, 3)
    rgb = field.color(feats.reshape(-1, feats.shape[-1]), view_dirs,
                      embedding.to(dtype), color_mlp).view(n, n_samples, 3)
    res = composite(sigma, rgb, torch.as_tensor(deltas, dtype=dtype))
    return res.color, res.opacity


def render_image(field: RadianceField, pose: Pose, intrinsics: CameraIntrinsics,
                 embedding: torch.Tensor, cfg: RenderConfig,
                 jitter_rng: np.random.Generator | None = None,
                 color_mlp: Mlp | None = None):
    """Render a full image; returns (rgb (H,W,3), opacity (H,W)) numpy arrays.

    The color channel is premultiplied by opacity (straight-alpha foreground);
    composite with a background using `fg + (1 - opacity) * bg`.
    """
    if embedding.shape[-1] != field.config.embedding_dim:
        raise ValueError("embedding dimension mismatch")
    near, far = _ray_bounds(field, pose, cfg)
    pixels = all_pixels(intrinsics)
    origins, dirs = cast_ray_bundle(pose, intrinsics, pixels)
    rng = jitter_rng if cfg.jitter else None
    colors, opacities = [], []
    for start in range(0, pixels.shape[0], cfg.chunk_rays):
        c, o = render_rays(field, origins[start:start + cfg.chunk_rays],
                           dirs[start:start + cfg.chunk_rays], near, far,
                           cfg.samples_per_ray, embedding, rng, color_mlp)
        colors.append(c)
        opacities.append(o)
    h, w = intrinsics.height, intrinsics.width
    image = torch.cat(colors).view(h, w, 3).numpy()
    opacity = torch.cat(opacities).view(h, w).numpy()
    return image, opacity


def render_opacity(field: RadianceField, pose: Pose, intrinsics: CameraIntrinsics,
                   cfg: RenderConfig) -> np.ndarray:
    """Accumulated-opacity map; touches only the density branch."""
    near, far = _ray_bounds(field, pose, cfg)
    pixels = all_pixels(intrinsics)
    origins, dirs = cast_ray_bundle(pose, intrinsics, pixels)
    dtype = field.encoder.planes.dtype
    out = []
    with torch.no_grad():
        for start in range(0, pixels.shape[0], cfg.chunk_rays):
            o_np = origins[start:start + cfg.chunk_rays]
            d_np = dirs[start:start + cfg.chunk_rays]
            n = o_np.shape[0]
            depths = stratified_depths(near, far, cfg.samples_per_ray, False)
            deltas = depth_deltas(np.broadcast_to(depths, (n, cfg.samples_per_ray)),
                                  (far - near) / cfg.samples_per_ray)
            o = torch.as_tensor(o_np, dtype=dtype)
            d = torch.as_tensor(d_np, dtype=dtype)
            z = torch.as_tensor(np.broadcast_to(depths, (n, cfg.samples_per_ray)).copy(),
                                dtype=dtype)
            positions = o[:, None, :] + z[..., None] * d[:, None, :]
            sigma, _ = field.density(positions.reshape(-1, 3))
            weights, _ = compositing_weights(sigma.view(n, -1),
                                             torch.as_tensor(deltas, dtype=dtype))
            out.append(weights.sum(-1))
    return torch.cat(out).view(intrinsics.height, intrinsics.width).numpy()


def render_mask(field: RadianceField, pose: Pose, intrinsics: CameraIntrinsics,
                cfg: RenderConfig) -> np.ndarray:
    """Binary foreground mask: opacity ≥ τ. Independent of the color branch."""
    return render_opacity(field, pose, intrinsics, cfg) >= cfg.mask_threshold


@dataclass
class DensityCache:
    """Density-branch results for one pose, reusable across appearance configs."""
    features: torch.Tensor       # (n_rays, S, feature_dim)
    sh_features: torch.Tensor    # (n_rays, S, sh_dim)
    weights: torch.Tensor        # (n_rays, S)
    opacity: torch.Tensor        # (n_rays,)
    height: int
    width: int


@torch.no_grad()
def compute_density_cache(field: RadianceField, pose: Pose,
                          intrinsics: CameraIntrinsics, cfg: RenderConfig) -> DensityCache:
    """Evaluate the density path once for a full image."""
    near, far = _ray_bounds(field, pose, cfg)
    pixels = all_pixels(intrinsics)
    origins, dirs = cast_ray_bundle(pose, intrinsics, pixels)
    dtype = field.encoder.planes.dtype
    n = pixels.shape[0]
    s = cfg.samples_per_ray
    depths = np.broadcast_to(stratified_depths(near, far, s, False), (n, s))
    deltas = depth_deltas(depths, (far - near) / s)
    feats_out, sh_out, w_out = [], [], []
    for start in range(0, n, cfg.chunk_rays):
        o = torch.as_tensor(origins[start:start + cfg.chunk_rays], dtype=dtype)
        d = torch.as_tensor(dirs[start:start + cfg.chunk_rays], dtype=dtype)
        z = torch.as_tensor(depths[start:start + cfg.chunk_rays].copy(), dtype=dtype)
        m = o.shape[0]
        positions = o[:, None, :] + z[..., None] * d[:, None, :]
        sigma, feats = field.density(positions.reshape(-1, 3))
        weights, _ = compositing_weights(
            sigma.view(m, s), torch.as_tensor(deltas[start:start + cfg.chunk_rays], dtype=dtype))
        sh = field.direction_encoder(d)[:, None, :].expand(m, s, -1)
        feats_out.append(feats.view(m, s, -1))
        sh_out.append(sh.reshape(m, s, -1))
        w_out.append(weights)
    weights = torch.cat(w_out)
    return DensityCache(features=torch.cat(feats_out), sh_features=torch.cat(sh_out),
                        weights=weights, opacity=weights.sum(-1),
                        height=intrinsics.height, width=intrinsics.width)


@torch.no_grad()
def shade_from_cache(field: RadianceField, cache: DensityCache,
                     embedding: torch.Tensor, color_mlp: Mlp | None = None,
                     chunk_rays: int = 8192) -> np.ndarray:
    """Re-color cached densities under a new appearance configuration."""
    mlp = color_mlp if color_mlp is not None else field.color_mlp
    n, s, fdim = cache.features.shape
    e = embedding.to(cache.features.dtype)
    out = []
    for start in range(0, n, chunk_rays):
        feats = cache.features[start:start + chunk_rays]
        sh = cache.sh_features[start:start + chunk_rays]
        w = cache.weights[start:start + chunk_rays]
        m = feats.shape[0]
        inp = torch.cat([feats, sh, e.expand(m, s, -1)], dim=-1)
        rgb = torch.sigmoid(mlp(inp.reshape(m * s, -1))).view(m, s, 3)
        out.append((w.unsqueeze(-1) * rgb).sum(dim=-2))
    return torch.cat(out).view(cache.height, cache.width, 3).numpy()
