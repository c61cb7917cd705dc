"""Finite-difference verification of reverse-mode gradients.

Builds a small double-precision field, renders a batch of rays end to end
(pose corrections -> ray geometry -> encoders -> MLPs -> compositing) and
compares analytic gradients against central finite differences for randomly
chosen parameter coordinates in every parameter group.
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field as dc_field

import numpy as np
import torch

from .field import FieldConfig, RadianceField
from .geometry import pixel_camera_directions
from .renderer import composite
from .toyscene import default_intrinsics, look_at_pose
from .training import corrected_rays


@dataclass
class GradCheckReport:
    n_checked: int
    max_rel_error: float
    elapsed_seconds: float
    failures: list = dc_field(default_factory=list)
    per_group: dict = dc_field(default_factory=dict)

    @property
    def passed(self) -> bool:
        return self.max_rel_error < 1e-4


def _build_scene(seed: int):
    torch.manual_seed(seed)
    cfg = FieldConfig(grid_resolution=16, grid_channels=4, density_hidden=16,
                      feature_dim=6, color_hidden=16, embedding_dim=4,
                      sh_degree=2, n_images=2, grid_init_scale=1e-4)
    field = RadianceField(cfg).double()
    with torch.no_grad():
        # moderate magnitudes so every group carries signal
        field.encoder.planes.uniform_(-0.4, 0.4)
        field.embeddings.normal_(0.0, 0.5)
        field.pose_corrections.normal_(0.0, 0.01)

    intr = default_intrinsics(8)
    poses = [look_at_pose(np.array([3.0, 0.4, 0.3]), np.zeros(3)),
             look_at_pose(np.array([-0.5, 2.8, -0.6]), np.zeros(3))]
    rng = np.random.default_rng(seed)
    pixels = rng.integers(0, 8, size=(12, 2))
    cam_dirs, img_idx = [], []
    for a in range(2):
        cam_dirs.append(pixel_camera_directions(intr, pixels[a::2]))
        img_idx.append(np.full(pixels[a::2].shape[0], a))
    q = torch.tensor(np.stack([p.q for p in poses]), dtype=torch.float64)
    t = torch.tensor(np.stack([p.t for p in poses]), dtype=torch.float64)
    cam = torch.tensor(np.concatenate(cam_dirs), dtype=torch.float64)
    idx = torch.tensor(np.concatenate(img_idx))
    return field, q, t, cam, idx


def _loss(field, q, t, cam, idx, n_samples=6):
    o, d = corrected_rays(field, q, t, cam, idx)
    z = torch.linspace(2.0, 4.5, n_samples, dtype=torch.float64)
    delta = torch.full((n_samples,), (4.5 - 2.0) / n_samples, dtype=torch.float64)
    positions = (o[:, None, :] + z[None, :, None] * d[:, None, :]).reshape(-1, 3)
    sigma, feats = field.density(positions)
    n = o.shape[0]
    sigma = sigma.view(n, n_samples)
    dirs = d[:, None, :].expand(n, n_samples, 3).reshape(-1, 3)
    e = field.embeddings[idx][:, None, :].expand(n, n_samples, -1).reshape(-1, field.config.embedding_dim)
    sh = field.direction_encoder(dirs)
    rgb = torch.sigmoid(field.color_mlp(torch.cat([feats, sh, e], dim=-1))).view(n, n_samples, 3)
    res = composite(sigma, rgb, delta.expand(n, n_samples))
    # weighted sums keep every output channel in play
    return (res.color * torch.tensor([1.0, 0.7, 1.3], dtype=torch.float64)).sum() \
        + 0.5 * res.opacity.sum()


def run_gradient_check(n_coords: int = 120, seed: int = 0,
                       step: float = 1e-6) -> GradCheckReport:
    """Compare analytic and central-FD gradients at `n_coords` coordinates."""
    if n_coords < 1:
        raise ValueError("need at least one coordinate to check")
    if step <= 0:
        raise ValueError("finite-difference step must be positive")
    t0 = time.time()
    field, q, t, cam, idx = _build_scene(seed)

    loss = _loss(field, q, t, cam, idx)
    field.zero_grad()
    loss.backward()

    flat_params = {
        "grids": [field.encoder.planes],
        "density_mlp": list(field.density_mlp.parameters()),
        "color_mlp": list(field.color_mlp.parameters()),
        "embeddings": [field.embeddings],
        "pose_corrections": [field.pose_corrections],
    }

    rng = np.random.default_rng(seed + 1)
    names = list(flat_params)
    # random coordinates among those the recorded loss actually depends on;
    # coordinates with negligible analytic gradient would only compare FD roundoff
    # noise against an exact zero
    active = {}
    for name, params in flat_params.items():
        g = torch.cat([par.grad.reshape(-1) for par in params])
        nz = torch.nonzero(g.abs() > 1e-4).squeeze(-1).numpy()
        active[name] = nz if nz.size else np.arange(g.numel())

    per_group_counts = {n: min(n_coords // len(names), active[n].size) for n in names}
    deficit = n_coords - sum(per_group_counts.values())
    for name in names:  # spill unused quota into the larger groups
        room = active[name].size - per_group_counts[name]
        take = min(room, max(deficit, 0))
        per_group_counts[name] += take
        deficit -= take

    failures = []
    per_group_max = {}
    checked = 0
    for name in names:
        params = flat_params[name]
        coords = rng.choice(active[name], size=per_group_counts[name], replace=False)
        gmax = 0.0
        for flat_i in coords:
            # locate the owning tensor
            rem = int(flat_i)
            for p in params:
                if rem < p.numel():
                    break
                rem -= p.numel()
            analytic = float(p.grad.reshape(-1)[rem])
            with torch.no_grad():
                orig = float(p.reshape(-1)[rem])
                p.reshape(-1)[rem] = orig + step
                lp = float(_loss(field, q, t, cam, idx))
                p.reshape(-1)[rem] = orig - step
                lm = float(_loss(field, q, t, cam, idx))
                p.reshape(-1)[rem] = orig
            fd = (lp - lm) / (2.0 * step)
            rel = abs(analytic - fd) / max(abs(analytic), abs(fd), 1e-6)
            gmax = max(gmax, rel)
            checked += 1
            if rel >= 1e-4:
                failures.append({"group": name, "coord": int(flat_i),
                                 "analytic": analytic, "fd": fd, "rel_error": rel})
        per_group_max[name] = gmax

    return GradCheckReport(
        n_checked=checked,
        max_rel_error=max(per_group_max.values()),
        elapsed_seconds=time.time() - t0,
        failures=failures,
        per_group=per_group_max)
