"""Radiance field: plane-grid position encoding, spherical-harmonic direction
encoding, density and color MLPs, per-image appearance embeddings and pose
corrections.

The embedding and the direction encoding feed only the color branch, so the
density path (σ and its features) is independent of appearance by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import torch
from torch import nn

from .geometry import BoundingBox


@dataclass
class FieldConfig:
    grid_resolution: int = 128
    grid_channels: int = 16
    density_hidden: int = 64
    density_layers: int = 2
    feature_dim: int = 15
    color_hidden: int = 64
    color_layers: int = 2
    embedding_dim: int = 16
    sh_degree: int = 2
    n_images: int = 1
    bbox_lo: tuple = (-1.0, -1.0, -1.0)
    bbox_hi: tuple = (1.0, 1.0, 1.0)
    grid_init_scale: float = 1e-4

    @property
    def bbox(self) -> BoundingBox:
        return BoundingBox(np.array(self.bbox_lo), np.array(self.bbox_hi))

    def to_dict(self) -> dict:
        d = {k: (int(v) if isinstance(v, (int, np.integer)) else v)
             for k, v in self.__dict__.items()}
        d["bbox_lo"] = [float(v) for v in self.bbox_lo]
        d["bbox_hi"] = [float(v) for v in self.bbox_hi]
        d["grid_init_scale"] = float(self.grid_init_scale)
        return d

    @staticmethod
    def from_dict(d: dict) -> "FieldConfig":
        d = dict(d)
        d["bbox_lo"] = tuple(d["bbox_lo"])
        d["bbox_hi"] = tuple(d["bbox_hi"])
        return FieldConfig(**d)


class PlaneGridEncoder(nn.Module):
    """Three axis-aligned feature planes (xy, xz, yz) with bilinear lookup.

    Features from the three planes are concatenated. Positions are normalized
    so the bbox corners map onto the outermost grid nodes; out-of-box points
    are clamped to the boundary.
    """

    def __init__(self, resolution: int, channels: int, bbox: BoundingBox,
                 init_scale: float = 1e-4):
        super().__init__()
        self.resolution = resolution
        self.channels = channels
        self.planes = nn.Parameter(
            (torch.rand(3, channels, resolution, resolution) * 2.0 - 1.0) * init_scale)
        self.register_buffer("bbox_lo", torch.tensor(bbox.lo, dtype=torch.get_default_dtype()))
        self.register_buffer("bbox_hi", torch.tensor(bbox.hi, dtype=torch.get_default_dtype()))
        # which two coordinates index each plane
        self._axes = ((0, 1), (0, 2), (1, 2))

    @property
    def out_dim(self) -> int:
        return 3 * self.channels

    def normalized(self, p: torch.Tensor) -> torch.Tensor:
        """Map bbox to [0, R-1] grid coordinates, clamping to the boundary."""
        u = (p - self.bbox_lo) / (self.bbox_hi - self.bbox_lo)
        return u.clamp(0.0, 1.0) * (self.resolution - 1)

    def out_of_bounds(self, p: torch.Tensor) -> torch.Tensor:
        return ((p < self.bbox_lo) | (p > self.bbox_hi)).any(-1)

    def forward(self, p: torch.Tensor) -> torch.Tensor:
        shape = p.shape[:-1]
        u = (p.reshape(-1, 3) - self.bbox_lo) / (self.bbox_hi - self.bbox_lo)
        u = u.clamp(0.0, 1.0) * 2.0 - 1.0
        feats = []
        for plane, (a, b) in zip(self.planes, self._axes):
            # grid_sample's x indexes the plane's last axis (axis b)
            grid = torch.stack([u[:, b], u[:, a]], dim=-1).view(1, 1, -1, 2)
            out = torch.nn.functional.grid_sample(
                plane.unsqueeze(0), grid, mode="bilinear",
                align_corners=True, padding_mode="border")
            feats.append(out.view(self.channels, -1).T)
        return torch.cat(feats, dim=-1).view(*shape, 3 * self.channels)


# real spherical harmonics up to degree 3, graphics convention
_SH_C0 = 0.28209479177387814
_SH_C1 = 0.4886025119029199
_SH_C2 = (1.0925484305920792, 1.0925484305920792, 0.31539156525252005,
          1.0925484305920792, 0.5462742152960396)
_SH_C3 = (0.5900435899266435, 2.890611442640554, 0.4570457994644658,
          0.3731763325901154, 0.4570457994644658, 1.445305721320277,
          0.5900435899266435)


class DirectionEncoder(nn.Module):
    """Real spherical-harmonics basis of unit view directions, degrees 0..3."""

    def __init__(self, degree: int = 2):
        super().__init__()
        if not 0 <= degree <= 3:
            raise ValueError("supported SH degrees are 0..3")
        self.degree = degree

    @property
    def out_dim(self) -> int:
        return (self.degree + 1) ** 2

    def forward(self, dirs: torch.Tensor) -> torch.Tensor:
        x, y, z = dirs.unbind(-1)
        out = [torch.full_like(x, _SH_C0)]
        if self.degree >= 1:
            out += [_SH_C1 * y, _SH_C1 * z, _SH_C1 * x]
        if self.degree >= 2:
            xx, yy, zz = x * x, y * y, z * z
            out += [
                _SH_C2[0] * x * y,
                _SH_C2[1] * y * z,
                _SH_C2[2] * (3.0 * zz - 1.0),
                _SH_C2[3] * x * z,
                _SH_C2[4] * (xx - yy),
            ]
        if self.degree >= 3:
            xx, yy, zz = x * x, y * y, z * z
            out += [
                _SH_C3[0] * y * (3.0 * xx - yy),
                _SH_C3[1] * x * y * z,
                _SH_C3[2] * y * (5.0 * zz - 1.0),
                _SH_C3[3] * z * (5.0 * zz - 3.0),
                _SH_C3[4] * x * (5.0 * zz - 1.0),
                _SH_C3[5] * z * (xx - yy),
                _SH_C3[6] * x * (xx - 3.0 * yy),
            ]
        return torch.stack(out, dim=-1)


def angles_to_direction(theta, phi) -> torch.Tensor:
    theta = torch.as_tensor(theta)
    phi = torch.as_tensor(phi)
    st = torch.sin(theta)
    return torch.stack([st * torch.cos(phi), st * torch.sin(phi), torch.cos(theta)], -1)


def encode_direction(enc: DirectionEncoder, theta, phi) -> torch.Tensor:
    return enc(angles_to_direction(theta, phi))


class Mlp(nn.Module):
    """Plain fully-connected stack: ReLU hidden layers, linear output."""

    def __init__(self, in_dim: int, hidden: int, n_hidden: int, out_dim: int):
        super().__init__()
        layers = []
        d = in_dim
        for _ in range(n_hidden):
            layers += [nn.Linear(d, hidden), nn.ReLU()]
            d = hidden
        layers.append(nn.Linear(d, out_dim))
        self.net = nn.Sequential(*layers)
        for m in self.net:
            if isinstance(m, nn.Linear):
                nn.init.kaiming_uniform_(m.weight, a=math.sqrt(5))
                nn.init.zeros_(m.bias)

    def forward(self, x):
        return self.net(x)

    @property
    def parameter_count(self) -> int:
        return sum(p.numel() for p in self.parameters())


@dataclass
class FieldOutput:
    sigma: torch.Tensor
    rgb: torch.Tensor
    features: torch.Tensor


class RadianceField(nn.Module):
    """All learnable state of one radiance field.

    Holds the plane grids, both MLPs, the per-image appearance embedding
    table and the per-image pose-correction table (axis-angle + translation,
    initialized to zero).
    """

    def __init__(self, config: FieldConfig):
        super().__init__()
        self.config = config
        self.encoder = PlaneGridEncoder(config.grid_resolution, config.grid_channels,
                                        config.bbox, config.grid_init_scale)
        self.direction_encoder = DirectionEncoder(config.sh_degree)
        self.density_mlp = Mlp(self.encoder.out_dim, config.density_hidden,
                               config.density_layers, 1 + config.feature_dim)
        # Start the density head low so empty space is nearly transparent at
        # initialization; optimization then adds density only where rays need
        # it instead of having to carve fog away.
        with torch.no_grad():
            self.density_mlp.net[-1].bias[0] = -3.0
        color_in = config.feature_dim + self.direction_encoder.out_dim + config.embedding_dim
        self.color_mlp = Mlp(color_in, config.color_hidden, config.color_layers, 3)
        self.embeddings = nn.Parameter(torch.zeros(config.n_images, config.embedding_dim))
        self.pose_corrections = nn.Parameter(torch.zeros(config.n_images, 6))

    # --- forward passes -------------------------------------------------

    def density(self, positions: torch.Tensor):
        """positions (..., 3) -> (σ (...,), features (..., feature_dim))."""
        h = self.density_mlp(self.encoder(positions))
        sigma = torch.nn.functional.softplus(h[..., 0])
        return sigma, h[..., 1:]

    def color(self, features: torch.Tensor, dirs: torch.Tensor,
              embedding: torch.Tensor, color_mlp: Mlp | None = None) -> torch.Tensor:
        """Color branch; `color_mlp` may substitute a perturbed network."""
        mlp = color_mlp if color_mlp is not None else self.color_mlp
        sh = self.direction_encoder(dirs)
        e = embedding.expand(*features.shape[:-1], embedding.shape[-1])
        return torch.sigmoid(mlp(torch.cat([features, sh, e], dim=-1)))

    def forward(self, positions: torch.Tensor, dirs: torch.Tensor,
                embedding: torch.Tensor) -> FieldOutput:
        sigma, feats = self.density(positions)
        rgb = self.color(feats, dirs, embedding)
        return FieldOutput(sigma=sigma, rgb=rgb, features=feats)

    # --- parameter plumbing ----------------------------------------------

    def parameter_groups(self) -> dict:
        return {
            "grids": [self.encoder.planes],
            "mlps": list(self.density_mlp.parameters()) + list(self.color_mlp.parameters()),
            "embeddings": [self.embeddings],
            "pose_corrections": [self.pose_corrections],
        }

    def flatten_parameters(self) -> torch.Tensor:
        return torch.cat([p.detach().reshape(-1) for p in self.parameters()])

    def load_flat_parameters(self, vec: torch.Tensor):
        offset = 0
        with torch.no_grad():
            for p in self.parameters():
                n = p.numel()
                p.copy_(vec[offset:offset + n].view_as(p))
                offset += n
        if offset != vec.numel():
            raise ValueError("flat parameter vector has wrong length")

    def mean_embedding(self) -> torch.Tensor:
        return self.embeddings.detach().mean(dim=0)


def encode_position(enc: PlaneGridEncoder, p: torch.Tensor):
    """Plane-grid features plus an out-of-box flag (points are clamped)."""
    return enc(p), enc.out_of_bounds(p)
