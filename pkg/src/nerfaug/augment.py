"""Appearance-randomized dataset generation.

For every pose label we render one foreground mask with the
density-supervised field and N_cfg foreground images with the
appearance field. The appearance field's density pass is computed once per
pose and reused across all colorings, so the accumulated-opacity map (and
hence the geometry) is identical for every appearance configuration.

Illumination is randomized by sampling a new appearance embedding (verbatim,
interpolated, extrapolated or Gaussian); color is randomized by injecting
relative Gaussian noise into the color MLP's weights.
"""

from __future__ import annotations

import copy
import json
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
import torch
from torch import nn

from .field import Mlp, RadianceField
from .geometry import CameraIntrinsics, Pose
from .images import load_image, save_image, save_mask, to_grayscale
from .renderer import RenderConfig, compute_density_cache, render_opacity, shade_from_cache
from .toyscene import look_at_pose

STRATEGIES = ("uniform", "interpolate", "extrapolate", "gaussian")


@dataclass
class EmbeddingDistribution:
    """Gaussian fit of the learned embedding set (biased 1/N covariance)."""

    mean: np.ndarray
    covariance: np.ndarray

    def __post_init__(self):
        self.mean = np.asarray(self.mean, dtype=np.float64)
        self.covariance = np.asarray(self.covariance, dtype=np.float64)
        if not np.allclose(self.covariance, self.covariance.T, atol=1e-9):
            raise ValueError("covariance must be symmetric")
        # symmetric factorization with eigenvalues clamped at zero
        w, v = np.linalg.eigh(self.covariance)
        self._factor = v @ np.diag(np.sqrt(np.clip(w, 0.0, None)))

    @staticmethod
    def fit(embeddings: np.ndarray) -> "EmbeddingDistribution":
        e = np.asarray(embeddings, dtype=np.float64)
        if e.ndim != 2 or e.shape[0] < 1:
            raise ValueError("need at least one embedding")
        mean = e.mean(axis=0)
        centered = e - mean
        cov = centered.T @ centered / e.shape[0]
        cov = 0.5 * (cov + cov.T)
        return EmbeddingDistribution(mean=mean, covariance=cov)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return self.mean + self._factor @ rng.standard_normal(self.mean.shape[0])


def sample_embedding(embeddings: np.ndarray, strategy: str,
                     rng: np.random.Generator,
                     dist: EmbeddingDistribution | None = None,
                     alpha: float | None = None,
                     extrapolation_margin: float = 0.5):
    """Draw one appearance embedding; returns (vector, descriptor dict)."""
    e = np.asarray(embeddings, dtype=np.float64)
    n = e.shape[0]
    if strategy not in STRATEGIES:
        raise ValueError(f"unknown strategy {strategy!r}")
    if strategy in ("interpolate", "extrapolate") and n < 2:
        raise ValueError(f"strategy {strategy!r} needs at least two embeddings")

    if strategy == "uniform":
        i = int(rng.integers(n))
        return e[i].copy(), {"strategy": "uniform", "i": i}
    if strategy == "gaussian":
        if dist is None:
            dist = EmbeddingDistribution.fit(e)
        return dist.sample(rng), {"strategy": "gaussian"}

    i = int(rng.integers(n))
    j = int(rng.integers(n - 1))
    j = j + 1 if j >= i else j
    if alpha is None:
        if strategy == "interpolate":
            alpha = float(rng.uniform(0.0, 1.0))
        else:
            side = rng.integers(2)
            alpha = float(rng.uniform(-extrapolation_margin, 0.0) if side == 0
                          else rng.uniform(1.0, 1.0 + extrapolation_margin))
    ek = e[i] + alpha * (e[j] - e[i])
    return ek, {"strategy": strategy, "i": i, "j": j, "alpha": alpha}


def fit_embedding_distribution(embeddings: np.ndarray) -> EmbeddingDistribution:
    return EmbeddingDistribution.fit(embeddings)


def perturb_color_network(field: RadianceField, scale: float,
                          generator: torch.Generator) -> Mlp:
    """Copy of the color MLP with relative Gaussian weight noise.

    Noise per weight is N(0, (scale·σ_w)²) where σ_w is that layer's empirical
    weight standard deviation. Biases, density MLP, grids and embeddings are
    untouched. scale 0 returns a bit-identical copy.
    """
    if scale < 0:
        raise ValueError("noise scale must be non-negative")
    mlp = copy.deepcopy(field.color_mlp)
    if scale == 0:
        return mlp
    with torch.no_grad():
        for m in mlp.net:
            if isinstance(m, nn.Linear):
                sigma_w = m.weight.std()
                m.weight.add_(torch.randn(m.weight.shape, generator=generator,
                                          dtype=m.weight.dtype) * (scale * sigma_w))
    return mlp


def composite_background(foreground: np.ndarray, opacity: np.ndarray,
                         background: np.ndarray) -> np.ndarray:
    """Straight-alpha over: out = fg + (1 − opacity)·bg."""
    fg = np.asarray(foreground, dtype=np.float32)
    bg = np.asarray(background, dtype=np.float32)
    if bg.ndim == 2 and fg.ndim == 3:
        bg = np.repeat(bg[..., None], fg.shape[-1], axis=-1)
    if bg.shape != fg.shape or opacity.shape != fg.shape[:2]:
        raise ValueError("foreground, background and opacity resolutions must match")
    op = opacity[..., None] if fg.ndim == 3 else opacity
    return fg + (1.0 - op) * bg


def sample_pose_labels(n: int, rng: np.random.Generator,
                       radius_range=(3.0, 5.0), look_at_origin: bool = True) -> list:
    """Random pose labels: translation uniform in a spherical shell, orientation
    either aimed at the origin or uniform on SO(3)."""
    poses = []
    for _ in range(n):
        d = rng.normal(size=3)
        d /= np.linalg.norm(d)
        eye = d * rng.uniform(*radius_range)
        if look_at_origin:
            poses.append(look_at_pose(eye, np.zeros(3)))
        else:
            q = rng.normal(size=4)
            poses.append(Pose(q / np.linalg.norm(q), eye))
    return poses


@dataclass
class AugmentConfig:
    n_labels: int = 50
    n_illumination: int = 24
    n_color: int = 40
    strategy_weights: dict = dc_field(default_factory=lambda: {
        "uniform": 0.25, "interpolate": 0.25, "extrapolate": 0.25, "gaussian": 0.25})
    extrapolation_margin: float = 0.5
    color_noise_scales: tuple = (0.05, 0.10)
    mask_threshold: float = 0.5
    width: int = 768
    height: int = 512
    samples_per_ray: int = 32
    background_paths: list = dc_field(default_factory=list)
    background_probability: float = 0.5
    grayscale: bool = True
    seed: int = 0

    @property
    def n_configs(self) -> int:
        return self.n_illumination + self.n_color

    def __post_init__(self):
        if self.n_labels < 1:
            raise ValueError("need at least one pose label")
        if self.n_configs < 1:
            raise ValueError("need at least one appearance configuration")
        total = sum(self.strategy_weights.get(s, 0.0) for s in STRATEGIES)
        if total <= 0:
            raise ValueError("strategy weights must have positive mass")
        self.strategy_weights = {s: self.strategy_weights.get(s, 0.0) / total
                                 for s in STRATEGIES}
        if not 0.0 < self.mask_threshold < 1.0:
            raise ValueError("mask threshold must lie in (0, 1)")


@dataclass
class GeneratedSample:
    image_path: str
    mask_path: str
    q: list
    t: list
    config: dict
    background: bool
    error: str | None = None


def _resize(img: np.ndarray, width: int, height: int) -> np.ndarray:
    from PIL import Image
    u8 = np.round(np.clip(img, 0.0, 1.0) * 255.0).astype(np.uint8)
    resized = Image.fromarray(u8).resize((width, height), Image.BOX)
    return np.asarray(resized).astype(np.float32) / 255.0


def _pick_strategy(weights: dict, rng: np.random.Generator) -> str:
    names = list(STRATEGIES)
    p = np.array([weights[s] for s in names])
    return names[int(rng.choice(len(names), p=p))]


def generate_augmented_set(phi: RadianceField, psi: RadianceField, poses,
                           cfg: AugmentConfig, intrinsics: CameraIntrinsics,
                           output_dir) -> list:
    """Render the augmented dataset; returns the list of GeneratedSample records.

    Deterministic for a fixed seed: every pose gets its own spawned RNG stream
    so partial re-runs reproduce identical outputs.
    """
    if phi.config.embedding_dim != psi.config.embedding_dim:
        raise ValueError("field configurations are incompatible")
    out = Path(output_dir)
    (out / "images").mkdir(parents=True, exist_ok=True)
    (out / "masks").mkdir(parents=True, exist_ok=True)

    embeddings = phi.embeddings.detach().double().numpy()
    dist = EmbeddingDistribution.fit(embeddings)
    backgrounds = []
    for p in cfg.background_paths:
        bg = load_image(p)
        bg = to_grayscale(bg) if cfg.grayscale else bg[..., :3]
        if bg.shape[:2] != (cfg.height, cfg.width):
            bg = _resize(bg, cfg.width, cfg.height)
        backgrounds.append(bg)

    intr = intrinsics.scaled(cfg.width, cfg.height)
    render_cfg = RenderConfig(width=cfg.width, height=cfg.height,
                              samples_per_ray=cfg.samples_per_ray,
                              mask_threshold=cfg.mask_threshold, jitter=False)
    root = np.random.SeedSequence(cfg.seed)
    pose_seeds = root.spawn(len(poses))

    records = []
    for p_idx, (pose, seed_seq) in enumerate(zip(poses, pose_seeds)):
        rng = np.random.default_rng(seed_seq)
        mask_path = f"masks/mask_{p_idx:05d}.png"
        samples_for_pose = []
        try:
            opacity_psi = render_opacity(psi, pose, intr, render_cfg)
            mask = opacity_psi >= cfg.mask_threshold
            save_mask(out / mask_path, mask)
            cache = compute_density_cache(phi, pose, intr, render_cfg)
            opacity_phi = cache.opacity.view(intr.height, intr.width).numpy()
        except OSError as exc:
            records.append(GeneratedSample(image_path="", mask_path=mask_path,
                                           q=[float(v) for v in pose.q],
                                           t=[float(v) for v in pose.t],
                                           config={}, background=False, error=str(exc)))
            continue

        for k in range(cfg.n_configs):
            noise_seed = int(rng.integers(2 ** 31))
            if k < cfg.n_illumination:
                strategy = _pick_strategy(cfg.strategy_weights, rng)
                e_np, desc = sample_embedding(
                    embeddings, strategy, rng, dist=dist,
                    extrapolation_margin=cfg.extrapolation_margin)
                desc = {"kind": "illumination", **desc}
                e = torch.tensor(e_np)
                color_mlp = None
            else:
                scale = cfg.color_noise_scales[(k - cfg.n_illumination)
                                               % len(cfg.color_noise_scales)]
                i = int(rng.integers(embeddings.shape[0]))
                e = torch.tensor(embeddings[i])
                gen = torch.Generator().manual_seed(noise_seed)
                color_mlp = perturb_color_network(phi, scale, gen)
                desc = {"kind": "color", "noise_scale": scale, "i": i,
                        "noise_seed": noise_seed}

            image = shade_from_cache(phi, cache, e, color_mlp)
            if cfg.grayscale:
                image = to_grayscale(image)
            use_bg = bool(backgrounds) and rng.random() < cfg.background_probability
            if use_bg:
                bg = backgrounds[int(rng.integers(len(backgrounds)))]
                image = composite_background(image, opacity_phi, bg)

            image_path = f"images/img_{p_idx:05d}_{k:03d}.png"
            record = GeneratedSample(image_path=image_path, mask_path=mask_path,
                                     q=[float(v) for v in pose.q],
                                     t=[float(v) for v in pose.t],
                                     config=desc, background=use_bg)
            try:
                save_image(out / image_path, image,
                           opacity=None if use_bg else opacity_phi)
            except OSError as exc:
                record.error = str(exc)
            samples_for_pose.append(record)
        records.extend(samples_for_pose)

    manifest_path = out / "generated_manifest.jsonl"
    with manifest_path.open("w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.__dict__) + "\n")
    return records
