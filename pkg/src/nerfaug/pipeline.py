"""Stage entry points shared by the HTTP service and the CLI.

Every function takes plain values / filesystem paths and returns a
JSON-serializable summary dict, so the service handlers and the CLI stay
thin.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

import numpy as np

from . import augment as aug
from .checkpoint import load_checkpoint, save_checkpoint
from .field import FieldConfig
from .geometry import BoundingBox, CameraIntrinsics, Pose
from .gradcheck import run_gradient_check
from .images import load_image, load_mask, save_image, save_mask, to_grayscale
from .manifest import ManifestEntry, SceneManifest, load_manifest, save_manifest
from .renderer import RenderConfig, render_image, render_mask
from .toyscene import ToySceneSpec, generate_toy_scene
from .training import RayDataset, TrainConfig, evaluate_psnr, preprocess, train_model

logger = logging.getLogger(__name__)


# ---------------------------------------------------------------------------
# toy scene
# ---------------------------------------------------------------------------

def run_toy_scene(out_dir, image_size: int = 64, view_count: int = 100,
                  heldout_count: int = 20, seed: int = 0,
                  pose_noise_rotation_deg: float = 0.0,
                  pose_noise_translation_frac: float = 0.0,
                  light_cone_half_angle: float = 0.5,
                  orbit_radius: float | None = None,
                  bbox_half_extent: float | None = None,
                  texture_scale: float = 0.0) -> dict:
    """Emit the procedural oracle dataset: images, exact masks, manifest."""
    out = Path(out_dir)
    spec = ToySceneSpec.default()
    spec.image_size = image_size
    spec.view_count = view_count + heldout_count
    spec.pose_noise_rotation_deg = pose_noise_rotation_deg
    spec.pose_noise_translation_frac = pose_noise_translation_frac
    spec.light_cone_half_angle = light_cone_half_angle
    spec.texture_scale = texture_scale
    if orbit_radius is not None:
        spec.orbit_radius = orbit_radius
    if bbox_half_extent is not None:
        spec.bbox_half_extent = bbox_half_extent

    data = generate_toy_scene(spec, np.random.default_rng(seed))
    entries = []
    for a, (img, mask) in enumerate(zip(data.images, data.masks)):
        rel_img = f"images/view_{a:04d}.png"
        rel_mask = f"masks/view_{a:04d}.png"
        save_image(out / rel_img, img)
        save_mask(out / rel_mask, mask)
        entries.append(ManifestEntry(
            image_path=rel_img, mask_path=rel_mask, pose=data.exported_poses[a],
            split="train" if a < view_count else "heldout"))
    manifest = SceneManifest(intrinsics=data.intrinsics, entries=entries,
                             bbox=spec.bbox, base_dir=out)
    save_manifest(manifest, out / "manifest.json")
    # true rendering poses, kept outside the manifest for refinement evaluation
    (out / "poses_true.json").write_text(json.dumps({
        "poses": [{"q": [float(v) for v in p.q], "t": [float(v) for v in p.t]}
                  for p in data.true_poses]}))
    return {"manifest": str(out / "manifest.json"),
            "n_train": view_count, "n_heldout": heldout_count,
            "image_size": image_size}


# ---------------------------------------------------------------------------
# preprocessing
# ---------------------------------------------------------------------------

def dataset_from_manifest(manifest: SceneManifest, split: str = "train") -> RayDataset:
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no '{split}' entries")
    images, poses, masks = [], [], []
    for e in entries:
        img = load_image(manifest.resolve(e.image_path))
        if img.ndim == 3:
            img = img[..., :3]
        if e.mask_path is None:
            mask = np.ones(img.shape[:2], dtype=bool)
        else:
            mask = load_mask(manifest.resolve(e.mask_path))
        images.append(img)
        masks.append(mask)
        poses.append(e.pose)
    return preprocess(images, poses, masks, manifest.intrinsics, manifest.bbox)


def run_preprocess(manifest_path, out_path) -> dict:
    manifest = load_manifest(manifest_path)
    ds = dataset_from_manifest(manifest)
    np.savez_compressed(
        Path(out_path),
        origins=ds.origins, cam_dirs=ds.cam_dirs, dirs=ds.dirs,
        pixels=ds.pixels, masks=ds.masks, image_idx=ds.image_idx,
        pose_q=np.stack([p.q for p in ds.poses]),
        pose_t=np.stack([p.t for p in ds.poses]),
        intrinsics=np.array([ds.intrinsics.fx, ds.intrinsics.fy, ds.intrinsics.cx,
                             ds.intrinsics.cy, ds.intrinsics.width, ds.intrinsics.height]),
        bbox_lo=ds.bbox.lo, bbox_hi=ds.bbox.hi)
    return {"rays": len(ds), "images": ds.n_images, "output": str(out_path)}


def load_ray_dataset(path) -> RayDataset:
    z = np.load(Path(path))
    intr = z["intrinsics"]
    return RayDataset(
        origins=z["origins"], cam_dirs=z["cam_dirs"], dirs=z["dirs"],
        pixels=z["pixels"], masks=z["masks"], image_idx=z["image_idx"],
        poses=[Pose(q, t) for q, t in zip(z["pose_q"], z["pose_t"])],
        intrinsics=CameraIntrinsics(float(intr[0]), float(intr[1]), float(intr[2]),
                                    float(intr[3]), int(intr[4]), int(intr[5])),
        bbox=BoundingBox(z["bbox_lo"], z["bbox_hi"]))


# ---------------------------------------------------------------------------
# training
# ---------------------------------------------------------------------------

def run_train(data_path, mode: str, out_checkpoint,
              train_overrides: dict | None = None,
              field_overrides: dict | None = None,
              corrections_checkpoint=None, toy_preset: bool = False) -> dict:
    """Train a field from a manifest (.json) or preprocessed rays (.npz)."""
    data_path = Path(data_path)
    if data_path.suffix == ".npz":
        dataset = load_ray_dataset(data_path)
    else:
        dataset = dataset_from_manifest(load_manifest(data_path))

    cfg = TrainConfig.toy() if toy_preset else TrainConfig()
    for k, v in (train_overrides or {}).items():
        if not hasattr(cfg, k):
            raise ValueError(f"unknown training option {k!r}")
        setattr(cfg, k, v)
    field_cfg = FieldConfig()
    for k, v in (field_overrides or {}).items():
        if not hasattr(field_cfg, k):
            raise ValueError(f"unknown field option {k!r}")
        setattr(field_cfg, k, v)

    corrections = None
    if corrections_checkpoint is not None:
        corrections = load_checkpoint(corrections_checkpoint).pose_corrections.detach()

    out_checkpoint = Path(out_checkpoint)

    def checkpoint_cb(field, iteration):
        save_checkpoint(field, out_checkpoint.with_suffix(f".it{iteration}.pt"))

    result = train_model(dataset, cfg, mode, field_config=field_cfg,
                         pose_corrections=corrections, on_checkpoint=checkpoint_cb)
    save_checkpoint(result.field, out_checkpoint)
    log_path = out_checkpoint.with_suffix(".log.jsonl")
    with log_path.open("w") as fh:
        for rec in result.history:
            fh.write(json.dumps(rec) + "\n")
    final = result.history[-1] if result.history else {}
    return {"checkpoint": str(out_checkpoint), "log": str(log_path),
            "iterations": cfg.iterations, "mode": mode, "final": final}


# ---------------------------------------------------------------------------
# rendering
# ---------------------------------------------------------------------------

def _embedding_for(field, policy):
    if policy == "mean":
        return field.mean_embedding()
    return field.embeddings.detach()[int(policy)]


def run_render(checkpoint, q, t, out_path, width: int = 64, height: int = 64,
               fov_focal: float | None = None, samples_per_ray: int = 32,
               embedding: str = "mean", grayscale: bool = True) -> dict:
    field = load_checkpoint(checkpoint)
    pose = Pose(np.asarray(q, dtype=float), np.asarray(t, dtype=float))
    f = fov_focal if fov_focal is not None else float(max(width, height))
    intr = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    cfg = RenderConfig(width=width, height=height, samples_per_ray=samples_per_ray)
    image, opacity = render_image(field, pose, intr, _embedding_for(field, embedding), cfg)
    if grayscale:
        image = to_grayscale(image)
    save_image(Path(out_path), image, opacity=opacity)
    return {"image": str(out_path), "mean_opacity": float(opacity.mean())}


def run_mask(checkpoint, q, t, out_path, width: int = 64, height: int = 64,
             fov_focal: float | None = None, samples_per_ray: int = 32,
             threshold: float = 0.5) -> dict:
    field = load_checkpoint(checkpoint)
    pose = Pose(np.asarray(q, dtype=float), np.asarray(t, dtype=float))
    f = fov_focal if fov_focal is not None else float(max(width, height))
    intr = CameraIntrinsics(f, f, width / 2.0, height / 2.0, width, height)
    cfg = RenderConfig(width=width, height=height, samples_per_ray=samples_per_ray,
                       mask_threshold=threshold)
    mask = render_mask(field, pose, intr, cfg)
    save_mask(Path(out_path), mask)
    return {"mask": str(out_path), "foreground_fraction": float(mask.mean())}


# ---------------------------------------------------------------------------
# augmentation
# ---------------------------------------------------------------------------

def load_pose_labels(path) -> list:
    doc = json.loads(Path(path).read_text())
    return [Pose(np.asarray(p["q"], dtype=float), np.asarray(p["t"], dtype=float))
            for p in doc["poses"]]


def run_augment(phi_checkpoint, psi_checkpoint, out_dir,
                pose_labels_path=None, config: dict | None = None,
                intrinsics: dict | None = None) -> dict:
    phi = load_checkpoint(phi_checkpoint)
    psi = load_checkpoint(psi_checkpoint)
    cfg = aug.AugmentConfig(**(config or {}))
    if pose_labels_path is not None:
        poses = load_pose_labels(pose_labels_path)
        if len(poses) < cfg.n_labels:
            raise ValueError("pose label file has fewer poses than n_labels")
        poses = poses[:cfg.n_labels]
    else:
        rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, 0xfeed]))
        poses = aug.sample_pose_labels(cfg.n_labels, rng)
    if intrinsics is not None:
        intr = CameraIntrinsics(**intrinsics)
    else:
        f = float(max(cfg.width, cfg.height))
        intr = CameraIntrinsics(f, f, cfg.width / 2.0, cfg.height / 2.0,
                                cfg.width, cfg.height)
    records = aug.generate_augmented_set(phi, psi, poses, cfg, intr, out_dir)
    errors = [r for r in records if r.error]
    return {"output_dir": str(out_dir),
            "manifest": str(Path(out_dir) / "generated_manifest.jsonl"),
            "images": sum(1 for r in records if r.image_path and not r.error),
            "masks": len({r.mask_path for r in records}),
            "errors": len(errors)}


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------

def run_eval_psnr(checkpoint, manifest_path, split: str = "heldout",
                  samples_per_ray: int = 32) -> dict:
    field = load_checkpoint(checkpoint)
    manifest = load_manifest(manifest_path)
    entries = manifest.split(split)
    if not entries:
        raise ValueError(f"manifest has no '{split}' entries")
    images, poses = [], []
    for e in entries:
        img = load_image(manifest.resolve(e.image_path))
        if img.ndim == 3:
            img = img[..., :3]
        images.append(img)
        poses.append(e.pose)
    cfg = RenderConfig(width=manifest.intrinsics.width,
                       height=manifest.intrinsics.height,
                       samples_per_ray=samples_per_ray)
    # heldout images were never trained, so the mean-embedding policy applies
    trained = None
    if split == "train":
        trained = {pos: pos for pos in range(len(entries))}
    psnr = evaluate_psnr(field, images, poses, manifest.intrinsics, cfg,
                         trained_image_indices=trained)
    return {"psnr_db": psnr, "images": len(images), "split": split}


def run_check_grads(n_coords: int = 120, seed: int = 0) -> dict:
    report = run_gradient_check(n_coords=n_coords, seed=seed)
    return {"checked": report.n_checked,
            "max_rel_error": report.max_rel_error,
            "elapsed_seconds": report.elapsed_seconds,
            "per_group": report.per_group,
            "passed": report.passed,
            "failures": report.failures[:10]}
