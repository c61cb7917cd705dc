"""Scene manifest: the on-disk description of a posed image dataset.

Human-readable JSON with an explicit format version. Image and mask paths
are stored relative to the manifest file and resolved against its directory
on load. Quaternions are renormalized on load; a correction larger than 1e-3
triggers a warning, a zero-norm quaternion is a parse error.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np

from .geometry import BoundingBox, CameraIntrinsics, Pose

logger = logging.getLogger(__name__)

FORMAT_VERSION = 1


class ManifestError(ValueError):
    pass


@dataclass
class ManifestEntry:
    image_path: str
    pose: Pose
    mask_path: str | None = None
    split: str = "train"


@dataclass
class SceneManifest:
    intrinsics: CameraIntrinsics
    entries: list
    bbox: BoundingBox
    units: str = "scene"
    base_dir: Path = dc_field(default_factory=Path)

    def resolve(self, rel: str) -> Path:
        p = Path(rel)
        return p if p.is_absolute() else self.base_dir / p

    def split(self, tag: str) -> list:
        return [e for e in self.entries if e.split == tag]


def save_manifest(manifest: SceneManifest, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    doc = {
        "version": FORMAT_VERSION,
        "units": manifest.units,
        "intrinsics": {
            "fx": manifest.intrinsics.fx, "fy": manifest.intrinsics.fy,
            "cx": manifest.intrinsics.cx, "cy": manifest.intrinsics.cy,
            "width": manifest.intrinsics.width, "height": manifest.intrinsics.height,
        },
        "bbox": {"lo": manifest.bbox.lo.tolist(), "hi": manifest.bbox.hi.tolist()},
        "images": [
            {
                "image": e.image_path,
                "mask": e.mask_path,
                "q": [float(v) for v in e.pose.q],
                "t": [float(v) for v in e.pose.t],
                "split": e.split,
            }
            for e in manifest.entries
        ],
    }
    path.write_text(json.dumps(doc, indent=2))


def load_manifest(path) -> SceneManifest:
    path = Path(path)
    if not path.exists():
        raise ManifestError(f"manifest not found: {path}")
    try:
        doc = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ManifestError(f"{path}: malformed JSON at line {exc.lineno}") from exc
    if doc.get("version") != FORMAT_VERSION:
        raise ManifestError(f"{path}: unsupported manifest version {doc.get('version')!r}")

    try:
        intr = CameraIntrinsics(**doc["intrinsics"])
        bbox = BoundingBox(np.array(doc["bbox"]["lo"]), np.array(doc["bbox"]["hi"]))
    except (KeyError, TypeError, ValueError) as exc:
        raise ManifestError(f"{path}: bad header: {exc}") from exc

    entries = []
    for k, rec in enumerate(doc.get("images", [])):
        try:
            q = np.asarray(rec["q"], dtype=np.float64)
            t = np.asarray(rec["t"], dtype=np.float64)
            if not (np.all(np.isfinite(q)) and np.all(np.isfinite(t))):
                raise ValueError("non-finite pose")
            norm = float(np.linalg.norm(q))
            if norm == 0.0:
                raise ValueError("zero-norm quaternion")
            if abs(norm - 1.0) > 1e-3:
                logger.warning("%s: record %d quaternion renormalized (norm %.6f)",
                               path, k, norm)
            entries.append(ManifestEntry(
                image_path=rec["image"], mask_path=rec.get("mask"),
                pose=Pose(q, t), split=rec.get("split", "train")))
        except (KeyError, TypeError, ValueError) as exc:
            raise ManifestError(f"{path}: record {k}: {exc}") from exc
    return SceneManifest(intrinsics=intr, entries=entries, bbox=bbox,
                         units=doc.get("units", "scene"), base_dir=path.parent)
