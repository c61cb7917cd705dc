"""8-bit image file helpers (PNG via Pillow), grayscale-first."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image


def save_image(path, img: np.ndarray, opacity: np.ndarray | None = None):
    """Save a float image in [0, 1] as 8-bit PNG.

    2D arrays are written as grayscale, (H, W, 3) as RGB. If an opacity map
    is given it becomes the alpha channel (LA / RGBA).
    """
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    data = np.clip(np.asarray(img), 0.0, 1.0)
    u8 = np.round(data * 255.0).astype(np.uint8)
    if opacity is not None:
        a = np.round(np.clip(opacity, 0.0, 1.0) * 255.0).astype(np.uint8)
        if u8.ndim == 2:
            u8 = np.stack([u8, a], axis=-1)
            mode = "LA"
        else:
            u8 = np.concatenate([u8, a[..., None]], axis=-1)
            mode = "RGBA"
        Image.fromarray(u8, mode=mode).save(path)
    else:
        Image.fromarray(u8).save(path)


def load_image(path) -> np.ndarray:
    """Load an image as float32 in [0, 1]; alpha channel is preserved."""
    with Image.open(path) as im:
        arr = np.asarray(im)
    return arr.astype(np.float32) / 255.0


def save_mask(path, mask: np.ndarray):
    """Save a boolean mask as an 8-bit 0/255 PNG."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(np.where(np.asarray(mask, dtype=bool), 255, 0).astype(np.uint8)).save(path)


def load_mask(path) -> np.ndarray:
    with Image.open(path) as im:
        arr = np.asarray(im.convert("L"))
    return arr >= 128


def to_grayscale(img: np.ndarray) -> np.ndarray:
    if img.ndim == 2:
        return img
    return img[..., :3].mean(axis=-1)
