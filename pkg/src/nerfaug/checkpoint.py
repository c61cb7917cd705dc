"""Field checkpointing: versioned torch archive, bit-exact round trip."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path

import torch

from .field import FieldConfig, RadianceField

CHECKPOINT_VERSION = 1


def config_hash(config: FieldConfig) -> str:
    return hashlib.sha256(json.dumps(config.to_dict(), sort_keys=True).encode()).hexdigest()[:16]


def save_checkpoint(field: RadianceField, path):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    torch.save({
        "version": CHECKPOINT_VERSION,
        "config": field.config.to_dict(),
        "config_hash": config_hash(field.config),
        "state_dict": field.state_dict(),
    }, path)


def load_checkpoint(path) -> RadianceField:
    blob = torch.load(Path(path), weights_only=True)
    if blob.get("version") != CHECKPOINT_VERSION:
        raise ValueError(f"unsupported checkpoint version {blob.get('version')!r}")
    config = FieldConfig.from_dict(blob["config"])
    if blob.get("config_hash") != config_hash(config):
        raise ValueError("checkpoint config hash mismatch")
    field = RadianceField(config)
    field.load_state_dict(blob["state_dict"])
    return field
