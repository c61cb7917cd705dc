"""Pydantic request/response models for the HTTP service."""

from __future__ import annotations

from typing import Optional

from pydantic import BaseModel, Field


class ToySceneRequest(BaseModel):
    out_dir: str
    image_size: int = 64
    view_count: int = 100
    heldout_count: int = 20
    seed: int = 0
    pose_noise_rotation_deg: float = 0.0
    pose_noise_translation_frac: float = 0.0
    light_cone_half_angle: float = 0.5


class PreprocessRequest(BaseModel):
    manifest: str
    out_path: str


class TrainRequest(BaseModel):
    data: str = Field(description="scene manifest (.json) or preprocessed rays (.npz)")
    mode: str = Field(pattern="^(appearance|geometry)$")
    out_checkpoint: str
    toy_preset: bool = False
    train: dict = Field(default_factory=dict)
    field: dict = Field(default_factory=dict)
    corrections_checkpoint: Optional[str] = None


class RenderRequest(BaseModel):
    checkpoint: str
    q: list
    t: list
    out_path: str
    width: int = 64
    height: int = 64
    fov_focal: Optional[float] = None
    samples_per_ray: int = 32
    embedding: str = "mean"
    grayscale: bool = True


class MaskRequest(BaseModel):
    checkpoint: str
    q: list
    t: list
    out_path: str
    width: int = 64
    height: int = 64
    fov_focal: Optional[float] = None
    samples_per_ray: int = 32
    threshold: float = 0.5


class AugmentRequest(BaseModel):
    phi_checkpoint: str
    psi_checkpoint: str
    out_dir: str
    pose_labels: Optional[str] = None
    config: dict = Field(default_factory=dict)
    intrinsics: Optional[dict] = None


class EvalPsnrRequest(BaseModel):
    checkpoint: str
    manifest: str
    split: str = "heldout"
    samples_per_ray: int = 32


class CheckGradsRequest(BaseModel):
    n_coords: int = 120
    seed: int = 0


class JobResponse(BaseModel):
    ok: bool = True
    result: dict
