"""HTTP service exposing the dataset-augmentation pipeline.

Endpoints operate on the server's filesystem and run synchronously; training
and generation requests can take minutes. The CLI is a thin client of this
app (in-process by default, remote with --server).
"""

from __future__ import annotations

import logging

from fastapi import FastAPI, HTTPException

from .. import pipeline
from ..manifest import ManifestError
from .schemas import (AugmentRequest, CheckGradsRequest, EvalPsnrRequest,
                      JobResponse, MaskRequest, PreprocessRequest,
                      RenderRequest, ToySceneRequest, TrainRequest)

logger = logging.getLogger(__name__)

app = FastAPI(title="nerfaug", version="0.1.0",
              description="Dual-NeRF dataset augmentation service")


def _run(fn, *args, **kwargs) -> JobResponse:
    try:
        return JobResponse(result=fn(*args, **kwargs))
    except (ValueError, ManifestError, FileNotFoundError) as exc:
        raise HTTPException(status_code=400, detail=str(exc))


@app.get("/health")
def health():
    return {"status": "ok"}


@app.post("/toy-scene", response_model=JobResponse)
def toy_scene(req: ToySceneRequest):
    return _run(pipeline.run_toy_scene, req.out_dir, image_size=req.image_size,
                view_count=req.view_count, heldout_count=req.heldout_count,
                seed=req.seed,
                pose_noise_rotation_deg=req.pose_noise_rotation_deg,
                pose_noise_translation_frac=req.pose_noise_translation_frac,
                light_cone_half_angle=req.light_cone_half_angle)


@app.post("/preprocess", response_model=JobResponse)
def preprocess(req: PreprocessRequest):
    return _run(pipeline.run_preprocess, req.manifest, req.out_path)


@app.post("/train", response_model=JobResponse)
def train(req: TrainRequest):
    return _run(pipeline.run_train, req.data, req.mode, req.out_checkpoint,
                train_overrides=req.train, field_overrides=req.field,
                corrections_checkpoint=req.corrections_checkpoint,
                toy_preset=req.toy_preset)


@app.post("/render", response_model=JobResponse)
def render(req: RenderRequest):
    return _run(pipeline.run_render, req.checkpoint, req.q, req.t, req.out_path,
                width=req.width, height=req.height, fov_focal=req.fov_focal,
                samples_per_ray=req.samples_per_ray, embedding=req.embedding,
                grayscale=req.grayscale)


@app.post("/mask", response_model=JobResponse)
def mask(req: MaskRequest):
    return _run(pipeline.run_mask, req.checkpoint, req.q, req.t, req.out_path,
                width=req.width, height=req.height, fov_focal=req.fov_focal,
                samples_per_ray=req.samples_per_ray, threshold=req.threshold)


@app.post("/augment", response_model=JobResponse)
def augment(req: AugmentRequest):
    return _run(pipeline.run_augment, req.phi_checkpoint, req.psi_checkpoint,
                req.out_dir, pose_labels_path=req.pose_labels,
                config=req.config, intrinsics=req.intrinsics)


@app.post("/eval-psnr", response_model=JobResponse)
def eval_psnr(req: EvalPsnrRequest):
    return _run(pipeline.run_eval_psnr, req.checkpoint, req.manifest,
                split=req.split, samples_per_ray=req.samples_per_ray)


@app.post("/check-grads", response_model=JobResponse)
def check_grads(req: CheckGradsRequest):
    return _run(pipeline.run_check_grads, n_coords=req.n_coords, seed=req.seed)
