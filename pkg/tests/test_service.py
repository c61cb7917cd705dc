import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from nerfaug.service.app import app

SMALL_FIELD = {"grid_resolution": 8, "grid_channels": 4, "density_hidden": 16,
               "density_layers": 2, "feature_dim": 6, "color_hidden": 16,
               "color_layers": 2, "embedding_dim": 4, "sh_degree": 1}
SMALL_TRAIN = {"iterations": 3, "batch_size": 32, "samples_per_ray": 4}


@pytest.fixture(scope="module")
def client():
    return TestClient(app)


@pytest.fixture(scope="module")
def scene(client, tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    resp = client.post("/toy-scene", json={
        "out_dir": str(out), "image_size": 8, "view_count": 4,
        "heldout_count": 2, "seed": 0})
    assert resp.status_code == 200, resp.text
    return out, resp.json()["result"]


@pytest.fixture(scope="module")
def trained(client, scene, tmp_path_factory):
    out, info = scene
    ckpt = tmp_path_factory.mktemp("ckpt") / "phi.pt"
    resp = client.post("/train", json={
        "data": info["manifest"], "mode": "appearance",
        "out_checkpoint": str(ckpt), "train": SMALL_TRAIN, "field": SMALL_FIELD})
    assert resp.status_code == 200, resp.text
    return ckpt, resp.json()["result"]


def test_health(client):
    resp = client.get("/health")
    assert resp.status_code == 200
    assert resp.json() == {"status": "ok"}


def test_toy_scene_outputs(scene):
    out, info = scene
    assert info["n_train"] == 4 and info["n_heldout"] == 2
    assert (out / "manifest.json").exists()
    assert (out / "poses_true.json").exists()
    assert len(list((out / "images").glob("*.png"))) == 6


def test_preprocess(client, scene, tmp_path):
    out, info = scene
    resp = client.post("/preprocess", json={
        "manifest": info["manifest"], "out_path": str(tmp_path / "rays.npz")})
    assert resp.status_code == 200, resp.text
    result = resp.json()["result"]
    assert result["rays"] == 4 * 8 * 8
    assert result["images"] == 4


def test_train_writes_checkpoint_and_log(trained):
    ckpt, result = trained
    assert ckpt.exists()
    assert result["mode"] == "appearance"
    log_lines = ckpt.with_suffix(".log.jsonl").read_text().splitlines()
    assert len(log_lines) >= 1
    assert "loss_photometric" in json.loads(log_lines[0])


def test_train_geometry_with_corrections(client, scene, trained, tmp_path):
    out, info = scene
    phi_ckpt, _ = trained
    psi_ckpt = tmp_path / "psi.pt"
    resp = client.post("/train", json={
        "data": info["manifest"], "mode": "geometry",
        "out_checkpoint": str(psi_ckpt), "train": SMALL_TRAIN,
        "field": SMALL_FIELD, "corrections_checkpoint": str(phi_ckpt)})
    assert resp.status_code == 200, resp.text
    from nerfaug.checkpoint import load_checkpoint
    import torch
    phi = load_checkpoint(phi_ckpt)
    psi = load_checkpoint(psi_ckpt)
    assert torch.equal(psi.pose_corrections, phi.pose_corrections)


def test_render_and_mask(client, trained, tmp_path):
    ckpt, _ = trained
    pose = {"q": [1.0, 0.0, 0.0, 0.0], "t": [0.0, 0.0, -4.0]}
    resp = client.post("/render", json={
        "checkpoint": str(ckpt), **pose, "out_path": str(tmp_path / "r.png"),
        "width": 8, "height": 8, "samples_per_ray": 4})
    assert resp.status_code == 200, resp.text
    assert 0.0 <= resp.json()["result"]["mean_opacity"] <= 1.0
    assert (tmp_path / "r.png").exists()

    resp = client.post("/mask", json={
        "checkpoint": str(ckpt), **pose, "out_path": str(tmp_path / "m.png"),
        "width": 8, "height": 8, "samples_per_ray": 4})
    assert resp.status_code == 200, resp.text
    assert 0.0 <= resp.json()["result"]["foreground_fraction"] <= 1.0


def test_eval_psnr(client, scene, trained):
    _, info = scene
    ckpt, _ = trained
    resp = client.post("/eval-psnr", json={
        "checkpoint": str(ckpt), "manifest": info["manifest"],
        "split": "heldout", "samples_per_ray": 4})
    assert resp.status_code == 200, resp.text
    result = resp.json()["result"]
    assert result["images"] == 2
    assert np.isfinite(result["psnr_db"])


def test_augment(client, scene, trained, tmp_path):
    out, _ = scene
    ckpt, _ = trained
    resp = client.post("/augment", json={
        "phi_checkpoint": str(ckpt), "psi_checkpoint": str(ckpt),
        "out_dir": str(tmp_path / "aug"),
        "pose_labels": str(out / "poses_true.json"),
        "config": {"n_labels": 2, "n_illumination": 1, "n_color": 1,
                   "width": 8, "height": 8, "samples_per_ray": 4, "seed": 1}})
    assert resp.status_code == 200, resp.text
    result = resp.json()["result"]
    assert result["images"] == 4
    assert result["masks"] == 2
    assert result["errors"] == 0


def test_check_grads(client):
    resp = client.post("/check-grads", json={"n_coords": 30, "seed": 0})
    assert resp.status_code == 200, resp.text
    result = resp.json()["result"]
    assert result["passed"] is True
    assert result["checked"] >= 30
    assert result["max_rel_error"] < 1e-4


def test_bad_manifest_is_400(client, tmp_path):
    resp = client.post("/preprocess", json={
        "manifest": str(tmp_path / "missing.json"),
        "out_path": str(tmp_path / "rays.npz")})
    assert resp.status_code == 400
    assert "manifest" in resp.json()["detail"]


def test_invalid_mode_is_422(client, tmp_path):
    resp = client.post("/train", json={
        "data": "x.json", "mode": "both", "out_checkpoint": str(tmp_path / "c.pt")})
    assert resp.status_code == 422


def test_unknown_train_option_is_400(client, scene, tmp_path):
    _, info = scene
    resp = client.post("/train", json={
        "data": info["manifest"], "mode": "appearance",
        "out_checkpoint": str(tmp_path / "c.pt"),
        "train": {"learning_rate": 1.0}})
    assert resp.status_code == 400
    assert "learning_rate" in resp.json()["detail"]
