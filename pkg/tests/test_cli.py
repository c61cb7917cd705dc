import json

import numpy as np
import pytest
from click.testing import CliRunner

from nerfaug.cli import main

SMALL_FIELD = {"grid_resolution": 8, "grid_channels": 4, "density_hidden": 16,
               "density_layers": 2, "feature_dim": 6, "color_hidden": 16,
               "color_layers": 2, "embedding_dim": 4, "sh_degree": 1}


def run_cli(args):
    runner = CliRunner()
    return runner.invoke(main, args, catch_exceptions=False)


def last_json(output: str) -> dict:
    # the result document is the only thing printed to stdout
    return json.loads(output)


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    out = tmp_path_factory.mktemp("scene")
    res = run_cli(["toy-scene", "--out-dir", str(out), "--image-size", "8",
                   "--view-count", "4", "--heldout-count", "2", "--seed", "0"])
    assert res.exit_code == 0, res.output
    return out


@pytest.fixture(scope="module")
def checkpoint(scene, tmp_path_factory):
    ckpt = tmp_path_factory.mktemp("ckpt") / "phi.pt"
    cfg = tmp_path_factory.mktemp("cfg") / "train.json"
    cfg.write_text(json.dumps({"train": {"iterations": 3, "batch_size": 32,
                                         "samples_per_ray": 4},
                               "field": SMALL_FIELD}))
    res = run_cli(["train", "--data", str(scene / "manifest.json"),
                   "--mode", "appearance", "--out-checkpoint", str(ckpt),
                   "--config", str(cfg)])
    assert res.exit_code == 0, res.output
    return ckpt


class TestToyScene:
    def test_reports_manifest(self, scene):
        assert (scene / "manifest.json").exists()

    def test_same_seed_byte_identical(self, tmp_path):
        for sub in ("a", "b"):
            res = run_cli(["toy-scene", "--out-dir", str(tmp_path / sub),
                           "--image-size", "8", "--view-count", "3",
                           "--heldout-count", "1", "--seed", "11"])
            assert res.exit_code == 0
        for rel in sorted(p.relative_to(tmp_path / "a")
                          for p in (tmp_path / "a").rglob("*") if p.is_file()):
            assert (tmp_path / "a" / rel).read_bytes() \
                == (tmp_path / "b" / rel).read_bytes(), rel


class TestPreprocess:
    def test_writes_ray_archive(self, scene, tmp_path):
        res = run_cli(["preprocess", "--manifest", str(scene / "manifest.json"),
                       "--out-path", str(tmp_path / "rays.npz")])
        assert res.exit_code == 0, res.output
        assert last_json(res.stdout)["rays"] == 4 * 8 * 8
        assert (tmp_path / "rays.npz").exists()


class TestTrain:
    def test_trains_from_npz(self, scene, checkpoint, tmp_path):
        res = run_cli(["preprocess", "--manifest", str(scene / "manifest.json"),
                       "--out-path", str(tmp_path / "rays.npz")])
        assert res.exit_code == 0
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"iterations": 2, "batch_size": 32,
                                             "samples_per_ray": 4},
                                   "field": SMALL_FIELD}))
        res = run_cli(["train", "--data", str(tmp_path / "rays.npz"),
                       "--mode", "geometry", "--out-checkpoint",
                       str(tmp_path / "psi.pt"), "--config", str(cfg),
                       "--corrections-checkpoint", str(checkpoint)])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "psi.pt").exists()

    def test_config_file_overrides_flags(self, scene, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"iterations": 2, "batch_size": 32,
                                             "samples_per_ray": 4},
                                   "field": SMALL_FIELD}))
        res = run_cli(["train", "--data", str(scene / "manifest.json"),
                       "--mode", "appearance",
                       "--out-checkpoint", str(tmp_path / "c.pt"),
                       "--iterations", "5000",       # overridden by the file
                       "--config", str(cfg)])
        assert res.exit_code == 0, res.output
        assert last_json(res.stdout)["iterations"] == 2

    def test_effective_request_echoed_to_stderr(self, scene, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"train": {"iterations": 1, "batch_size": 16,
                                             "samples_per_ray": 4},
                                   "field": SMALL_FIELD}))
        res = run_cli(["train", "--data", str(scene / "manifest.json"),
                       "--mode", "appearance",
                       "--out-checkpoint", str(tmp_path / "c.pt"),
                       "--config", str(cfg)])
        assert res.exit_code == 0
        assert "POST /train" in res.stderr
        assert '"iterations": 1' in res.stderr

    def test_flag_overrides_default(self, scene, tmp_path):
        cfg = tmp_path / "cfg.json"
        cfg.write_text(json.dumps({"field": SMALL_FIELD,
                                   "train": {"batch_size": 32,
                                             "samples_per_ray": 4}}))
        res = run_cli(["train", "--data", str(scene / "manifest.json"),
                       "--mode", "appearance",
                       "--out-checkpoint", str(tmp_path / "c.pt"),
                       "--iterations", "2", "--config", str(cfg)])
        assert res.exit_code == 0, res.output
        assert last_json(res.stdout)["iterations"] == 2


class TestRenderMask:
    def test_render_writes_png(self, checkpoint, tmp_path):
        res = run_cli(["render", "--checkpoint", str(checkpoint),
                       "--pose", "1,0,0,0;0,0,-4",
                       "--out-path", str(tmp_path / "r.png"),
                       "--width", "8", "--height", "8",
                       "--samples-per-ray", "4"])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "r.png").exists()

    def test_mask_writes_png(self, checkpoint, tmp_path):
        res = run_cli(["mask", "--checkpoint", str(checkpoint),
                       "--pose", "1,0,0,0;0,0,-4",
                       "--out-path", str(tmp_path / "m.png"),
                       "--width", "8", "--height", "8",
                       "--samples-per-ray", "4", "--threshold", "0.5"])
        assert res.exit_code == 0, res.output
        assert (tmp_path / "m.png").exists()

    def test_malformed_pose_rejected(self, checkpoint, tmp_path):
        runner = CliRunner()
        res = runner.invoke(main, ["render", "--checkpoint", str(checkpoint),
                                   "--pose", "1,0,0;0,0,-4",
                                   "--out-path", str(tmp_path / "r.png")])
        assert res.exit_code != 0


class TestAugment:
    def test_generates_set(self, scene, checkpoint, tmp_path):
        res = run_cli(["augment", "--phi-checkpoint", str(checkpoint),
                       "--psi-checkpoint", str(checkpoint),
                       "--out-dir", str(tmp_path / "aug"),
                       "--pose-labels", str(scene / "poses_true.json"),
                       "--n-labels", "2", "--n-illumination", "1",
                       "--n-color", "1", "--width", "8", "--height", "8",
                       "--samples-per-ray", "4", "--seed", "3"])
        assert res.exit_code == 0, res.output
        result = last_json(res.stdout)
        assert result["images"] == 4 and result["masks"] == 2


class TestEvalAndGrads:
    def test_eval_psnr(self, scene, checkpoint):
        res = run_cli(["eval-psnr", "--checkpoint", str(checkpoint),
                       "--manifest", str(scene / "manifest.json"),
                       "--split", "heldout", "--samples-per-ray", "4"])
        assert res.exit_code == 0, res.output
        assert np.isfinite(last_json(res.stdout)["psnr_db"])

    def test_check_grads_exit_zero_on_pass(self):
        res = run_cli(["check-grads", "--n-coords", "30", "--seed", "0"])
        assert res.exit_code == 0, res.output
        assert last_json(res.stdout)["passed"] is True
