"""Command-line surface: a thin client of the HTTP service.

By default requests are served in-process (no server needed); pass
--server URL to target a running instance (`nerfaug serve`).

Option precedence: config file > flags > defaults. The effective request is
echoed to stderr before it is sent.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import click
import httpx


def _load_config_file(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith((".yaml", ".yml")):
        import yaml
        return yaml.safe_load(text) or {}
    return json.loads(text)


def _post(server: str | None, route: str, payload: dict, config_file: str | None):
    if config_file:
        overrides = _load_config_file(config_file)
        for k, v in overrides.items():
            if isinstance(v, dict) and isinstance(payload.get(k), dict):
                payload[k] = {**payload[k], **v}
            else:
                payload[k] = v
    payload = {k: v for k, v in payload.items() if v is not None}
    click.echo(f"[nerfaug] POST {route} {json.dumps(payload)}", err=True)
    if server:
        client = httpx.Client(base_url=server, timeout=None)
    else:
        from starlette.testclient import TestClient

        from .service.app import app
        client = TestClient(app)
    with client:
        resp = client.post(route, json=payload)
    if resp.status_code != 200:
        try:
            detail = resp.json().get("detail", resp.text)
        except ValueError:
            detail = resp.text
        raise click.ClickException(f"{route} failed ({resp.status_code}): {detail}")
    result = resp.json()["result"]
    click.echo(json.dumps(result, indent=2))
    return result


def _common(f):
    f = click.option("--server", default=None, metavar="URL",
                     help="Remote service URL (default: run in-process).")(f)
    f = click.option("--config", "config_file", default=None, type=click.Path(exists=True),
                     help="JSON/YAML config file; overrides flags.")(f)
    return f


@click.group()
def main():
    """Dual-NeRF dataset augmentation pipeline."""


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=8000, type=int)
def serve(host, port):
    """Run the HTTP service."""
    import uvicorn
    from .service.app import app
    uvicorn.run(app, host=host, port=port)


@main.command("toy-scene")
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--image-size", default=64, type=int)
@click.option("--view-count", default=100, type=int)
@click.option("--heldout-count", default=20, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--pose-noise-rotation-deg", default=0.0, type=float)
@click.option("--pose-noise-translation-frac", default=0.0, type=float)
@click.option("--light-cone-half-angle", default=0.5, type=float)
@_common
def toy_scene(server, config_file, **kwargs):
    """Generate the analytic oracle dataset."""
    _post(server, "/toy-scene", kwargs, config_file)


@main.command("preprocess")
@click.option("--manifest", required=True, type=click.Path())
@click.option("--out-path", required=True, type=click.Path())
@_common
def preprocess(server, config_file, **kwargs):
    """Build the per-pixel ray dataset from a scene manifest."""
    _post(server, "/preprocess", kwargs, config_file)


@main.command("train")
@click.option("--data", required=True, type=click.Path(),
              help="Scene manifest (.json) or preprocessed rays (.npz).")
@click.option("--mode", required=True, type=click.Choice(["appearance", "geometry"]))
@click.option("--out-checkpoint", required=True, type=click.Path())
@click.option("--toy-preset", is_flag=True, default=False)
@click.option("--iterations", default=None, type=int)
@click.option("--batch-size", default=None, type=int)
@click.option("--samples-per-ray", default=None, type=int)
@click.option("--seed", default=None, type=int)
@click.option("--corrections-checkpoint", default=None, type=click.Path(),
              help="Appearance checkpoint whose pose corrections are frozen in.")
@_common
def train(server, config_file, iterations, batch_size, samples_per_ray, seed, **kwargs):
    """Train a radiance field (appearance or geometry mode)."""
    train_overrides = {k: v for k, v in {
        "iterations": iterations, "batch_size": batch_size,
        "samples_per_ray": samples_per_ray, "seed": seed}.items() if v is not None}
    payload = {**kwargs, "train": train_overrides, "field": {}}
    _post(server, "/train", payload, config_file)


def _parse_vec(text, n, name):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != n:
        raise click.BadParameter(f"{name} needs {n} comma-separated values")
    return parts


@main.command("render")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--pose", "pose_qt", required=True,
              help="Pose as 'qw,qx,qy,qz;tx,ty,tz'.")
@click.option("--out-path", required=True, type=click.Path())
@click.option("--width", default=64, type=int)
@click.option("--height", default=64, type=int)
@click.option("--fov-focal", default=None, type=float)
@click.option("--samples-per-ray", default=32, type=int)
@click.option("--embedding", default="mean",
              help="'mean' or a training-image index.")
@click.option("--rgb", "grayscale", flag_value=False, default=True)
@click.option("--grayscale", "grayscale", flag_value=True)
@_common
def render(server, config_file, pose_qt, **kwargs):
    """Render an image (straight-alpha PNG with opacity channel)."""
    q_str, t_str = pose_qt.split(";")
    payload = {"q": _parse_vec(q_str, 4, "q"), "t": _parse_vec(t_str, 3, "t"), **kwargs}
    _post(server, "/render", payload, config_file)


@main.command("mask")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--pose", "pose_qt", required=True,
              help="Pose as 'qw,qx,qy,qz;tx,ty,tz'.")
@click.option("--out-path", required=True, type=click.Path())
@click.option("--width", default=64, type=int)
@click.option("--height", default=64, type=int)
@click.option("--fov-focal", default=None, type=float)
@click.option("--samples-per-ray", default=32, type=int)
@click.option("--threshold", default=0.5, type=float)
@_common
def mask(server, config_file, pose_qt, **kwargs):
    """Render a binary foreground mask by thresholding accumulated opacity."""
    q_str, t_str = pose_qt.split(";")
    payload = {"q": _parse_vec(q_str, 4, "q"), "t": _parse_vec(t_str, 3, "t"), **kwargs}
    _post(server, "/mask", payload, config_file)


@main.command("augment")
@click.option("--phi-checkpoint", required=True, type=click.Path())
@click.option("--psi-checkpoint", required=True, type=click.Path())
@click.option("--out-dir", required=True, type=click.Path())
@click.option("--pose-labels", default=None, type=click.Path(),
              help="JSON pose-label file; omitted: sample labels randomly.")
@click.option("--n-labels", default=50, type=int)
@click.option("--n-illumination", default=24, type=int)
@click.option("--n-color", default=40, type=int)
@click.option("--width", default=768, type=int)
@click.option("--height", default=512, type=int)
@click.option("--samples-per-ray", default=32, type=int)
@click.option("--mask-threshold", default=0.5, type=float)
@click.option("--extrapolation-margin", default=0.5, type=float)
@click.option("--background-dir", default=None, type=click.Path(),
              help="Directory of background images to composite behind half the set.")
@click.option("--background-probability", default=0.5, type=float)
@click.option("--seed", default=0, type=int)
@_common
def augment(server, config_file, background_dir, **kwargs):
    """Generate the appearance-randomized dataset with masks and a manifest."""
    pose_labels = kwargs.pop("pose_labels")
    phi = kwargs.pop("phi_checkpoint")
    psi = kwargs.pop("psi_checkpoint")
    out_dir = kwargs.pop("out_dir")
    config = dict(kwargs)
    if background_dir:
        config["background_paths"] = sorted(
            str(p) for p in Path(background_dir).iterdir()
            if p.suffix.lower() in (".png", ".jpg", ".jpeg"))
    payload = {"phi_checkpoint": phi, "psi_checkpoint": psi, "out_dir": out_dir,
               "pose_labels": pose_labels, "config": config}
    _post(server, "/augment", payload, config_file)


@main.command("eval-psnr")
@click.option("--checkpoint", required=True, type=click.Path())
@click.option("--manifest", required=True, type=click.Path())
@click.option("--split", default="heldout", type=click.Choice(["train", "heldout"]))
@click.option("--samples-per-ray", default=32, type=int)
@_common
def eval_psnr(server, config_file, **kwargs):
    """Mean PSNR of a checkpoint against a manifest split."""
    _post(server, "/eval-psnr", kwargs, config_file)


@main.command("check-grads")
@click.option("--n-coords", default=120, type=int)
@click.option("--seed", default=0, type=int)
@_common
def check_grads(server, config_file, **kwargs):
    """Run the finite-difference gradient suite."""
    result = _post(server, "/check-grads", kwargs, config_file)
    if not result.get("passed", False):
        sys.exit(1)


if __name__ == "__main__":
    main()
