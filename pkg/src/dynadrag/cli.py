"""Command-line entry points.

``dynadrag`` groups the edit/eval/serve commands; ``mp-train``,
``mp-predict`` and ``build-dataset`` are standalone tools. ``dynadrag edit``
runs in-process by default and turns into a thin client of a running
service when ``--server`` is given.
"""
from __future__ import annotations

import base64
import json
import sys
import time
from pathlib import Path

import click
import numpy as np
from PIL import Image

from dynadrag.backend import create_backend
from dynadrag.config import EditConfig, load_session_config
from dynadrag.core import MaskImage, Point, PointPair
from dynadrag.dataset import (
    ExternalFlowEstimator,
    ExternalRegionExtractor,
    SyntheticFlowEstimator,
    SyntheticRegionExtractor,
    build_dataset_from_clips,
    load_clip_dir,
    load_sample,
    write_flow_f32,
)
from dynadrag.dataset.records import list_sample_dirs
from dynadrag.dataset.synthetic import load_synthetic_clip
from dynadrag.evaluation import evaluate
from dynadrag.orchestrator import EditSession, run_edit
from dynadrag.predictor import (
    FlowPredictor,
    ModelConfig,
    PredictorTrainer,
    TrainingBatch,
    encode_input,
    load_checkpoint,
    predict_flow,
    save_checkpoint,
)
from dynadrag.service.store import make_predictor


def load_points(path: str) -> list[PointPair]:
    entries = json.loads(Path(path).read_text())
    return [PointPair(handle=Point(*e["handle"]), target=Point(*e["target"]))
            for e in entries]


def load_image(path: str) -> np.ndarray:
    return np.asarray(Image.open(path).convert("RGB"))


def save_image(path: str, image: np.ndarray) -> None:
    if image.dtype != np.uint8:
        image = (np.clip(image, 0.0, 1.0) * 255).astype(np.uint8)
    Image.fromarray(image).save(path)


@click.group()
def main():
    """Predict-and-move drag-style image editing."""


@main.command("edit")
@click.option("--image", "image_path", required=True, type=click.Path(exists=True))
@click.option("--points", "points_path", required=True, type=click.Path(exists=True))
@click.option("--mask", "mask_path", type=click.Path(exists=True))
@click.option("--config", "config_path", type=click.Path(exists=True))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--trace", "trace_path", type=click.Path())
@click.option("--save-intermediates", "intermediates_dir", type=click.Path())
@click.option("--backend", "backend_kind", default=None, help="toy or ldm (default: config, else toy)")
@click.option("--predictor", "predictor_spec", default="linear:4",
              help="checkpoint path or linear[:step]")
@click.option("--seed", default=0, type=int)
@click.option("--server", "server_url", default=None,
              help="run through an edit service instead of in-process")
def edit(image_path, points_path, mask_path, config_path, out_path, trace_path,
         intermediates_dir, backend_kind, predictor_spec, seed, server_url):
    """Drag the image's handle points to their targets."""
    if server_url:
        _edit_via_server(server_url, image_path, points_path, mask_path, config_path,
                         out_path, trace_path)
        return

    config, backend_table = (load_session_config(config_path) if config_path
                             else (EditConfig(), {}))
    kind = backend_kind or backend_table.get("kind", "toy")
    backend_kwargs = {}
    if kind == "ldm" and backend_table.get("model_id"):
        backend_kwargs["model_id"] = backend_table["model_id"]

    image = load_image(image_path)
    mask = (MaskImage((np.asarray(Image.open(mask_path).convert("L")) > 127).astype(np.uint8))
            if mask_path else MaskImage.ones(image.shape[0], image.shape[1]))
    session = EditSession(image=image, pairs=load_points(points_path), mask=mask,
                          config=config, backend=create_backend(kind, **backend_kwargs),
                          predictor=make_predictor(predictor_spec), seed=seed)

    if intermediates_dir:
        Path(intermediates_dir).mkdir(parents=True, exist_ok=True)

    def on_iteration(record):
        click.echo(f"iteration {record.iteration}: "
                   f"valid={record.valid_pair_indices} "
                   f"loss={record.ms_loss_curve[-1]['loss']:.4f}")
        if intermediates_dir:
            path = Path(intermediates_dir) / f"iter_{record.iteration:04d}.png"
            save_image(str(path), record.image)
            record.intermediate_image = str(path)

    result = run_edit(session, on_iteration=on_iteration)
    save_image(out_path, result.final_image)
    if trace_path:
        result.trace.save(trace_path)
    click.echo(f"done: {len(result.trace)} iterations, wrote {out_path}")


def _edit_via_server(server_url, image_path, points_path, mask_path, config_path,
                     out_path, trace_path):
    import httpx

    base = server_url.rstrip("/")
    with httpx.Client(base_url=base, timeout=60.0) as client:
        files = {"image": (Path(image_path).name, Path(image_path).read_bytes(), "image/png")}
        if config_path:
            files["config"] = ("config.toml", Path(config_path).read_bytes(), "text/plain")
        session_id = client.post("/sessions", files=files).raise_for_status().json()["session_id"]

        while True:
            info = client.get(f"/sessions/{session_id}").raise_for_status().json()
            if info["status"] in ("ready", "failed"):
                break
            time.sleep(0.2)
        if info["status"] == "failed":
            raise click.ClickException(f"session failed: {info.get('error')}")

        payload = {"points": json.loads(Path(points_path).read_text()), "mask": None}
        if mask_path:
            payload["mask"] = base64.b64encode(Path(mask_path).read_bytes()).decode()
        edit_id = client.post(f"/sessions/{session_id}/edits",
                              json=payload).raise_for_status().json()["edit_id"]

        records, since = [], -1
        while True:
            progress = client.get(
                f"/sessions/{session_id}/edits/{edit_id}/progress",
                params={"since": since, "timeout": 10}).raise_for_status().json()
            for record in progress["records"]:
                click.echo(f"iteration {record['iteration']}: "
                           f"valid={record['valid_pair_indices']}")
                records.append(record)
                since = record["iteration"]
            if progress["status"] != "running":
                break
        if progress["status"] == "failed":
            raise click.ClickException(f"edit failed: {progress.get('error')}")

        png = client.get(f"/sessions/{session_id}/edits/{edit_id}/final/image")
        Path(out_path).write_bytes(png.raise_for_status().content)
        if trace_path:
            Path(trace_path).write_text(json.dumps(
                {"session": {"server": base, "session_id": session_id, "edit_id": edit_id},
                 "iterations": records}, indent=2))
    click.echo(f"done: {len(records)} iterations, wrote {out_path}")


@main.command("eval")
@click.option("--edited", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--target", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--report", "report_path", required=True, type=click.Path())
@click.option("--embedder", default=None, help="embedder plugin command")
@click.option("--perceptual", "perceptual_specs", multiple=True,
              help="NAME=COMMAND (e.g. lpips=...; repeatable)")
def eval_command(edited, target, report_path, embedder, perceptual_specs):
    """Compute metrics over aligned edited/target image directories."""
    perceptual = {}
    for spec in perceptual_specs:
        name, _, command = spec.partition("=")
        if not command:
            raise click.ClickException(f"--perceptual expects NAME=COMMAND, got {spec!r}")
        perceptual[name] = command
    try:
        report = evaluate(edited, target, embedder=embedder, perceptual=perceptual)
    except (ValueError, RuntimeError) as exc:
        raise click.ClickException(str(exc))
    report.save(report_path)
    click.echo(report.to_table())
    click.echo(f"wrote {report_path}")


@main.command("serve")
@click.option("--host", default="127.0.0.1")
@click.option("--port", default=None, type=int, help="default: $DYNADRAG_PORT or 8008")
@click.option("--data-dir", default=None, type=click.Path())
@click.option("--backend", "backend_kind", default=None)
@click.option("--predictor", "predictor_spec", default=None)
@click.option("--resolution", default=None, type=int)
@click.option("--ui-dir", default=None, type=click.Path())
def serve(host, port, data_dir, backend_kind, predictor_spec, resolution, ui_dir):
    """Run the HTTP edit service."""
    import os

    import uvicorn

    from dynadrag.service import ServiceSettings, create_app

    settings = ServiceSettings.from_env(os.environ)
    if data_dir:
        settings.data_dir = Path(data_dir)
    if backend_kind:
        settings.backend_kind = backend_kind
    if predictor_spec:
        settings.predictor_spec = predictor_spec
    if resolution:
        settings.resolution = resolution
    port = port or int(os.environ.get("DYNADRAG_PORT", "8008"))
    uvicorn.run(create_app(settings, ui_dir=ui_dir), host=host, port=port)


MODEL_SIZES = {"full": ModelConfig, "small": ModelConfig.small}


@click.command("mp-train")
@click.option("--data", "data_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--steps", default=200, type=int)
@click.option("--seed", default=0, type=int)
@click.option("--batch-size", default=8, type=int)
@click.option("--learning-rate", default=1e-3, type=float)
@click.option("--model-size", type=click.Choice(sorted(MODEL_SIZES)), default="full")
@click.option("--heatmap-radius", default=4, type=int)
def mp_train(data_dir, out_path, steps, seed, batch_size, learning_rate, model_size,
             heatmap_radius):
    """Train the flow predictor on a directory of sample records."""
    root = Path(data_dir)
    train_root = root / "train" if (root / "train").is_dir() else root
    dirs = list_sample_dirs(train_root)
    if not dirs:
        raise click.ClickException(f"no sample records under {train_root}")
    click.echo(f"loading {len(dirs)} records from {train_root}")
    samples = [load_sample(d) for d in dirs]
    encoded = [encode_input(s.start_frame, s.pairs, heatmap_radius) for s in samples]
    flows = [s.gt_flow for s in samples]

    model = FlowPredictor(MODEL_SIZES[model_size]())
    trainer = PredictorTrainer(model, learning_rate=learning_rate, seed=seed)
    rng = np.random.default_rng(seed)
    loss = float("nan")
    for step in range(steps):
        idx = rng.choice(len(encoded), size=min(batch_size, len(encoded)), replace=False)
        batch = TrainingBatch([encoded[i] for i in idx], [flows[i] for i in idx])
        loss = trainer.train_step(batch)
        if step % 20 == 0 or step == steps - 1:
            click.echo(f"step {step}: loss {loss:.6f}")
    save_checkpoint(out_path, model, meta={"steps": steps, "seed": seed,
                                           "records": len(samples)})
    click.echo(f"wrote {out_path}")


@click.command("mp-predict")
@click.option("--ckpt", "ckpt_path", required=True, type=click.Path(exists=True))
@click.option("--sample", "sample_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--out", "out_path", required=True, type=click.Path())
@click.option("--heatmap-radius", default=4, type=int)
def mp_predict(ckpt_path, sample_dir, out_path, heatmap_radius):
    """Predict a flow field for one sample record."""
    model = load_checkpoint(ckpt_path)
    sample = load_sample(sample_dir)
    flow = predict_flow(model, encode_input(sample.start_frame, sample.pairs, heatmap_radius))
    write_flow_f32(out_path, flow)
    click.echo(f"wrote {out_path} ({flow.width}x{flow.height})")


@click.command("build-dataset")
@click.option("--videos", "videos_dir", required=True, type=click.Path(exists=True, file_okay=False))
@click.option("--extractor", type=click.Choice(["face", "person", "synthetic"]), required=True)
@click.option("--estimator", type=click.Choice(["external", "synthetic"]), required=True)
@click.option("--seed", default=0, type=int)
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--samples-per-clip", default=1, type=int)
@click.option("--extractor-cmd", default=None, help="command for face/person extractors")
@click.option("--estimator-cmd", default=None, help="command for the external flow estimator")
def build_dataset(videos_dir, extractor, estimator, seed, out_dir, samples_per_clip,
                  extractor_cmd, estimator_cmd):
    """Convert clip directories into training-sample records."""
    if extractor == "synthetic":
        region = SyntheticRegionExtractor()
    else:
        if not extractor_cmd:
            raise click.ClickException(f"--extractor {extractor} needs --extractor-cmd")
        kind = "face-parsing" if extractor == "face" else "person-detection"
        region = ExternalRegionExtractor(extractor_cmd, kind=kind)
    if estimator == "synthetic":
        flow = SyntheticFlowEstimator()
    else:
        if not estimator_cmd:
            raise click.ClickException("--estimator external needs --estimator-cmd")
        flow = ExternalFlowEstimator(estimator_cmd)

    clip_dirs = sorted(p for p in Path(videos_dir).iterdir() if p.is_dir())
    if not clip_dirs:
        raise click.ClickException(f"no clip directories under {videos_dir}")
    clips = []
    for d in clip_dirs:
        if (d / "motion.json").exists():
            clips.append(load_synthetic_clip(d))
        else:
            clips.append(load_clip_dir(d))
    written = build_dataset_from_clips(clips, region, flow, seed=seed, out_dir=out_dir,
                                       samples_per_clip=samples_per_clip)
    click.echo(f"wrote {len(written)} records to {out_dir}")


if __name__ == "__main__":
    main()
