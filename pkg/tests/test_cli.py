import json
import socket
import sys
import threading
import time

import numpy as np
import pytest
from click.testing import CliRunner
from PIL import Image

from dynadrag.cli import build_dataset, edit, eval_command, main, mp_predict, mp_train
from dynadrag.dataset import make_translating_square_clip, read_flow_f32
from dynadrag.dataset.records import list_sample_dirs
from dynadrag.dataset.synthetic import save_synthetic_clip


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def edit_inputs(tmp_path, rng):
    image = (rng.random((64, 64, 3)) * 255).astype(np.uint8)
    image_path = tmp_path / "in.png"
    Image.fromarray(image).save(image_path)
    points_path = tmp_path / "points.json"
    points_path.write_text(json.dumps([{"handle": [10, 32], "target": [26, 32]}]))
    mask_path = tmp_path / "mask.png"
    Image.fromarray(np.full((64, 64), 255, dtype=np.uint8)).save(mask_path)
    return image_path, points_path, mask_path


class TestEditCommand:
    def test_end_to_end_toy_edit(self, runner, tmp_path, edit_inputs):
        image_path, points_path, mask_path = edit_inputs
        cfg = tmp_path / "cfg.toml"
        cfg.write_text('ddim_steps = 5\nlora_steps = 1\nselection_mode = "OFF"\n')
        out = tmp_path / "out.png"
        trace = tmp_path / "trace.json"
        inter = tmp_path / "inter"
        result = runner.invoke(edit, [
            "--image", str(image_path), "--points", str(points_path),
            "--mask", str(mask_path), "--config", str(cfg),
            "--out", str(out), "--trace", str(trace),
            "--save-intermediates", str(inter)])
        assert result.exit_code == 0, result.output
        assert out.exists()
        payload = json.loads(trace.read_text())
        assert len(payload["iterations"]) == 4  # 16px at 4px per step
        assert len(list(inter.glob("iter_*.png"))) == 4
        assert Image.open(out).size == (64, 64)

    def test_defaults_without_config(self, runner, tmp_path, edit_inputs):
        image_path, points_path, _ = edit_inputs
        out = tmp_path / "out.png"
        result = runner.invoke(edit, ["--image", str(image_path),
                                      "--points", str(points_path), "--out", str(out)])
        assert result.exit_code == 0, result.output
        assert out.exists()


class TestDatasetPipeline:
    def test_build_train_predict(self, runner, tmp_path):
        videos = tmp_path / "videos"
        for i, start in enumerate([(4, 24), (4, 44)]):
            clip = make_translating_square_clip(velocity=(1.0, 0.0), start=start,
                                                source_id=f"clip{i}")
            save_synthetic_clip(videos / f"clip{i}", clip)

        records = tmp_path / "records"
        result = runner.invoke(build_dataset, [
            "--videos", str(videos), "--extractor", "synthetic",
            "--estimator", "synthetic", "--seed", "3", "--out", str(records),
            "--samples-per-clip", "2"])
        assert result.exit_code == 0, result.output
        dirs = list_sample_dirs(records)
        assert len(dirs) == 4

        ckpt = tmp_path / "mp.ckpt"
        result = runner.invoke(mp_train, [
            "--data", str(records), "--out", str(ckpt), "--steps", "5",
            "--seed", "1", "--model-size", "small", "--batch-size", "2"])
        assert result.exit_code == 0, result.output
        assert ckpt.exists()

        flow_out = tmp_path / "pred.f32"
        result = runner.invoke(mp_predict, [
            "--ckpt", str(ckpt), "--sample", str(dirs[0]), "--out", str(flow_out)])
        assert result.exit_code == 0, result.output
        flow = read_flow_f32(flow_out)
        assert flow.data.shape == (2, 64, 96)

    def test_external_extractor_requires_command(self, runner, tmp_path):
        (tmp_path / "videos").mkdir()
        result = runner.invoke(build_dataset, [
            "--videos", str(tmp_path / "videos"), "--extractor", "face",
            "--estimator", "synthetic", "--out", str(tmp_path / "o")])
        assert result.exit_code != 0
        assert "--extractor-cmd" in result.output


class TestEvalCommand:
    def test_report_written(self, runner, tmp_path, rng):
        for d in ("edited", "target"):
            (tmp_path / d).mkdir()
        for i in range(3):
            img = (rng.random((16, 16, 3)) * 255).astype(np.uint8)
            Image.fromarray(img).save(tmp_path / "edited" / f"{i}.png")
            Image.fromarray(img).save(tmp_path / "target" / f"{i}.png")
        report = tmp_path / "report.json"
        result = runner.invoke(eval_command, [
            "--edited", str(tmp_path / "edited"), "--target", str(tmp_path / "target"),
            "--report", str(report),
            "--embedder", f"{sys.executable} -m dynadrag.plugins.mean_embedder",
            "--perceptual", f"lpips={sys.executable} -m dynadrag.plugins.absdiff_perceptual"])
        assert result.exit_code == 0, result.output
        payload = json.loads(report.read_text())
        assert payload["metrics"]["mse_x1e3"] == 0.0
        assert payload["metrics"]["lpips"] == 0.0
        assert "FID" in result.output


class TestThinClient:
    @pytest.fixture
    def live_server(self, tmp_path):
        import uvicorn

        from dynadrag.service import ServiceSettings, create_app

        settings = ServiceSettings(data_dir=tmp_path / "srv", backend_kind="toy",
                                   predictor_spec="linear:4", resolution=64,
                                   long_poll_interval=0.01)
        with socket.socket() as s:
            s.bind(("127.0.0.1", 0))
            port = s.getsockname()[1]
        config = uvicorn.Config(create_app(settings), host="127.0.0.1", port=port,
                                log_level="warning")
        server = uvicorn.Server(config)
        thread = threading.Thread(target=server.run, daemon=True)
        thread.start()
        deadline = time.monotonic() + 10
        while not server.started and time.monotonic() < deadline:
            time.sleep(0.02)
        assert server.started
        yield f"http://127.0.0.1:{port}"
        server.should_exit = True
        thread.join(timeout=5)

    def test_edit_through_server(self, runner, tmp_path, edit_inputs, live_server):
        image_path, points_path, _ = edit_inputs
        out = tmp_path / "remote.png"
        trace = tmp_path / "remote-trace.json"
        result = runner.invoke(edit, [
            "--image", str(image_path), "--points", str(points_path),
            "--out", str(out), "--trace", str(trace), "--server", live_server])
        assert result.exit_code == 0, result.output
        assert out.exists()
        payload = json.loads(trace.read_text())
        assert len(payload["iterations"]) == 4
        assert Image.open(out).size == (64, 64)


class TestGroupWiring:
    def test_subcommands_registered(self, runner):
        result = runner.invoke(main, ["--help"])
        assert result.exit_code == 0
        for name in ("edit", "eval", "serve"):
            assert name in result.output
