import base64
import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from dynadrag.service import ServiceSettings, SessionStore, create_app


def png_bytes(array: np.ndarray) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(array).save(buf, format="PNG")
    return buf.getvalue()


def wait_ready(client: TestClient, session_id: str, timeout: float = 10.0) -> dict:
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        info = client.get(f"/sessions/{session_id}").json()
        if info["status"] in ("ready", "failed"):
            return info
        time.sleep(0.02)
    raise TimeoutError("session never became ready")


def wait_done(client: TestClient, session_id: str, edit_id: str, timeout: float = 30.0):
    """Drain progress until terminal; returns (all_records, final_response)."""
    records, since = [], -1
    deadline = time.monotonic() + timeout
    while time.monotonic() < deadline:
        resp = client.get(f"/sessions/{session_id}/edits/{edit_id}/progress",
                          params={"since": since, "timeout": 1}).json()
        records.extend(resp["records"])
        if resp["records"]:
            since = resp["records"][-1]["iteration"]
        if resp["status"] != "running":
            return records, resp
    raise TimeoutError("edit never finished")


@pytest.fixture
def settings(tmp_path):
    return ServiceSettings(data_dir=tmp_path / "data", backend_kind="toy",
                           predictor_spec="linear:4", resolution=64,
                           long_poll_interval=0.01)


@pytest.fixture
def client(settings):
    with TestClient(create_app(settings)) as c:
        yield c


@pytest.fixture
def image_png(rng):
    return png_bytes((rng.random((64, 64, 3)) * 255).astype(np.uint8))


class TestSessionLifecycle:
    def test_create_and_become_ready(self, client, image_png):
        resp = client.post("/sessions", files={"image": ("in.png", image_png, "image/png")})
        assert resp.status_code == 200
        session_id = resp.json()["session_id"]
        info = wait_ready(client, session_id)
        assert info["status"] == "ready"
        assert (info["width"], info["height"]) == (64, 64)
        assert info["scale_x"] == 1.0

    def test_corrupt_upload_rejected(self, client):
        resp = client.post("/sessions", files={"image": ("bad.png", b"not a png", "image/png")})
        assert resp.status_code == 400
        assert "undecodable image" in resp.json()["detail"]

    def test_oversize_upload_resized_with_scale(self, client, rng):
        big = png_bytes((rng.random((128, 128, 3)) * 255).astype(np.uint8))
        resp = client.post("/sessions", files={"image": ("big.png", big, "image/png")})
        session_id = resp.json()["session_id"]
        info = wait_ready(client, session_id)
        assert info["scale_x"] == 0.5 and info["scale_y"] == 0.5
        assert (info["width"], info["height"]) == (128, 128)

    def test_config_override_upload(self, client, image_png):
        cfg = b"max_iterations = 3\nstop_distance = 1.0\n"
        resp = client.post("/sessions", files={
            "image": ("in.png", image_png, "image/png"),
            "config": ("cfg.toml", cfg, "text/plain"),
        })
        info = wait_ready(client, resp.json()["session_id"])
        assert info["config"]["max_iterations"] == 3

    def test_unknown_session_404(self, client):
        assert client.get("/sessions/nope").status_code == 404


class TestEdits:
    def start_session(self, client, image_png):
        session_id = client.post(
            "/sessions", files={"image": ("in.png", image_png, "image/png")}).json()["session_id"]
        wait_ready(client, session_id)
        return session_id

    def test_degenerate_drag_completes_at_iteration_zero(self, client, image_png):
        session_id = self.start_session(client, image_png)
        resp = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 10], "target": [10, 10]}]})
        assert resp.status_code == 200
        edit_id = resp.json()["edit_id"]
        records, final = wait_done(client, session_id, edit_id)
        assert records == []
        assert final["status"] == "done"
        img = client.get(final["final_image"])
        assert img.status_code == 200
        assert Image.open(io.BytesIO(img.content)).size == (64, 64)

    def test_drag_streams_monotone_records(self, client, image_png):
        session_id = self.start_session(client, image_png)
        edit_id = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 32], "target": [30, 32]}]}).json()["edit_id"]
        records, final = wait_done(client, session_id, edit_id)
        iterations = [r["iteration"] for r in records]
        assert iterations == sorted(iterations)
        assert len(records) == 5  # 20px at 4px per iteration
        assert final["status"] == "done"
        img = client.get(f"/sessions/{session_id}/edits/{edit_id}/iterations/0/image")
        assert img.status_code == 200

    def test_progress_since_last_returns_empty(self, client, image_png):
        session_id = self.start_session(client, image_png)
        edit_id = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 32], "target": [22, 32]}]}).json()["edit_id"]
        records, _ = wait_done(client, session_id, edit_id)
        last = records[-1]["iteration"]
        resp = client.get(f"/sessions/{session_id}/edits/{edit_id}/progress",
                          params={"since": last, "timeout": 0.1}).json()
        assert resp["records"] == []
        assert resp["status"] == "done"

    def test_empty_points_rejected(self, client, image_png):
        session_id = self.start_session(client, image_png)
        resp = client.post(f"/sessions/{session_id}/edits", json={"points": []})
        assert resp.status_code == 400

    def test_out_of_bounds_point_names_index(self, client, image_png):
        session_id = self.start_session(client, image_png)
        resp = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 10], "target": [20, 20]},
                       {"handle": [99, 10], "target": [20, 20]}]})
        assert resp.status_code == 400
        assert "point 1" in resp.json()["detail"]

    def test_mask_size_mismatch_rejected(self, client, image_png, rng):
        session_id = self.start_session(client, image_png)
        wrong = png_bytes((rng.random((32, 32)) * 255).astype(np.uint8))
        resp = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 10], "target": [20, 20]}],
            "mask": base64.b64encode(wrong).decode()})
        assert resp.status_code == 400
        assert "mask" in resp.json()["detail"]

    def test_concurrent_edit_conflicts(self, client, image_png):
        session_id = self.start_session(client, image_png)
        store: SessionStore = client.app.state.store
        state = store.get(session_id)
        with state.lock:
            state.status = "editing"
            state.active_edit = "someedit"
        resp = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 10], "target": [20, 20]}]})
        assert resp.status_code == 409

    def test_coordinates_round_trip_in_original_space(self, client, rng):
        # 128x128 upload onto a 64x64 backend: scale 0.5 applies internally
        big = png_bytes((rng.random((128, 128, 3)) * 255).astype(np.uint8))
        session_id = client.post(
            "/sessions", files={"image": ("big.png", big, "image/png")}).json()["session_id"]
        wait_ready(client, session_id)
        points = [{"handle": [20.0, 64.0], "target": [84.0, 64.0]}]
        edit_id = client.post(f"/sessions/{session_id}/edits",
                              json={"points": points}).json()["edit_id"]
        records, final = wait_done(client, session_id, edit_id)
        assert final["initial_points"] == points
        # internal step of 4px maps back to 8px in the original space
        assert records[0]["handle_positions"][0][0] == pytest.approx(28.0)
        assert records[0]["handle_positions"][0][1] == pytest.approx(64.0)

    def test_mask_b64_round_trip(self, client, image_png, rng):
        session_id = self.start_session(client, image_png)
        mask = np.full((64, 64), 255, dtype=np.uint8)
        resp = client.post(f"/sessions/{session_id}/edits", json={
            "points": [{"handle": [10, 32], "target": [18, 32]}],
            "mask": base64.b64encode(png_bytes(mask)).decode(),
            "mode": "OFF"})
        assert resp.status_code == 200
        _, final = wait_done(client, session_id, resp.json()["edit_id"])
        assert final["status"] == "done"


class TestPersistence:
    def test_restart_preserves_done_sessions(self, settings, image_png):
        with TestClient(create_app(settings)) as client:
            session_id = client.post(
                "/sessions", files={"image": ("in.png", image_png, "image/png")}).json()["session_id"]
            wait_ready(client, session_id)
            edit_id = client.post(f"/sessions/{session_id}/edits", json={
                "points": [{"handle": [10, 32], "target": [22, 32]}]}).json()["edit_id"]
            records, _ = wait_done(client, session_id, edit_id)
            assert len(records) == 3

        with TestClient(create_app(settings)) as client:  # same data dir
            info = client.get(f"/sessions/{session_id}").json()
            assert info["status"] == "done"
            resp = client.get(f"/sessions/{session_id}/edits/{edit_id}/progress",
                              params={"since": -1, "timeout": 0.1}).json()
            assert len(resp["records"]) == 3
            assert resp["status"] == "done"
            img = client.get(f"/sessions/{session_id}/edits/{edit_id}/iterations/1/image")
            assert img.status_code == 200

    def test_interrupted_sessions_marked_failed(self, settings, image_png):
        store = SessionStore(settings)
        session_id = store.create_session(image_png)
        state = store.get(session_id)
        for _ in range(100):
            if state.status == "ready":
                break
            time.sleep(0.02)
        with state.lock:
            state.status = "editing"  # simulate dying mid-edit
            store._session_json(state)
        reloaded = SessionStore(settings)
        assert reloaded.get(session_id).status == "failed"
