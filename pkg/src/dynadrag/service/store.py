"""Session lifecycle and persistence for the edit service.

One directory per session (original + working image, config, edits) makes
the service restart-safe without a database. Each session is a single-writer
critical section: one in-flight edit at a time; trace reads are snapshots.
"""
from __future__ import annotations

import base64
import binascii
import io
import json
import logging
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from dynadrag.backend import create_backend
from dynadrag.config import EditConfig
from dynadrag.core import MaskImage, Point, PointPair
from dynadrag.orchestrator import EditSession, IterationRecord, run_edit
from dynadrag.predictor import ConstantStepPredictor, load_checkpoint

logger = logging.getLogger(__name__)

RESIZE_FILTER = Image.BILINEAR


class ServiceError(Exception):
    def __init__(self, status_code: int, detail: str):
        super().__init__(detail)
        self.status_code = status_code
        self.detail = detail


def make_predictor(spec: str):
    """Resolve a predictor spec: 'linear[:step]' or a checkpoint path."""
    if spec.startswith("linear"):
        _, _, step = spec.partition(":")
        return ConstantStepPredictor(step=float(step) if step else 4.0)
    return load_checkpoint(spec)


@dataclass
class ServiceSettings:
    data_dir: Path
    backend_kind: str = "toy"
    predictor_spec: str = "linear:4"
    resolution: int = 512
    long_poll_interval: float = 0.05

    @classmethod
    def from_env(cls, env) -> "ServiceSettings":
        return cls(
            data_dir=Path(env.get("DYNADRAG_DATA_DIR", "./dynadrag-data")),
            backend_kind=env.get("DYNADRAG_BACKEND", "toy"),
            predictor_spec=env.get("DYNADRAG_PREDICTOR", "linear:4"),
            resolution=int(env.get("DYNADRAG_RESOLUTION", "512")),
        )


@dataclass
class EditState:
    edit_id: str
    directory: Path
    status: str = "running"  # running | done | failed
    records: list[dict] = field(default_factory=list)
    initial_points: list[dict] = field(default_factory=list)
    error: "str | None" = None


@dataclass
class SessionState:
    session_id: str
    directory: Path
    status: str = "created"
    width: int = 0
    height: int = 0
    scale_x: float = 1.0
    scale_y: float = 1.0
    config: EditConfig = field(default_factory=EditConfig)
    error: "str | None" = None
    edits: dict = field(default_factory=dict)
    active_edit: "str | None" = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    backend: object = None
    last_published_iteration: int = -1

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "status": self.status,
            "width": self.width,
            "height": self.height,
            "scale_x": self.scale_x,
            "scale_y": self.scale_y,
            "config": self.config.to_dict(),
            "error": self.error,
            "last_published_iteration": self.last_published_iteration,
        }


class SessionStore:
    def __init__(self, settings: ServiceSettings):
        self.settings = settings
        self.root = Path(settings.data_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, SessionState] = {}
        self._lock = threading.Lock()
        self._load_persisted()

    # -- persistence -----------------------------------------------------------

    def _session_json(self, state: SessionState) -> None:
        (state.directory / "session.json").write_text(
            json.dumps(state.snapshot(), sort_keys=True, indent=2))

    def _load_persisted(self) -> None:
        for meta_path in sorted(self.root.glob("*/session.json")):
            data = json.loads(meta_path.read_text())
            state = SessionState(
                session_id=data["session_id"], directory=meta_path.parent,
                status=data["status"], width=data["width"], height=data["height"],
                scale_x=data["scale_x"], scale_y=data["scale_y"],
                config=EditConfig.from_dict(data["config"]), error=data.get("error"),
                last_published_iteration=data.get("last_published_iteration", -1))
            if state.status in ("created", "finetuning", "editing"):
                state.status = "failed"
                state.error = "interrupted by service restart"
            for edit_meta in sorted(state.directory.glob("edits/*/edit.json")):
                edict = json.loads(edit_meta.read_text())
                edit = EditState(edit_id=edict["edit_id"], directory=edit_meta.parent,
                                 status=edict["status"], error=edict.get("error"),
                                 initial_points=edict.get("initial_points", []))
                trace_path = edit.directory / "trace.json"
                if trace_path.exists():
                    edit.records = json.loads(trace_path.read_text())["iterations"]
                if edit.status == "running":
                    edit.status = "failed"
                    edit.error = "interrupted by service restart"
                state.edits[edit.edit_id] = edit
            self.sessions[data["session_id"]] = state

    def _edit_json(self, edit: EditState) -> None:
        (edit.directory / "edit.json").write_text(json.dumps({
            "edit_id": edit.edit_id, "status": edit.status, "error": edit.error,
            "initial_points": edit.initial_points}, sort_keys=True, indent=2))

    def _trace_json(self, edit: EditState) -> None:
        (edit.directory / "trace.json").write_text(
            json.dumps({"iterations": edit.records}, indent=2))

    # -- session creation ------------------------------------------------------

    def create_session(self, image_bytes: bytes, config_text: "str | None" = None) -> str:
        try:
            img = Image.open(io.BytesIO(image_bytes)).convert("RGB")
            img.load()
        except Exception:
            raise ServiceError(400, "undecodable image")
        config = EditConfig()
        if config_text:
            tmp = self.root / f".cfg-{uuid.uuid4().hex}.toml"
            tmp.write_text(config_text)
            try:
                config = EditConfig.load(tmp)
            finally:
                tmp.unlink()

        session_id = uuid.uuid4().hex[:12]
        directory = self.root / session_id
        directory.mkdir(parents=True)
        res = self.settings.resolution
        state = SessionState(session_id=session_id, directory=directory,
                             width=img.width, height=img.height,
                             scale_x=res / img.width, scale_y=res / img.height,
                             config=config)
        img.save(directory / "original.png")
        working = img if (img.width, img.height) == (res, res) \
            else img.resize((res, res), RESIZE_FILTER)
        working.save(directory / "working.png")
        with self._lock:
            self.sessions[session_id] = state
        self._session_json(state)
        threading.Thread(target=self._finetune, args=(state,), daemon=True).start()
        return session_id

    def _finetune(self, state: SessionState) -> None:
        with state.lock:
            state.status = "finetuning"
            self._session_json(state)
        try:
            backend = create_backend(self.settings.backend_kind)
            image = self._working_image(state)
            cfg = state.config
            backend.finetune_identity_lora(image, rank=cfg.lora_rank, steps=cfg.lora_steps,
                                           learning_rate=cfg.lora_learning_rate)
            with state.lock:
                state.backend = backend
                state.status = "ready"
                self._session_json(state)
        except Exception as exc:
            logger.exception("fine-tuning failed for %s", state.session_id)
            with state.lock:
                state.status = "failed"
                state.error = str(exc)
                self._session_json(state)

    def _working_image(self, state: SessionState) -> np.ndarray:
        return np.asarray(Image.open(state.directory / "working.png").convert("RGB"))

    # -- lookups ---------------------------------------------------------------

    def get(self, session_id: str) -> SessionState:
        state = self.sessions.get(session_id)
        if state is None:
            raise ServiceError(404, f"unknown session {session_id}")
        return state

    def get_edit(self, session_id: str, edit_id: str) -> EditState:
        state = self.get(session_id)
        edit = state.edits.get(edit_id)
        if edit is None:
            raise ServiceError(404, f"unknown edit {edit_id}")
        return edit

    # -- edits -----------------------------------------------------------------

    def start_edit(self, session_id: str, points: list[dict],
                   mask_b64: "str | None", mode: "str | None") -> str:
        state = self.get(session_id)
        if not points:
            raise ServiceError(400, "at least one point pair is required")
        for i, entry in enumerate(points):
            for label in ("handle", "target"):
                x, y = entry[label]
                if not (0 <= x <= state.width - 1 and 0 <= y <= state.height - 1):
                    raise ServiceError(
                        400, f"point {i}: {label} ({x}, {y}) outside "
                             f"{state.width}x{state.height} image")
        mask = self._decode_mask(state, mask_b64)

        with state.lock:
            if state.status == "editing" or state.active_edit is not None:
                raise ServiceError(409, "an edit is already in flight for this session")
            if state.status not in ("ready", "done"):
                raise ServiceError(409, f"session is {state.status}, not ready")
            edit_id = uuid.uuid4().hex[:12]
            edit = EditState(edit_id=edit_id,
                             directory=state.directory / "edits" / edit_id,
                             initial_points=[dict(p) for p in points])
            edit.directory.mkdir(parents=True)
            (edit.directory / "intermediates").mkdir()
            state.edits[edit_id] = edit
            state.active_edit = edit_id
            state.status = "editing"
            self._session_json(state)
            self._edit_json(edit)

        threading.Thread(target=self._run_edit, args=(state, edit, points, mask, mode),
                         daemon=True).start()
        return edit_id

    def _decode_mask(self, state: SessionState, mask_b64: "str | None") -> MaskImage:
        res = self.settings.resolution
        if not mask_b64:
            return MaskImage.ones(res, res)
        try:
            raw = base64.b64decode(mask_b64, validate=True)
            img = Image.open(io.BytesIO(raw)).convert("L")
            img.load()
        except (binascii.Error, Exception):
            raise ServiceError(400, "undecodable mask")
        if (img.width, img.height) != (state.width, state.height):
            raise ServiceError(400, f"mask {img.width}x{img.height} does not match "
                                    f"image {state.width}x{state.height}")
        if (img.width, img.height) != (res, res):
            img = img.resize((res, res), Image.NEAREST)
        return MaskImage((np.asarray(img) > 127).astype(np.uint8))

    def _run_edit(self, state: SessionState, edit: EditState,
                  points: list[dict], mask: MaskImage, mode: "str | None") -> None:
        try:
            cfg = state.config
            if mode:
                values = cfg.to_dict()
                values["selection_mode"] = mode
                cfg = EditConfig.from_dict(values)
            pairs = [
                PointPair(handle=Point(p["handle"][0] * state.scale_x,
                                       p["handle"][1] * state.scale_y),
                          target=Point(p["target"][0] * state.scale_x,
                                       p["target"][1] * state.scale_y))
                for p in points
            ]
            session = EditSession(
                image=self._working_image(state), pairs=pairs, mask=mask, config=cfg,
                backend=state.backend or create_backend(self.settings.backend_kind),
                predictor=make_predictor(self.settings.predictor_spec),
                reuse_adapter=True)

            def publish(record: IterationRecord):
                img_path = edit.directory / "intermediates" / f"iter_{record.iteration:04d}.png"
                Image.fromarray((record.image * 255).astype(np.uint8)).save(img_path)
                payload = record.to_dict()
                payload["intermediate_image"] = (
                    f"/sessions/{state.session_id}/edits/{edit.edit_id}"
                    f"/iterations/{record.iteration}/image")
                with state.lock:
                    edit.records.append(payload)
                    state.last_published_iteration = record.iteration
                    self._trace_json(edit)

            result = run_edit(session, on_iteration=publish)
            Image.fromarray((result.final_image * 255).astype(np.uint8)).save(
                edit.directory / "final.png")
            with state.lock:
                edit.status = "done"
                state.status = "done"
                state.active_edit = None
                self._edit_json(edit)
                self._trace_json(edit)
                self._session_json(state)
        except Exception as exc:
            logger.exception("edit %s failed", edit.edit_id)
            with state.lock:
                edit.status = "failed"
                edit.error = str(exc)
                state.status = "failed"
                state.error = str(exc)
                state.active_edit = None
                self._edit_json(edit)
                self._session_json(state)

    # -- progress --------------------------------------------------------------

    def _scale_out(self, state: SessionState, record: dict) -> dict:
        """Map a trace record from working coordinates back to the original
        upload's pixel space."""
        sx, sy = state.scale_x, state.scale_y

        def unscale(pos):
            return None if pos is None else [pos[0] / sx, pos[1] / sy]

        out = dict(record)
        out["handle_positions"] = [unscale(p) for p in record["handle_positions"]]
        out["predicted_next_positions"] = [unscale(p)
                                           for p in record["predicted_next_positions"]]
        return out

    def progress(self, session_id: str, edit_id: str, since: int,
                 timeout: float) -> tuple[list[dict], str, list[dict], "str | None", "str | None"]:
        state = self.get(session_id)
        edit = self.get_edit(session_id, edit_id)
        deadline = time.monotonic() + max(0.0, min(timeout, 30.0))
        while True:
            with state.lock:
                fresh = [self._scale_out(state, r) for r in edit.records
                         if r["iteration"] > since]
                status = edit.status
                error = edit.error
            if fresh or status != "running" or time.monotonic() >= deadline:
                final_url = None
                if status == "done":
                    final_url = f"/sessions/{session_id}/edits/{edit_id}/final/image"
                return fresh, status, edit.initial_points, final_url, error
            time.sleep(self.settings.long_poll_interval)

    def iteration_image(self, session_id: str, edit_id: str, iteration: int) -> Path:
        edit = self.get_edit(session_id, edit_id)
        path = edit.directory / "intermediates" / f"iter_{iteration:04d}.png"
        if not path.exists():
            raise ServiceError(404, f"no image for iteration {iteration}")
        return path

    def final_image(self, session_id: str, edit_id: str) -> Path:
        edit = self.get_edit(session_id, edit_id)
        path = edit.directory / "final.png"
        if not path.exists():
            raise ServiceError(404, "edit has no final image yet")
        return path
