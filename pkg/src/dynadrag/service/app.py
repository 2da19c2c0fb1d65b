"""HTTP facade over edit sessions.

Endpoints:
  POST /sessions                                   multipart image (+config)
  GET  /sessions/{id}
  POST /sessions/{id}/edits                        points + optional mask/mode
  GET  /sessions/{id}/edits/{eid}/progress?since=k long-poll for new records
  GET  /sessions/{id}/edits/{eid}/iterations/{k}/image
  GET  /sessions/{id}/edits/{eid}/final/image
"""
from __future__ import annotations

import os
from pathlib import Path

from fastapi import FastAPI, File, Request, UploadFile
from fastapi.responses import FileResponse, JSONResponse
from fastapi.staticfiles import StaticFiles

from dynadrag.service.models import (
    EditCreated,
    EditRequest,
    ProgressResponse,
    SessionCreated,
    SessionInfo,
)
from dynadrag.service.store import ServiceError, ServiceSettings, SessionStore


def create_app(settings: "ServiceSettings | None" = None,
               ui_dir: "str | None" = None) -> FastAPI:
    settings = settings or ServiceSettings.from_env(os.environ)
    store = SessionStore(settings)
    app = FastAPI(title="dynadrag edit service")
    app.state.store = store

    @app.exception_handler(ServiceError)
    async def service_error_handler(_request: Request, exc: ServiceError):
        return JSONResponse(status_code=exc.status_code, content={"detail": exc.detail})

    @app.post("/sessions", response_model=SessionCreated)
    def create_session(image: UploadFile = File(...),
                       config: "UploadFile | None" = File(default=None)):
        config_text = config.file.read().decode() if config is not None else None
        session_id = store.create_session(image.file.read(), config_text)
        return SessionCreated(session_id=session_id)

    @app.get("/sessions/{session_id}", response_model=SessionInfo)
    def get_session(session_id: str):
        return SessionInfo(**store.get(session_id).snapshot())

    @app.post("/sessions/{session_id}/edits", response_model=EditCreated)
    def start_edit(session_id: str, request: EditRequest):
        edit_id = store.start_edit(
            session_id,
            points=[{"handle": p.handle, "target": p.target} for p in request.points],
            mask_b64=request.mask, mode=request.mode)
        return EditCreated(edit_id=edit_id)

    @app.get("/sessions/{session_id}/edits/{edit_id}/progress",
             response_model=ProgressResponse)
    def get_progress(session_id: str, edit_id: str, since: int = -1, timeout: float = 10.0):
        records, status, initial, final_url, error = store.progress(
            session_id, edit_id, since, timeout)
        return ProgressResponse(records=records, status=status, initial_points=initial,
                                final_image=final_url, error=error)

    @app.get("/sessions/{session_id}/edits/{edit_id}/iterations/{iteration}/image")
    def iteration_image(session_id: str, edit_id: str, iteration: int):
        return FileResponse(store.iteration_image(session_id, edit_id, iteration),
                            media_type="image/png")

    @app.get("/sessions/{session_id}/edits/{edit_id}/final/image")
    def final_image(session_id: str, edit_id: str):
        return FileResponse(store.final_image(session_id, edit_id),
                            media_type="image/png")

    ui_dir = ui_dir or os.environ.get("DYNADRAG_UI_DIR")
    if ui_dir and Path(ui_dir).is_dir():
        app.mount("/", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
