"""Request/response schemas for the edit service."""
from __future__ import annotations

from pydantic import BaseModel, Field


class SessionCreated(BaseModel):
    session_id: str


class SessionInfo(BaseModel):
    session_id: str
    status: str
    width: int
    height: int
    scale_x: float
    scale_y: float
    last_published_iteration: int = -1
    config: dict = Field(default_factory=dict)
    error: "str | None" = None


class PointPairPayload(BaseModel):
    handle: list[float] = Field(min_length=2, max_length=2)
    target: list[float] = Field(min_length=2, max_length=2)


class EditRequest(BaseModel):
    points: list[PointPairPayload]
    mask: "str | None" = None  # base64-encoded PNG; absent means all-editable
    mode: "str | None" = None  # selection mode override (ADS/FDS/RS/OFF)


class EditCreated(BaseModel):
    edit_id: str


class ProgressResponse(BaseModel):
    records: list[dict]
    status: str
    initial_points: list[PointPairPayload] = Field(default_factory=list)
    final_image: "str | None" = None
    error: "str | None" = None
