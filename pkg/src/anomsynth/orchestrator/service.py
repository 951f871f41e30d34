"""Curation HTTP service: review queue, asset images, decisions, stats.

All mutations go through the library's ``decide`` (single-writer lock,
decision flushed to the log before the response is sent), so concurrent
curators get exactly one 200 and one 409 for a double decision. The
service also serves the review UI bundle same-origin when a static
directory is provided.
"""

from __future__ import annotations

import io
from pathlib import Path
from typing import Literal

from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse, Response
from fastapi.staticfiles import StaticFiles
from pydantic import BaseModel

from ..errors import NotFoundError, StateConflictError
from ..imageops import canny, load_image, save_mask, to_gray
from ..texlib import STATES, TextureAsset, TextureLibrary


class DecisionBody(BaseModel):
    decision: Literal["accept", "reject"]
    note: str | None = None


def asset_summary(asset: TextureAsset) -> dict:
    return {
        "asset_id": asset.asset_id,
        "category": asset.category,
        "edge_density": asset.edge_density,
        "caption": asset.caption,
        "curation_state": asset.curation_state,
        "decision_note": asset.decision_note,
        "image_url": f"/api/assets/{asset.asset_id}/image",
        "edges_url": f"/api/assets/{asset.asset_id}/edges",
    }


def create_app(library: TextureLibrary, static_dir: str | Path | None = None) -> FastAPI:
    app = FastAPI(title="anomsynth curation service")
    edge_cache: dict[str, bytes] = {}

    @app.exception_handler(RequestValidationError)
    async def malformed_body(request: Request, exc: RequestValidationError):
        return JSONResponse(status_code=400, content={"detail": exc.errors()})

    def get_asset_or_404(asset_id: str) -> TextureAsset:
        asset = library.assets.get(asset_id)
        if asset is None:
            raise NotFoundError(asset_id)
        return asset

    @app.exception_handler(NotFoundError)
    async def not_found(request: Request, exc: NotFoundError):
        return JSONResponse(status_code=404, content={"detail": str(exc)})

    @app.exception_handler(StateConflictError)
    async def state_conflict(request: Request, exc: StateConflictError):
        return JSONResponse(status_code=409, content={"detail": str(exc)})

    @app.get("/api/queue")
    def queue(state: str = "pending", category: str | None = None, limit: int = 50, offset: int = 0):
        if state not in STATES:
            return JSONResponse(status_code=400, content={"detail": f"unknown state {state!r}"})
        page, total = library.queue(state=state, category=category or None, limit=limit, offset=offset)
        return {
            "items": [asset_summary(a) for a in page],
            "total": total,
            "limit": limit,
            "offset": offset,
        }

    @app.get("/api/assets/{asset_id}")
    def asset_detail(asset_id: str):
        return asset_summary(get_asset_or_404(asset_id))

    @app.get("/api/assets/{asset_id}/image")
    def asset_image(asset_id: str):
        asset = get_asset_or_404(asset_id)
        data = Path(asset.image_path).read_bytes()
        return Response(content=data, media_type="image/png")

    @app.get("/api/assets/{asset_id}/edges")
    def asset_edges(asset_id: str):
        asset = get_asset_or_404(asset_id)
        if asset_id not in edge_cache:
            image = load_image(asset.image_path)
            edges = canny(to_gray(image), library.canny_low, library.canny_high)
            buf = io.BytesIO()
            save_mask(buf, edges)
            edge_cache[asset_id] = buf.getvalue()
        return Response(content=edge_cache[asset_id], media_type="image/png")

    @app.post("/api/assets/{asset_id}/decision")
    def decide(asset_id: str, body: DecisionBody):
        get_asset_or_404(asset_id)
        asset = library.decide(asset_id, body.decision, note=body.note, actor="http")
        return asset_summary(asset)

    @app.get("/api/stats")
    def stats():
        return library.stats()

    if static_dir is not None and Path(static_dir).is_dir():
        app.mount("/", StaticFiles(directory=str(static_dir), html=True), name="ui")

    return app


def serve(library: TextureLibrary, host: str = "127.0.0.1", port: int = 8000, static_dir: str | Path | None = None) -> None:
    import uvicorn

    app = create_app(library, static_dir=static_dir)
    uvicorn.run(app, host=host, port=port, log_level="warning")
