"""HTTP+JSON API for the listening test.

POST /sessions {listener_id}            -> session descriptor
GET  /sessions/{id}/next                -> stimulus descriptor or done marker
POST /sessions/{id}/ratings {...}       -> accepted/rejected
GET  /references                        -> six accent reference samples
GET  /export                            -> ratings CSV
GET  /audio/{id}                        -> WAV bytes
"""

from __future__ import annotations

import os

from fastapi import FastAPI, HTTPException
from fastapi.responses import FileResponse, HTMLResponse, PlainTextResponse
from pydantic import BaseModel


class SessionRequest(BaseModel):
    listener_id: str


class RatingRequest(BaseModel):
    stimulus_id: str
    mos: int
    dmos: int
    dialect_choice: str
    token: str = ""


def create_app(service, ui_dir=None):
    app = FastAPI(title="listening test")

    @app.post("/sessions")
    def create_session(req: SessionRequest):
        try:
            session = service.create_session(req.listener_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {
            "session_id": session.listener_id,
            "listener_id": session.listener_id,
            "cursor": session.cursor,
            "total": len(session.order),
            "status": session.status,
        }

    @app.get("/sessions/{session_id}/next")
    def next_stimulus(session_id: str):
        try:
            return service.next_stimulus(session_id)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))

    @app.post("/sessions/{session_id}/ratings")
    def record_rating(session_id: str, req: RatingRequest):
        try:
            result = service.record_rating(
                session_id, req.stimulus_id, req.mos, req.dmos,
                req.dialect_choice, req.token)
        except KeyError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if not result.get("accepted"):
            raise HTTPException(status_code=409, detail=result)
        return result

    @app.get("/references")
    def references():
        return {"categories": service.references()}

    @app.get("/export")
    def export():
        return PlainTextResponse(service.export_csv(), media_type="text/csv")

    @app.get("/audio/{audio_id}")
    def audio(audio_id: str):
        path = service.resolve_audio(audio_id)
        if path is None or not os.path.exists(path):
            raise HTTPException(status_code=404, detail=f"no audio '{audio_id}'")
        return FileResponse(path, media_type="audio/wav")

    if ui_dir and os.path.isdir(ui_dir):
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir), name="ui")

        @app.get("/")
        def root():
            return FileResponse(os.path.join(ui_dir, "index.html"),
                                media_type="text/html")

        @app.get("/references.html")
        def references_page():
            return FileResponse(os.path.join(ui_dir, "references.html"),
                                media_type="text/html")
    else:
        @app.get("/")
        def root_placeholder():
            return HTMLResponse(
                "<html><body><h1>Listening test service</h1>"
                "<p>No UI bundle configured; the JSON API is live.</p>"
                "</body></html>")

    return app
