"""HTTP API over a built session set.

Participant-facing routes expose only blinded data: session ids, item
prompts, and opaque audio tokens. The tally route is admin-scoped through
a shared token header. Choices land in an append-only response store;
resubmissions are acknowledged idempotently and contradictions are
rejected without touching the stored record.
"""

from __future__ import annotations

from pathlib import Path

from fastapi import FastAPI, Header, HTTPException
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import FileResponse, JSONResponse
from pydantic import BaseModel

from .errors import DuplicateChoiceError, ValidationError
from .evaluation import ResponseStore, SessionSet, aggregate_responses

MEDIA_TYPES = {".wav": "audio/x-wav", ".flac": "audio/flac"}


class ChoiceIn(BaseModel):
    subject: str
    session_id: str
    item_id: str
    choice: str


def create_app(session_file, response_file, admin_token: str = "change-me") -> FastAPI:
    sessions = SessionSet.load(session_file)
    store = ResponseStore(response_file)
    app = FastAPI(title="listening test backend")
    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_methods=["*"],
        allow_headers=["*"],
    )

    @app.get("/api/health")
    def health() -> dict:
        return {"status": "ok", "sessions": len(sessions.sessions)}

    @app.get("/api/sessions")
    def list_sessions() -> list[dict]:
        return sessions.blinded_index()

    @app.get("/api/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        try:
            return sessions.blinded_session(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"no session {session_id!r}")

    @app.get("/api/audio/{token}")
    def get_audio(token: str) -> FileResponse:
        path = sessions.audio_by_token.get(token)
        if path is None or not Path(path).exists():
            raise HTTPException(status_code=404, detail="unknown audio token")
        media = MEDIA_TYPES.get(Path(path).suffix.lower(), "application/octet-stream")
        return FileResponse(path, media_type=media)

    @app.post("/api/choices", status_code=201)
    def post_choice(body: ChoiceIn):
        choice = body.choice.lower()
        if choice not in ("a", "b"):
            raise HTTPException(status_code=422, detail="choice must be 'a' or 'b'")
        if not body.subject.strip():
            raise HTTPException(status_code=422, detail="subject must be nonempty")
        try:
            sessions.condition_of(body.session_id, body.item_id, choice)
        except KeyError:
            raise HTTPException(
                status_code=404,
                detail=f"no item {body.item_id!r} in session {body.session_id!r}",
            )
        try:
            result = store.add(body.subject, body.session_id, body.item_id, choice)
        except DuplicateChoiceError as exc:
            raise HTTPException(status_code=409, detail=str(exc))
        except ValidationError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        if result["status"] == "duplicate":
            return JSONResponse(status_code=200, content=result)
        return result

    @app.get("/api/aggregate")
    def aggregate(x_admin_token: str | None = Header(default=None)) -> dict:
        if x_admin_token != admin_token:
            raise HTTPException(status_code=403, detail="admin token required")
        records = ResponseStore.read(store.path) if store.path.exists() else []
        try:
            return aggregate_responses(sessions, records)
        except ValidationError as exc:
            raise HTTPException(status_code=400, detail=str(exc))

    return app
