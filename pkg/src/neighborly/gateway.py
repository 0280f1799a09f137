"""HTTP+JSON gateway for the duel experiment, consumed by the browser UI.

Request/response schemas are documented in docs/gateway.md. Every payload
sent before a session's choice is submitted is blind: it carries no
algorithm identities and no predicted scores, only opaque profile cards.
"""

from __future__ import annotations

from typing import Optional

from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse, PlainTextResponse
from pydantic import BaseModel, Field

from .duel import PHASE_CHOOSING, PHASE_DONE, DuelSession, DuelStore
from .errors import OutOfScaleError, SessionError

LIST_LABELS = {"left": "List 1", "right": "List 2"}


class CreateSessionBody(BaseModel):
    gender: Optional[str] = Field(default=None, description="M, F, or U")
    rating_target: Optional[int] = Field(default=None, ge=1)


class SubmitRatingBody(BaseModel):
    profile_id: int
    value: int


class SubmitChoiceBody(BaseModel):
    pick: str = Field(description="left or right")


def session_view(store: DuelStore, session: DuelSession) -> dict:
    """The participant-facing session snapshot; blind until phase=done."""
    view = {
        "token": session.token,
        "phase": session.phase,
        "progress": {"rated": session.rated, "target": session.rating_target},
        "scale": {"min": store.dm.matrix.scale.r_min, "max": store.dm.matrix.scale.r_max},
        "current_profile": None,
        "lists": None,
        "choice": session.choice,
        "revealed": None,
    }
    profile = session.current_profile
    if profile is not None:
        view["current_profile"] = {"profile_id": profile, "asset": store.asset_for(profile)}
    if session.phase in (PHASE_CHOOSING, PHASE_DONE) and session.lists is not None:
        view["lists"] = {
            side: {
                "label": LIST_LABELS[side],
                "entries": [
                    {"profile_id": p, "asset": store.asset_for(p)}
                    for p, _score in session.lists[side]
                ],
            }
            for side in ("left", "right")
        }
    if session.phase == PHASE_DONE:
        names = store.algorithm_names()
        view["revealed"] = {
            "left": names[session.left_algo],
            "right": names[session.right_algo],
            "winner": names[session.winner],
        }
    return view


def create_app(store: DuelStore) -> FastAPI:
    app = FastAPI(title="duel experiment gateway", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(SessionError)
    async def _session_error(request: Request, exc: SessionError):
        status = 404 if "unknown session" in str(exc) else 409
        return JSONResponse(status_code=status, content={"error": str(exc)})

    @app.exception_handler(OutOfScaleError)
    async def _scale_error(request: Request, exc: OutOfScaleError):
        return JSONResponse(status_code=422, content={"error": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request: Request, exc: ValueError):
        return JSONResponse(status_code=400, content={"error": str(exc)})

    @app.get("/api/healthz")
    def healthz():
        return {"status": "ok", "sessions": len(store.sessions)}

    @app.post("/api/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        session = store.create_session(
            gender=body.gender, rating_target=body.rating_target
        )
        return session_view(store, session)

    @app.get("/api/sessions/{token}")
    def get_session(token: str):
        return session_view(store, store.session(token))

    @app.post("/api/sessions/{token}/ratings")
    def submit_rating(token: str, body: SubmitRatingBody):
        session = store.submit_rating(token, body.profile_id, body.value)
        return session_view(store, session)

    @app.get("/api/sessions/{token}/lists")
    def get_lists(token: str):
        session = store.session(token)
        if session.phase not in (PHASE_CHOOSING, PHASE_DONE):
            raise SessionError(
                f"lists are available after rating completes; phase is {session.phase}"
            )
        return session_view(store, session)

    @app.post("/api/sessions/{token}/choice")
    def submit_choice(token: str, body: SubmitChoiceBody):
        session, _winner = store.submit_choice(token, body.pick)
        return session_view(store, session)

    @app.get("/api/tally")
    def tally():
        t = store.tally()
        return {
            "algorithms": [t.names[i] for i in sorted(t.names)],
            "duels": t.rows(),
        }

    @app.get("/api/tally.csv")
    def tally_csv():
        return PlainTextResponse(store.tally().to_csv(), media_type="text/csv")

    @app.get("/api/events")
    def events():
        return {"events": store.export_events()}

    return app


def mount_static(app: FastAPI, directory: str) -> None:
    """Serve the built browser UI alongside the API."""
    from fastapi.staticfiles import StaticFiles

    app.mount("/", StaticFiles(directory=directory, html=True), name="ui")
