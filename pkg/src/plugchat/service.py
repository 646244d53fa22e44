"""HTTP chat service: sessions, full-pipeline chat, SSE streaming,
annotation capture, and transcript export.

Persistence is an append-only JSONL log per session under the data
directory; restart replays the logs and reconstructs every session
exactly. Requests within one session are serialized by a per-session
lock; the model is shared read-only across sessions.

A pre-response safety gate checks the generated reply against the unsafe
keyword list and substitutes the configured refusal text on a hit (the
original model output is still recorded in the turn metadata for audit).
"""

from __future__ import annotations

import json
import threading
import time
import uuid
from dataclasses import dataclass, field
from pathlib import Path

from fastapi import FastAPI, HTTPException, Request
from fastapi.responses import PlainTextResponse, StreamingResponse
from pydantic import BaseModel, Field

from .config import ServiceConfig
from .filtering import RuleFilterConfig, default_rule_config
from .instructions import DialogueState, Turn
from .pipeline import ChatPipeline, PipelineResult


# ---- persistence ----


@dataclass
class SessionRecord:
    state: DialogueState
    annotations: list[dict] = field(default_factory=list)
    turn_meta: dict[int, dict] = field(default_factory=dict)
    lock: threading.Lock = field(default_factory=threading.Lock)
    created_ts: float = 0.0


class SessionStore:
    """In-memory sessions backed by one append-only JSONL log per session."""

    def __init__(self, data_dir: str | Path):
        self.data_dir = Path(data_dir)
        self.data_dir.mkdir(parents=True, exist_ok=True)
        self.sessions: dict[str, SessionRecord] = {}
        self._replay()

    def _log_path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.jsonl"

    def _append(self, session_id: str, event: dict) -> None:
        with open(self._log_path(session_id), "a", encoding="utf-8") as f:
            f.write(json.dumps(event, ensure_ascii=False) + "\n")

    def _replay(self) -> None:
        for path in sorted(self.data_dir.glob("*.jsonl")):
            with open(path, encoding="utf-8") as f:
                for line in f:
                    line = line.strip()
                    if line:
                        self._apply(json.loads(line), persist=False)

    def _apply(self, event: dict, persist: bool = True) -> None:
        kind = event["event"]
        sid = event["session_id"]
        if kind == "create":
            self.sessions[sid] = SessionRecord(
                state=DialogueState(
                    session_id=sid,
                    user_profile=event.get("user_profile", ""),
                    bot_profile=event.get("bot_profile", ""),
                ),
                created_ts=event["ts"],
            )
        elif kind == "turn":
            record = self.sessions[sid]
            record.state.turns.append(Turn(event["role"], event["text"], event["ts"]))
            if event.get("meta"):
                record.turn_meta[event["index"]] = event["meta"]
        elif kind == "annotation":
            self.sessions[sid].annotations.append(
                {k: v for k, v in event.items() if k != "event"}
            )
        if persist:
            self._append(sid, event)

    # -- operations --

    def create(self, user_profile: str, bot_profile: str) -> str:
        sid = uuid.uuid4().hex
        self._apply(
            {
                "event": "create",
                "session_id": sid,
                "user_profile": user_profile,
                "bot_profile": bot_profile,
                "ts": time.time(),
            }
        )
        return sid

    def get(self, session_id: str) -> SessionRecord:
        if session_id not in self.sessions:
            raise KeyError(session_id)
        return self.sessions[session_id]

    def add_turn(self, session_id: str, role: str, text: str, meta: dict | None = None) -> int:
        record = self.sessions[session_id]
        index = len(record.state.turns)
        self._apply(
            {
                "event": "turn",
                "session_id": session_id,
                "index": index,
                "role": role,
                "text": text,
                "meta": meta,
                "ts": time.time(),
            }
        )
        return index

    def add_annotation(self, session_id: str, record: dict) -> None:
        self._apply({"event": "annotation", "session_id": session_id, **record})

    def export(self, session_id: str) -> str:
        """Stable-order JSONL: session line, turn lines, then the latest
        annotation per (turn, annotator)."""
        record = self.get(session_id)
        lines = [
            json.dumps(
                {
                    "type": "session",
                    "session_id": session_id,
                    "user_profile": record.state.user_profile,
                    "bot_profile": record.state.bot_profile,
                    "created_ts": record.created_ts,
                },
                ensure_ascii=False,
            )
        ]
        for i, turn in enumerate(record.state.turns):
            lines.append(
                json.dumps(
                    {
                        "type": "turn",
                        "index": i,
                        "role": turn.role,
                        "text": turn.text,
                        "ts": turn.timestamp,
                        "meta": record.turn_meta.get(i),
                    },
                    ensure_ascii=False,
                )
            )
        latest: dict[tuple, dict] = {}
        for ann in record.annotations:
            latest[(ann["turn_index"], ann["annotator_id"])] = ann
        for key in sorted(latest, key=lambda k: (k[0], str(k[1]))):
            lines.append(json.dumps({"type": "annotation", **latest[key]}, ensure_ascii=False))
        return "\n".join(lines) + "\n"


# ---- request/response bodies ----


class CreateSessionBody(BaseModel):
    user_profile: str = ""
    bot_profile: str = ""


class GenOverrides(BaseModel):
    beam: int | None = None
    rep_penalty: float | None = None
    rep_ngram: int | None = None
    length_penalty: float | None = None
    min_len: int | None = None
    max_len: int | None = None
    top_k: int | None = None
    seed: int | None = None


class ChatBody(GenOverrides):
    session_id: str = Field(min_length=1)
    text: str = Field(min_length=1)
    search: bool | None = None


class RateBody(BaseModel):
    session_id: str = Field(min_length=1)
    turn_index: int
    coherence: int = Field(ge=0, le=1)
    informativeness: int = Field(ge=0, le=1)
    hallucination: int = Field(ge=0, le=1)
    safety: int = Field(ge=0, le=1)
    persona: int = Field(ge=0, le=1)
    overall: int | None = Field(default=None, ge=0, le=2)
    annotator_id: str = "anonymous"
    # optional four-level preset value, stored alongside the binary schema
    rating_letter: str | None = Field(default=None, pattern="^[ABCD]$")


def _overrides(body: GenOverrides):
    return dict(
        beam_size=body.beam,
        repetition_penalty=body.rep_penalty,
        rep_ngram=body.rep_ngram,
        length_penalty=body.length_penalty,
        min_len=body.min_len,
        max_len=body.max_len,
        top_k=body.top_k,
        seed=body.seed,
    )


# ---- streaming ----


def _sse(event: str, data) -> str:
    return f"event: {event}\ndata: {json.dumps(data, ensure_ascii=False)}\n\n"


def stream_events(
    pipeline, store, record, session_id, text, search, params, gate, payload_of
):
    """SSE frames for one chat turn: meta, token*, done (or error).

    The session lock is held for the whole stream: single writer per
    session. Closing the generator early (client disconnect) means the
    done branch never runs, so a partial bot turn is never persisted; the
    user turn stays in the log.
    """
    with record.lock:
        store.add_turn(session_id, "user", text)
        try:
            for kind, payload in pipeline.stream_respond(
                record.state, search=search, overrides=params
            ):
                if kind == "meta":
                    yield _sse(
                        "meta",
                        {
                            "query": payload.query.text if payload.query else None,
                            "docs": [d.doc_id for d in payload.docs],
                        },
                    )
                elif kind == "token":
                    yield _sse("token", {"text": payload})
                else:
                    # persist, then emit the final payload. When the safety
                    # gate rewrites the reply, done carries the gated text
                    # and gated=true, superseding already-streamed tokens.
                    reply, gated = gate(payload.reply)
                    meta = {
                        "query": payload.query.text if payload.query else None,
                        "query_origin": payload.query.origin if payload.query else None,
                        "docs": [d.doc_id for d in payload.docs],
                        "slot_kinds": payload.slot_kinds,
                        "gated": gated,
                        "model_reply": payload.reply if gated else None,
                    }
                    index = store.add_turn(session_id, "bot", reply, meta)
                    yield _sse("done", payload_of(payload, reply, index, gated))
        except GeneratorExit:
            raise
        except Exception as err:  # stream aborts emit an error event
            yield _sse("error", {"detail": str(err)})


# ---- app ----


def create_app(
    pipeline: ChatPipeline,
    config: ServiceConfig | None = None,
    rule_config: RuleFilterConfig | None = None,
) -> FastAPI:
    config = config or ServiceConfig()
    rule_config = rule_config or default_rule_config()
    store = SessionStore(config.data_dir)
    app = FastAPI(title="plugchat")
    app.state.store = store
    app.state.pipeline = pipeline
    app.state.config = config

    def _session(session_id: str) -> SessionRecord:
        try:
            return store.get(session_id)
        except KeyError:
            raise HTTPException(status_code=404, detail=f"unknown session {session_id!r}")

    def _gate(reply: str) -> tuple[str, bool]:
        lowered = reply.casefold()
        if any(k.casefold() in lowered for k in rule_config.unsafe_keywords):
            return config.refusal_template, True
        return reply, False

    def _response_payload(
        result: PipelineResult, reply: str, turn_index: int, gated: bool = False
    ) -> dict:
        return {
            "reply": reply,
            "query": (
                {"text": result.query.text, "origin": result.query.origin}
                if result.query
                else None
            ),
            "docs": [
                {"id": d.doc_id, "title": d.title, "score": d.score} for d in result.docs
            ],
            "timing": {
                "first_token": result.first_token_latency,
                "total": result.total_time,
            },
            "turn_index": turn_index,
            "gated": gated,
        }

    @app.post("/v1/sessions")
    def create_session(body: CreateSessionBody):
        sid = store.create(body.user_profile, body.bot_profile)
        return {"session_id": sid}

    @app.post("/v1/chat")
    def chat(body: ChatBody):
        record = _session(body.session_id)
        search = config.search_enabled_default if body.search is None else body.search
        params = pipeline.params.override(**_overrides(body))
        with record.lock:
            store.add_turn(body.session_id, "user", body.text)
            try:
                result = pipeline.respond(record.state, search=search, overrides=params)
            except Exception as err:
                raise HTTPException(status_code=500, detail=f"generation failed: {err}")
            reply, gated = _gate(result.reply)
            meta = {
                "query": result.query.text if result.query else None,
                "query_origin": result.query.origin if result.query else None,
                "docs": [d.doc_id for d in result.docs],
                "slot_kinds": result.slot_kinds,
                "gated": gated,
                "model_reply": result.reply if gated else None,
            }
            index = store.add_turn(body.session_id, "bot", reply, meta)
        return _response_payload(result, reply, index, gated)

    @app.get("/v1/chat/stream")
    def chat_stream(request: Request, session_id: str, text: str,
                    search: bool | None = None, seed: int | None = None,
                    top_k: int | None = None, max_len: int | None = None,
                    min_len: int | None = None):
        record = _session(session_id)
        if not text:
            raise HTTPException(status_code=422, detail="text must be non-empty")
        do_search = config.search_enabled_default if search is None else search
        params = pipeline.params.override(
            seed=seed, top_k=top_k, max_len=max_len, min_len=min_len
        )

        generator = stream_events(
            pipeline, store, record, session_id, text, do_search, params,
            _gate, _response_payload,
        )
        return StreamingResponse(generator, media_type="text/event-stream")

    @app.post("/v1/rate")
    def rate(body: RateBody):
        record = _session(body.session_id)
        if not 0 <= body.turn_index < len(record.state.turns):
            raise HTTPException(status_code=404, detail=f"unknown turn {body.turn_index}")
        if body.overall is not None and body.turn_index != len(record.state.turns) - 1:
            raise HTTPException(
                status_code=422,
                detail="overall score is only accepted on the session-final turn",
            )
        with record.lock:
            record_fields = {
                "turn_index": body.turn_index,
                "coherence": body.coherence,
                "informativeness": body.informativeness,
                "hallucination": body.hallucination,
                "safety": body.safety,
                "persona": body.persona,
                "overall": body.overall,
                "annotator_id": body.annotator_id,
                "ts": time.time(),
            }
            if body.rating_letter is not None:
                record_fields["rating_letter"] = body.rating_letter
            store.add_annotation(body.session_id, record_fields)
        return {"ok": True}

    @app.get("/v1/export")
    def export(session_id: str):
        _session(session_id)
        return PlainTextResponse(store.export(session_id), media_type="application/x-ndjson")

    ui_dir = Path(__file__).parent / "ui"
    if ui_dir.is_dir():
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=ui_dir, html=True), name="ui")

    return app
