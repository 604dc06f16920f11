"""HTTP session service around the interactive query loop.

One model (and optionally its bound tables and a prototype net) is
loaded at startup and never mutated. A session is an append-only
history of (item, rating, evoi-at-selection) triples; the in-memory
inference state is always derivable by replaying that history, and the
history is written ahead to a JSONL store before the state moves, so a
crash loses nothing but the response in flight. Mutations on one
session are serialized by a per-session lock; distinct sessions and all
GETs proceed in parallel against the read-only model.
"""

from __future__ import annotations

import json
import secrets
import threading
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.exceptions import RequestValidationError
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse
from pydantic import BaseModel

from .bounds import BoundTables
from .engines import engine_for
from .mcvq import McvqModel
from .prototypes import PrototypeSet
from .strategies import StrategyConfig, select_query, unobserved_items

SESSION_ID_BYTES = 16


class ApiError(Exception):
    """Error carried to the client as JSON {code, message}."""

    def __init__(self, status: int, code: str, message: str):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message


@dataclass
class Session:
    """One user's query loop; state is derived from history."""

    id: str
    model_kind: str
    evoi_threshold: float
    use_prototypes: bool
    created: float
    updated: float
    history: list[tuple[int, int, float | None]] = field(default_factory=list)
    state: object = None
    lock: threading.Lock = field(default_factory=threading.Lock)
    last_query: tuple[int, float] | None = None  # (item, evoi) of the latest suggestion

    def summary(self) -> dict:
        return {
            "id": self.id,
            "model_kind": self.model_kind,
            "evoi_threshold": self.evoi_threshold,
            "use_prototypes": self.use_prototypes,
            "created": self.created,
            "updated": self.updated,
            "n_ratings": len(self.history),
            "history": [
                {"item": item, "rating": rating, "evoi": evoi}
                for item, rating, evoi in self.history
            ],
        }


class SessionStore:
    """Append-only JSONL write-ahead log of session events.

    Every mutation is flushed to disk before the in-memory state
    advances; ``load`` replays the file back into event dicts.
    """

    def __init__(self, path: str | Path | None):
        self.path = Path(path) if path is not None else None
        self._lock = threading.Lock()
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)

    def append(self, event: dict) -> None:
        if self.path is None:
            return
        line = json.dumps(event, separators=(",", ":"), sort_keys=True)
        with self._lock, open(self.path, "a", encoding="utf-8") as fh:
            fh.write(line + "\n")
            fh.flush()

    def load(self) -> list[dict]:
        if self.path is None or not self.path.exists():
            return []
        events = []
        with open(self.path, encoding="utf-8") as fh:
            for line in fh:
                line = line.strip()
                if line:
                    events.append(json.loads(line))
        return events


class CreateSessionBody(BaseModel):
    model_kind: str | None = None
    evoi_threshold: float | None = None
    use_prototypes: bool | None = None


class RatingBody(BaseModel):
    item: int
    rating: int


class ServiceState:
    """Shared read-only model plus the mutable session registry."""

    def __init__(
        self,
        model,
        tables: BoundTables | None = None,
        prototypes: PrototypeSet | None = None,
        store: SessionStore | None = None,
        item_labels: list[str] | None = None,
        default_threshold: float = 0.0,
    ):
        self.model = model
        self.engine = engine_for(model)
        self.model_kind = "mcvq" if isinstance(model, McvqModel) else "naive_bayes"
        self.tables = tables
        self.prototypes = prototypes
        self.store = store or SessionStore(None)
        self.item_labels = item_labels
        self.default_threshold = default_threshold
        self.sessions: dict[str, Session] = {}
        self._registry_lock = threading.Lock()
        for event in self.store.load():
            self._replay_event(event)

    def _replay_event(self, event: dict) -> None:
        if event["event"] == "create":
            s = Session(
                id=event["id"],
                model_kind=event["model_kind"],
                evoi_threshold=event["evoi_threshold"],
                use_prototypes=event["use_prototypes"],
                created=event["ts"],
                updated=event["ts"],
            )
            s.state = self.engine.fresh_state()
            self.sessions[s.id] = s
        elif event["event"] == "rating":
            s = self.sessions[event["id"]]
            s.state = self.engine.update(s.state, event["item"], event["rating"])
            s.history.append((event["item"], event["rating"], event.get("evoi")))
            s.updated = event["ts"]

    def create_session(self, body: CreateSessionBody) -> Session:
        if body.model_kind is not None and body.model_kind != self.model_kind:
            raise ApiError(404, "unknown_model", f"service hosts {self.model_kind!r}, not {body.model_kind!r}")
        threshold = self.default_threshold if body.evoi_threshold is None else body.evoi_threshold
        if threshold < 0:
            raise ApiError(422, "invalid_threshold", "evoi_threshold must be >= 0")
        use_protos = bool(self.prototypes is not None and (body.use_prototypes in (None, True)))
        if body.use_prototypes and self.prototypes is None:
            raise ApiError(422, "no_prototypes", "service was started without a prototype net")
        now = time.time()
        s = Session(
            id=secrets.token_urlsafe(SESSION_ID_BYTES),
            model_kind=self.model_kind,
            evoi_threshold=threshold,
            use_prototypes=use_protos,
            created=now,
            updated=now,
        )
        s.state = self.engine.fresh_state()
        self.store.append(
            {
                "event": "create",
                "id": s.id,
                "ts": now,
                "model_kind": s.model_kind,
                "evoi_threshold": s.evoi_threshold,
                "use_prototypes": s.use_prototypes,
            }
        )
        with self._registry_lock:
            self.sessions[s.id] = s
        return s

    def get(self, session_id: str) -> Session:
        s = self.sessions.get(session_id)
        if s is None:
            raise ApiError(404, "unknown_session", f"no session {session_id!r}")
        return s

    def _strategy_cfg(self, s: Session) -> StrategyConfig:
        return StrategyConfig(
            kind="evoi",
            evoi_threshold=s.evoi_threshold,
            candidates=self.prototypes.members if s.use_prototypes and self.prototypes else None,
            bound_tables=self.tables,
        )

    def label(self, item: int) -> str:
        if self.item_labels is not None:
            return self.item_labels[item]
        return f"item-{item}"

    def next_query(self, s: Session, top_k: int) -> dict:
        pool = unobserved_items(self.engine, s.state)
        if pool.size == 0:
            return {"item": None, "expected_evoi": None, "stop": True,
                    "reason": "no unobserved items", "candidates_pruned": 0, "ranked": []}
        if s.evoi_threshold >= self.engine.rho:
            # no answer can move the best posterior mean that far
            return {"item": None, "expected_evoi": None, "stop": True,
                    "reason": "threshold unattainable", "candidates_pruned": 0, "ranked": []}
        if pool.size == 1:
            # a query must leave at least one other item to recommend
            return {"item": None, "expected_evoi": None, "stop": True,
                    "reason": "single unobserved item", "candidates_pruned": 0, "ranked": []}
        try:
            decision = select_query(self.engine, s.state, self._strategy_cfg(s))
        except ValueError:
            # prototype net fully observed; fall back to the open pool
            decision = select_query(
                self.engine, s.state,
                StrategyConfig(kind="evoi", evoi_threshold=s.evoi_threshold, bound_tables=self.tables),
            )
        order = np.lexsort((decision.candidates, -decision.scores))[:top_k]
        ranked = [
            {
                "item": int(decision.candidates[i]),
                "label": self.label(int(decision.candidates[i])),
                "expected_evoi": float(decision.scores[i]),
            }
            for i in order
        ]
        out = {
            "item": decision.chosen_query,
            "expected_evoi": None if decision.stop else float(decision.scores.max()),
            "stop": decision.stop,
            "candidates_pruned": decision.pruned_targets,
            "ranked": ranked,
        }
        if decision.stop:
            out["reason"] = "max expected value of information below threshold"
        else:
            out["label"] = self.label(int(decision.chosen_query))
            s.last_query = (int(decision.chosen_query), float(decision.scores.max()))
        return out

    def submit_rating(self, s: Session, item: int, rating: int) -> dict:
        if not 0 <= item < self.engine.n_items:
            raise ApiError(422, "unknown_item", f"item must lie in 0..{self.engine.n_items - 1}")
        if not 1 <= rating <= self.engine.rho:
            raise ApiError(422, "invalid_rating", f"rating must lie in 1..{self.engine.rho}")
        with s.lock:
            if any(h[0] == item for h in s.history):
                raise ApiError(409, "duplicate_item", f"item {item} already rated in this session")
            evoi_at_selection = None
            if s.last_query is not None and s.last_query[0] == item:
                evoi_at_selection = s.last_query[1]
            now = time.time()
            self.store.append(
                {"event": "rating", "id": s.id, "ts": now,
                 "item": item, "rating": rating, "evoi": evoi_at_selection}
            )
            s.state = self.engine.update(s.state, item, rating)
            s.history.append((item, rating, evoi_at_selection))
            s.updated = now
            s.last_query = None
        return s.summary()

    def recommendations(self, s: Session, top_n: int) -> list[dict]:
        pool = unobserved_items(self.engine, s.state)
        if pool.size == 0:
            return []
        means = self.engine.posterior_means(s.state, pool)
        order = np.lexsort((pool, -means))[:top_n]
        return [
            {
                "item": int(pool[i]),
                "label": self.label(int(pool[i])),
                "posterior_mean": float(means[i]),
            }
            for i in order
        ]


def create_app(
    model,
    tables: BoundTables | None = None,
    prototypes: PrototypeSet | None = None,
    store_path: str | Path | None = None,
    item_labels: list[str] | None = None,
    default_threshold: float = 0.0,
) -> FastAPI:
    """Build the FastAPI app around one loaded model."""
    state = ServiceState(
        model,
        tables=tables,
        prototypes=prototypes,
        store=SessionStore(store_path),
        item_labels=item_labels,
        default_threshold=default_threshold,
    )
    app = FastAPI(title="activecf session service", docs_url=None, redoc_url=None)
    # sessions are unauthenticated and the browser client is a static
    # page, so any origin may call in
    app.add_middleware(CORSMiddleware, allow_origins=["*"], allow_methods=["*"], allow_headers=["*"])
    app.state.service = state

    @app.exception_handler(ApiError)
    async def on_api_error(_req: Request, exc: ApiError):
        return JSONResponse(status_code=exc.status, content={"code": exc.code, "message": exc.message})

    @app.exception_handler(RequestValidationError)
    async def on_validation_error(_req: Request, exc: RequestValidationError):
        return JSONResponse(status_code=422, content={"code": "validation_error", "message": str(exc.errors())})

    @app.get("/healthz")
    def healthz():
        return {"status": "ok", "model_kind": state.model_kind,
                "n_items": state.engine.n_items, "rho": state.engine.rho}

    @app.get("/items")
    def items():
        return {
            "rho": state.engine.rho,
            "n_items": state.engine.n_items,
            "items": [{"item": j, "label": state.label(j)} for j in range(state.engine.n_items)],
        }

    @app.post("/sessions", status_code=201)
    def create_session(body: CreateSessionBody):
        return state.create_session(body).summary()

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str):
        s = state.get(session_id)
        out = s.summary()
        out["diagnostics"] = _diagnostics(state, s)
        return out

    @app.get("/sessions/{session_id}/query")
    def get_query(session_id: str, top_k: int = 5):
        if top_k < 1:
            raise ApiError(422, "invalid_top_k", "top_k must be >= 1")
        return state.next_query(state.get(session_id), top_k)

    @app.post("/sessions/{session_id}/ratings")
    def post_rating(session_id: str, body: RatingBody):
        return state.submit_rating(state.get(session_id), body.item, body.rating)

    @app.get("/sessions/{session_id}/recommendations")
    def get_recommendations(session_id: str, top_n: int = 10):
        if top_n < 1:
            raise ApiError(422, "invalid_top_n", "top_n must be >= 1")
        return {"items": state.recommendations(state.get(session_id), top_n)}

    return app


def _diagnostics(state: ServiceState, s: Session) -> dict:
    if state.model_kind == "mcvq":
        return {"attitude_posterior": s.state.attitude_posterior.tolist()}
    return {"component_posterior": s.state.component_posterior.tolist()}
