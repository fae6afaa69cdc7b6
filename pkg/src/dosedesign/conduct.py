"""Trial-conduct HTTP service: persistent sessions, human-entered outcomes,
next-dose recommendations.

Sessions are event-sourced: an append-only JSON-lines log per session, with
undo as a compensating event.  The in-memory state is always the
deterministic replay of the log, and recommendations are recomputed through
the same pure engines the simulator uses, so service and library can never
disagree.  The service never generates outcomes; it is strictly
human-in-the-loop.
"""
from __future__ import annotations

import json
import math
import os
import re
import threading
import uuid
from pathlib import Path

import numpy as np
from fastapi import FastAPI, Request
from fastapi.responses import JSONResponse

from .config import (
    ConfigError,
    build_design_from_config,
    session_config_schema,
    validate_session_config,
)
from .core import DoseDecision, DoseGrid, TrialState
from .engines import Design, design_catalog

__all__ = ["SessionStore", "ApiError", "create_app", "replay_decisions"]

_SID_RE = re.compile(r"^[0-9a-f]{32}$")


class ApiError(Exception):
    def __init__(self, status: int, code: str, message: str, fields: list[str] | None = None):
        super().__init__(message)
        self.status = status
        self.code = code
        self.message = message
        self.fields = fields or []

    def response(self) -> JSONResponse:
        return JSONResponse(
            {"code": self.code, "message": self.message, "fields": self.fields},
            status_code=self.status,
        )


def _decision_rng(seed: int, cohort_index: int) -> np.random.Generator:
    # One fresh stream per decision index: undo followed by re-recording the
    # same outcomes reproduces the identical recommendation.
    return np.random.default_rng([seed, cohort_index])


def replay_decisions(
    design: Design,
    grid: DoseGrid,
    m: int,
    cohorts: list[list[float]],
    seed: int,
) -> list[DoseDecision]:
    """Pure decision sequence for an outcome sequence: the initial
    recommendation plus one per recorded cohort.  This is the service's
    engine and the parity oracle."""
    state = TrialState(grid, m)
    decisions = [design.initial_decision(grid, m)]
    for i, outcomes in enumerate(cohorts, start=1):
        decision = decisions[-1]
        state.record(decision.next_level, outcomes, decision.assigned_dose)
        decisions.append(design.decide(state, _decision_rng(seed, i)))
    return decisions


class Session:
    """Replayed view of one session's event log."""

    def __init__(self, sid: str, config: dict, log_path: Path) -> None:
        self.id = sid
        self.config = config
        self.log_path = log_path
        self.lock = threading.Lock()
        self.grid = DoseGrid(config["n_levels"])
        self.m = int(config["m"])
        self.seed = int(config.get("seed", 0))
        self.design = build_design_from_config(
            config["design"],
            start_level=config.get("start_level", 1),
            coherence_guard=config.get("coherence_guard", False),
        )
        self.active: list[list[float]] = []
        self.explicitly_closed = False

    # -- state ---------------------------------------------------------------

    def decisions(self) -> list[DoseDecision]:
        return replay_decisions(self.design, self.grid, self.m, self.active, self.seed)

    @property
    def recommendation(self) -> DoseDecision:
        return self.decisions()[-1]

    @property
    def closed(self) -> bool:
        return self.explicitly_closed or self.recommendation.kind == "stop"

    def view(self) -> dict:
        decisions = self.decisions()
        state = TrialState(self.grid, self.m)
        history = []
        for i, outcomes in enumerate(self.active):
            level = decisions[i].next_level
            state.record(level, outcomes, decisions[i].assigned_dose)
            history.append(
                {
                    "cohort": i + 1,
                    "level": level,
                    "assigned_dose": decisions[i].assigned_dose,
                    "outcomes": list(outcomes),
                    "recommendation": decisions[i + 1].to_dict(),
                }
            )
        n, z = state.level_counts()
        is_binary = self.design.outcome_kind == "binary"
        estimates = self.design.level_estimates(state)
        return {
            "id": self.id,
            "design": self.config["design"],
            "outcome_kind": self.design.outcome_kind,
            "n_levels": self.grid.n_levels,
            "m": self.m,
            "seed": self.seed,
            "coherence_guard": bool(self.config.get("coherence_guard", False)),
            "closed": self.closed,
            "history": history,
            "recommendation": decisions[-1].to_dict(),
            "level_counts": {"n": n, "z": z} if is_binary else {"n": n, "z": None},
            "estimates": estimates,
        }

    # -- event log -----------------------------------------------------------

    def _append_events(self, events: list[dict]) -> None:
        payload = "".join(json.dumps(ev, sort_keys=True) + "\n" for ev in events)
        with open(self.log_path, "a") as fh:
            fh.write(payload)
            fh.flush()
            os.fsync(fh.fileno())

    def record_outcomes(self, outcomes: list[float]) -> DoseDecision:
        if self.closed:
            raise ApiError(422, "session_closed", "session is closed to new outcomes")
        if len(outcomes) != self.m:
            raise ApiError(
                409, "wrong_outcome_count",
                f"expected {self.m} outcomes, got {len(outcomes)}", ["outcomes"],
            )
        values: list[float] = []
        for y in outcomes:
            if not isinstance(y, (int, float)) or isinstance(y, bool) or not math.isfinite(y):
                raise ApiError(409, "wrong_outcome_type",
                               "outcomes must be finite numbers", ["outcomes"])
            if self.design.outcome_kind == "binary" and y not in (0, 1):
                raise ApiError(409, "wrong_outcome_type",
                               "binary designs take outcomes in {0, 1}", ["outcomes"])
            values.append(float(y))
        self.active.append(values)
        rec = self.recommendation
        self._append_events(
            [
                {"type": "outcomes", "values": values},
                {"type": "recommendation", "rec": rec.to_dict()},
            ]
        )
        return rec

    def undo(self) -> DoseDecision:
        if not self.active:
            raise ApiError(409, "nothing_to_undo", "no outcome event to undo")
        self.active.pop()
        self.explicitly_closed = False
        rec = self.recommendation
        self._append_events(
            [
                {"type": "undo"},
                {"type": "recommendation", "rec": rec.to_dict()},
            ]
        )
        return rec

    def close(self) -> None:
        if not self.explicitly_closed:
            self.explicitly_closed = True
            self._append_events([{"type": "closed"}])

    @classmethod
    def create(cls, config: dict, root: Path) -> "Session":
        sid = uuid.uuid4().hex
        log_path = root / f"{sid}.jsonl"
        session = cls(sid, config, log_path)
        session._append_events(
            [
                {"type": "created", "id": sid, "config": config},
                {"type": "recommendation", "rec": session.recommendation.to_dict()},
            ]
        )
        return session

    @classmethod
    def load(cls, log_path: Path) -> "Session":
        events: list[dict] = []
        with open(log_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    events.append(json.loads(line))
                except json.JSONDecodeError:
                    break  # torn trailing write from a crash; replay stops here
        if not events or events[0].get("type") != "created":
            raise ApiError(404, "unknown_session", "session log is missing or corrupt")
        session = cls(events[0]["id"], events[0]["config"], log_path)
        for ev in events[1:]:
            if ev["type"] == "outcomes":
                session.active.append([float(y) for y in ev["values"]])
            elif ev["type"] == "undo":
                if session.active:
                    session.active.pop()
            elif ev["type"] == "closed":
                session.explicitly_closed = True
        return session


class SessionStore:
    def __init__(self, root: Path) -> None:
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)
        self._sessions: dict[str, Session] = {}
        self._lock = threading.Lock()

    def create(self, config: dict) -> Session:
        try:
            validate_session_config(config)
            session = Session.create(config, self.root)
        except ConfigError as exc:
            raise ApiError(
                400, "invalid_config", "session config is invalid",
                [path for path, _ in exc.errors],
            ) from exc
        except ValueError as exc:
            raise ApiError(400, "invalid_config", str(exc)) from exc
        with self._lock:
            self._sessions[session.id] = session
        return session

    def get(self, sid: str) -> Session:
        with self._lock:
            if sid in self._sessions:
                return self._sessions[sid]
        log_path = self.root / f"{sid}.jsonl"
        if not log_path.exists() or not _SID_RE.match(sid):
            raise ApiError(404, "unknown_session", f"no session {sid!r}")
        session = Session.load(log_path)
        with self._lock:
            return self._sessions.setdefault(sid, session)


def create_app(state_dir: Path | str, ui_dir: Path | str | None = None) -> FastAPI:
    store = SessionStore(Path(state_dir))
    app = FastAPI(title="dosedesign conduct service", docs_url=None, redoc_url=None)
    app.state.store = store

    @app.exception_handler(ApiError)
    async def _api_error(_request: Request, exc: ApiError) -> JSONResponse:
        return exc.response()

    async def _body(request: Request) -> dict:
        try:
            body = await request.json()
        except json.JSONDecodeError:
            raise ApiError(400, "invalid_json", "request body must be JSON")
        if not isinstance(body, dict):
            raise ApiError(400, "invalid_json", "request body must be a JSON object")
        return body

    @app.get("/health")
    async def health() -> dict:
        return {"status": "ok"}

    @app.get("/designs")
    async def designs() -> dict:
        return {"designs": design_catalog(), "session_schema": session_config_schema()}

    @app.post("/sessions")
    async def create_session(request: Request) -> dict:
        config = await _body(request)
        session = store.create(config)
        return {"id": session.id, "recommendation": session.recommendation.to_dict()}

    @app.get("/sessions/{sid}")
    async def get_session(sid: str) -> dict:
        session = store.get(sid)
        with session.lock:
            return session.view()

    @app.post("/sessions/{sid}/outcomes")
    async def post_outcomes(sid: str, request: Request) -> dict:
        body = await _body(request)
        outcomes = body.get("outcomes")
        if not isinstance(outcomes, list):
            raise ApiError(409, "wrong_outcome_count",
                           "body must carry an 'outcomes' array", ["outcomes"])
        session = store.get(sid)
        with session.lock:
            rec = session.record_outcomes(outcomes)
            return {"id": sid, "recommendation": rec.to_dict()}

    @app.post("/sessions/{sid}/undo")
    async def post_undo(sid: str) -> dict:
        session = store.get(sid)
        with session.lock:
            rec = session.undo()
            return {"id": sid, "recommendation": rec.to_dict()}

    @app.post("/sessions/{sid}/close")
    async def post_close(sid: str) -> dict:
        session = store.get(sid)
        with session.lock:
            session.close()
            return {"id": sid, "closed": True}

    if ui_dir is not None:
        from fastapi.staticfiles import StaticFiles

        app.mount("/ui", StaticFiles(directory=str(ui_dir), html=True), name="ui")

    return app
