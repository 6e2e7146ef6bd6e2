"""HTTP session service that lets a human play the expert.

A session owns one hg-DAgger training loop running in its own thread. The
loop's expert is a proxy: every Inspect/Label call posts a query (with a
render payload) and blocks until an answer arrives over the wire. Queries
and answers are journaled per session, so a restarted service replays the
journal and resumes at the exact pending query.
"""

from __future__ import annotations

import json
import os
import threading
import uuid
from dataclasses import dataclass, field

from fastapi import FastAPI, HTTPException
from fastapi.responses import JSONResponse

from . import maze
from .algorithms import RunConfig, run_hg_dagger
from .expert import CostLedger, HierTrajectory, Segment

SCHEMA_VERSION = 1

Q_INSPECT_FULL = "inspect_full"
Q_LABEL_HI = "label_hi"
Q_INSPECT_LO = "inspect_lo"
Q_LABEL_LO = "label_lo"


def _cells(cells) -> list[list[int]]:
    return [list(map(int, cell)) for cell in cells]


def _traj_payload(spec, traj: HierTrajectory) -> dict:
    segments = []
    for seg in traj.segments:
        segments.append({
            "subgoal": int(seg.subgoal),
            "subgoal_name": maze.SUBGOAL_NAMES[seg.subgoal],
            "entry": list(map(int, seg.entry_state.agent)),
            "steps": [{"cell": list(map(int, s.agent)), "action": int(a),
                       "omega": int(w)} for (s, a, w) in seg.steps],
        })
    final = traj.final_state
    return {
        "grid": maze.to_text(spec),
        "segments": segments,
        "trail": _cells(sorted(final.trail)) if final is not None else [],
        "terminal": final.terminal if final is not None else None,
        "total_steps": traj.total_steps,
    }


def _segment_payload(spec, segment: Segment) -> dict:
    return {
        "grid": maze.to_text(spec),
        "subgoal": int(segment.subgoal),
        "subgoal_name": maze.SUBGOAL_NAMES[segment.subgoal],
        "entry": list(map(int, segment.entry_state.agent)),
        "steps": [{"cell": list(map(int, s.agent)), "action": int(a),
                   "omega": int(w)} for (s, a, w) in segment.steps],
        "end": list(map(int, segment.end_state.agent)),
    }


class SessionClosed(Exception):
    pass


class HumanExpertProxy:
    """Implements the expert interface by forwarding each operation as a
    session query and blocking until the answer arrives. Charges the ledger
    exactly like the synthetic oracle."""

    def __init__(self, session: "Session"):
        self.session = session
        self.ledger: CostLedger = session.ledger

    # -- wire plumbing ------------------------------------------------------

    def _ask(self, kind: str, payload: dict, answer_len: int):
        answer = self.session.post_query(kind, payload, answer_len)
        return answer

    # -- expert interface ---------------------------------------------------

    def inspect_full(self, spec, traj, mode="outcome") -> bool:
        self.ledger.charge("inspect", "full", traj.total_steps)
        body = self._ask(Q_INSPECT_FULL, _traj_payload(spec, traj), 1)
        return body["verdict"] == "pass"

    def label_hi(self, spec, tau_hi) -> list[int]:
        self.ledger.charge("label", "hi", len(tau_hi))
        payload = {
            "grid": maze.to_text(spec),
            "states": [{"cell": list(map(int, s.agent)),
                        "chosen_subgoal": int(g)} for (s, g) in tau_hi],
        }
        body = self._ask(Q_LABEL_HI, payload, len(tau_hi))
        return [int(g) for g in body["subgoals"]]

    def inspect_lo(self, spec, segment, mode="outcome") -> bool:
        self.ledger.charge("inspect", "lo", len(segment))
        body = self._ask(Q_INSPECT_LO, _segment_payload(spec, segment), 1)
        return body["verdict"] == "pass"

    def label_lo(self, spec, segment) -> list[tuple[int, int]]:
        self.ledger.charge("label", "lo", len(segment))
        body = self._ask(Q_LABEL_LO, _segment_payload(spec, segment),
                         len(segment))
        return [(int(s["action"]), int(s["omega"])) for s in body["steps"]]


def validate_answer(kind: str, expected_len: int, body: dict) -> str | None:
    """Shape-check an answer; returns an error message or None."""
    if kind in (Q_INSPECT_FULL, Q_INSPECT_LO):
        if body.get("verdict") not in ("pass", "fail"):
            return "verdict must be 'pass' or 'fail'"
        return None
    if kind == Q_LABEL_HI:
        subgoals = body.get("subgoals")
        if not isinstance(subgoals, list) or len(subgoals) != expected_len:
            return f"subgoals must be a list of length {expected_len}"
        if not all(isinstance(g, int) and 0 <= g < len(maze.SUBGOALS)
                   for g in subgoals):
            return "subgoals must be integers in 0..4"
        return None
    if kind == Q_LABEL_LO:
        steps = body.get("steps")
        if not isinstance(steps, list) or len(steps) != expected_len:
            return f"steps must be a list of length {expected_len}"
        for s in steps:
            if not isinstance(s, dict):
                return "each step must be an object"
            if not (isinstance(s.get("action"), int) and 0 <= s["action"] < 4):
                return "step.action must be an integer in 0..3"
            if s.get("omega") not in (0, 1):
                return "step.omega must be 0 or 1"
        return None
    return f"unknown query kind {kind}"


@dataclass
class Session:
    session_id: str
    config: RunConfig
    journal_path: str
    replay_answers: list = field(default_factory=list)

    def __post_init__(self):
        self.ledger = CostLedger(self.config.cost_model())
        self.cond = threading.Condition()
        self.pending: dict | None = None
        self._answer_body: dict | None = None
        self.seq = 0
        self.answered = 0
        self.closed = False
        self.done = False
        self.error: str | None = None
        self.progress: dict = {"episode": 0, "successes": []}
        self.result = None
        self.thread = threading.Thread(target=self._run, daemon=True)

    # -- driver side --------------------------------------------------------

    def _run(self):
        proxy = HumanExpertProxy(self)
        try:
            def on_episode(t, success):
                self.progress["episode"] = t + 1
                self.progress["successes"].append(int(success))

            result = run_hg_dagger(self.config, expert=proxy,
                                   on_episode=on_episode)
            self.result = result
        except SessionClosed:
            pass
        except Exception as exc:    # noqa: BLE001 - surfaced via /metrics
            self.error = f"{type(exc).__name__}: {exc}"
        finally:
            with self.cond:
                self.done = True
                self.cond.notify_all()

    def post_query(self, kind: str, payload: dict, answer_len: int) -> dict:
        """Called from the driver thread: publish a query, block for the
        answer (replayed answers short-circuit the wait)."""
        with self.cond:
            if self.closed:
                raise SessionClosed()
            self.seq += 1
            query = {"id": self.seq, "kind": kind, "expected_len": answer_len,
                     "schema_version": SCHEMA_VERSION, "payload": payload}
            if self.replay_answers:
                body = self.replay_answers.pop(0)
                err = validate_answer(kind, answer_len, body)
                if err:
                    raise RuntimeError(f"journal answer invalid: {err}")
                self.answered = self.seq
                return body
            self.pending = query
            self.cond.notify_all()
            while self._answer_body is None:
                if self.closed:
                    raise SessionClosed()
                self.cond.wait(timeout=0.5)
            body = self._answer_body
            self._answer_body = None
            self.pending = None
            return body

    # -- HTTP side ----------------------------------------------------------

    def wait_for_query(self, timeout: float) -> dict | None:
        deadline = timeout
        with self.cond:
            while self.pending is None and not self.done and deadline > 0:
                step = min(0.1, deadline)
                self.cond.wait(timeout=step)
                deadline -= step
            return self.pending

    def submit_answer(self, query_id: int, body: dict):
        """Returns (status_code, detail|ack)."""
        with self.cond:
            if self.pending is None:
                return 409, "no pending query"
            if query_id != self.pending["id"]:
                return 409, f"pending query is {self.pending['id']}"
            err = validate_answer(self.pending["kind"],
                                  self.pending["expected_len"], body)
            if err:
                return 422, err
            self._journal({"type": "answer", "query_id": query_id,
                           "kind": self.pending["kind"], "body": body})
            self.answered = query_id
            self._answer_body = body
            self.cond.notify_all()
            return 200, {"ok": True, "query_id": query_id,
                         "ledger_total": self.ledger.total_cost}

    def _journal(self, record: dict):
        with open(self.journal_path, "a") as f:
            f.write(json.dumps(record) + "\n")

    def close(self):
        with self.cond:
            self.closed = True
            self.cond.notify_all()

    def metrics(self) -> dict:
        successes = self.progress["successes"]
        trailing = (sum(successes[-100:]) / len(successes[-100:])
                    if successes else 0.0)
        out = {
            "session_id": self.session_id,
            "episode": self.progress["episode"],
            "trailing_success": trailing,
            "done": self.done,
            "error": self.error,
            "answered_queries": self.answered,
            "ledger": {
                "total": self.ledger.total_cost,
                "by_op": {f"{op}:{level}": self.ledger.costs[(op, level)]
                          for (op, level) in self.ledger.costs},
                "counts": {f"{op}:{level}": self.ledger.counts[(op, level)]
                           for (op, level) in self.ledger.counts},
            },
        }
        if self.result is not None:
            out["dataset_sizes"] = self.result.dataset_sizes
        return out


_CONFIG_FIELDS = {f.name for f in RunConfig.__dataclass_fields__.values()}


def _session_config(body: dict) -> RunConfig:
    if body.get("expert_mode") != "human":
        raise ValueError("expert_mode must be 'human' for a session")
    run = dict(body.get("run", {}))
    unknown = set(run) - _CONFIG_FIELDS
    if unknown:
        raise ValueError(f"unknown run keys: {sorted(unknown)}")
    cfg = RunConfig(**run)
    if cfg.algorithm != "hg_dagger" or cfg.environment != "maze":
        raise ValueError("human sessions support hg_dagger on maze")
    if cfg.warm_start != 0:
        raise ValueError("human sessions require warm_start = 0 "
                         "(demonstrations are not collected over the wire)")
    return cfg


def create_app(data_dir: str) -> FastAPI:
    os.makedirs(data_dir, exist_ok=True)
    app = FastAPI(title="hierg expert service")
    sessions: dict[str, Session] = {}

    def _get(session_id: str) -> Session:
        if session_id not in sessions:
            restored = _restore(session_id)
            if restored is None:
                raise HTTPException(status_code=404, detail="unknown session")
            sessions[session_id] = restored
        return sessions[session_id]

    def _restore(session_id: str) -> Session | None:
        path = os.path.join(data_dir, f"{session_id}.jsonl")
        if not os.path.exists(path):
            return None
        config = None
        answers = []
        with open(path) as f:
            for line in f:
                rec = json.loads(line)
                if rec["type"] == "created":
                    config = RunConfig(**rec["config"])
                elif rec["type"] == "answer":
                    answers.append(rec["body"])
        if config is None:
            return None
        session = Session(session_id, config,
                          journal_path=path, replay_answers=answers)
        session.thread.start()
        return session

    @app.post("/sessions", status_code=201)
    def create_session(body: dict):
        try:
            cfg = _session_config(body)
        except (ValueError, TypeError) as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        session_id = uuid.uuid4().hex[:12]
        path = os.path.join(data_dir, f"{session_id}.jsonl")
        session = Session(session_id, cfg, journal_path=path)
        from dataclasses import asdict
        with open(path, "w") as f:
            f.write(json.dumps({"type": "created",
                                "config": asdict(cfg)}) + "\n")
        sessions[session_id] = session
        session.thread.start()
        return {"session_id": session_id, "schema_version": SCHEMA_VERSION}

    @app.get("/sessions/{session_id}/query")
    def next_query(session_id: str, timeout: float = 30.0):
        session = _get(session_id)
        query = session.wait_for_query(timeout)
        if query is None:
            return JSONResponse(status_code=204, content=None)
        return query

    @app.post("/sessions/{session_id}/answer")
    def answer(session_id: str, body: dict):
        session = _get(session_id)
        query_id = body.get("query_id")
        if not isinstance(query_id, int):
            raise HTTPException(status_code=422, detail="query_id required")
        status, detail = session.submit_answer(query_id, body.get("answer", {}))
        if status != 200:
            raise HTTPException(status_code=status, detail=detail)
        return detail

    @app.get("/sessions/{session_id}/metrics")
    def metrics(session_id: str):
        return _get(session_id).metrics()

    @app.on_event("shutdown")
    def _shutdown():
        for session in sessions.values():
            session.close()

    return app
