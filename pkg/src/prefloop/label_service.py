"""HTTP labeling service: serves trajectory pairs to the browser console,
accepts Left/Right/Not-Sure verdicts, and persists canonical preference
records.

Presentation order is randomized per serve and undone before persisting, so
stored verdicts always reference the canonical pair order. Completed records
hit an append-only write-ahead log before the submission is acknowledged;
restarting the service replays the log.
"""

import os
import threading
from dataclasses import dataclass
from datetime import datetime, timezone

import numpy as np

from .envs import LINK_LENGTH, N_JOINTS
from .errors import DataError, StorageError, UsageError
from .trajectories import (PreferenceRecord, Trajectory, Verdict,
                           load_preferences, preference_from_record,
                           preference_to_record, read_jsonl, save_preferences,
                           write_jsonl)

LEASE_SECONDS = 600.0


@dataclass
class LabelSession:
    session_id: str
    labeler_id: str
    task_filter: str = None
    served: int = 0
    completed: int = 0


@dataclass
class _Lease:
    session_id: str
    expires_at: float
    swapped: bool


@dataclass
class _PendingPair:
    pair_id: str
    task_id: str
    left_id: str
    right_id: str


def playback_payload(traj: Trajectory) -> dict:
    """Client-side rendering data: joint angles in radians plus object states."""
    return {
        "trajectory_id": traj.trajectory_id,
        "task_id": traj.task_id,
        "length": traj.length,
        "link_lengths": [LINK_LENGTH] * N_JOINTS,
        "joint_angles": traj.q_radians().tolist(),
        "object_states": traj.object_states.tolist(),
    }


class LabelService:
    """In-process core behind the HTTP endpoints; thread-safe."""

    def __init__(self, trajectories, pairs, wal_path, pipeline_iteration: int = 0,
                 lease_seconds: float = LEASE_SECONDS, seed: int = 0,
                 now_fn=None, frames_per_second: float = 30.0):
        self._by_id = {t.trajectory_id: t for t in trajectories}
        self._pending = {}
        for k, (left_id, right_id) in enumerate(pairs):
            if left_id not in self._by_id or right_id not in self._by_id:
                raise DataError(f"pair ({left_id}, {right_id}) references unknown trajectory")
            task_id = self._by_id[left_id].task_id
            pair_id = f"pair-{pipeline_iteration}-{k:06d}"
            self._pending[pair_id] = _PendingPair(pair_id, task_id, left_id, right_id)
        self.wal_path = wal_path
        self.pipeline_iteration = pipeline_iteration
        self.lease_seconds = lease_seconds
        self.frames_per_second = frames_per_second
        self._rng = np.random.default_rng(np.random.SeedSequence(seed))
        self._now = now_fn if now_fn is not None else _wall_seconds
        self._lock = threading.Lock()
        self._sessions = {}
        self._leases = {}          # pair_id -> _Lease
        self._completed = {}       # pair_id -> PreferenceRecord
        self._session_counter = 0
        self._recover_from_wal()

    # -- session lifecycle ----------------------------------------------------

    def create_session(self, labeler_id: str, task_filter=None) -> LabelSession:
        if task_filter is not None and not any(
                p.task_id == task_filter for p in self._pending.values()):
            raise DataError(f"no pairs exist for task filter {task_filter!r}")
        with self._lock:
            self._session_counter += 1
            session = LabelSession(
                session_id=f"session-{self._session_counter:04d}",
                labeler_id=labeler_id, task_filter=task_filter)
            self._sessions[session.session_id] = session
            return session

    def _session(self, session_id: str) -> LabelSession:
        session = self._sessions.get(session_id)
        if session is None:
            raise UsageError(f"unknown session {session_id!r}")
        return session

    def next_pair(self, session_id: str):
        """Assign an unlabeled pair (randomized presentation order) or None."""
        with self._lock:
            session = self._session(session_id)
            now = self._now()
            for pair in self._pending.values():
                if session.task_filter and pair.task_id != session.task_filter:
                    continue
                if pair.pair_id in self._completed:
                    continue
                lease = self._leases.get(pair.pair_id)
                if lease is not None and lease.expires_at > now:
                    continue
                swapped = bool(self._rng.integers(0, 2))
                self._leases[pair.pair_id] = _Lease(
                    session_id=session_id,
                    expires_at=now + self.lease_seconds,
                    swapped=swapped)
                session.served += 1
                return self._payload(pair, swapped)
            return None

    def _payload(self, pair: _PendingPair, swapped: bool) -> dict:
        first, second = ((pair.right_id, pair.left_id) if swapped
                         else (pair.left_id, pair.right_id))
        return {
            "pair_id": pair.pair_id,
            "task_id": pair.task_id,
            "left": playback_payload(self._by_id[first]),
            "right": playback_payload(self._by_id[second]),
            "frames_per_second": self.frames_per_second,
        }

    def submit(self, session_id: str, pair_id: str, verdict) -> PreferenceRecord:
        verdict = Verdict(verdict)
        with self._lock:
            session = self._session(session_id)
            pair = self._pending.get(pair_id)
            if pair is None:
                raise DataError(f"unknown pair {pair_id!r}")
            lease = self._leases.get(pair_id)
            existing = self._completed.get(pair_id)
            if existing is not None:
                if (existing.labeler_id == session.labeler_id
                        and lease is not None
                        and self._canonical(verdict, lease.swapped) == existing.verdict):
                    return existing  # idempotent duplicate
                raise UsageError(
                    f"pair {pair_id} already labeled"
                    + (" with a different verdict" if existing else ""))
            if lease is None or lease.session_id != session_id:
                raise UsageError(f"pair {pair_id} is not assigned to session {session_id}")
            if lease.expires_at <= self._now():
                del self._leases[pair_id]
                raise UsageError(f"lease on pair {pair_id} expired; fetch it again")
            record = PreferenceRecord(
                pair_id=pair_id, task_id=pair.task_id, left_id=pair.left_id,
                right_id=pair.right_id,
                verdict=self._canonical(verdict, lease.swapped),
                labeler_id=session.labeler_id,
                timestamp=datetime.now(timezone.utc).isoformat(),
                pipeline_iteration=self.pipeline_iteration)
            # Write-ahead: the record must be durable before we acknowledge.
            write_jsonl(self.wal_path, [preference_to_record(record)],
                        "preference", append=True)
            self._completed[pair_id] = record
            session.completed += 1
            return record

    @staticmethod
    def _canonical(verdict: Verdict, swapped: bool) -> Verdict:
        if not swapped or verdict == Verdict.NOT_SURE:
            return verdict
        return Verdict.RIGHT if verdict == Verdict.LEFT else Verdict.LEFT

    # -- persistence ------------------------------------------------------------

    def _recover_from_wal(self):
        if not os.path.exists(self.wal_path):
            return
        for where, rec in read_jsonl(self.wal_path, "preference"):
            record = preference_from_record(rec, where)
            if record.pair_id not in self._pending:
                raise StorageError(f"{where}: log references unknown pair {record.pair_id}")
            self._completed[record.pair_id] = record

    def stats(self) -> dict:
        with self._lock:
            by_verdict = {v.value: 0 for v in Verdict}
            for record in self._completed.values():
                by_verdict[record.verdict.value] += 1
            by_labeler = {}
            for record in self._completed.values():
                by_labeler[record.labeler_id] = by_labeler.get(record.labeler_id, 0) + 1
            return {
                "pending": len(self._pending) - len(self._completed),
                "completed": len(self._completed),
                "by_verdict": by_verdict,
                "by_labeler": by_labeler,
                "sessions": len(self._sessions),
            }

    def export_dataset(self, path) -> dict:
        """Flush completed records to a canonical preferences file."""
        with self._lock:
            records = sorted(self._completed.values(), key=lambda r: r.pair_id)
            save_preferences(path, records)
            counts = {v.value: 0 for v in Verdict}
            for record in records:
                counts[record.verdict.value] += 1
            return {"path": str(path), "counts": counts, "total": len(records)}


def _wall_seconds() -> float:
    import time
    return time.time()


def build_app(service: LabelService, ui_dir=None):
    """FastAPI wiring over a LabelService."""
    from typing import Optional

    from fastapi import FastAPI, HTTPException, Response
    from fastapi.staticfiles import StaticFiles
    from pydantic import BaseModel

    class SessionRequest(BaseModel):
        labeler_id: str
        task_filter: Optional[str] = None

    class LabelRequest(BaseModel):
        pair_id: str
        verdict: str

    app = FastAPI(title="prefloop labeler")

    @app.post("/sessions")
    def create_session(body: SessionRequest):
        try:
            session = service.create_session(body.labeler_id, body.task_filter)
        except DataError as exc:
            raise HTTPException(status_code=400, detail=str(exc))
        return {"session_id": session.session_id}

    @app.get("/sessions/{session_id}/next")
    def next_pair(session_id: str):
        try:
            payload = service.next_pair(session_id)
        except UsageError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        if payload is None:
            return Response(status_code=204)
        return payload

    @app.post("/sessions/{session_id}/labels")
    def submit(session_id: str, body: LabelRequest):
        try:
            record = service.submit(session_id, body.pair_id, body.verdict)
        except ValueError as exc:
            raise HTTPException(status_code=422, detail=str(exc))
        except UsageError as exc:
            message = str(exc)
            if "expired" in message:
                raise HTTPException(status_code=410, detail=message)
            if "already labeled" in message:
                raise HTTPException(status_code=409, detail=message)
            raise HTTPException(status_code=404, detail=message)
        except DataError as exc:
            raise HTTPException(status_code=404, detail=str(exc))
        return {"pair_id": record.pair_id, "verdict": record.verdict.value,
                "labeler_id": record.labeler_id}

    @app.get("/stats")
    def stats():
        return service.stats()

    if ui_dir and os.path.isdir(ui_dir):
        app.mount("/", StaticFiles(directory=str(ui_dir), html=True), name="ui")
    return app
