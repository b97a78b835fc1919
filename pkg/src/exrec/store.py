"""Durable single-directory store: append-only JSONL event log plus
atomic JSON snapshots for model parameters.

Every state change appends one log record (flushed immediately), so a hard
kill loses at most an in-flight request. Parameter matrices live in
per-user snapshot files written via tmp+rename; the log references them.
Restart = load snapshots, replay log.
"""

from __future__ import annotations

import json
import os
import threading
import time
from dataclasses import dataclass, field
from typing import Iterator

from .errors import StateError


def _atomic_write_json(path: str, doc: dict) -> None:
    tmp = f"{path}.tmp.{os.getpid()}.{threading.get_ident()}"
    with open(tmp, "w") as fh:
        json.dump(doc, fh)
        fh.flush()
        os.fsync(fh.fileno())
    os.replace(tmp, path)


@dataclass
class StoredReview:
    review_id: str
    user_id: str
    created_at: float
    window_ids: list[int]
    top_k: list[list]
    z: float
    theta: float
    step_index: int
    status: str = "pending"
    corrected_id: int | None = None
    resolver: str | None = None
    resolved_at: float | None = None

    def to_json(self) -> dict:
        return {
            "review_id": self.review_id,
            "user_id": self.user_id,
            "created_at": self.created_at,
            "window_ids": self.window_ids,
            "top_k": [[int(i), float(p)] for i, p in self.top_k],
            "z": self.z,
            "theta": self.theta,
            "step_index": self.step_index,
            "status": self.status,
            "resolution": None if self.status == "pending" else {
                "corrected_id": self.corrected_id,
                "resolver": self.resolver,
                "resolved_at": self.resolved_at,
            },
        }


@dataclass
class StoredUser:
    user_id: str
    profile: dict[str, float]
    created_at: float
    history: list[dict] = field(default_factory=list)   # {item_id, day, completed}
    steps: int = 0
    queries: int = 0
    corrections: int = 0


class Store:
    """Crash-safe state for users, events, reviews, and counters."""

    LOG_NAME = "store.jsonl"

    def __init__(self, directory: str):
        self.directory = directory
        os.makedirs(directory, exist_ok=True)
        os.makedirs(os.path.join(directory, "sessions"), exist_ok=True)
        self._lock = threading.Lock()
        self._log_path = os.path.join(directory, self.LOG_NAME)
        self.users: dict[str, StoredUser] = {}
        self.reviews: dict[str, StoredReview] = {}
        self._replay()
        self._log = open(self._log_path, "a")

    # -- log plumbing ------------------------------------------------------

    def _records(self) -> Iterator[dict]:
        if not os.path.exists(self._log_path):
            return
        with open(self._log_path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                try:
                    yield json.loads(line)
                except json.JSONDecodeError:
                    # torn tail write from a crash; ignore the partial record
                    return

    def _replay(self) -> None:
        for rec in self._records():
            kind = rec.get("type")
            if kind == "user_created":
                self.users[rec["user_id"]] = StoredUser(
                    user_id=rec["user_id"], profile=rec["profile"],
                    created_at=rec["ts"])
            elif kind == "event_appended":
                self.users[rec["user_id"]].history.append(
                    {"item_id": rec["item_id"], "day": rec["day"],
                     "completed": rec["completed"]})
            elif kind == "decision":
                self.users[rec["user_id"]].steps += 1
                if rec["kind"] == "queried":
                    self.users[rec["user_id"]].queries += 1
            elif kind == "review_created":
                self.reviews[rec["review_id"]] = StoredReview(
                    review_id=rec["review_id"], user_id=rec["user_id"],
                    created_at=rec["ts"], window_ids=rec["window_ids"],
                    top_k=rec["top_k"], z=rec["z"], theta=rec["theta"],
                    step_index=rec["step_index"])
            elif kind == "review_resolved":
                review = self.reviews[rec["review_id"]]
                review.status = "resolved"
                review.corrected_id = rec["corrected_id"]
                review.resolver = rec.get("resolver")
                review.resolved_at = rec["ts"]
                user = self.users[review.user_id]
                user.corrections += 1

    def _append(self, record: dict) -> None:
        record["ts"] = record.get("ts", time.time())
        with self._lock:
            self._log.write(json.dumps(record) + "\n")
            self._log.flush()
            os.fsync(self._log.fileno())

    # -- mutations ---------------------------------------------------------

    def create_user(self, user_id: str, profile: dict[str, float]) -> StoredUser:
        now = time.time()
        user = StoredUser(user_id=user_id, profile=profile, created_at=now)
        self.users[user_id] = user
        self._append({"type": "user_created", "user_id": user_id,
                      "profile": profile, "ts": now})
        return user

    def append_event(self, user_id: str, item_id: int, day: int, completed: bool) -> None:
        self.users[user_id].history.append(
            {"item_id": item_id, "day": day, "completed": completed})
        self._append({"type": "event_appended", "user_id": user_id,
                      "item_id": item_id, "day": day, "completed": completed})

    def record_decision(self, user_id: str, kind: str, z: float) -> None:
        user = self.users[user_id]
        user.steps += 1
        if kind == "queried":
            user.queries += 1
        self._append({"type": "decision", "user_id": user_id, "kind": kind, "z": z})

    def create_review(self, review: StoredReview) -> None:
        self.reviews[review.review_id] = review
        self._append({"type": "review_created", "review_id": review.review_id,
                      "user_id": review.user_id, "window_ids": review.window_ids,
                      "top_k": [[int(i), float(p)] for i, p in review.top_k],
                      "z": review.z, "theta": review.theta,
                      "step_index": review.step_index, "ts": review.created_at})

    def resolve_review(self, review_id: str, corrected_id: int,
                       resolver: str | None) -> StoredReview:
        review = self.reviews[review_id]
        if review.status != "pending":
            raise StateError(f"review {review_id} already resolved")
        now = time.time()
        review.status = "resolved"
        review.corrected_id = corrected_id
        review.resolver = resolver
        review.resolved_at = now
        self.users[review.user_id].corrections += 1
        self._append({"type": "review_resolved", "review_id": review_id,
                      "corrected_id": corrected_id, "resolver": resolver, "ts": now})
        return review

    # -- queries -----------------------------------------------------------

    def pending_reviews(self) -> list[StoredReview]:
        pending = [r for r in self.reviews.values() if r.status == "pending"]
        return sorted(pending, key=lambda r: (r.created_at, r.review_id))

    def pending_for_user(self, user_id: str) -> StoredReview | None:
        for review in self.pending_reviews():
            if review.user_id == user_id:
                return review
        return None

    # -- parameter snapshots -------------------------------------------------

    def session_path(self, user_id: str) -> str:
        return os.path.join(self.directory, "sessions", f"{user_id}.json")

    def save_session_params(self, user_id: str, doc: dict) -> None:
        _atomic_write_json(self.session_path(user_id), doc)

    def load_session_params(self, user_id: str) -> dict | None:
        path = self.session_path(user_id)
        if not os.path.exists(path):
            return None
        with open(path) as fh:
            return json.load(fh)

    def close(self) -> None:
        with self._lock:
            self._log.close()
