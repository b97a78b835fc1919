"""Long-running HTTP service: recommendation sessions, expert review queue,
event ingestion, and checkpoint persistence.

The service loads a trained bundle (checkpoint, fitted margin distribution,
exercise catalog, training-population profiles and histories for cold
start) and keeps per-user personalized sessions. All state changes are
durable through the append-only store; a kill at any point restores
sessions, pending reviews, and model outputs on restart.

Zero-dependency HTTP: the stdlib threading server with per-user locks. One
lock serializes a user's step/resolve path; the review queue has a single
writer; cross-user work never contends on model state.
"""

from __future__ import annotations

import hashlib
import json
import os
import re
import threading
import time
import uuid
from dataclasses import dataclass, field
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer
from urllib.parse import parse_qs, urlparse

import numpy as np

from . import active, coldstart, data, model, nn
from .errors import ConfigError, InputError, StateError
from .store import Store, StoredReview
from .uncertainty import MarginalDistribution

ENV_PREFIX = "EXREC_"


@dataclass
class ServiceConfig:
    port: int = 8423
    data_dir: str = "exrec-data"
    bundle_dir: str = "exrec-bundle"
    alpha_level: float = 0.01
    finetune_lr: float = 1e-4
    finetune_steps: int = 5
    budget: int | None = None
    token: str | None = None
    similar_k: int = 3
    coldstart_lr: float = 1e-4
    retrain_epochs: int = 30
    retrain_lr: float = 3e-3

    @classmethod
    def load(cls, path: str | None = None, env: dict | None = None) -> "ServiceConfig":
        """Config file keys, overridden by EXREC_* environment variables."""
        doc: dict = {}
        if path:
            with open(path) as fh:
                doc = json.load(fh)
        env = dict(os.environ if env is None else env)
        for key in ("port", "data_dir", "bundle_dir", "alpha_level", "finetune_lr",
                    "finetune_steps", "budget", "token", "similar_k",
                    "coldstart_lr", "retrain_epochs", "retrain_lr"):
            env_key = ENV_PREFIX + key.upper()
            if env_key in env:
                doc[key] = env[env_key]
        cfg = cls()
        for key, value in doc.items():
            if not hasattr(cfg, key):
                raise ConfigError(f"unknown config key '{key}'")
            current = getattr(cfg, key)
            if key in ("budget", "token") and value in (None, "", "none"):
                value = None
            elif isinstance(current, bool):
                value = bool(value)
            elif isinstance(current, int) or key in ("budget", "finetune_steps",
                                                     "port", "similar_k",
                                                     "retrain_epochs"):
                value = int(value) if value is not None else None
            elif isinstance(current, float):
                value = float(value)
            setattr(cfg, key, value)
        return cfg


@dataclass
class Bundle:
    """Everything the service needs from training, loaded read-only."""

    params: nn.Params
    model_config: model.ModelConfig
    distribution: MarginalDistribution
    item_ids: list[int]
    item_names: dict[int, str]
    taxonomy: dict[int, data.TaxonomyEntry] | None
    item_profile_matrix: np.ndarray            # by model index, row 0 zeros
    profile_fields: list[str]
    demographic_fields: list[str]
    stats: data.ProfileStats
    train_profiles: dict[str, np.ndarray]
    train_histories: dict[str, list[int]]      # raw item ids
    checkpoint_raw: dict = field(default_factory=dict)

    @property
    def vocab(self) -> data.VocabMap:
        return data.VocabMap(self.item_ids)

    def config_hash(self) -> str:
        blob = json.dumps(self.checkpoint_raw.get("config", {}), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:16]


def save_bundle(directory: str, params: nn.Params, mcfg: model.ModelConfig,
                dist: MarginalDistribution | None, corpus: data.Corpus,
                stats: data.ProfileStats) -> None:
    os.makedirs(directory, exist_ok=True)
    model.save_checkpoint(os.path.join(directory, "checkpoint.json"), params, mcfg)
    if dist is not None:
        dist.save(os.path.join(directory, "distribution.json"))
    items = []
    for item in sorted(corpus.item_ids):
        entry = corpus.taxonomy.get(item) if corpus.taxonomy else None
        items.append({
            "id": item,
            "name": corpus.item_names.get(item, f"item {item}"),
            "difficulty": entry.difficulty if entry else None,
            "path": list(entry.path) if entry else [],
            "alt_group": entry.alt_group if entry else None,
            "profile": (corpus.item_profiles[item].tolist()
                        if corpus.item_profiles else None),
        })
    with open(os.path.join(directory, "catalog.json"), "w") as fh:
        json.dump({"items": items}, fh)
    with open(os.path.join(directory, "profiles.json"), "w") as fh:
        json.dump({
            "fields": corpus.schema.fields,
            "demographic_fields": corpus.schema.demographic,
            "stats": stats.to_json(),
            "users": {u: corpus.profiles[u].tolist() for u in corpus.users()},
        }, fh)
    with open(os.path.join(directory, "histories.json"), "w") as fh:
        json.dump({u: corpus.history(u) for u in corpus.users()}, fh)


def load_bundle(directory: str) -> Bundle:
    with open(os.path.join(directory, "checkpoint.json")) as fh:
        checkpoint_raw = json.load(fh)
    params, mcfg = model.params_from_json(checkpoint_raw)
    dist = MarginalDistribution.load(os.path.join(directory, "distribution.json"))
    if dist.theta is None:
        raise ConfigError("bundle distribution has no threshold; refit with a level")
    with open(os.path.join(directory, "catalog.json")) as fh:
        catalog = json.load(fh)
    items = catalog["items"]
    item_ids = [entry["id"] for entry in items]
    taxonomy = None
    if any(entry["path"] for entry in items):
        taxonomy = {entry["id"]: data.TaxonomyEntry(
            name=entry["name"], difficulty=entry["difficulty"] or 0.0,
            path=tuple(entry["path"]), alt_group=entry.get("alt_group"))
            for entry in items}
    vocab = data.VocabMap(item_ids)
    dim = mcfg.item_profile_dim
    mat = np.zeros((vocab.n_classes, dim))
    for entry in items:
        if entry.get("profile") is not None:
            mat[vocab.to_index(entry["id"])] = np.array(entry["profile"])
    with open(os.path.join(directory, "profiles.json")) as fh:
        profdoc = json.load(fh)
    with open(os.path.join(directory, "histories.json")) as fh:
        histories = {u: list(map(int, seq)) for u, seq in json.load(fh).items()}
    return Bundle(
        params=params,
        model_config=mcfg,
        distribution=dist,
        item_ids=item_ids,
        item_names={entry["id"]: entry["name"] for entry in items},
        taxonomy=taxonomy,
        item_profile_matrix=mat,
        profile_fields=profdoc["fields"],
        demographic_fields=profdoc["demographic_fields"],
        stats=data.ProfileStats.from_json(profdoc["stats"]),
        train_profiles={u: np.array(v) for u, v in profdoc["users"].items()},
        train_histories=histories,
        checkpoint_raw=checkpoint_raw,
    )


class RecommenderService:
    """Application core behind the HTTP layer; usable directly in tests."""

    def __init__(self, config: ServiceConfig, bundle: Bundle):
        self.config = config
        self.bundle = bundle
        self.store = Store(config.data_dir)
        self._sessions: dict[str, active.SessionState] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._locks_guard = threading.Lock()
        self._retrain_lock = threading.Lock()
        self._retrain_running = False
        self._retrain_jobs: list[dict] = []

    # -- helpers -----------------------------------------------------------

    def _user_lock(self, user_id: str) -> threading.Lock:
        with self._locks_guard:
            if user_id not in self._locks:
                self._locks[user_id] = threading.Lock()
            return self._locks[user_id]

    def _profile_vector(self, profile: dict[str, float]) -> np.ndarray:
        raw = np.array([profile.get(f, np.nan) if profile.get(f) is not None
                        else np.nan for f in self.bundle.stats.fields], dtype=np.float64)
        return np.where(np.isnan(raw), self.bundle.stats.mean, raw)

    def _validate_profile(self, payload: dict) -> dict[str, float]:
        if not isinstance(payload, dict):
            raise InputError("profile must be a JSON object")
        unknown = sorted(set(payload) - set(self.bundle.profile_fields))
        if unknown:
            raise InputError(f"unknown profile fields: {', '.join(unknown)}")
        clean: dict[str, float] = {}
        bad: list[str] = []
        for name, value in payload.items():
            if value is None:
                continue
            if not isinstance(value, (int, float)) or isinstance(value, bool):
                bad.append(name)
            else:
                clean[name] = float(value)
        if bad:
            raise InputError(f"non-numeric profile fields: {', '.join(bad)}")
        return clean

    def _coldstart_params(self, profile_vec: np.ndarray, seed: int = 0) -> tuple[nn.Params, bool]:
        train = self.bundle.train_profiles
        if len(train) >= self.config.similar_k:
            fields = self.bundle.stats.fields
            field_idx = [self.bundle.profile_fields.index(f) for f in fields]
            index = coldstart.ProfileIndex.build(
                {u: vec[field_idx] for u, vec in train.items()}, self.bundle.stats)
            neighbors = coldstart.similar_users(index, profile_vec, self.config.similar_k)
            vocab = self.bundle.vocab
            samples = []
            for u in neighbors:
                seq = [vocab.to_index(i) for i in self.bundle.train_histories.get(u, [])]
                neighbor_vec = train[u][field_idx]
                neighbor_vec = np.where(np.isnan(neighbor_vec),
                                        self.bundle.stats.mean, neighbor_vec)
                w = self.bundle.model_config.window
                for t in range(1, len(seq)):
                    ids = seq[max(0, t - w):t]
                    ids = [0] * (w - len(ids)) + ids
                    arr = np.array(ids, dtype=np.int64)
                    samples.append(model.WindowSample(
                        item_ids=arr,
                        item_profiles=self.bundle.item_profile_matrix[arr],
                        user_profile=neighbor_vec,
                        target=seq[t]))
            init = coldstart.init_for_new_user(
                self.bundle.params, self.bundle.model_config, samples,
                lr=self.config.coldstart_lr, epochs=1, seed=seed)
            return init.params, init.used_fallback
        return {k: w.copy() for k, w in self.bundle.params.items()}, True

    def _session(self, user_id: str) -> active.SessionState:
        if user_id in self._sessions:
            return self._sessions[user_id]
        stored = self.store.users.get(user_id)
        if stored is None:
            raise KeyError(user_id)
        doc = self.store.load_session_params(user_id)
        if doc is None:
            raise StateError(f"no parameter snapshot for user {user_id}")
        params, _ = model.params_from_json(doc)
        vocab = self.bundle.vocab
        session = active.SessionState(
            user_id=user_id,
            params=params,
            config=self.bundle.model_config,
            user_profile=self._profile_vector(stored.profile),
            item_profiles=self.bundle.item_profile_matrix,
            distribution=self.bundle.distribution,
            history=[vocab.to_index(e["item_id"]) for e in stored.history
                     if e["completed"]],
            budget=self.config.budget,
            finetune_lr=self.config.finetune_lr,
            finetune_steps=self.config.finetune_steps,
            steps=stored.steps,
            queries=stored.queries,
            corrections=stored.corrections,
        )
        self._sessions[user_id] = session
        return session

    def _item_view(self, index: int) -> dict:
        item = self.bundle.vocab.to_item(index)
        entry = self.bundle.taxonomy.get(item) if self.bundle.taxonomy else None
        return {
            "id": item,
            "name": self.bundle.item_names.get(item, f"item {item}"),
            "difficulty": entry.difficulty if entry else None,
        }

    def _review_view(self, review: StoredReview) -> dict:
        doc = review.to_json()
        doc["history"] = [self._item_view(i) if i else None
                          for i in review.window_ids]
        doc["candidates"] = [dict(self._item_view(i), probability=p)
                             for i, p in review.top_k]
        stored = self.store.users.get(review.user_id)
        if stored:
            doc["user_summary"] = {f: stored.profile.get(f)
                                   for f in self.bundle.demographic_fields}
        return doc

    # -- operations --------------------------------------------------------

    def create_user(self, payload: dict) -> dict:
        profile = self._validate_profile(payload)
        user_id = f"u-{uuid.uuid4().hex[:12]}"
        vec = self._profile_vector(profile)
        params, fallback = self._coldstart_params(vec)
        self.store.create_user(user_id, profile)
        self.store.save_session_params(
            user_id, model.params_to_json(params, self.bundle.model_config))
        return {"user_id": user_id, "coldstart_fallback": fallback}

    def next_for(self, user_id: str) -> dict:
        with self._user_lock(user_id):
            session = self._session(user_id)
            pending = self.store.pending_for_user(user_id)
            if pending is not None:
                return {"status": "pending_expert", "review_id": pending.review_id,
                        "z": pending.z, "theta": pending.theta,
                        "top_k": [dict(self._item_view(i), probability=p)
                                  for i, p in pending.top_k]}
            decision = active.step(session)
            self.store.record_decision(user_id, decision.kind, decision.z)
            top = [dict(self._item_view(i), probability=p) for i, p in decision.top_k]
            if decision.kind == "auto":
                best = decision.recommendation
                return {"status": "auto",
                        "recommendation": dict(self._item_view(best[0]),
                                               probability=best[1]),
                        "top_k": top, "z": decision.z, "theta": session.theta}
            ticket = decision.ticket
            review = StoredReview(
                review_id=f"r-{uuid.uuid4().hex[:12]}",
                user_id=user_id,
                created_at=time.time(),
                window_ids=ticket.window_ids,
                top_k=ticket.top_k,
                z=ticket.z,
                theta=ticket.theta,
                step_index=ticket.step_index,
            )
            self.store.create_review(review)
            return {"status": "pending_expert", "review_id": review.review_id,
                    "top_k": top, "z": decision.z, "theta": session.theta}

    def list_reviews(self, status: str = "pending") -> list[dict]:
        if status == "pending":
            reviews = self.store.pending_reviews()
        elif status == "resolved":
            reviews = sorted((r for r in self.store.reviews.values()
                              if r.status == "resolved"),
                             key=lambda r: (r.created_at, r.review_id))
        else:
            raise InputError(f"unknown review status '{status}'")
        return [self._review_view(r) for r in reviews]

    def get_review(self, review_id: str) -> dict:
        review = self.store.reviews.get(review_id)
        if review is None:
            raise KeyError(review_id)
        return self._review_view(review)

    def resolve_review(self, review_id: str, payload: dict,
                       resolver: str | None = None) -> dict:
        review = self.store.reviews.get(review_id)
        if review is None:
            raise KeyError(review_id)
        corrected = payload.get("corrected_exercise_id")
        if not isinstance(corrected, int) or isinstance(corrected, bool):
            raise InputError("corrected_exercise_id must be an integer")
        vocab = self.bundle.vocab
        try:
            corrected_index = vocab.to_index(corrected)
        except InputError:
            raise InputError(f"exercise id {corrected} not in vocabulary") from None
        with self._user_lock(review.user_id):
            if review.status != "pending":
                raise StateError(f"review {review_id} already resolved")
            session = self._session(review.user_id)
            ticket = active.ReviewTicket(
                ticket_id=review.review_id, user_id=review.user_id,
                step_index=review.step_index, window_ids=review.window_ids,
                top_k=[(int(i), float(p)) for i, p in review.top_k],
                z=review.z, theta=review.theta)
            active.resolve(session, ticket, corrected_index)
            stored = self.store.users[review.user_id]
            last_day = max((e["day"] for e in stored.history), default=-1)
            self.store.resolve_review(review_id, corrected, resolver)
            self.store.append_event(review.user_id, corrected, last_day + 1, True)
            self.store.save_session_params(
                review.user_id,
                model.params_to_json(session.params, self.bundle.model_config))
            return self._review_view(self.store.reviews[review_id])

    def append_user_event(self, user_id: str, payload: dict) -> None:
        if user_id not in self.store.users:
            raise KeyError(user_id)
        item = payload.get("exercise_id")
        day = payload.get("day")
        completed = payload.get("completed", True)
        if not isinstance(item, int) or isinstance(item, bool):
            raise InputError("exercise_id must be an integer")
        if not isinstance(day, int) or isinstance(day, bool):
            raise InputError("day must be an integer")
        index = self.bundle.vocab.to_index(item)   # raises for unknown ids
        with self._user_lock(user_id):
            self.store.append_event(user_id, item, day, bool(completed))
            session = self._sessions.get(user_id)
            if session is not None and completed:
                session.history.append(index)

    def model_metadata(self) -> dict:
        return {
            "format_version": self.bundle.checkpoint_raw.get("format_version"),
            "config_hash": self.bundle.config_hash(),
            "n_classes": self.bundle.model_config.n_classes,
            "window": self.bundle.model_config.window,
            "theta": self.bundle.distribution.theta,
            "alpha_level": self.bundle.distribution.level,
            "users": len(self.store.users),
            "pending_reviews": len(self.store.pending_reviews()),
        }

    def exercises_catalog(self) -> list[dict]:
        out = []
        for item in self.bundle.item_ids:
            entry = self.bundle.taxonomy.get(item) if self.bundle.taxonomy else None
            out.append({
                "id": item,
                "name": self.bundle.item_names.get(item, f"item {item}"),
                "difficulty": entry.difficulty if entry else None,
                "path": list(entry.path) if entry else [],
            })
        return out

    def start_retrain(self, train_fn=None) -> dict:
        with self._retrain_lock:
            if self._retrain_running:
                raise StateError("retrain already running")
            self._retrain_running = True
        job = {"job_id": f"job-{uuid.uuid4().hex[:8]}", "status": "running",
               "started_at": time.time()}
        self._retrain_jobs.append(job)

        def runner():
            try:
                new_params = (train_fn or self._default_retrain)()
                self.bundle.params = new_params
                model.save_checkpoint(
                    os.path.join(self.config.bundle_dir, "checkpoint.json"),
                    new_params, self.bundle.model_config)
                job["status"] = "done"
            except Exception as exc:   # surfaced through job status
                job["status"] = f"failed: {exc}"
            finally:
                job["finished_at"] = time.time()
                with self._retrain_lock:
                    self._retrain_running = False

        threading.Thread(target=runner, daemon=True).start()
        return {"job_id": job["job_id"], "status": "started"}

    def _default_retrain(self) -> nn.Params:
        vocab = self.bundle.vocab
        w = self.bundle.model_config.window
        samples: list[model.WindowSample] = []
        sources: list[tuple[np.ndarray, list[int]]] = []
        for u, seq in self.bundle.train_histories.items():
            vec = self._profile_vector(
                dict(zip(self.bundle.profile_fields,
                         self.bundle.train_profiles[u])))
            sources.append((vec, [vocab.to_index(i) for i in seq]))
        for stored in self.store.users.values():
            seq = [vocab.to_index(e["item_id"]) for e in stored.history
                   if e["completed"]]
            sources.append((self._profile_vector(stored.profile), seq))
        for vec, seq in sources:
            for t in range(1, len(seq)):
                ids = seq[max(0, t - w):t]
                ids = [0] * (w - len(ids)) + ids
                arr = np.array(ids, dtype=np.int64)
                samples.append(model.WindowSample(
                    item_ids=arr, item_profiles=self.bundle.item_profile_matrix[arr],
                    user_profile=vec, target=seq[t]))
        if not samples:
            raise InputError("no training windows available for retraining")
        result = model.train(samples, self.bundle.model_config,
                             epochs=self.config.retrain_epochs, seed=0,
                             lr=self.config.retrain_lr,
                             initial=self.bundle.params)
        return result.params

    def retrain_status(self) -> dict:
        with self._retrain_lock:
            running = self._retrain_running
        return {"running": running, "jobs": list(self._retrain_jobs)}

    def close(self) -> None:
        self.store.close()


# --- HTTP layer --------------------------------------------------------------------

class _Handler(BaseHTTPRequestHandler):
    service: RecommenderService = None  # set by make_server
    protocol_version = "HTTP/1.1"

    def log_message(self, *args) -> None:   # quiet by default
        pass

    def _send(self, code: int, doc) -> None:
        body = b"" if code == 204 else json.dumps(doc).encode()
        self.send_response(code)
        if body:
            self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.send_header("Access-Control-Allow-Origin", "*")
        self.send_header("Access-Control-Allow-Headers",
                         "Content-Type, X-Auth-Token, Authorization, X-Resolver")
        self.send_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS")
        self.end_headers()
        if body:
            self.wfile.write(body)

    def _authorized(self) -> bool:
        token = self.service.config.token
        if not token:
            return True
        supplied = self.headers.get("X-Auth-Token")
        auth = self.headers.get("Authorization", "")
        if auth.startswith("Bearer "):
            supplied = supplied or auth[len("Bearer "):]
        return supplied == token

    def _body(self) -> dict:
        length = int(self.headers.get("Content-Length") or 0)
        if length == 0:
            return {}
        raw = self.rfile.read(length)
        try:
            doc = json.loads(raw)
        except json.JSONDecodeError:
            raise InputError("request body is not valid JSON") from None
        if not isinstance(doc, dict):
            raise InputError("request body must be a JSON object")
        return doc

    def _route(self, method: str) -> None:
        parsed = urlparse(self.path)
        path = parsed.path.rstrip("/") or "/"
        query = parse_qs(parsed.query)
        if method == "OPTIONS":
            self._send(204, {})
            return
        if not self._authorized():
            self._send(401, {"error": "unauthorized"})
            return
        svc = self.service
        try:
            if method == "GET" and path == "/v1/health":
                self._send(200, {"status": "ok"})
            elif method == "POST" and path == "/v1/users":
                self._send(201, svc.create_user(self._body()))
            elif method == "GET" and (m := re.fullmatch(r"/v1/users/([^/]+)/next", path)):
                self._send(200, svc.next_for(m.group(1)))
            elif method == "POST" and (m := re.fullmatch(r"/v1/users/([^/]+)/events", path)):
                svc.append_user_event(m.group(1), self._body())
                self._send(204, {})
            elif method == "GET" and path == "/v1/reviews":
                status = query.get("status", ["pending"])[0]
                self._send(200, {"reviews": svc.list_reviews(status)})
            elif method == "GET" and (m := re.fullmatch(r"/v1/reviews/([^/]+)", path)):
                self._send(200, svc.get_review(m.group(1)))
            elif method == "POST" and (m := re.fullmatch(r"/v1/reviews/([^/]+)", path)):
                resolver = self.headers.get("X-Resolver") or "expert"
                self._send(200, svc.resolve_review(m.group(1), self._body(), resolver))
            elif method == "GET" and path == "/v1/exercises":
                self._send(200, {"exercises": svc.exercises_catalog()})
            elif method == "GET" and path == "/v1/admin/model":
                self._send(200, svc.model_metadata())
            elif method == "POST" and path == "/v1/admin/retrain":
                self._send(202, svc.start_retrain())
            elif method == "GET" and path == "/v1/admin/retrain":
                self._send(200, svc.retrain_status())
            else:
                self._send(404, {"error": f"no route for {method} {path}"})
        except KeyError as exc:
            self._send(404, {"error": f"not found: {exc}"})
        except InputError as exc:
            self._send(422, {"error": str(exc)})
        except StateError as exc:
            self._send(409, {"error": str(exc)})
        except ConfigError as exc:
            self._send(400, {"error": str(exc)})
        except Exception as exc:   # pragma: no cover - last-resort guard
            self._send(500, {"error": f"internal error: {exc}"})

    def do_GET(self) -> None:
        self._route("GET")

    def do_POST(self) -> None:
        self._route("POST")

    def do_OPTIONS(self) -> None:
        self._route("OPTIONS")


def make_server(service: RecommenderService, port: int | None = None) -> ThreadingHTTPServer:
    handler = type("BoundHandler", (_Handler,), {"service": service})
    return ThreadingHTTPServer(("127.0.0.1", port if port is not None
                                else service.config.port), handler)


def serve_forever(config: ServiceConfig) -> None:
    bundle = load_bundle(config.bundle_dir)
    service = RecommenderService(config, bundle)
    server = make_server(service)
    print(f"serving on port {server.server_address[1]} "
          f"(data: {config.data_dir}, bundle: {config.bundle_dir})")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
        service.close()
