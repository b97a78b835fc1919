import json
import threading

import numpy as np
import pytest
import requests

from exrec import data, evaluate, model, service, uncertainty
from exrec.service import RecommenderService, ServiceConfig


@pytest.fixture(scope="module")
def trained_assets(tmp_path_factory):
    corpus = data.synth_generate(n_users=8, n_days=28, seed=6)
    cfg = evaluate.ExperimentConfig(epochs=6, lr=3e-3, seeds=(0,))
    mcfg = evaluate.model_config_for(corpus, cfg)
    fields = corpus.schema.select("demographic")
    stats = data.profile_stats(corpus, fields)
    windows = data.make_windows(corpus, 3, stats=stats)
    trained = model.train(windows, mcfg, epochs=6, seed=0, lr=3e-3)
    bundle_dir = str(tmp_path_factory.mktemp("bundle"))
    # level 0.999 puts the threshold near 1, so nearly every step queries
    dist = uncertainty.marginal_pdf(uncertainty.DirichletParams(1, 1, 1),
                                    grid_size=201)
    dist.level = 0.999
    dist.theta = uncertainty.threshold(dist, 0.999)
    service.save_bundle(bundle_dir, trained.params, mcfg, dist, corpus, stats)
    return bundle_dir, corpus


def _make_service(trained_assets, tmp_path, **config_overrides) -> RecommenderService:
    bundle_dir, _ = trained_assets
    cfg = ServiceConfig(data_dir=str(tmp_path / "data"), bundle_dir=bundle_dir,
                        **config_overrides)
    return RecommenderService(cfg, service.load_bundle(bundle_dir))


PROFILE = {"activity_level": 5.0, "age": 34.0, "bmi": 24.0}


def test_create_user_and_query_flow(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    created = svc.create_user(PROFILE)
    uid = created["user_id"]
    assert uid.startswith("u-")
    out = svc.next_for(uid)
    assert out["status"] == "pending_expert"
    assert "recommendation" not in out
    assert out["z"] < out["theta"]
    review_id = out["review_id"]
    # idempotent while pending
    again = svc.next_for(uid)
    assert again["status"] == "pending_expert"
    assert again["review_id"] == review_id
    assert svc.store.users[uid].steps == 1

    pending = svc.list_reviews("pending")
    assert [r["review_id"] for r in pending] == [review_id]
    card = pending[0]
    assert len(card["candidates"]) == 10
    assert card["user_summary"]["age"] == 34.0

    corrected = card["candidates"][3]["id"]
    resolved = svc.resolve_review(review_id, {"corrected_exercise_id": corrected})
    assert resolved["status"] == "resolved"
    assert resolved["resolution"]["corrected_id"] == corrected
    assert svc.list_reviews("pending") == []
    # history now includes the correction, so the loop proceeds
    out2 = svc.next_for(uid)
    assert out2["status"] in ("auto", "pending_expert")
    assert svc.store.users[uid].steps == 2
    svc.close()


def test_budget_zero_always_auto(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path, budget=0)
    uid = svc.create_user(PROFILE)["user_id"]
    for _ in range(3):
        out = svc.next_for(uid)
        assert out["status"] == "auto"
        assert out["recommendation"]["id"] in {e["id"] for e in svc.exercises_catalog()}
    assert svc.store.users[uid].queries == 0
    svc.close()


def test_unknown_user_404(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    with pytest.raises(KeyError):
        svc.next_for("ghost")
    svc.close()


def test_profile_validation(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    from exrec.errors import InputError
    with pytest.raises(InputError, match="unknown profile fields: zodiac"):
        svc.create_user({"zodiac": 3.0})
    with pytest.raises(InputError, match="non-numeric"):
        svc.create_user({"age": "old"})
    # missing optional fields are imputed
    out = svc.create_user({"age": 50.0})
    assert out["user_id"]
    svc.close()


def test_duplicate_creates_two_users(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    a = svc.create_user(PROFILE)["user_id"]
    b = svc.create_user(PROFILE)["user_id"]
    assert a != b
    svc.close()


def test_resolution_finetunes_corrected_class(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    bundle_dir, corpus = trained_assets
    uid = svc.create_user(PROFILE)["user_id"]
    # seed one real event: an all-padding window sits at a zero-gradient
    # saddle (uniform output), so the fine-tune would be a no-op there
    svc.append_user_event(uid, {"exercise_id": corpus.item_ids[0], "day": 0,
                                "completed": True})
    out = svc.next_for(uid)
    review = svc.get_review(out["review_id"])
    window = review["window_ids"]
    corrected = review["candidates"][5]["id"]
    session = svc._session(uid)
    vocab = svc.bundle.vocab
    sample = session.window_sample(window, target=vocab.to_index(corrected))
    before, _ = model.forward(session.params, session.config, sample)
    svc.resolve_review(out["review_id"], {"corrected_exercise_id": corrected})
    after, _ = model.forward(session.params, session.config, sample)
    assert after[vocab.to_index(corrected)] > before[vocab.to_index(corrected)]
    svc.close()


def test_event_append_shifts_window(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path, budget=0)
    bundle_dir, corpus = trained_assets
    uid = svc.create_user(PROFILE)["user_id"]
    first = svc.next_for(uid)
    item = corpus.item_ids[0]
    svc.append_user_event(uid, {"exercise_id": item, "day": 0, "completed": True})
    session = svc._session(uid)
    assert session.window_ids()[-1] == svc.bundle.vocab.to_index(item)
    second = svc.next_for(uid)
    assert second["status"] == "auto"
    svc.close()


def test_resolve_bad_id_rejected(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    uid = svc.create_user(PROFILE)["user_id"]
    out = svc.next_for(uid)
    from exrec.errors import InputError
    with pytest.raises(InputError):
        svc.resolve_review(out["review_id"], {"corrected_exercise_id": 99999})
    with pytest.raises(InputError):
        svc.resolve_review(out["review_id"], {"corrected_exercise_id": "three"})
    svc.close()


def test_restart_restores_state_and_outputs(trained_assets, tmp_path):
    bundle_dir, _ = trained_assets
    svc = _make_service(trained_assets, tmp_path)
    uid = svc.create_user(PROFILE)["user_id"]
    out = svc.next_for(uid)
    review_id = out["review_id"]
    card = svc.get_review(review_id)
    corrected = card["candidates"][2]["id"]
    svc.resolve_review(review_id, {"corrected_exercise_id": corrected})
    out2 = svc.next_for(uid)         # creates a second pending review
    session = svc._session(uid)
    window = session.window_ids()
    probe = session.window_sample(window)
    before, _ = model.forward(session.params, session.config, probe)
    counters = (svc.store.users[uid].steps, svc.store.users[uid].queries,
                svc.store.users[uid].corrections)
    # no clean shutdown: a new service on the same directories must recover
    restarted = RecommenderService(svc.config, service.load_bundle(bundle_dir))
    assert restarted.store.users[uid].steps == counters[0]
    assert restarted.store.users[uid].queries == counters[1]
    assert restarted.store.users[uid].corrections == counters[2]
    pending = restarted.list_reviews("pending")
    assert [r["review_id"] for r in pending] == [out2["review_id"]]
    resolved = restarted.get_review(review_id)
    assert resolved["status"] == "resolved"
    session2 = restarted._session(uid)
    assert session2.window_ids() == window
    after, _ = model.forward(session2.params, session2.config, probe)
    assert np.allclose(before, after, atol=1e-12)
    svc.close()
    restarted.close()


def test_concurrent_resolutions_exactly_once(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    uid = svc.create_user(PROFILE)["user_id"]
    out = svc.next_for(uid)
    review_id = out["review_id"]
    corrected = svc.get_review(review_id)["candidates"][0]["id"]
    results = []
    barrier = threading.Barrier(10)

    def attempt():
        barrier.wait()
        try:
            svc.resolve_review(review_id, {"corrected_exercise_id": corrected})
            results.append(200)
        except Exception:
            results.append(409)

    threads = [threading.Thread(target=attempt) for _ in range(10)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert sorted(results) == [200] + [409] * 9
    assert svc.store.users[uid].corrections == 1
    svc.close()


def test_retrain_conflict_and_swap(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    release = threading.Event()

    def slow_train():
        release.wait(timeout=10)
        return {k: w + 0.0 for k, w in svc.bundle.params.items()}

    job = svc.start_retrain(train_fn=slow_train)
    assert job["status"] == "started"
    from exrec.errors import StateError
    with pytest.raises(StateError):
        svc.start_retrain(train_fn=slow_train)
    release.set()
    for _ in range(100):
        status = svc.retrain_status()
        if not status["running"]:
            break
        import time
        time.sleep(0.05)
    assert svc.retrain_status()["jobs"][-1]["status"] == "done"
    svc.close()


def test_model_metadata(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path)
    meta = svc.model_metadata()
    assert meta["format_version"] == model.CHECKPOINT_FORMAT_VERSION
    assert len(meta["config_hash"]) == 16
    assert meta["n_classes"] == 45
    svc.close()


# --- HTTP layer ---------------------------------------------------------------


@pytest.fixture()
def http_service(trained_assets, tmp_path):
    svc = _make_service(trained_assets, tmp_path, token="sekrit")
    server = service.make_server(svc, port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    yield base, svc
    server.shutdown()
    server.server_close()
    svc.close()


AUTH = {"X-Auth-Token": "sekrit"}


def test_http_requires_token(http_service):
    base, _ = http_service
    assert requests.get(f"{base}/v1/health", timeout=5).status_code == 401
    ok = requests.get(f"{base}/v1/health", headers=AUTH, timeout=5)
    assert ok.status_code == 200


def test_http_full_review_cycle(http_service):
    base, _ = http_service
    created = requests.post(f"{base}/v1/users", json=PROFILE, headers=AUTH, timeout=5)
    assert created.status_code == 201
    uid = created.json()["user_id"]

    nxt = requests.get(f"{base}/v1/users/{uid}/next", headers=AUTH, timeout=5)
    assert nxt.status_code == 200
    body = nxt.json()
    assert body["status"] == "pending_expert"
    review_id = body["review_id"]

    queue = requests.get(f"{base}/v1/reviews?status=pending", headers=AUTH,
                         timeout=5).json()["reviews"]
    assert queue[0]["review_id"] == review_id
    assert queue[0]["z"] < queue[0]["theta"]

    corrected = queue[0]["candidates"][1]["id"]
    resolved = requests.post(f"{base}/v1/reviews/{review_id}",
                             json={"corrected_exercise_id": corrected},
                             headers=AUTH, timeout=5)
    assert resolved.status_code == 200
    assert resolved.json()["status"] == "resolved"

    again = requests.post(f"{base}/v1/reviews/{review_id}",
                          json={"corrected_exercise_id": corrected},
                          headers=AUTH, timeout=5)
    assert again.status_code == 409

    bad = requests.post(f"{base}/v1/reviews/{review_id}",
                        json={"corrected_exercise_id": 10**9},
                        headers=AUTH, timeout=5)
    assert bad.status_code in (409, 422)


def test_http_events_and_404(http_service):
    base, svc = http_service
    assert requests.get(f"{base}/v1/users/ghost/next", headers=AUTH,
                        timeout=5).status_code == 404
    uid = requests.post(f"{base}/v1/users", json=PROFILE, headers=AUTH,
                        timeout=5).json()["user_id"]
    item = svc.bundle.item_ids[0]
    r = requests.post(f"{base}/v1/users/{uid}/events",
                      json={"exercise_id": item, "day": 1, "completed": True},
                      headers=AUTH, timeout=5)
    assert r.status_code == 204
    bad = requests.post(f"{base}/v1/users/{uid}/events",
                        json={"exercise_id": "x", "day": 1},
                        headers=AUTH, timeout=5)
    assert bad.status_code == 422


def test_http_queue_ordering_created_ascending(http_service):
    base, _ = http_service
    ids = []
    for _ in range(3):
        uid = requests.post(f"{base}/v1/users", json=PROFILE, headers=AUTH,
                            timeout=5).json()["user_id"]
        body = requests.get(f"{base}/v1/users/{uid}/next", headers=AUTH,
                            timeout=5).json()
        assert body["status"] == "pending_expert"
        ids.append(body["review_id"])
    queue = requests.get(f"{base}/v1/reviews?status=pending", headers=AUTH,
                         timeout=5).json()["reviews"]
    assert [r["review_id"] for r in queue] == ids
    created = [r["created_at"] for r in queue]
    assert created == sorted(created)


def test_http_exercises_and_admin(http_service):
    base, _ = http_service
    catalog = requests.get(f"{base}/v1/exercises", headers=AUTH,
                           timeout=5).json()["exercises"]
    assert len(catalog) == 44
    assert all("path" in e and "name" in e for e in catalog)
    meta = requests.get(f"{base}/v1/admin/model", headers=AUTH, timeout=5).json()
    assert "config_hash" in meta and "format_version" in meta


def test_service_config_env_overrides(tmp_path):
    path = tmp_path / "config.json"
    path.write_text(json.dumps({"port": 9000, "alpha_level": 0.05}))
    cfg = ServiceConfig.load(str(path), env={"EXREC_PORT": "9100",
                                             "EXREC_BUDGET": "7",
                                             "EXREC_TOKEN": "abc"})
    assert cfg.port == 9100
    assert cfg.alpha_level == 0.05
    assert cfg.budget == 7
    assert cfg.token == "abc"
