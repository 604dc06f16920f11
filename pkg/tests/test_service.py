"""HTTP surface: session lifecycle, error contract, and engine equivalence."""

import json

import numpy as np
import pytest
from fastapi.testclient import TestClient

from activecf.engines import McvqEngine
from activecf.service import ServiceState, SessionStore, create_app
from activecf.strategies import StrategyConfig, recommend, select_query
from conftest import random_mcvq


@pytest.fixture(scope="module")
def model():
    return random_mcvq(np.random.default_rng(7), m=8, k=2, l=2, rho=4)


@pytest.fixture(scope="module")
def engine(model):
    return McvqEngine(model)


@pytest.fixture(scope="module")
def client(model):
    app = create_app(model)
    with TestClient(app) as c:
        yield c


def new_session(client, **body):
    resp = client.post("/sessions", json=body)
    assert resp.status_code == 201
    return resp.json()


# ------------------------------------------------------------------ basics


def test_healthz(client):
    got = client.get("/healthz").json()
    assert got == {"status": "ok", "model_kind": "mcvq", "n_items": 8, "rho": 4}


def test_items_listing(client):
    got = client.get("/items").json()
    assert got["rho"] == 4
    assert got["n_items"] == 8
    assert got["items"][3] == {"item": 3, "label": "item-3"}
    assert len(got["items"]) == 8


def test_create_session_starts_at_the_prior(client, model):
    s = new_session(client)
    assert s["n_ratings"] == 0
    assert s["history"] == []
    assert s["model_kind"] == "mcvq"
    assert s["use_prototypes"] is False
    full = client.get(f"/sessions/{s['id']}").json()
    posterior = np.asarray(full["diagnostics"]["attitude_posterior"])
    assert posterior == pytest.approx(model.attitude_prior, abs=1e-15)
    other = new_session(client)
    assert other["id"] != s["id"]


def test_create_session_rejections(client):
    resp = client.post("/sessions", json={"model_kind": "naive_bayes"})
    assert resp.status_code == 404
    assert resp.json()["code"] == "unknown_model"
    resp = client.post("/sessions", json={"evoi_threshold": -1.0})
    assert resp.status_code == 422
    assert resp.json()["code"] == "invalid_threshold"
    resp = client.post("/sessions", json={"use_prototypes": True})
    assert resp.status_code == 422
    assert resp.json()["code"] == "no_prototypes"


def test_unknown_session_is_404(client):
    for path in ("", "/query", "/recommendations"):
        resp = client.get(f"/sessions/missing{path}")
        assert resp.status_code == 404
        assert resp.json()["code"] == "unknown_session"
    resp = client.post("/sessions/missing/ratings", json={"item": 0, "rating": 1})
    assert resp.status_code == 404


# ------------------------------------------------------------------- query


def test_query_matches_offline_selection(client, engine):
    s = new_session(client)
    got = client.get(f"/sessions/{s['id']}/query").json()
    decision = select_query(engine, engine.fresh_state(), StrategyConfig(kind="evoi"))
    assert got["stop"] is False
    assert got["item"] == decision.chosen_query
    assert got["expected_evoi"] == pytest.approx(decision.scores.max(), abs=1e-12)
    assert got["ranked"][0]["item"] == decision.chosen_query
    assert len(got["ranked"]) == 5
    scores = [r["expected_evoi"] for r in got["ranked"]]
    assert scores == sorted(scores, reverse=True)


def test_query_is_idempotent(client):
    s = new_session(client)
    url = f"/sessions/{s['id']}/query"
    first = client.get(url).json()
    second = client.get(url).json()
    assert first == second
    assert client.get(f"/sessions/{s['id']}").json()["n_ratings"] == 0


def test_query_top_k_is_a_prefix(client):
    s = new_session(client)
    top1 = client.get(f"/sessions/{s['id']}/query", params={"top_k": 1}).json()
    top5 = client.get(f"/sessions/{s['id']}/query", params={"top_k": 5}).json()
    assert top5["ranked"][:1] == top1["ranked"]
    resp = client.get(f"/sessions/{s['id']}/query", params={"top_k": 0})
    assert resp.status_code == 422
    assert resp.json()["code"] == "invalid_top_k"


def test_threshold_at_scale_top_stops_immediately(client):
    s = new_session(client, evoi_threshold=4.0)
    got = client.get(f"/sessions/{s['id']}/query").json()
    assert got == {
        "item": None, "expected_evoi": None, "stop": True,
        "reason": "threshold unattainable", "candidates_pruned": 0, "ranked": [],
    }


def test_high_threshold_stop_reports_scores(client):
    s = new_session(client, evoi_threshold=3.9)
    got = client.get(f"/sessions/{s['id']}/query").json()
    assert got["stop"] is True
    assert got["item"] is None
    assert got["reason"] == "max expected value of information below threshold"
    assert len(got["ranked"]) == 5  # scores are still reported


# ------------------------------------------------------------------ ratings


def test_rating_updates_match_the_engine(client, engine):
    s = new_session(client)
    state = engine.fresh_state()
    for item, rating in ((2, 4), (5, 1), (0, 3)):
        resp = client.post(f"/sessions/{s['id']}/ratings", json={"item": item, "rating": rating})
        assert resp.status_code == 200
        state = engine.update(state, item, rating)
    full = client.get(f"/sessions/{s['id']}").json()
    assert full["n_ratings"] == 3
    assert [h["item"] for h in full["history"]] == [2, 5, 0]
    got = np.asarray(full["diagnostics"]["attitude_posterior"])
    assert got == pytest.approx(state.attitude_posterior, abs=1e-12)


def test_rating_records_evoi_of_the_suggested_item(client):
    s = new_session(client)
    suggestion = client.get(f"/sessions/{s['id']}/query").json()
    out = client.post(
        f"/sessions/{s['id']}/ratings", json={"item": suggestion["item"], "rating": 2}
    ).json()
    assert out["history"][0]["evoi"] == pytest.approx(suggestion["expected_evoi"])
    # an unsolicited rating carries no selection-time evoi
    other = next(j for j in range(8) if j != suggestion["item"])
    out = client.post(f"/sessions/{s['id']}/ratings", json={"item": other, "rating": 3}).json()
    assert out["history"][1]["evoi"] is None


def test_rating_error_contract(client):
    s = new_session(client)
    client.post(f"/sessions/{s['id']}/ratings", json={"item": 1, "rating": 2})
    resp = client.post(f"/sessions/{s['id']}/ratings", json={"item": 1, "rating": 4})
    assert resp.status_code == 409
    assert resp.json()["code"] == "duplicate_item"
    resp = client.post(f"/sessions/{s['id']}/ratings", json={"item": 2, "rating": 0})
    assert resp.status_code == 422
    assert resp.json()["code"] == "invalid_rating"
    resp = client.post(f"/sessions/{s['id']}/ratings", json={"item": 99, "rating": 2})
    assert resp.status_code == 422
    assert resp.json()["code"] == "unknown_item"
    resp = client.post(f"/sessions/{s['id']}/ratings", json={"item": 2, "rating": "often"})
    assert resp.status_code == 422
    assert resp.json()["code"] == "validation_error"


def test_exhausting_the_pool_stops_cleanly(client):
    s = new_session(client)
    for item in range(7):
        client.post(f"/sessions/{s['id']}/ratings", json={"item": item, "rating": 2})
    got = client.get(f"/sessions/{s['id']}/query").json()
    assert got["stop"] is True
    assert got["reason"] == "single unobserved item"
    client.post(f"/sessions/{s['id']}/ratings", json={"item": 7, "rating": 2})
    got = client.get(f"/sessions/{s['id']}/query").json()
    assert got["reason"] == "no unobserved items"
    assert client.get(f"/sessions/{s['id']}/recommendations").json() == {"items": []}


# ----------------------------------------------------------- recommendations


def test_recommendations_match_posterior_means(client, engine):
    s = new_session(client)
    client.post(f"/sessions/{s['id']}/ratings", json={"item": 4, "rating": 1})
    state = engine.update(engine.fresh_state(), 4, 1)
    got = client.get(f"/sessions/{s['id']}/recommendations").json()["items"]
    assert len(got) == 7
    assert all(r["item"] != 4 for r in got)
    means = {int(j): float(v) for j, v in zip(range(8), engine.posterior_means(state, np.arange(8)))}
    for row in got:
        assert row["posterior_mean"] == pytest.approx(means[row["item"]], abs=1e-12)
        assert row["label"] == f"item-{row['item']}"
    values = [r["posterior_mean"] for r in got]
    assert values == sorted(values, reverse=True)
    top1 = client.get(f"/sessions/{s['id']}/recommendations", params={"top_n": 1}).json()["items"]
    assert top1[0]["item"] == recommend(engine, state, np.array([j for j in range(8) if j != 4]))
    top3 = client.get(f"/sessions/{s['id']}/recommendations", params={"top_n": 3}).json()["items"]
    assert got[:3] == top3
    resp = client.get(f"/sessions/{s['id']}/recommendations", params={"top_n": 0})
    assert resp.status_code == 422
    assert resp.json()["code"] == "invalid_top_n"


# -------------------------------------------------------------- prototypes


def test_prototype_sessions_query_inside_the_net(model):
    from activecf.prototypes import PrototypeSet

    net = PrototypeSet(
        members=np.array([0, 2, 5]), beta=0.5, epsilon=0.4, counts=np.zeros(8, dtype=np.int64)
    )
    app = create_app(model, prototypes=net, item_labels=[f"film-{j}" for j in range(8)])
    with TestClient(app) as client:
        s = new_session(client)  # nets opt in by default when the service has one
        assert s["use_prototypes"] is True
        got = client.get(f"/sessions/{s['id']}/query").json()
        assert got["item"] in (0, 2, 5)
        assert got["label"] == f"film-{got['item']}"
        assert {r["item"] for r in got["ranked"]} <= {0, 2, 5}
        # the net exhausts; selection falls back to the open pool
        for item in (0, 2, 5):
            client.post(f"/sessions/{s['id']}/ratings", json={"item": item, "rating": 2})
        got = client.get(f"/sessions/{s['id']}/query").json()
        assert got["item"] not in (None, 0, 2, 5)
        opt_out = new_session(client, use_prototypes=False)
        assert opt_out["use_prototypes"] is False


# -------------------------------------------------------------- persistence


def test_store_replay_reconstructs_sessions(tmp_path, model, engine):
    store_path = tmp_path / "sessions.jsonl"
    app = create_app(model, store_path=store_path)
    with TestClient(app) as client:
        s = new_session(client)
        suggestion = client.get(f"/sessions/{s['id']}/query").json()
        client.post(
            f"/sessions/{s['id']}/ratings", json={"item": suggestion["item"], "rating": 3}
        )
        client.post(f"/sessions/{s['id']}/ratings", json={"item": 6, "rating": 1})
        before_recs = client.get(f"/sessions/{s['id']}/recommendations").json()
        before_full = client.get(f"/sessions/{s['id']}").json()

    lines = [json.loads(l) for l in store_path.read_text().splitlines()]
    assert [e["event"] for e in lines] == ["create", "rating", "rating"]
    assert lines[1]["evoi"] == pytest.approx(suggestion["expected_evoi"])

    revived = ServiceState(model, store=SessionStore(store_path))
    assert s["id"] in revived.sessions

    # a fresh app over the same log serves the session as if never restarted
    with TestClient(create_app(model, store_path=store_path)) as client:
        after_full = client.get(f"/sessions/{s['id']}").json()
        assert after_full["history"] == before_full["history"]
        assert after_full["diagnostics"] == before_full["diagnostics"]
        after_recs = client.get(f"/sessions/{s['id']}/recommendations").json()
        assert after_recs == before_recs
