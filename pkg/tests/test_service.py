"""HTTP session layer: load/observe/retract/query round-trips and error bodies."""

from pathlib import Path

import pytest
from fastapi.testclient import TestClient

from spook.service import ServiceState, create_app, model_graph
from spook import parse_kb

FIXTURE = (Path(__file__).parent.parent / "src/spook/fixtures/battalion.spook").read_text()


@pytest.fixture()
def client():
    return TestClient(create_app(ServiceState()))


@pytest.fixture()
def loaded(client):
    r = client.post("/kb", json={"source": FIXTURE, "name": "battalion"})
    assert r.status_code == 200
    return client


def sess(client, backend="structured"):
    r = client.post("/session", json={"kb": "battalion", "backend": backend})
    assert r.status_code == 200
    return r.json()["id"]


def test_load_reports_counts(client):
    r = client.post("/kb", json={"source": FIXTURE})
    assert r.status_code == 200
    body = r.json()
    assert body["classes"] == 4 and body["instances"] == 3
    assert body["id"] == "kb-1"


def test_load_bad_source_is_400_with_location(client):
    r = client.post("/kb", json={"source": "class {"})
    assert r.status_code == 400
    body = r.json()
    assert set(body) == {"code", "message", "location"}
    assert body["location"]["line"] == 1


def test_graph_document(loaded):
    r = loaded.get("/kb/battalion/graph")
    assert r.status_code == 200
    doc = r.json()
    names = {n["name"] for n in doc["nodes"]}
    assert {"Battalion", "Battery", "Gun", "battery-a"} <= names
    complexes = [e for e in doc["edges"] if e["kind"] == "complex"]
    has_battery = next(e for e in complexes if e["attribute"] == "has-battery")
    assert has_battery == {
        "from": "Battalion", "to": "Battery", "kind": "complex",
        "attribute": "has-battery", "multi": True, "bound": 2,
        "inverse": "in-battalion",
    }
    bindings = [e for e in doc["edges"] if e["kind"] == "binding"]
    assert {"from": "battery-a", "to": "battalion-charlie", "kind": "binding",
            "attribute": "in-battalion"} in bindings
    # serving twice yields the identical document
    assert loaded.get("/kb/battalion/graph").json() == doc


def test_graph_matches_inprocess_builder(loaded):
    assert loaded.get("/kb/battalion/graph").json() == model_graph(parse_kb(FIXTURE))


def test_graph_unknown_kb_404(loaded):
    assert loaded.get("/kb/nope/graph").status_code == 404


def test_session_requires_known_backend(loaded):
    r = loaded.post("/session", json={"kb": "battalion", "backend": "psychic"})
    assert r.status_code == 400
    assert r.json()["code"] == "bad-value"


def test_observe_query_retract_round_trip(loaded):
    sid = sess(loaded)
    base = loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
    assert base.status_code == 200
    p_base = base.json()["posterior"]["yes"]

    r = loaded.post(
        f"/session/{sid}/observe",
        json={"instance": "battalion-charlie", "chain": "under-fire", "value": "heavy"},
    )
    assert r.status_code == 200
    assert len(r.json()["evidence"]) == 1

    cond = loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
    p_cond = cond.json()["posterior"]["yes"]
    assert p_cond > p_base

    r = loaded.request(
        "DELETE",
        f"/session/{sid}/observe",
        json={"instance": "battalion-charlie", "chain": "under-fire"},
    )
    assert r.status_code == 200
    assert r.json()["evidence"] == []

    back = loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
    assert back.json()["posterior"]["yes"] == pytest.approx(p_base, abs=1e-12)


def test_contradictory_observation_rejected(loaded):
    sid = sess(loaded)
    ob = {"instance": "battery-a", "chain": "hit", "value": "yes"}
    assert loaded.post(f"/session/{sid}/observe", json=ob).status_code == 200
    # idempotent repeat is fine
    assert loaded.post(f"/session/{sid}/observe", json=ob).status_code == 200
    r = loaded.post(
        f"/session/{sid}/observe",
        json={"instance": "battery-a", "chain": "hit", "value": "no"},
    )
    assert r.status_code == 400
    assert r.json()["code"] == "contradictory-evidence"
    assert "retract" in r.json()["message"]


def test_observe_validates_instance_and_value(loaded):
    sid = sess(loaded)
    r = loaded.post(
        f"/session/{sid}/observe",
        json={"instance": "ghost", "chain": "hit", "value": "yes"},
    )
    assert r.status_code == 404
    r = loaded.post(
        f"/session/{sid}/observe",
        json={"instance": "battery-a", "chain": "hit", "value": "maybe"},
    )
    assert r.status_code == 400
    assert "no, yes" in r.json()["message"]


def test_retract_without_observation_404(loaded):
    sid = sess(loaded)
    r = loaded.request(
        "DELETE",
        f"/session/{sid}/observe",
        json={"instance": "battery-a", "chain": "hit"},
    )
    assert r.status_code == 404


def test_history_and_stats_accumulate(loaded):
    sid = sess(loaded)
    loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
    loaded.post(f"/session/{sid}/query", json={"target": "battery-a.reported-damage"})
    hist = loaded.get(f"/session/{sid}/history").json()["entries"]
    assert [h["query"] for h in hist] == [
        "P(battery-a.hit)",
        "P(battery-a.reported-damage)",
    ]
    assert all(h["seconds"] >= 0 for h in hist)
    last = loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
    stats = last.json()["stats"]
    assert stats["queries"] == 3
    assert stats["cache_hits"] > 0  # engine survives across queries


def test_both_backends_agree_over_http(loaded):
    answers = {}
    for backend in ("structured", "kbmc"):
        sid = sess(loaded, backend)
        loaded.post(
            f"/session/{sid}/observe",
            json={"instance": "battery-a", "chain": "reported-damage", "value": "2"},
        )
        r = loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
        assert r.json()["backend"] == backend
        answers[backend] = r.json()["posterior"]
    for value, p in answers["structured"].items():
        assert answers["kbmc"][value] == pytest.approx(p, abs=1e-9)


def test_kbmc_session_reports_ground_size(loaded):
    sid = sess(loaded, "kbmc")
    r = loaded.post(f"/session/{sid}/query", json={"target": "battery-a.hit"})
    stats = r.json()["stats"]
    assert stats["nodes"] > 0 and stats["objects"] >= 3


def test_unknown_session_404(loaded):
    assert loaded.post("/session/s-99/query", json={"target": "x.y"}).status_code == 404


def test_isolated_states_do_not_share_kbs():
    a = TestClient(create_app(ServiceState()))
    b = TestClient(create_app(ServiceState()))
    a.post("/kb", json={"source": FIXTURE, "name": "battalion"})
    assert b.get("/kb/battalion/graph").status_code == 404


def test_resolve_reports_value_domains(loaded):
    r = loaded.get("/kb/battalion/resolve",
                   params={"instance": "battery-a", "chain": "hit"})
    assert r.status_code == 200
    assert r.json() == {"instance": "battery-a", "chain": "hit",
                        "kind": "simple", "values": ["no", "yes"]}
    # chains through single-valued complex hops resolve too
    r = loaded.get("/kb/battalion/resolve",
                   params={"instance": "battery-a",
                           "chain": "in-battalion.under-fire"})
    assert r.json()["values"] == ["none", "light", "heavy"]
    # quantifier counts expose their count range as strings
    r = loaded.get("/kb/battalion/resolve",
                   params={"instance": "battery-a", "chain": "reported-damage"})
    assert r.json()["kind"] == "quantifier"
    assert r.json()["values"] == ["0", "1", "2", "3"]


def test_resolve_rejects_bad_chains(loaded):
    r = loaded.get("/kb/battalion/resolve",
                   params={"instance": "ghost", "chain": "hit"})
    assert r.status_code == 404
    r = loaded.get("/kb/battalion/resolve",
                   params={"instance": "battery-a", "chain": "has-gun.damaged"})
    assert r.status_code == 400
    assert r.json()["code"] == "non-simple-chain"
    r = loaded.get("/kb/battalion/resolve",
                   params={"instance": "battery-a", "chain": "armour"})
    assert r.status_code == 400
    assert r.json()["code"] == "unknown-attribute"


def test_evidence_endpoint_mirrors_session_state(loaded):
    sid = sess(loaded)
    assert loaded.get(f"/session/{sid}/evidence").json() == {"evidence": []}

    ob = {"instance": "battalion-charlie", "chain": "under-fire", "value": "heavy"}
    posted = loaded.post(f"/session/{sid}/observe", json=ob).json()["evidence"]
    fetched = loaded.get(f"/session/{sid}/evidence").json()["evidence"]
    assert fetched == posted == [
        {"instance": "battalion-charlie", "chain": "under-fire", "value": "heavy"}
    ]

    loaded.request("DELETE", f"/session/{sid}/observe",
                   json={"instance": "battalion-charlie", "chain": "under-fire"})
    assert loaded.get(f"/session/{sid}/evidence").json() == {"evidence": []}

    assert loaded.get("/session/s-99/evidence").status_code == 404


def test_cross_origin_browser_clients_are_allowed(loaded):
    r = loaded.get("/kb/battalion/graph", headers={"Origin": "http://localhost:5173"})
    assert r.status_code == 200
    assert r.headers["access-control-allow-origin"] == "*"
