import pytest

from netmax.core import config as config_module

TWO_NODE_TIMES = [[0.0, 1.0], [1.0, 0.0]]


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    body = response.json()
    assert body["status"] == "healthy"
    assert body["version"] == config_module.settings.version
    assert "X-Request-ID" in response.headers
    assert "X-Process-Time" in response.headers


def test_root(client):
    assert client.get("/").json()["status"] == "running"


def test_generate_policy(client):
    response = client.post("/api/v1/policy/generate", json={
        "times": TWO_NODE_TIMES, "alpha": 0.1, "outer_rounds": 8, "inner_rounds": 8,
    })
    assert response.status_code == 200
    body = response.json()
    assert body["P"][0][1] == pytest.approx(1.0, abs=1e-9)
    assert body["tbar"] == pytest.approx(0.5)
    assert body["feasible"] > 0


def test_generate_without_feasible_point(client):
    response = client.post("/api/v1/policy/generate", json={
        "times": TWO_NODE_TIMES, "alpha": 0.1, "outer_rounds": 1, "inner_rounds": 4,
    })
    assert response.status_code == 409
    body = response.json()
    assert body["error"] == "No Feasible Policy"
    assert body["request_id"]


def test_generate_rejects_non_square(client):
    response = client.post("/api/v1/policy/generate", json={"times": [[0.0, 1.0, 2.0], [1.0, 0.0, 1.0]]})
    assert response.status_code == 422


def test_generate_rejects_disconnected(client):
    response = client.post("/api/v1/policy/generate", json={
        "times": [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    })
    assert response.status_code == 422
    assert response.json()["error"] == "Invalid Topology"


def test_check_policy(client):
    response = client.post("/api/v1/policy/check", json={
        "probs": [[0.0, 0.9], [1.0, 0.0]], "times": TWO_NODE_TIMES, "alpha": 0.1, "rho": 1.0,
    })
    assert response.status_code == 200
    body = response.json()
    assert body["all_passed"] is False
    checks = {c["name"]: c for c in body["checks"]}
    assert checks["row_stochastic"]["passed"] is False
    assert checks["row_stochastic"]["worst_violation"] == pytest.approx(0.1)
    assert checks["edge_support"]["passed"] is True


def test_gossip_matrix(client):
    response = client.post("/api/v1/policy/gossip", json={
        "probs": [[0.0, 1.0], [1.0, 0.0]], "alpha": 0.1, "rho": 1.0,
    })
    assert response.status_code == 200
    body = response.json()
    assert body["Y"] == pytest.approx([[0.91, 0.09], [0.09, 0.91]], abs=1e-12)
    assert body["lambda2"] == pytest.approx(0.82, abs=1e-12)


def test_api_key_required_when_configured(client, monkeypatch):
    monkeypatch.setattr(config_module.settings, "api_key", "secret")
    payload = {"probs": [[0.0, 1.0], [1.0, 0.0]], "alpha": 0.1, "rho": 1.0}
    assert client.post("/api/v1/policy/gossip", json=payload).status_code == 401
    ok = client.post("/api/v1/policy/gossip", json=payload, headers={"X-API-Key": "secret"})
    assert ok.status_code == 200
    assert client.get("/health").status_code == 200


def test_policy_responses_carry_node_count(client):
    response = client.post("/api/v1/policy/generate", json={
        "times": TWO_NODE_TIMES, "alpha": 0.1, "outer_rounds": 8, "inner_rounds": 8,
    })
    assert response.headers["X-Node-Count"] == "2"
    gossip = client.post("/api/v1/policy/gossip", json={
        "probs": [[0.0, 0.5, 0.5], [0.5, 0.0, 0.5], [0.5, 0.5, 0.0]], "alpha": 0.1, "rho": 1.0,
    })
    assert gossip.headers["X-Node-Count"] == "3"


def test_node_count_survives_policy_errors(client):
    response = client.post("/api/v1/policy/generate", json={
        "times": TWO_NODE_TIMES, "alpha": 0.1, "outer_rounds": 1, "inner_rounds": 4,
    })
    assert response.status_code == 409
    assert response.headers["X-Node-Count"] == "2"


def test_node_count_absent_without_a_topology(client):
    assert "X-Node-Count" not in client.get("/health").headers
    rejected = client.post("/api/v1/policy/generate", json={
        "times": [[0.0, 1.0, 0.0], [1.0, 0.0, 0.0], [0.0, 0.0, 0.0]],
    })
    assert rejected.status_code == 422
    assert "X-Node-Count" not in rejected.headers
