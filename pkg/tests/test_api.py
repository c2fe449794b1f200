"""HTTP API 테스트"""
import pytest
from fastapi.testclient import TestClient

from app.config import get_settings
from app.core import driver
from app.core.errors import MeshError
from app.main import app


@pytest.fixture
def client():
    return TestClient(app)


RUN = {"scheme": "mixed", "k": 0, "problem": "square-smooth", "steps": 2}


def test_health(client):
    assert client.get("/api/").json()["status"] == "ok"
    body = client.get("/api/health").json()
    assert body["status"] == "healthy"
    assert body["components"]["run_store"] == 0


def test_problems(client):
    assert client.get("/api/problems").json() == {"problems": ["square-smooth", "lshape2d", "checkerboard-a"]}


def test_create_and_fetch_run(client):
    response = client.post("/api/runs", json=RUN)
    assert response.status_code == 201
    body = response.json()
    assert body["status"] == "completed"
    assert body["config"]["stabilization"] == "uniform"
    assert [r["step"] for r in body["records"]] == [0, 1]

    run_id = body["run_id"]
    fetched = client.get(f"/api/runs/{run_id}")
    assert fetched.status_code == 200
    assert fetched.json()["records"] == body["records"]

    csv = client.get(f"/api/runs/{run_id}/convergence.csv")
    assert csv.status_code == 200
    assert csv.text.startswith("step,nelems,")
    assert len(csv.text.strip().splitlines()) == 3


def test_run_with_verification(client):
    response = client.post("/api/runs", json=dict(RUN, scheme="primal", k=1, steps=1, verify=True))
    checks = response.json()["checks"]
    assert checks
    assert {"name", "value", "threshold", "passed"} <= set(checks[0])


def test_unknown_run(client):
    assert client.get("/api/runs/nope").status_code == 404
    assert client.get("/api/runs/nope/convergence.csv").status_code == 404


def test_unknown_problem(client):
    response = client.post("/api/runs", json=dict(RUN, problem="circle"))
    assert response.status_code == 400


def test_invalid_config(client):
    assert client.post("/api/runs", json=dict(RUN, delta=1)).status_code == 422
    assert client.post("/api/runs", json=dict(RUN, marking="dorfler:2")).status_code == 422
    assert client.post("/api/runs", json=dict(RUN, scheme="primal", k=0)).status_code == 422


def test_failed_run_is_stored(client, monkeypatch):
    def broken_refine(mesh, marked):
        raise MeshError("refinement exploded")

    monkeypatch.setattr(driver, "refine", broken_refine)
    response = client.post("/api/runs", json=RUN)
    assert response.status_code == 201
    body = response.json()
    assert body["status"] == "failed"
    assert body["failed_stage"] == "refine"
    assert len(body["records"]) == 1
    assert client.get(f"/api/runs/{body['run_id']}").json()["status"] == "failed"


def test_output_dir_not_accepted(client, tmp_path):
    target = tmp_path / "x" / "y"
    response = client.post("/api/runs", json=dict(RUN, steps=1, output_dir=str(target)))
    assert response.status_code == 422
    assert not target.exists()
    assert not (tmp_path / "x").exists()


def test_unknown_field_rejected(client):
    assert client.post("/api/runs", json=dict(RUN, write_path="/tmp")).status_code == 422


def test_problem_file_path_rejected(client, tmp_path):
    problem = tmp_path / "problem.json"
    problem.write_text('{"mesh": "missing.json", "f": "1"}', encoding="utf-8")
    response = client.post("/api/runs", json=dict(RUN, problem=str(problem)))
    assert response.status_code == 400
    assert "Unknown problem" in response.json()["detail"]


def test_steps_limit(client, monkeypatch):
    monkeypatch.setattr(get_settings(), "api_max_steps", 3)
    response = client.post("/api/runs", json=dict(RUN, steps=4))
    assert response.status_code == 400
    assert "exceeds the limit of 3" in response.json()["detail"]


def test_max_dofs_defaults_to_limit(client, monkeypatch):
    monkeypatch.setattr(get_settings(), "api_max_dofs", 65)
    response = client.post("/api/runs", json={"scheme": "primal", "k": 1, "problem": "lshape2d", "steps": 5})
    body = response.json()
    assert body["config"]["max_dofs"] == 65
    assert body["config"]["output_dir"] is None
    assert len(body["records"]) == 1
    assert body["stopped_reason"] == "max-dofs"


def test_max_dofs_clamped_to_limit(client, monkeypatch):
    monkeypatch.setattr(get_settings(), "api_max_dofs", 65)
    response = client.post(
        "/api/runs", json={"scheme": "primal", "k": 1, "problem": "lshape2d", "steps": 5, "max_dofs": 10**9}
    )
    assert response.json()["config"]["max_dofs"] == 65


def test_completed_run_reports_stop_reason(client):
    body = client.post("/api/runs", json=RUN).json()
    assert body["stopped_reason"] == "steps"


def test_facet_choice_passed_through(client):
    response = client.post(
        "/api/runs", json=dict(RUN, stabilization="single-facet", facet_choice="longest", steps=1)
    )
    assert response.status_code == 201
    assert response.json()["config"]["facet_choice"] == "longest"
    assert client.post("/api/runs", json=dict(RUN, facet_choice="shortest")).status_code == 422
