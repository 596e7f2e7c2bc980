import io

import pytest
from fastapi.testclient import TestClient

from app.main import app
from app.services.checkpoint import save_checkpoint
from app.services.imaging import array_to_image
from app.services.inference import InferenceService, inference_service
from app.services.params import init_params


@pytest.fixture
def service(small_settings, monkeypatch):
    fresh = InferenceService(small_settings.model_copy(
        update={"checkpoint_path": small_settings.run_dir / "model.ckpt"}))
    for name in ("settings", "params", "checkpoint_path", "load_error"):
        monkeypatch.setattr(inference_service, name, getattr(fresh, name))
    return inference_service


@pytest.fixture
def client(service):
    return TestClient(app)


@pytest.fixture
def trained(service):
    params = init_params(service.settings, seed=3, std=0.3)
    save_checkpoint(params, service.default_checkpoint)
    return params


def ppm_bytes(rng, size=32):
    buffer = io.BytesIO()
    array_to_image(rng.uniform(size=(3, size, size))).save(buffer, format="PPM")
    return buffer.getvalue()


def test_liveness(client):
    response = client.get("/health/live")
    assert response.status_code == 200
    assert response.json()["status"] == "alive"


def test_health_is_degraded_without_checkpoint(client):
    body = client.get("/health").json()
    assert body["status"] == "degraded"
    assert body["checks"]["checkpoint"]["status"] == "unhealthy"
    assert client.get("/health/ready").json()["status"] == "not_ready"


def test_health_loads_the_checkpoint(client, trained):
    assert client.get("/health").json()["status"] == "healthy"
    assert client.get("/health/ready").json()["status"] == "ready"


def test_localize_returns_ranked_classes_and_box(client, trained, rng):
    response = client.post("/api/v1/localize", content=ppm_bytes(rng),
                           params={"include_heatmap": "true"})
    assert response.status_code == 200
    body = response.json()
    assert len(body["ranked_classes"]) == 8
    assert body["ranked_classes"][0]["name"] in {"disk", "square", "triangle", "cross", "ring",
                                                 "horizontal_bar", "vertical_bar", "diamond"}
    assert body["heatmap_size"] == [32, 32]
    assert len(body["heatmap"]) == 32
    assert body["box"]["x1"] <= 32


def test_localize_rejects_empty_and_garbage_bodies(client, trained):
    assert client.post("/api/v1/localize", content=b"").status_code == 422
    assert client.post("/api/v1/localize", content=b"P6 nonsense").status_code == 422


def test_localize_rejects_wrong_image_size(client, trained, rng):
    response = client.post("/api/v1/localize", content=ppm_bytes(rng, size=24))
    assert response.status_code == 422


def test_localize_without_checkpoint_is_a_server_error(client, rng):
    response = client.post("/api/v1/localize", content=ppm_bytes(rng))
    assert response.status_code == 500


def test_metrics_endpoint(client):
    response = client.get("/metrics/")
    assert response.status_code == 200
    assert "scmn_" in response.text
