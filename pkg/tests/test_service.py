from __future__ import annotations

import io
import subprocess
import sys
import threading
import zlib
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
import requests
from PIL import Image as PilImage

from loopscreen.dataset import SynthConfig, synth_generate
from loopscreen.errors import ModelLoadFailure
from loopscreen.imaging import save_image
from loopscreen.models import build, save
from loopscreen.service import ScreeningService, ServiceConfig

CLOSED_ERROR_CODES = {
    "payload_too_large", "unsupported_media_type", "missing_image_field",
    "undecodable_image", "no_ink", "content_too_large", "missing_content_length",
    "internal_error", "not_found",
}


@pytest.fixture(scope="module")
def model_path(tmp_path_factory):
    path = tmp_path_factory.mktemp("svc") / "model.sczm"
    save(build("custom_cnn", seed=17), path)
    return path


@pytest.fixture(scope="module")
def loop_png(tmp_path_factory):
    item = synth_generate(SynthConfig(count_per_class=1, seed=8))[0]
    path = tmp_path_factory.mktemp("img") / "loop.png"
    save_image(item.image, path)
    return path


@pytest.fixture(scope="module")
def service(model_path):
    svc = ScreeningService(ServiceConfig(model_path=str(model_path), port=18652))
    svc.start()
    thread = threading.Thread(target=svc.serve_forever, daemon=True)
    thread.start()
    yield svc
    svc.shutdown()


@pytest.fixture(scope="module")
def base(service):
    return f"http://127.0.0.1:{service.port}"


def test_health_reports_model_identity(base, model_path):
    body = requests.get(base + "/api/v1/health", timeout=10).json()
    assert body["status"] == "ok"
    assert body["model_arch"] == "custom_cnn"
    expected_crc = zlib.crc32(model_path.read_bytes()[:-4]) & 0xFFFFFFFF
    assert body["model_checksum"] == f"{expected_crc:08x}"
    assert body["uptime_seconds"] < 60.0


def test_health_is_stable_across_calls(base):
    first = requests.get(base + "/api/v1/health", timeout=10).json()
    second = requests.get(base + "/api/v1/health", timeout=10).json()
    assert first["model_arch"] == second["model_arch"]
    assert first["model_checksum"] == second["model_checksum"]


def test_predict_happy_path(base, loop_png):
    resp = requests.post(
        base + "/api/v1/predict",
        files={"image": ("loop.png", loop_png.read_bytes(), "image/png")},
        timeout=30,
    )
    assert resp.status_code == 200
    body = resp.json()
    assert 0.0 <= body["probability_patient"] <= 1.0
    expected = "patient" if body["probability_patient"] >= 0.5 else "control"
    assert body["label"] == expected
    assert body["preprocess_echo"]["canvas_w"] == 128


def test_predict_is_bit_stable_for_identical_uploads(base, loop_png):
    payload = {"image": ("loop.png", loop_png.read_bytes(), "image/png")}
    a = requests.post(base + "/api/v1/predict", files=payload, timeout=30).json()
    b = requests.post(base + "/api/v1/predict", files=payload, timeout=30).json()
    assert a["probability_patient"] == b["probability_patient"]


def test_concurrent_predictions_succeed(base, loop_png):
    payload = loop_png.read_bytes()

    def hit(_):
        return requests.post(
            base + "/api/v1/predict",
            files={"image": ("loop.png", payload, "image/png")},
            timeout=60,
        )

    with ThreadPoolExecutor(max_workers=4) as pool:
        responses = list(pool.map(hit, range(4)))
    assert all(r.status_code == 200 for r in responses)
    probs = {r.json()["probability_patient"] for r in responses}
    assert len(probs) == 1  # same upload, bit-identical answers


def test_oversized_upload_413(base):
    resp = requests.post(
        base + "/api/v1/predict",
        files={"image": ("big.png", b"\0" * (6 * 1024 * 1024), "image/png")},
        timeout=30,
    )
    assert resp.status_code == 413
    assert resp.json()["error"] == "payload_too_large"


def test_wrong_content_type_415(base):
    resp = requests.post(base + "/api/v1/predict", data=b"just text",
                         headers={"Content-Type": "text/plain"}, timeout=10)
    assert resp.status_code == 415
    assert resp.json()["error"] == "unsupported_media_type"


def test_missing_image_field_422(base):
    resp = requests.post(base + "/api/v1/predict",
                         files={"wrong_field": ("f.png", b"123", "image/png")}, timeout=10)
    assert resp.status_code == 422
    assert resp.json()["error"] == "missing_image_field"


def test_undecodable_image_400(base):
    resp = requests.post(base + "/api/v1/predict",
                         files={"image": ("f.png", b"not an image", "image/png")}, timeout=10)
    assert resp.status_code == 400
    assert resp.json()["error"] == "undecodable_image"


def test_blank_page_maps_to_no_ink(base):
    buf = io.BytesIO()
    PilImage.fromarray(np.full((64, 64), 255, np.uint8), "L").save(buf, "PNG")
    resp = requests.post(base + "/api/v1/predict",
                         files={"image": ("white.png", buf.getvalue(), "image/png")},
                         timeout=10)
    assert resp.status_code == 400
    assert resp.json()["error"] == "no_ink"


def test_unknown_route_404(base):
    resp = requests.get(base + "/api/v1/nope", timeout=10)
    assert resp.status_code == 404
    assert resp.json()["error"] == "not_found"


def test_error_codes_come_from_closed_enum(base):
    probes = [
        requests.post(base + "/api/v1/predict", data=b"x",
                      headers={"Content-Type": "text/plain"}, timeout=10),
        requests.post(base + "/api/v1/predict",
                      files={"x": ("f.png", b"1", "image/png")}, timeout=10),
        requests.post(base + "/api/v1/predict",
                      files={"image": ("f.png", b"1", "image/png")}, timeout=10),
        requests.get(base + "/api/v1/bogus", timeout=10),
    ]
    for resp in probes:
        assert resp.status_code != 200
        assert resp.json()["error"] in CLOSED_ERROR_CODES


def test_cors_headers_present(base):
    resp = requests.get(base + "/api/v1/health", timeout=10)
    assert resp.headers.get("Access-Control-Allow-Origin") == "*"
    preflight = requests.options(base + "/api/v1/predict", timeout=10)
    assert preflight.status_code == 204


def test_corrupt_model_refuses_to_start(tmp_path, model_path):
    broken = tmp_path / "broken.sczm"
    data = bytearray(model_path.read_bytes())
    data[-1] ^= 0xFF
    broken.write_bytes(bytes(data))
    with pytest.raises(ModelLoadFailure):
        ScreeningService(ServiceConfig(model_path=str(broken)))


def test_serve_cli_exits_nonzero_on_corrupt_model(tmp_path, model_path):
    broken = tmp_path / "broken.sczm"
    data = bytearray(model_path.read_bytes())
    data[10] ^= 0xFF
    broken.write_bytes(bytes(data))
    result = subprocess.run(
        [sys.executable, "-m", "loopscreen.cli", "serve", "--model", str(broken),
         "--port", "18999"],
        capture_output=True, text=True, timeout=60,
    )
    assert result.returncode == 1
    assert result.stderr.startswith("error\tmodel_load_failure")


def test_cli_and_service_probabilities_bit_equal(base, model_path, loop_png):
    cli = subprocess.run(
        [sys.executable, "-m", "loopscreen.cli", "predict",
         "--model", str(model_path), "--image", str(loop_png)],
        capture_output=True, text=True, timeout=120,
    )
    assert cli.returncode == 0
    cli_prob = float(
        dict(l.split("=", 1) for l in cli.stdout.strip().splitlines())["probability_patient"]
    )
    resp = requests.post(
        base + "/api/v1/predict",
        files={"image": ("loop.png", loop_png.read_bytes(), "image/png")},
        timeout=30,
    ).json()
    assert resp["probability_patient"] == cli_prob
