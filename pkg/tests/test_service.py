"""Studio HTTP service: revision guards, jobs, persistence."""

import io
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient
from PIL import Image

from cityforge.service import ServiceConfig, create_app


@pytest.fixture(scope="module")
def studio_env(tmp_path_factory):
    data_dir = tmp_path_factory.mktemp("studio")
    config = ServiceConfig(data_dir=data_dir, workers=2, use_features=False)
    app = create_app(config)
    with TestClient(app) as client:
        yield client, config


@pytest.fixture(scope="module")
def project(studio_env):
    client, _ = studio_env
    resp = client.post("/api/projects", json={"width": 512, "height": 512, "seed": 11})
    assert resp.status_code == 200
    return resp.json()


def _wait_job(client, job_id, timeout=180.0):
    t0 = time.time()
    while time.time() - t0 < timeout:
        status = client.get(f"/api/jobs/{job_id}").json()
        if status["status"] in ("done", "failed"):
            return status
        time.sleep(0.2)
    raise TimeoutError("job did not finish")


def _traj_body(name, frames=2):
    return {
        "name": name,
        "mode": "orbit",
        "center": [256.0, 256.0],
        "radius_m": 200.0,
        "altitude_m": 200.0,
        "frames": frames,
        "width": 64,
        "height": 36,
        "focal": 60.0,
        "preview_every": 1,
    }


def test_generate_validates_dims(studio_env):
    client, _ = studio_env
    assert client.post("/api/projects", json={"width": 500, "height": 512, "seed": 1}).status_code == 422
    assert client.post("/api/projects", json={"width": 256, "height": 256, "seed": 1}).status_code == 422
    assert client.post("/api/projects", json={"width": 512, "height": 512, "sampler": "nope"}).status_code == 422


def test_generate_deterministic(studio_env):
    client, _ = studio_env
    a = client.post("/api/projects", json={"width": 512, "height": 512, "seed": 77}).json()
    b = client.post("/api/projects", json={"width": 512, "height": 512, "seed": 77}).json()
    assert a["revision"] == b["revision"] == 1
    bin_a = client.get(f"/api/projects/{a['project_id']}/semantic.bin").content
    bin_b = client.get(f"/api/projects/{b['project_id']}/semantic.bin").content
    assert bin_a == bin_b


def test_preview_rasters(studio_env, project):
    client, _ = studio_env
    pid = project["project_id"]
    png = client.get(f"/api/projects/{pid}/semantic.png", params={"scale": 4})
    img = Image.open(io.BytesIO(png.content))
    assert img.size == (128, 128)
    raw = client.get(f"/api/projects/{pid}/semantic.bin").content
    w, h = np.frombuffer(raw[:8], "<u4")
    assert (w, h) == (512, 512)
    grid = np.frombuffer(raw[8:], "<u1").reshape(h, w)
    assert grid.max() <= 8


def test_inpaint_revision_guard(studio_env):
    client, _ = studio_env
    pid = client.post("/api/projects", json={"width": 512, "height": 512, "seed": 3}).json()["project_id"]
    poly = [[100.0, 100.0], [180.0, 100.0], [180.0, 180.0], [100.0, 180.0]]
    stale = client.post(f"/api/projects/{pid}/inpaint", json={"revision": 99, "polygon": poly, "seed": 5})
    assert stale.status_code == 409
    before = client.get(f"/api/projects/{pid}/semantic.bin").content
    ok = client.post(f"/api/projects/{pid}/inpaint", json={"revision": 1, "polygon": poly, "seed": 5})
    assert ok.status_code == 200
    body = ok.json()
    assert body["revision"] == 2
    after = client.get(f"/api/projects/{pid}/semantic.bin").content
    assert after != before
    # cells outside the touched blocks are preserved
    a = np.frombuffer(before[8:], "<u1").reshape(512, 512)
    b = np.frombuffer(after[8:], "<u1").reshape(512, 512)
    x0, y0, x1, y1 = body["region_bbox"]
    bx0, by0 = (x0 // 16) * 16, (y0 // 16) * 16
    bx1, by1 = ((x1 // 16) + 1) * 16, ((y1 // 16) + 1) * 16
    outside = np.ones((512, 512), bool)
    outside[by0:by1, bx0:bx1] = False
    assert np.array_equal(a[outside], b[outside])
    # the stale revision must not have mutated anything: revision is exactly 2
    assert client.get(f"/api/projects/{pid}").json()["revision"] == 2


def test_trajectory_preview(studio_env, project):
    client, _ = studio_env
    pid = project["project_id"]
    body = _traj_body("loop", frames=60)
    body["preview_every"] = 10
    resp = client.post(f"/api/projects/{pid}/trajectories", json=body)
    assert resp.status_code == 200
    data = resp.json()
    assert data["count"] == 60
    assert len(data["thumbnails"]) == 6
    again = client.post(f"/api/projects/{pid}/trajectories", json=body).json()
    assert [t["png_base64"] for t in again["thumbnails"]] == [t["png_base64"] for t in data["thumbnails"]]


def test_trajectory_range_rejected(studio_env, project):
    client, _ = studio_env
    pid = project["project_id"]
    body = _traj_body("bad")
    body["radius_m"] = 1000.0
    resp = client.post(f"/api/projects/{pid}/trajectories", json=body)
    assert resp.status_code == 422
    assert "125" in resp.text and "813" in resp.text


def test_render_job_lifecycle(studio_env, project):
    client, _ = studio_env
    pid = project["project_id"]
    client.post(f"/api/projects/{pid}/trajectories", json=_traj_body("mini"))
    revision = client.get(f"/api/projects/{pid}").json()["revision"]

    bad = client.post(f"/api/projects/{pid}/renders", json={"revision": 999, "trajectory": "mini"})
    assert bad.status_code == 409
    missing = client.post(f"/api/projects/{pid}/renders", json={"revision": revision, "trajectory": "nope"})
    assert missing.status_code == 404

    job = client.post(
        f"/api/projects/{pid}/renders",
        json={"revision": revision, "trajectory": "mini", "style_seed": 4},
    ).json()
    status = _wait_job(client, job["job_id"])
    assert status["status"] == "done"
    assert status["progress"] == status["total"] == 2
    assert status["frames"] == [0, 1]
    frame = client.get(f"/api/jobs/{job['job_id']}/frames/0.png")
    assert frame.status_code == 200
    img = Image.open(io.BytesIO(frame.content))
    assert img.size == (64, 36)

    # determinism: an identical submission produces identical frames
    job2 = client.post(
        f"/api/projects/{pid}/renders",
        json={"revision": revision, "trajectory": "mini", "style_seed": 4},
    ).json()
    status2 = _wait_job(client, job2["job_id"])
    assert status2["status"] == "done"
    for k in range(2):
        a = client.get(f"/api/jobs/{job['job_id']}/frames/{k}.png").content
        b = client.get(f"/api/jobs/{job2['job_id']}/frames/{k}.png").content
        assert a == b


def test_job_snapshot_survives_mutation(studio_env):
    client, _ = studio_env
    pid = client.post("/api/projects", json={"width": 512, "height": 512, "seed": 9}).json()["project_id"]
    client.post(f"/api/projects/{pid}/trajectories", json=_traj_body("snap"))
    job = client.post(f"/api/projects/{pid}/renders", json={"revision": 1, "trajectory": "snap"}).json()
    poly = [[10.0, 10.0], [200.0, 10.0], [200.0, 200.0], [10.0, 200.0]]
    mut = client.post(f"/api/projects/{pid}/inpaint", json={"revision": 1, "polygon": poly, "seed": 1})
    assert mut.status_code == 200
    status = _wait_job(client, job["job_id"])
    assert status["status"] == "done"
    # a render against the old revision is now rejected
    rej = client.post(f"/api/projects/{pid}/renders", json={"revision": 1, "trajectory": "snap"})
    assert rej.status_code == 409


def test_restart_persistence(studio_env, project):
    client, config = studio_env
    pid = project["project_id"]
    client.post(f"/api/projects/{pid}/trajectories", json=_traj_body("keep"))
    revision = client.get(f"/api/projects/{pid}").json()["revision"]
    job = client.post(f"/api/projects/{pid}/renders", json={"revision": revision, "trajectory": "keep"}).json()
    _wait_job(client, job["job_id"])
    frame_before = client.get(f"/api/jobs/{job['job_id']}/frames/1.png").content

    app2 = create_app(ServiceConfig(data_dir=config.data_dir, workers=1, use_features=False))
    with TestClient(app2) as client2:
        info = client2.get(f"/api/projects/{pid}")
        assert info.status_code == 200
        assert info.json()["revision"] == revision
        assert "keep" in info.json()["trajectories"]
        status = client2.get(f"/api/jobs/{job['job_id']}").json()
        assert status["status"] == "done"
        assert client2.get(f"/api/jobs/{job['job_id']}/frames/1.png").content == frame_before
