import io
import json
import time

import pytest
from fastapi.testclient import TestClient

from cystrack import annotation as ann
from cystrack import synth
from cystrack.service import create_app

from remote_mock import MockSegmenterServer

TOKEN = "test-token"
AUTH = {"Authorization": f"Bearer {TOKEN}"}


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "data", auth_token=TOKEN)
    with TestClient(app) as c:
        yield c


@pytest.fixture(scope="module")
def scene(tmp_path_factory):
    root = tmp_path_factory.mktemp("scene")
    synth.write_rendered(synth.bundled_scenarios()["two_adjacent"], root)
    return root


def make_project(client, scene, name="demo"):
    pid = client.post("/api/v1/projects", json={"name": name}, headers=AUTH).json()[
        "project_id"
    ]
    r = client.post(
        f"/api/v1/projects/{pid}/frames",
        json={"directory": str(scene / "frames")},
        headers=AUTH,
    )
    assert r.status_code == 200, r.text
    annotation_doc = json.loads((scene / "annotation.json").read_text())
    r = client.put(
        f"/api/v1/projects/{pid}/annotation", json=annotation_doc, headers=AUTH
    )
    assert r.status_code == 200, r.text
    return pid


def wait_terminal(client, job_id, timeout=120.0):
    states = []
    deadline = time.time() + timeout
    while time.time() < deadline:
        doc = client.get(f"/api/v1/jobs/{job_id}", headers=AUTH).json()
        if not states or states[-1] != doc["state"]:
            states.append(doc["state"])
        if doc["state"] in ("done", "failed", "cancelled"):
            return doc, states
        time.sleep(0.05)
    raise AssertionError(f"job {job_id} did not finish; states seen: {states}")


class TestAuth:
    def test_missing_token_rejected(self, client):
        assert client.get("/api/v1/projects").status_code == 401
        bad = {"Authorization": "Bearer wrong"}
        assert client.get("/api/v1/projects", headers=bad).status_code == 401

    def test_health_open(self, client):
        assert client.get("/api/v1/health").status_code == 200


class TestProjects:
    def test_create_and_get(self, client):
        doc = client.post("/api/v1/projects", json={"name": "p1"}, headers=AUTH).json()
        assert doc["name"] == "p1"
        got = client.get(f"/api/v1/projects/{doc['project_id']}", headers=AUTH).json()
        assert got["project_id"] == doc["project_id"]
        listing = client.get("/api/v1/projects", headers=AUTH).json()
        assert any(p["project_id"] == doc["project_id"] for p in listing)

    def test_unknown_project_404(self, client):
        assert client.get("/api/v1/projects/zzz", headers=AUTH).status_code == 404

    def test_bad_name_400(self, client):
        assert (
            client.post("/api/v1/projects", json={"name": "  "}, headers=AUTH).status_code
            == 400
        )


class TestFrames:
    def test_multipart_upload(self, client, scene):
        pid = client.post(
            "/api/v1/projects", json={"name": "up"}, headers=AUTH
        ).json()["project_id"]
        files = []
        for p in sorted((scene / "frames").glob("*.png")):
            files.append(("files", (p.name, io.BytesIO(p.read_bytes()), "image/png")))
        r = client.post(f"/api/v1/projects/{pid}/frames", files=files, headers=AUTH)
        assert r.status_code == 200
        assert len(r.json()["frames"]) == 7
        assert r.json()["frame_width"] == 128

    def test_directory_reference(self, client, scene):
        pid = client.post(
            "/api/v1/projects", json={"name": "dir"}, headers=AUTH
        ).json()["project_id"]
        r = client.post(
            f"/api/v1/projects/{pid}/frames",
            json={"directory": str(scene / "frames")},
            headers=AUTH,
        )
        assert r.status_code == 200
        assert len(r.json()["frames"]) == 7

    def test_frame_download(self, client, scene):
        pid = make_project(client, scene)
        r = client.get(f"/api/v1/projects/{pid}/frames/frame_0000.png", headers=AUTH)
        assert r.status_code == 200
        assert r.content == (scene / "frames" / "frame_0000.png").read_bytes()
        assert (
            client.get(f"/api/v1/projects/{pid}/frames/nope.png", headers=AUTH).status_code
            == 404
        )

    def test_frames_immutable_after_job(self, client, scene):
        pid = make_project(client, scene)
        job = client.post(f"/api/v1/projects/{pid}/jobs", json={}, headers=AUTH).json()
        wait_terminal(client, job["job_id"])
        r = client.post(
            f"/api/v1/projects/{pid}/frames",
            json={"directory": str(scene / "frames")},
            headers=AUTH,
        )
        assert r.status_code == 409


class TestAnnotation:
    def test_put_get_round_trip(self, client, scene):
        pid = make_project(client, scene)
        got = client.get(f"/api/v1/projects/{pid}/annotation", headers=AUTH).json()
        original = json.loads((scene / "annotation.json").read_text())
        assert got == original

    def test_invalid_annotation_422_with_detail(self, client, scene):
        pid = client.post(
            "/api/v1/projects", json={"name": "bad"}, headers=AUTH
        ).json()["project_id"]
        client.post(
            f"/api/v1/projects/{pid}/frames",
            json={"directory": str(scene / "frames")},
            headers=AUTH,
        )
        doc = json.loads((scene / "annotation.json").read_text())
        doc["organoids"][0]["cysts"][0]["bbox"] = [10, 10, 10, 40]
        r = client.put(f"/api/v1/projects/{pid}/annotation", json=doc, headers=AUTH)
        assert r.status_code == 422
        detail = r.json()["detail"]
        assert detail["error"] == "BoxOutOfBounds"
        assert "cyst" in detail["detail"]

    def test_dimension_mismatch_422(self, client, scene):
        pid = client.post(
            "/api/v1/projects", json={"name": "dims"}, headers=AUTH
        ).json()["project_id"]
        client.post(
            f"/api/v1/projects/{pid}/frames",
            json={"directory": str(scene / "frames")},
            headers=AUTH,
        )
        doc = json.loads((scene / "annotation.json").read_text())
        doc["frame_width"] = 999
        r = client.put(f"/api/v1/projects/{pid}/annotation", json=doc, headers=AUTH)
        assert r.status_code == 422
        assert r.json()["detail"]["error"] == "FrameMismatch"


class TestJobs:
    def test_job_without_annotation_422(self, client, scene):
        pid = client.post(
            "/api/v1/projects", json={"name": "noann"}, headers=AUTH
        ).json()["project_id"]
        client.post(
            f"/api/v1/projects/{pid}/frames",
            json={"directory": str(scene / "frames")},
            headers=AUTH,
        )
        r = client.post(f"/api/v1/projects/{pid}/jobs", json={}, headers=AUTH)
        assert r.status_code == 422

    def test_happy_path_done_with_14_artifacts(self, client, scene):
        pid = make_project(client, scene)
        job = client.post(
            f"/api/v1/projects/{pid}/jobs",
            json={"backend": "baseline", "quality": "preview"},
            headers=AUTH,
        ).json()
        doc, states = wait_terminal(client, job["job_id"])
        assert doc["state"] == "done"
        assert doc["progress"]["frames_done"] == doc["progress"]["frames_total"] == 7
        manifest = client.get(
            f"/api/v1/jobs/{job['job_id']}/report", headers=AUTH
        ).json()
        assert len(manifest["artifacts"]) == 14
        log = client.get(f"/api/v1/jobs/{job['job_id']}/log", headers=AUTH).text
        assert "job started" in log

    def test_state_machine_never_skips_or_reverses(self, client, scene):
        pid = make_project(client, scene)
        job = client.post(f"/api/v1/projects/{pid}/jobs", json={}, headers=AUTH).json()
        doc, states = wait_terminal(client, job["job_id"])
        order = {"queued": 0, "running": 1, "done": 2, "failed": 2, "cancelled": 2}
        indices = [order[s] for s in states]
        assert indices == sorted(indices)
        assert states[-1] in ("done", "failed", "cancelled")
        # Polling status is side-effect free.
        again = client.get(f"/api/v1/jobs/{job['job_id']}", headers=AUTH).json()
        assert again["state"] == doc["state"]

    def test_cancel_queued_job(self, client, scene):
        # Worker is busy with the first job; the second is cancelled in queue.
        pid = make_project(client, scene)
        first = client.post(f"/api/v1/projects/{pid}/jobs", json={}, headers=AUTH).json()
        second = client.post(f"/api/v1/projects/{pid}/jobs", json={}, headers=AUTH).json()
        cancelled = client.post(
            f"/api/v1/jobs/{second['job_id']}/cancel", headers=AUTH
        ).json()
        doc, _ = wait_terminal(client, second["job_id"])
        assert doc["state"] == "cancelled"
        r = client.get(f"/api/v1/jobs/{second['job_id']}/report", headers=AUTH)
        assert r.status_code == 404
        wait_terminal(client, first["job_id"])

    def test_rerun_identical_hashes(self, client, scene):
        pid = make_project(client, scene)
        hashes = []
        for _ in range(2):
            job = client.post(
                f"/api/v1/projects/{pid}/jobs",
                json={"quality": "preview"},
                headers=AUTH,
            ).json()
            doc, _ = wait_terminal(client, job["job_id"])
            assert doc["state"] == "done"
            manifest = client.get(
                f"/api/v1/jobs/{job['job_id']}/report", headers=AUTH
            ).json()
            hashes.append(
                {a["path"]: a.get("sha256") for a in manifest["artifacts"]}
            )
        assert hashes[0] == hashes[1]

    def test_unknown_job_404(self, client):
        assert client.get("/api/v1/jobs/zzz", headers=AUTH).status_code == 404

    def test_remote_unreachable_503(self, client, scene):
        pid = make_project(client, scene)
        r = client.post(
            f"/api/v1/projects/{pid}/jobs",
            json={"backend": "remote", "params": {"remote_url": "http://127.0.0.1:1"}},
            headers=AUTH,
        )
        assert r.status_code == 503

    def test_remote_backend_via_mock(self, client, scene):
        pid = make_project(client, scene)
        with MockSegmenterServer() as mock:
            job = client.post(
                f"/api/v1/projects/{pid}/jobs",
                json={
                    "backend": "remote",
                    "quality": "preview",
                    "params": {"remote_url": mock.url},
                },
                headers=AUTH,
            ).json()
            doc, _ = wait_terminal(client, job["job_id"])
        assert doc["state"] == "done"

    def test_report_artifact_download(self, client, scene):
        pid = make_project(client, scene)
        job = client.post(
            f"/api/v1/projects/{pid}/jobs", json={"quality": "preview"}, headers=AUTH
        ).json()
        wait_terminal(client, job["job_id"])
        r = client.get(
            f"/api/v1/jobs/{job['job_id']}/report/metrics.csv", headers=AUTH
        )
        assert r.status_code == 200
        assert r.text.startswith("cyst_id,")
        r = client.get(
            f"/api/v1/jobs/{job['job_id']}/report/../../secrets", headers=AUTH
        )
        assert r.status_code in (400, 404)
