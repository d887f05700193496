"""Acceptance suite: one test per release criterion, each printing a
pass/fail line with its runtime (run with ``pytest -s`` to see them all).
Every tolerance is pinned here; nothing is deferred to calibration.
"""

import json
import time
from contextlib import contextmanager

import numpy as np
import pytest
from click.testing import CliRunner
from fastapi.testclient import TestClient

from cystrack import annotation as ann
from cystrack import masks, metrics, synth, tracking
from cystrack.baseline import BaselineBackend
from cystrack.cli import main as cli_main
from cystrack.service import create_app

from oracles import oracle_circularity, rasterize_disk, rasterize_square
from remote_mock import MockSegmenterServer
from test_metrics import fig3_fixture, synthetic_record


@contextmanager
def criterion(name, budget_s):
    start = time.perf_counter()
    try:
        yield
    except BaseException:
        print(f"[ACCEPTANCE] {name}: FAIL ({time.perf_counter() - start:.2f}s)")
        raise
    elapsed = time.perf_counter() - start
    print(f"[ACCEPTANCE] {name}: PASS ({elapsed:.2f}s)")
    assert elapsed < budget_s, f"{name} exceeded its {budget_s}s runtime budget"


def test_fig3_worked_values():
    with criterion("fig3-worked-values", budget_s=1.0):
        track, validated = fig3_fixture()
        records = metrics.cyst_records(track, validated)
        series = metrics.population_series(records, validated)
        assert series.n_total_organoids == 14
        first, last = series.frames[0], series.frames[-1]
        assert abs(first.formation_rate_percent - 7.142857) < 1e-6
        assert abs(first.cyst_density - 0.071429) < 1e-6
        assert abs(last.formation_rate_percent - 42.857143) < 1e-6
        assert abs(last.cyst_density - 0.5) < 1e-6


def test_area_conversion_exactness():
    with criterion("area-conversion-exactness", budget_s=1.0):
        rng = np.random.default_rng(2024)
        checked = 0
        while checked < 1000:
            upp = float(rng.uniform(0.05, 12.0))
            w = int(rng.integers(2, 9))
            h = int(rng.integers(2, 9))
            mask = np.zeros((12, 12), bool)
            mask[2 : 2 + h, 2 : 2 + w] = True
            session = ann.validate(
                ann.AnnotationSession(
                    frame_width=12, frame_height=12, annotated_frame_index=1,
                    calibration=ann.Calibration(
                        um_per_pixel=upp, total_duration_hours=24.0, frame_count=2
                    ),
                    organoids=(
                        ann.OrganoidAnnotation(
                            organoid_id=0, anchor=(3.0, 3.0),
                            cysts=(ann.CystPrompt(cyst_id=0, bbox=(2, 2, 2 + w, 2 + h)),),
                        ),
                    ),
                )
            )
            result = tracking.TrackResult(width=12, height=12, n_frames=2)
            result.tracks[0] = tracking.CystTrack(
                cyst_id=0, present=[False, True], masks=[None, mask], formation_frame=1
            )
            (record,) = metrics.cyst_records(result, session)
            measure = record.frames[1]
            assert measure.area_px == w * h
            assert measure.area_um2 == measure.area_px * upp**2  # bit-exact
            checked += 1
        # Round-number cross-check: 100 px at 2 um/px -> 400 um².
        assert 100 * 2.0**2 == 400.0


def test_circularity_calibration():
    with criterion("circularity-calibration", budget_s=10.0):
        for r in range(8, 65):
            disk = rasterize_disk(r)
            got = masks.morphometry(disk).circularity
            want = oracle_circularity(disk)
            assert got >= 0.9, f"disk r={r} scored {got:.4f}"
            assert got <= 1.0
            assert abs(got - want) <= 0.02, f"disk r={r}: {got:.4f} vs oracle {want:.4f}"
        # Squares score strictly below equal-area disks.
        for side in (10, 15, 21, 28, 40):
            square = rasterize_square(side)
            equal_area_disk = rasterize_disk(side / np.sqrt(np.pi))
            assert (
                masks.morphometry(square).circularity
                < masks.morphometry(equal_area_disk).circularity
            )


def test_tracking_oracle_suite():
    with criterion("tracking-oracle-suite", budget_s=60.0):
        scenarios = synth.bundled_scenarios()
        assert len(scenarios) >= 6
        backend = BaselineBackend()
        for name, scenario in scenarios.items():
            seq, gt, session = synth.render(scenario)
            result = tracking.track(seq, session, backend)
            scores = []
            for cyst_id, gt_track in gt.tracks.items():
                got = result.tracks[cyst_id]
                assert got.formation_frame == gt_track.formation_frame, name
                formed = False
                for flag in got.present:
                    if formed:
                        assert flag, f"{name}: presence not monotone"
                    formed = formed or flag
                for f in range(seq.n_frames):
                    if gt_track.present[f]:
                        scores.append(
                            masks.iou(got.masks[f], gt_track.masks[f])
                            if got.present[f]
                            else 0.0
                        )
            assert float(np.mean(scores)) >= 0.9, name

        # reverse_timeline is an involution on random timelines.
        rng = np.random.default_rng(7)
        for _ in range(200):
            timeline = [int(v) for v in rng.integers(0, 100, size=rng.integers(1, 24))]
            assert tracking.reverse_timeline(tracking.reverse_timeline(timeline)) == timeline
        keyed = {
            k: [int(v) for v in rng.integers(0, 10, size=7)] for k in range(5)
        }
        assert tracking.reverse_timeline(tracking.reverse_timeline(keyed)) == keyed


def test_growth_summary_criterion():
    with criterion("growth-summary", budget_s=1.0):
        rates = [12.0, -3.0, 40.0, 7.5, 0.0, 22.0, 31.0, 5.0, 16.0]
        records = [
            synthetic_record(i, [100.0, 100.0 + r], times=[0.0, 1.0])
            for i, r in enumerate(rates)
        ]
        summary = metrics.growth_summary(records)
        counts = {"fast": 0, "medium": 0, "slow": 0}
        for row in summary.rows:
            counts[row.phenotype] += 1
        assert counts == {"fast": 3, "medium": 3, "slow": 3}
        ordered = [row.overall_growth_rate for row in summary.rows]
        assert all(a >= b for a, b in zip(ordered, ordered[1:]))

        constant = synthetic_record(0, [100.0, 100.0, 100.0])
        assert metrics.overall_growth_rate(constant) == 0.0

        doubling = synthetic_record(0, [100.0, 200.0, 400.0], times=[0.0, 1.0, 2.0])
        assert metrics.overall_growth_rate(doubling) == 150.0


def test_end_to_end_determinism(tmp_path):
    with criterion("end-to-end-determinism", budget_s=120.0):
        project = tmp_path / "project"
        synth.write_rendered(synth.bundled_scenarios()["growth"], project)
        runner = CliRunner()
        outs = []
        for tag in ("a", "b"):
            out = tmp_path / f"report-{tag}"
            res = runner.invoke(
                cli_main,
                [
                    "run", "--frames", str(project / "frames"),
                    "--annotations", str(project / "annotation.json"),
                    "--out", str(out), "--quality", "preview",
                ],
                catch_exceptions=False,
            )
            assert res.exit_code == 0, res.output
            outs.append(out)

        a, b = outs
        rel_files = sorted(str(p.relative_to(a)) for p in a.rglob("*") if p.is_file())
        # Fixed layout.
        for expected in [
            "manifest.json", "metrics.csv", "population.csv", "growth.csv",
            "metrics.json", "plots/areas.svg", "plots/circularity.svg",
            "plots/scatter.svg", "plots/heatmap.svg",
            "overlays/overlay.gif", "overlays/masks.gif", "overlays/side_by_side.gif",
        ]:
            assert expected in rel_files
        for kind in ("overlay", "masks", "side_by_side"):
            for f in range(7):
                assert f"overlays/{kind}/frame_{f:04d}.png" in rel_files

        # Byte-identical artifacts across the two runs.
        for rel in rel_files:
            assert (a / rel).read_bytes() == (b / rel).read_bytes(), rel

        # Manifest is complete: lists exactly the emitted files.
        manifest = json.loads((a / "manifest.json").read_text())
        assert len(manifest["artifacts"]) == 14
        listed = set()
        for art in manifest["artifacts"]:
            if art["kind"] == "file":
                listed.add(art["path"])
            else:
                listed.update(f["path"] for f in art["files"])
        assert listed == {r for r in rel_files if r != "manifest.json"}


def test_service_state_machine(tmp_path):
    with criterion("service-state-machine", budget_s=30.0):
        scene = tmp_path / "scene"
        synth.write_rendered(synth.bundled_scenarios()["static"], scene)
        token = "acceptance-token"
        headers = {"Authorization": f"Bearer {token}"}
        app = create_app(tmp_path / "data", auth_token=token)
        with TestClient(app) as client:
            pid = client.post(
                "/api/v1/projects", json={"name": "acceptance"}, headers=headers
            ).json()["project_id"]
            client.post(
                f"/api/v1/projects/{pid}/frames",
                json={"directory": str(scene / "frames")},
                headers=headers,
            )

            # Invalid annotation -> 422 carrying the annotation error detail.
            doc = json.loads((scene / "annotation.json").read_text())
            bad = json.loads(json.dumps(doc))
            bad["organoids"][0]["anchor"] = [-5, -5]
            r = client.put(
                f"/api/v1/projects/{pid}/annotation", json=bad, headers=headers
            )
            assert r.status_code == 422
            assert r.json()["detail"]["error"] == "AnchorOutOfBounds"

            assert client.put(
                f"/api/v1/projects/{pid}/annotation", json=doc, headers=headers
            ).status_code == 200

            def run_job(payload):
                job_id = client.post(
                    f"/api/v1/projects/{pid}/jobs", json=payload, headers=headers
                ).json()["job_id"]
                states = []
                deadline = time.time() + 60
                while time.time() < deadline:
                    status = client.get(
                        f"/api/v1/jobs/{job_id}", headers=headers
                    ).json()
                    if not states or states[-1] != status["state"]:
                        states.append(status["state"])
                    if status["state"] in ("done", "failed", "cancelled"):
                        return job_id, status, states
                    time.sleep(0.05)
                raise AssertionError("job never finished")

            # No skipped or reversed states, reproducible report hashes.
            hashes = []
            for _ in range(2):
                job_id, status, states = run_job({"quality": "preview"})
                assert status["state"] == "done"
                rank = {"queued": 0, "running": 1, "done": 2}
                seen = [rank[s] for s in states]
                assert seen == sorted(seen)
                manifest = client.get(
                    f"/api/v1/jobs/{job_id}/report", headers=headers
                ).json()
                assert len(manifest["artifacts"]) == 14
                hashes.append(
                    tuple(
                        (a["path"], a.get("sha256")) for a in manifest["artifacts"]
                    )
                )
            assert hashes[0] == hashes[1]

            # Remote-backend path against an in-process protocol mock.
            with MockSegmenterServer() as mock:
                job_id, status, _ = run_job(
                    {
                        "backend": "remote",
                        "quality": "preview",
                        "params": {"remote_url": mock.url},
                    }
                )
                assert status["state"] == "done"
                remote_manifest = client.get(
                    f"/api/v1/jobs/{job_id}/report", headers=headers
                ).json()
            remote_hashes = tuple(
                (a["path"], a.get("sha256")) for a in remote_manifest["artifacts"]
            )
            assert remote_hashes == hashes[0]

            # Cancel while queued: terminal state, no report.
            first = client.post(
                f"/api/v1/projects/{pid}/jobs", json={}, headers=headers
            ).json()
            queued = client.post(
                f"/api/v1/projects/{pid}/jobs", json={}, headers=headers
            ).json()
            client.post(f"/api/v1/jobs/{queued['job_id']}/cancel", headers=headers)
            deadline = time.time() + 60
            while time.time() < deadline:
                state = client.get(
                    f"/api/v1/jobs/{queued['job_id']}", headers=headers
                ).json()["state"]
                if state in ("done", "failed", "cancelled"):
                    break
                time.sleep(0.05)
            assert state == "cancelled"
            assert (
                client.get(
                    f"/api/v1/jobs/{queued['job_id']}/report", headers=headers
                ).status_code
                == 404
            )
