"""Deterministic synthetic time-lapse generator with exact ground truth.

Renders anti-aliased disks over a noisy background from a seeded
generator, so every byte of every frame is reproducible from the
scenario alone. The ground-truth masks are the exact rasterized disks
(pixel centers within the radius), which gives the tracking and metrics
tests an oracle that is independent of any segmenter.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import wire
from .annotation import (
    AnnotationSession,
    Calibration,
    CystPrompt,
    OrganoidAnnotation,
)
from .masks import bbox_of
from .tracking import CystTrack, FrameSequence, TrackResult


class ScenarioError(Exception):
    pass


class OutOfBoundsError(ScenarioError):
    """An object leaves the frame on a frame where it exists."""


@dataclass(frozen=True)
class SynthObject:
    """One disk: per-frame center path and radius, fixed contrast.

    ``centers`` and ``radii`` span all frames; entries before
    ``appear_frame`` are ignored. ``contrast`` is added to the background
    level inside the disk (negative for dark objects). ``organoid`` groups
    objects under a shared parent; None means the object gets its own.
    """

    appear_frame: int
    centers: tuple[tuple[float, float], ...]
    radii: tuple[float, ...]
    contrast: float
    organoid: int | None = None


@dataclass(frozen=True)
class Scenario:
    seed: int
    width: int
    height: int
    frame_count: int
    objects: tuple[SynthObject, ...]
    background_level: float = 60.0
    noise_amplitude: float = 2.5
    um_per_pixel: float = 1.5
    total_duration_hours: float = 144.0


def validate_scenario(scenario: Scenario) -> None:
    if scenario.frame_count < 2:
        raise ScenarioError("scenario needs at least 2 frames")
    if scenario.width < 8 or scenario.height < 8:
        raise ScenarioError("frame too small")
    if not scenario.objects:
        raise ScenarioError("scenario has no objects")
    for i, obj in enumerate(scenario.objects):
        if len(obj.centers) != scenario.frame_count or len(obj.radii) != scenario.frame_count:
            raise ScenarioError(
                f"object {i}: centers/radii must have one entry per frame"
            )
        if not 0 <= obj.appear_frame < scenario.frame_count:
            raise ScenarioError(f"object {i}: appear_frame out of range")
        for f in range(obj.appear_frame, scenario.frame_count):
            r = obj.radii[f]
            cx, cy = obj.centers[f]
            if r <= 0:
                raise ScenarioError(f"object {i}: radius must be > 0 at frame {f}")
            if (
                cx - r < 0
                or cy - r < 0
                or cx + r > scenario.width - 1
                or cy + r > scenario.height - 1
            ):
                raise OutOfBoundsError(
                    f"object {i} leaves the {scenario.width}x{scenario.height} "
                    f"frame at frame {f}"
                )


def _disk_mask(width, height, cx, cy, r) -> np.ndarray:
    yy, xx = np.mgrid[0:height, 0:width]
    return (xx - cx) ** 2 + (yy - cy) ** 2 <= r**2


def _disk_coverage(width, height, cx, cy, r) -> np.ndarray:
    # Linear edge ramp ~1 px wide approximates pixel coverage well enough
    # for anti-aliasing and keeps rendering exactly reproducible.
    yy, xx = np.mgrid[0:height, 0:width]
    dist = np.sqrt((xx - cx) ** 2 + (yy - cy) ** 2)
    return np.clip(r + 0.5 - dist, 0.0, 1.0)


def render(scenario: Scenario) -> tuple[FrameSequence, TrackResult, AnnotationSession]:
    """Render frames, exact ground-truth tracks and a matching annotation.

    The annotation prompts tight bounding boxes around each object's
    final-frame mask, which is what a user would draw. Identical seeds
    give byte-identical frames.
    """
    validate_scenario(scenario)
    w, h, n = scenario.width, scenario.height, scenario.frame_count
    rng = np.random.default_rng(scenario.seed)

    frames = []
    gt = TrackResult(width=w, height=h, n_frames=n)
    for cyst_id, obj in enumerate(scenario.objects):
        gt.tracks[cyst_id] = CystTrack(
            cyst_id=cyst_id,
            present=[f >= obj.appear_frame for f in range(n)],
            masks=[None] * n,
            formation_frame=obj.appear_frame,
        )

    for f in range(n):
        img = np.full((h, w), scenario.background_level, dtype=np.float64)
        img += rng.normal(0.0, scenario.noise_amplitude, size=(h, w))
        for cyst_id, obj in enumerate(scenario.objects):
            if f < obj.appear_frame:
                continue
            cx, cy = obj.centers[f]
            r = obj.radii[f]
            img += obj.contrast * _disk_coverage(w, h, cx, cy, r)
            gt.tracks[cyst_id].masks[f] = _disk_mask(w, h, cx, cy, r)
        frames.append(np.clip(np.round(img), 0, 255).astype(np.uint8))

    session = _annotation_for(scenario, gt)
    return FrameSequence(frames=frames), gt, session


def _annotation_for(scenario: Scenario, gt: TrackResult) -> AnnotationSession:
    final = scenario.frame_count - 1
    by_organoid: dict[int, list[CystPrompt]] = {}
    anchors: dict[int, tuple[float, float]] = {}
    for cyst_id, obj in enumerate(scenario.objects):
        organoid = obj.organoid if obj.organoid is not None else cyst_id
        box = bbox_of(gt.tracks[cyst_id].masks[final])
        by_organoid.setdefault(organoid, []).append(
            CystPrompt(cyst_id=cyst_id, bbox=box)
        )
        anchors.setdefault(organoid, obj.centers[final])
    organoids = tuple(
        OrganoidAnnotation(
            organoid_id=org, anchor=anchors[org], cysts=tuple(cysts)
        )
        for org, cysts in sorted(by_organoid.items())
    )
    return AnnotationSession(
        frame_width=scenario.width,
        frame_height=scenario.height,
        annotated_frame_index=final,
        calibration=Calibration(
            um_per_pixel=scenario.um_per_pixel,
            total_duration_hours=scenario.total_duration_hours,
            frame_count=scenario.frame_count,
        ),
        organoids=organoids,
    )


def scenario_to_dict(scenario: Scenario) -> dict:
    return {
        "seed": scenario.seed,
        "width": scenario.width,
        "height": scenario.height,
        "frame_count": scenario.frame_count,
        "background_level": scenario.background_level,
        "noise_amplitude": scenario.noise_amplitude,
        "um_per_pixel": scenario.um_per_pixel,
        "total_duration_hours": scenario.total_duration_hours,
        "objects": [
            {
                "appear_frame": o.appear_frame,
                "centers": [list(c) for c in o.centers],
                "radii": list(o.radii),
                "contrast": o.contrast,
                **({"organoid": o.organoid} if o.organoid is not None else {}),
            }
            for o in scenario.objects
        ],
    }


def scenario_from_dict(doc: dict) -> Scenario:
    try:
        objects = tuple(
            SynthObject(
                appear_frame=int(o["appear_frame"]),
                centers=tuple((float(c[0]), float(c[1])) for c in o["centers"]),
                radii=tuple(float(r) for r in o["radii"]),
                contrast=float(o["contrast"]),
                organoid=o.get("organoid"),
            )
            for o in doc["objects"]
        )
        return Scenario(
            seed=int(doc["seed"]),
            width=int(doc["width"]),
            height=int(doc["height"]),
            frame_count=int(doc["frame_count"]),
            background_level=float(doc.get("background_level", 60.0)),
            noise_amplitude=float(doc.get("noise_amplitude", 2.5)),
            um_per_pixel=float(doc.get("um_per_pixel", 1.5)),
            total_duration_hours=float(doc.get("total_duration_hours", 144.0)),
            objects=objects,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise ScenarioError(f"malformed scenario document: {exc}") from exc


def load_scenario(path) -> Scenario:
    with open(path, "r", encoding="utf-8") as fh:
        return scenario_from_dict(json.load(fh))


def _ramp(a: float, b: float, n: int) -> tuple[float, ...]:
    return tuple(a + (b - a) * i / (n - 1) for i in range(n))


def bundled_scenarios() -> dict[str, Scenario]:
    """The built-in oracle suite used by tests, demos and `synth render`."""
    n = 7

    def fixed(xy):
        return tuple(xy for _ in range(n))

    return {
        "growth": Scenario(
            seed=101, width=96, height=96, frame_count=n,
            objects=(
                SynthObject(
                    appear_frame=0, centers=fixed((48.0, 48.0)),
                    radii=_ramp(6.0, 18.0, n), contrast=120.0,
                ),
            ),
        ),
        "shrink_to_absent": Scenario(
            seed=102, width=96, height=96, frame_count=n,
            objects=(
                SynthObject(
                    appear_frame=2, centers=fixed((48.0, 48.0)),
                    radii=(5.0, 5.0, 5.0, 6.5, 8.0, 9.5, 11.0), contrast=120.0,
                ),
            ),
        ),
        "late_formation": Scenario(
            seed=103, width=96, height=96, frame_count=n,
            objects=(
                SynthObject(
                    appear_frame=4, centers=fixed((40.0, 52.0)),
                    radii=(6.0, 6.0, 6.0, 6.0, 6.0, 8.0, 10.0), contrast=120.0,
                ),
            ),
        ),
        "two_adjacent": Scenario(
            seed=104, width=128, height=128, frame_count=n,
            objects=(
                SynthObject(
                    appear_frame=0, centers=fixed((44.0, 64.0)),
                    radii=_ramp(10.0, 12.0, n), contrast=120.0, organoid=0,
                ),
                SynthObject(
                    appear_frame=0, centers=fixed((84.0, 64.0)),
                    radii=_ramp(10.0, 12.0, n), contrast=120.0, organoid=0,
                ),
            ),
        ),
        "drift": Scenario(
            seed=105, width=96, height=96, frame_count=n,
            background_level=170.0,
            objects=(
                SynthObject(
                    appear_frame=0,
                    centers=tuple((30.0 + 4.0 * f, 30.0 + 3.0 * f) for f in range(n)),
                    radii=tuple(12.0 for _ in range(n)), contrast=-90.0,
                ),
            ),
        ),
        "static": Scenario(
            seed=106, width=96, height=96, frame_count=n,
            objects=(
                SynthObject(
                    appear_frame=0, centers=fixed((48.0, 48.0)),
                    radii=tuple(10.0 for _ in range(n)), contrast=120.0,
                ),
            ),
        ),
    }


def ground_truth_to_dict(gt: TrackResult) -> dict:
    """Ground-truth file schema: per-object formation frame + RLE masks."""
    return {
        "width": gt.width,
        "height": gt.height,
        "frame_count": gt.n_frames,
        "objects": [
            {
                "cyst_id": cyst_id,
                "formation_frame": ct.formation_frame,
                "masks": [
                    {
                        "frame": f,
                        "present": ct.present[f],
                        "rle": wire.rle_encode(ct.masks[f]) if ct.present[f] else [],
                    }
                    for f in range(gt.n_frames)
                ],
            }
            for cyst_id, ct in sorted(gt.tracks.items())
        ],
    }


def ground_truth_from_dict(doc: dict) -> TrackResult:
    gt = TrackResult(
        width=int(doc["width"]), height=int(doc["height"]),
        n_frames=int(doc["frame_count"]),
    )
    for obj in doc["objects"]:
        present = [bool(m["present"]) for m in obj["masks"]]
        masks = [
            wire.rle_decode(m["rle"], gt.width, gt.height) if m["present"] else None
            for m in obj["masks"]
        ]
        gt.tracks[int(obj["cyst_id"])] = CystTrack(
            cyst_id=int(obj["cyst_id"]),
            present=present,
            masks=masks,
            formation_frame=int(obj["formation_frame"]),
        )
    return gt


def write_rendered(scenario: Scenario, out_dir) -> dict:
    """Render a scenario to disk: frames/, ground_truth.json, annotation.json."""
    from .annotation import save_file

    out = Path(out_dir)
    frames_dir = out / "frames"
    frames_dir.mkdir(parents=True, exist_ok=True)
    seq, gt, session = render(scenario)
    for i, frame in enumerate(seq.frames):
        Image.fromarray(frame, mode="L").save(frames_dir / f"frame_{i:04d}.png")
    with open(out / "ground_truth.json", "w", encoding="utf-8") as fh:
        json.dump(ground_truth_to_dict(gt), fh)
        fh.write("\n")
    save_file(session, out / "annotation.json")
    with open(out / "scenario.json", "w", encoding="utf-8") as fh:
        json.dump(scenario_to_dict(scenario), fh, indent=2)
        fh.write("\n")
    return {
        "frames_dir": str(frames_dir),
        "ground_truth": str(out / "ground_truth.json"),
        "annotation": str(out / "annotation.json"),
        "n_frames": seq.n_frames,
    }
