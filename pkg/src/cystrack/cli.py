"""Command line interface: headless pipeline, synthetic data, validation, server.

Exit codes of `run` distinguish failure stages: 2 for input problems,
3 for tracking/backend problems, 4 for output problems. On failure one
machine-readable JSON line is printed to stderr:

    {"error": "<stage>", "type": "<exception>", "detail": "..."}
"""

from __future__ import annotations

import json
import logging
import os
import sys
from pathlib import Path

import click

from . import __version__, annotation, synth
from .pipeline import run_pipeline
from .report import IoFailureError
from .tracking import (
    FrameSequence,
    RemoteBackend,
    TrackerParams,
    TrackingError,
)

EXIT_INPUT = 2
EXIT_TRACKING = 3
EXIT_OUTPUT = 4


def _fail(stage: str, exc: Exception, code: int) -> None:
    line = json.dumps(
        {"error": stage, "type": type(exc).__name__, "detail": str(exc)}
    )
    click.echo(line, err=True)
    sys.exit(code)


@click.group()
@click.version_option(version=__version__, prog_name="cystrack")
@click.option(
    "--log-level",
    default="warning",
    type=click.Choice(["debug", "info", "warning", "error"]),
    show_default=True,
)
def main(log_level: str) -> None:
    """Inverse-temporal cyst tracking and analysis for organoid videos."""
    logging.basicConfig(level=getattr(logging, log_level.upper()))


@main.command()
@click.option("--frames", "frames_dir", required=True,
              type=click.Path(exists=False), help="Directory of frame_%04d.png/tiff files.")
@click.option("--annotations", "annotations_file", required=True,
              type=click.Path(exists=False), help="Annotation JSON document.")
@click.option("--backend", type=click.Choice(["baseline", "remote"]),
              default="baseline", show_default=True)
@click.option("--remote-url", default=None, help="Segmenter URL for --backend remote.")
@click.option("--out", "out_dir", required=True, type=click.Path())
@click.option("--quality", type=click.Choice(["preview", "full"]),
              default="full", show_default=True)
@click.option("--params", "params_file", default=None, type=click.Path(),
              help="JSON file with iou_floor, min_area_px, search_margin, min_contrast, quality.")
@click.option("--iou-floor", type=float, default=None)
@click.option("--min-area-px", type=int, default=None)
@click.option("--search-margin", type=float, default=None)
def run(frames_dir, annotations_file, backend, remote_url, out_dir, quality,
        params_file, iou_floor, min_area_px, search_margin):
    """Run the full pipeline: validate, track, measure, report."""
    try:
        frames_path = Path(frames_dir)
        if not frames_path.is_dir():
            raise FileNotFoundError(f"frames directory not found: {frames_path}")
        ann_path = Path(annotations_file)
        if not ann_path.is_file():
            raise FileNotFoundError(f"annotation file not found: {ann_path}")

        param_doc = {}
        if params_file:
            with open(params_file, "r", encoding="utf-8") as fh:
                param_doc = json.load(fh)
        if "quality" in param_doc and quality == "full":
            quality = param_doc["quality"]
        # Flags override the params file.
        for key, value in (
            ("iou_floor", iou_floor),
            ("min_area_px", min_area_px),
            ("search_margin", search_margin),
        ):
            if value is not None:
                param_doc[key] = value
        params = TrackerParams.from_dict(param_doc)

        frames = FrameSequence.from_directory(frames_path)
        session = annotation.load_file(ann_path)
        validated = annotation.validate(
            session, frame_dims=(frames.width, frames.height),
            frame_count=frames.n_frames,
        )
    except (OSError, ValueError, json.JSONDecodeError, annotation.AnnotationError) as exc:
        _fail("input", exc, EXIT_INPUT)
        return

    if backend == "remote":
        if not remote_url:
            _fail("input", ValueError("--backend remote requires --remote-url"), EXIT_INPUT)
            return
        segmenter = RemoteBackend(remote_url)
    else:
        from .baseline import BaselineBackend

        segmenter = BaselineBackend()

    try:
        bundle = run_pipeline(
            frames, validated, segmenter, params, out_dir, quality=quality
        )
    except TrackingError as exc:
        _fail("tracking", exc, EXIT_TRACKING)
        return
    except (IoFailureError, OSError) as exc:
        _fail("output", exc, EXIT_OUTPUT)
        return

    if bundle.population_summary:
        s = bundle.population_summary
        click.echo(
            f"formation rate {s['formation_rate_initial_percent']:.1f}% -> "
            f"{s['formation_rate_final_percent']:.1f}%, cyst density "
            f"{s['cyst_density_initial']:.2f} -> {s['cyst_density_final']:.2f}"
        )
    click.echo(
        f"report written to {bundle.out_dir} "
        f"({len(bundle.artifacts)} artifacts, quality={bundle.quality})"
    )


@main.group("synth")
def synth_group() -> None:
    """Synthetic time-lapse generation."""


@synth_group.command("render")
@click.option("--scenario", "scenario_ref", required=True,
              help="Bundled scenario name or a scenario JSON file.")
@click.option("--out", "out_dir", required=True, type=click.Path())
def synth_render(scenario_ref, out_dir):
    """Render frames, ground truth and annotation for a scenario."""
    bundled = synth.bundled_scenarios()
    try:
        if scenario_ref in bundled:
            scenario = bundled[scenario_ref]
        elif Path(scenario_ref).is_file():
            scenario = synth.load_scenario(scenario_ref)
        else:
            names = ", ".join(sorted(bundled))
            raise synth.ScenarioError(
                f"unknown scenario {scenario_ref!r}; bundled: {names}"
            )
        info = synth.write_rendered(scenario, out_dir)
    except (OSError, synth.ScenarioError, json.JSONDecodeError) as exc:
        _fail("input", exc, EXIT_INPUT)
        return
    click.echo(f"rendered {info['n_frames']} frames to {out_dir}")


@main.command()
@click.argument("annotation_file", type=click.Path(exists=True))
@click.option("--frames", "frames_dir", default=None, type=click.Path(),
              help="Optional frames directory to cross-check dimensions.")
def validate(annotation_file, frames_dir):
    """Validate an annotation document; print a one-line summary."""
    try:
        session = annotation.load_file(annotation_file)
        frame_dims = None
        frame_count = None
        if frames_dir:
            frames = FrameSequence.from_directory(frames_dir)
            frame_dims = (frames.width, frames.height)
            frame_count = frames.n_frames
        validated = annotation.validate(session, frame_dims, frame_count)
    except (OSError, ValueError, annotation.AnnotationError) as exc:
        _fail("input", exc, EXIT_INPUT)
        return
    click.echo(
        f"{validated.n_total_organoids} organoids, {len(validated.cysts)} cysts, OK"
    )


@main.command()
@click.option("--data-dir", default=None, type=click.Path(),
              help="Storage root [env: DATA_DIR].")
@click.option("--bind", default=None, help="host:port [env: BIND_ADDR].")
@click.option("--auth-token", default=None, help="Static bearer token [env: AUTH_TOKEN].")
@click.option("--remote-url", default=None,
              help="Default remote segmenter [env: REMOTE_SEGMENTER_URL].")
@click.option("--workers", default=1, show_default=True, help="Concurrent job workers.")
def serve(data_dir, bind, auth_token, remote_url, workers):
    """Start the HTTP service for the web UI."""
    from . import service

    data_dir = data_dir or os.environ.get("DATA_DIR", "./cystrack-data")
    bind = bind or os.environ.get("BIND_ADDR", "127.0.0.1:8000")
    auth_token = auth_token or os.environ.get("AUTH_TOKEN")
    remote_url = remote_url or os.environ.get("REMOTE_SEGMENTER_URL")
    if not auth_token:
        import secrets

        auth_token = secrets.token_urlsafe(16)
        click.echo(f"generated auth token: {auth_token}")
    click.echo(f"serving {data_dir} on {bind}")
    service.main(data_dir, auth_token, bind=bind, remote_url=remote_url, workers=workers)


if __name__ == "__main__":
    main()
