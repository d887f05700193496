"""End-to-end run: validate -> track -> metrics -> report.

Shared by the CLI and the HTTP service so both produce identical reports
for identical inputs.
"""

from __future__ import annotations

from pathlib import Path

from . import annotation, metrics, report
from .tracking import FrameSequence, SegmenterBackend, TrackerParams, track


def run_pipeline(
    frames: FrameSequence,
    session,
    backend: SegmenterBackend,
    params: TrackerParams,
    out_dir,
    quality: str = "full",
    progress=None,
    cancel=None,
) -> report.ReportBundle:
    validated = annotation.validate(
        session, frame_dims=(frames.width, frames.height), frame_count=frames.n_frames
    )
    result = track(frames, validated, backend, params, progress=progress, cancel=cancel)

    records = metrics.cyst_records(result, validated)
    series = metrics.population_series(records, validated)
    try:
        summary = metrics.growth_summary(records)
    except metrics.NoDefinedRatesError:
        summary = None

    inputs = report.hash_inputs(
        frames.frames, annotation.session_to_dict(validated.session), params.to_dict()
    )
    return report.write_report(
        records, series, summary, frames.frames, result, Path(out_dir),
        quality=quality, inputs=inputs, params=params.to_dict(),
        warnings=result.warnings,
    )
