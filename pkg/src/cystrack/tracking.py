"""Inverse temporal tracking orchestration.

The video is processed in reverse chronological order: prompts are given
on the clearest (final) frame, any promptable segmenter propagates the
masks back in time, and the per-object timelines are reversed again into
chronological order. Formation events fall out of the backward pass: the
first chronological frame where an object is present is its formation
frame, and presence is forced to be monotone (once formed, a cyst stays
until the final frame).
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Optional, Protocol

import numpy as np
from PIL import Image

from . import wire
from .annotation import validate as validate_session

logger = logging.getLogger(__name__)

FRAME_FILE_SUFFIXES = (".png", ".tif", ".tiff")


class TrackingError(Exception):
    """Base class for tracking failures."""


class PromptMismatchError(TrackingError):
    """A prompt box produced no object on the annotated final frame."""


class BackendFailureError(TrackingError):
    """An external segmenter failed; the message carries per-frame context."""


class TrackingCancelled(TrackingError):
    """Raised when a cancel callback asks the job to stop."""


@dataclass(frozen=True)
class TrackerParams:
    """Baseline propagation thresholds.

    search_margin is a fraction of the reference bbox diagonal used to
    dilate the local search window; iou_floor and min_area_px decide when
    an object is declared absent (tolerant to daily-imaging drift, strict
    enough to register disappearance). min_contrast is the smallest Otsu
    class-mean separation (gray levels) that counts as a real object;
    below it the window is treated as textureless background.
    """

    iou_floor: float = 0.3
    min_area_px: int = 10
    search_margin: float = 0.25
    min_contrast: float = 10.0

    _FIELDS = ("iou_floor", "min_area_px", "search_margin", "min_contrast")

    def to_dict(self) -> dict:
        return {name: getattr(self, name) for name in self._FIELDS}

    @classmethod
    def from_dict(cls, doc: dict) -> "TrackerParams":
        known = {}
        for name in cls._FIELDS:
            if name in doc:
                cast = int if name == "min_area_px" else float
                known[name] = cast(doc[name])
        return cls(**known)


@dataclass
class FrameSequence:
    """Chronologically ordered grayscale frames of uniform size."""

    frames: list[np.ndarray]
    source_ids: tuple[str, ...] = ()

    def __post_init__(self):
        if len(self.frames) < 2:
            raise ValueError(f"need at least 2 frames, got {len(self.frames)}")
        shape = self.frames[0].shape
        for i, f in enumerate(self.frames):
            if f.ndim != 2:
                raise ValueError(f"frame {i} is not a 2D grayscale image")
            if f.shape != shape:
                raise ValueError(
                    f"frame {i} has shape {f.shape}, expected {shape}"
                )
        if not self.source_ids:
            self.source_ids = tuple(f"frame_{i:04d}" for i in range(len(self.frames)))

    @property
    def n_frames(self) -> int:
        return len(self.frames)

    @property
    def height(self) -> int:
        return self.frames[0].shape[0]

    @property
    def width(self) -> int:
        return self.frames[0].shape[1]

    @classmethod
    def from_directory(cls, path) -> "FrameSequence":
        """Read a directory of grayscale PNG/TIFF frames in name order."""
        root = Path(path)
        files = sorted(
            p for p in root.iterdir()
            if p.is_file() and p.suffix.lower() in FRAME_FILE_SUFFIXES
        )
        if not files:
            raise ValueError(f"no PNG/TIFF frames found in {root}")
        frames = []
        for p in files:
            arr = np.asarray(Image.open(p))
            if arr.ndim == 3:
                arr = arr[..., 0]
            if arr.dtype == np.int32:
                arr = arr.astype(np.uint16)
            frames.append(arr)
        return cls(frames=frames, source_ids=tuple(p.name for p in files))


class SegmenterBackend(Protocol):
    """Anything that can propagate box prompts across a frame sequence.

    ``frames`` arrive in processing order (index 0 carries the prompts);
    the result maps object_id to one mask or None per processing frame.
    """

    def segment(
        self,
        frames: list[np.ndarray],
        prompts: list[tuple[int, tuple[int, int, int, int]]],
        params: TrackerParams,
        progress: Optional[Callable[[int, int], None]] = None,
        cancel: Optional[Callable[[], bool]] = None,
    ) -> dict[int, list[Optional[np.ndarray]]]:
        ...


@dataclass
class CystTrack:
    """Chronological mask timeline of one cyst."""

    cyst_id: int
    present: list[bool]
    masks: list[Optional[np.ndarray]]
    formation_frame: int


@dataclass
class TrackResult:
    width: int
    height: int
    n_frames: int
    tracks: dict[int, CystTrack] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


def reverse_timeline(timeline):
    """Reverse temporal order: index i maps to index (F-1-i).

    Accepts a list or a dict of per-object lists and returns the same
    shape. Applying it twice is the identity.
    """
    if isinstance(timeline, dict):
        return {k: list(reversed(v)) for k, v in timeline.items()}
    return list(reversed(timeline))


def enforce_monotone_presence(
    present: list[bool], cyst_id: int, warnings: list[str]
) -> list[bool]:
    """Keep only the trailing run of present frames.

    A cyst, once formed, persists through the final frame; any present
    frame before a gap is a propagation artifact and is dropped with a
    warning.
    """
    n = len(present)
    suffix = 0
    while suffix < n and present[n - 1 - suffix]:
        suffix += 1
    repaired = [False] * (n - suffix) + [True] * suffix
    if repaired != present:
        dropped = [i for i in range(n) if present[i] and not repaired[i]]
        msg = (
            f"cyst {cyst_id}: presence not monotone, dropped stray frames {dropped}"
        )
        warnings.append(msg)
        logger.warning(msg)
    return repaired


def track(
    frames: FrameSequence,
    session,
    backend: SegmenterBackend,
    params: TrackerParams = TrackerParams(),
    progress: Optional[Callable[[int, int], None]] = None,
    cancel: Optional[Callable[[], bool]] = None,
) -> TrackResult:
    """Run inverse temporal tracking for every prompted cyst.

    Validates the session against the frames, hands the reversed sequence
    to the backend, then re-reverses the output and repairs monotone
    presence. Deterministic for the baseline backend given identical
    inputs and params.
    """
    validated = validate_session(
        session, frame_dims=(frames.width, frames.height), frame_count=frames.n_frames
    )
    prompts = [(c.cyst_id, c.bbox) for c in validated.cysts]

    processing_frames = reverse_timeline(list(frames.frames))
    raw = backend.segment(
        processing_frames, prompts, params, progress=progress, cancel=cancel
    )

    chronological = reverse_timeline(raw)
    result = TrackResult(
        width=frames.width, height=frames.height, n_frames=frames.n_frames
    )
    for cyst_id, _ in prompts:
        masks = chronological.get(cyst_id)
        if masks is None or len(masks) != frames.n_frames:
            raise BackendFailureError(
                f"backend returned no complete timeline for cyst {cyst_id}"
            )
        present = [m is not None and bool(np.asarray(m).any()) for m in masks]
        if not present[-1]:
            raise PromptMismatchError(
                f"cyst {cyst_id}: no mask on the annotated final frame"
            )
        present = enforce_monotone_presence(present, cyst_id, result.warnings)
        clean_masks = [
            np.asarray(m, dtype=bool) if keep else None
            for m, keep in zip(masks, present)
        ]
        result.tracks[cyst_id] = CystTrack(
            cyst_id=cyst_id,
            present=present,
            masks=clean_masks,
            formation_frame=present.index(True),
        )
    return result


class RemoteBackend:
    """Client for a remote segmenter speaking the /segment wire protocol."""

    def __init__(self, url: str, timeout: float = 600.0):
        self.url = url.rstrip("/")
        self.timeout = timeout

    def segment(self, frames, prompts, params, progress=None, cancel=None):
        import requests

        if cancel is not None and cancel():
            raise TrackingCancelled("cancelled before remote segmentation")
        body = wire.build_segment_request(frames, prompts, params.to_dict())
        try:
            resp = requests.post(
                f"{self.url}/segment", json=body, timeout=self.timeout
            )
        except requests.RequestException as exc:
            raise BackendFailureError(
                f"remote segmenter at {self.url} unreachable: {exc}"
            ) from exc
        if resp.status_code != 200:
            raise BackendFailureError(
                f"remote segmenter at {self.url} returned HTTP {resp.status_code}: "
                f"{resp.text[:500]}"
            )
        h, w = frames[0].shape
        try:
            parsed = wire.parse_segment_response(
                resp.json(), len(frames), [oid for oid, _ in prompts], w, h
            )
        except (ValueError, wire.WireProtocolError) as exc:
            raise BackendFailureError(f"invalid /segment response: {exc}") from exc
        if progress is not None:
            progress(len(frames), len(frames))
        return parsed
