"""Final-frame prompt data model: organoid anchors, cyst boxes, calibration.

The annotation document is the contract between any front end and the
engine. It is a single JSON object:

    {
      "frame_width": int, "frame_height": int,
      "annotated_frame_index": int,              # must be frame_count - 1
      "calibration": {
        "um_per_pixel": float, "total_duration_hours": float,
        "frame_count": int,
        "timestamps_hours": [float, ...]         # optional, overrides even spacing
      },
      "organoids": [
        {"organoid_id": id, "anchor": [x, y],
         "cysts": [{"cyst_id": id, "bbox": [x0, y0, x1, y1]}, ...]},
        ...
      ]
    }

All coordinates are pixels of the final frame, origin top-left, x
rightward, y downward. Boxes are half-open: x0 <= x < x1, y0 <= y < y1.
Organoids are never segmented; the anchor click exists only to give each
organoid an identity for the population counts.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace


class AnnotationError(Exception):
    """Base class for annotation validation failures."""


class BoxOutOfBoundsError(AnnotationError):
    pass


class DuplicateCystAssignmentError(AnnotationError):
    pass


class DuplicateOrganoidIdError(AnnotationError):
    pass


class AnchorOutOfBoundsError(AnnotationError):
    pass


class WrongAnnotatedFrameError(AnnotationError):
    pass


class BadCalibrationError(AnnotationError):
    pass


class FrameMismatchError(AnnotationError):
    """Session dimensions or frame count disagree with the actual frames."""


@dataclass(frozen=True)
class CystPrompt:
    cyst_id: int
    bbox: tuple[int, int, int, int]


@dataclass(frozen=True)
class OrganoidAnnotation:
    organoid_id: int
    anchor: tuple[float, float]
    cysts: tuple[CystPrompt, ...] = ()


@dataclass(frozen=True)
class Calibration:
    """Spatial and temporal conversion factors entered by the user."""

    um_per_pixel: float
    total_duration_hours: float
    frame_count: int
    timestamps_hours: tuple[float, ...] | None = None


@dataclass(frozen=True)
class AnnotationSession:
    frame_width: int
    frame_height: int
    annotated_frame_index: int
    calibration: Calibration
    organoids: tuple[OrganoidAnnotation, ...] = ()


@dataclass(frozen=True)
class ValidatedSession:
    """An AnnotationSession with all invariants checked and dense ids.

    Organoid and cyst ids are renumbered to 0..n-1 in document order;
    ``source_organoid_ids`` / ``source_cyst_ids`` map the dense ids back to
    whatever identifiers the document carried.
    """

    session: AnnotationSession
    source_organoid_ids: tuple = ()
    source_cyst_ids: tuple = ()

    @property
    def n_total_organoids(self) -> int:
        return len(self.session.organoids)

    @property
    def cysts(self) -> list[CystPrompt]:
        return [c for org in self.session.organoids for c in org.cysts]

    @property
    def organoid_of_cyst(self) -> dict[int, int]:
        return {
            c.cyst_id: org.organoid_id
            for org in self.session.organoids
            for c in org.cysts
        }

    @property
    def calibration(self) -> Calibration:
        return self.session.calibration


def timestamps(calibration: Calibration) -> list[float]:
    """Acquisition times in hours, one per frame.

    Defaults to even spacing t_i = i * total_duration / (frame_count - 1);
    an explicit timestamps_hours list overrides this for irregular runs.
    """
    _check_calibration(calibration)
    if calibration.timestamps_hours is not None:
        return list(calibration.timestamps_hours)
    n = calibration.frame_count
    step = calibration.total_duration_hours / (n - 1)
    return [i * step for i in range(n)]


def _check_calibration(cal: Calibration) -> None:
    if not cal.um_per_pixel > 0:
        raise BadCalibrationError(f"um_per_pixel must be > 0, got {cal.um_per_pixel}")
    if not cal.total_duration_hours > 0:
        raise BadCalibrationError(
            f"total_duration_hours must be > 0, got {cal.total_duration_hours}"
        )
    if cal.frame_count < 2:
        raise BadCalibrationError(f"frame_count must be >= 2, got {cal.frame_count}")
    ts = cal.timestamps_hours
    if ts is not None:
        if len(ts) != cal.frame_count:
            raise BadCalibrationError(
                f"timestamps_hours has {len(ts)} entries for {cal.frame_count} frames"
            )
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise BadCalibrationError("timestamps_hours must be strictly increasing")


def validate(
    session: AnnotationSession,
    frame_dims: tuple[int, int] | None = None,
    frame_count: int | None = None,
) -> ValidatedSession:
    """Check every session invariant and renumber ids densely.

    ``frame_dims`` (width, height) and ``frame_count``, when given, are the
    ground truth from the actual frames and must agree with the session's
    own declarations. Raises a subclass of AnnotationError naming the
    offending entity on the first violation found.

    Idempotent: passing an already-validated session returns it unchanged.
    """
    if isinstance(session, ValidatedSession):
        inner = session.session
        if frame_dims is not None and (inner.frame_width, inner.frame_height) != tuple(frame_dims):
            raise FrameMismatchError(
                f"session declares {inner.frame_width}x{inner.frame_height} "
                f"but frames are {frame_dims[0]}x{frame_dims[1]}"
            )
        if frame_count is not None and inner.calibration.frame_count != frame_count:
            raise FrameMismatchError(
                f"calibration declares {inner.calibration.frame_count} frames "
                f"but video has {frame_count}"
            )
        return session
    w, h = session.frame_width, session.frame_height
    if w < 1 or h < 1:
        raise FrameMismatchError(f"bad frame dimensions {w}x{h}")
    if frame_dims is not None and (w, h) != tuple(frame_dims):
        raise FrameMismatchError(
            f"session declares {w}x{h} but frames are "
            f"{frame_dims[0]}x{frame_dims[1]}"
        )

    cal = session.calibration
    _check_calibration(cal)
    if frame_count is not None and cal.frame_count != frame_count:
        raise FrameMismatchError(
            f"calibration declares {cal.frame_count} frames but video has {frame_count}"
        )
    if session.annotated_frame_index != cal.frame_count - 1:
        raise WrongAnnotatedFrameError(
            f"annotated_frame_index is {session.annotated_frame_index}, "
            f"must be the last frame ({cal.frame_count - 1})"
        )

    if not session.organoids:
        raise AnnotationError("session has no organoids; at least one is required")

    seen_organoids: set = set()
    seen_cysts: dict = {}
    seen_boxes: dict = {}
    source_org_ids = []
    source_cyst_ids = []
    organoids = []
    next_cyst = 0
    for org_index, org in enumerate(session.organoids):
        if org.organoid_id in seen_organoids:
            raise DuplicateOrganoidIdError(
                f"organoid id {org.organoid_id!r} appears more than once"
            )
        seen_organoids.add(org.organoid_id)
        ax, ay = org.anchor
        if not (0 <= ax < w and 0 <= ay < h):
            raise AnchorOutOfBoundsError(
                f"organoid {org.organoid_id!r}: anchor ({ax}, {ay}) outside {w}x{h} frame"
            )
        cysts = []
        for cyst in org.cysts:
            if cyst.cyst_id in seen_cysts:
                raise DuplicateCystAssignmentError(
                    f"cyst id {cyst.cyst_id!r} assigned to both organoid "
                    f"{seen_cysts[cyst.cyst_id]!r} and organoid {org.organoid_id!r}"
                )
            seen_cysts[cyst.cyst_id] = org.organoid_id
            box = _normalize_box(cyst.cyst_id, cyst.bbox, w, h)
            if box in seen_boxes:
                raise DuplicateCystAssignmentError(
                    f"cyst {cyst.cyst_id!r} duplicates the exact box of "
                    f"cyst {seen_boxes[box]!r}"
                )
            seen_boxes[box] = cyst.cyst_id
            source_cyst_ids.append(cyst.cyst_id)
            cysts.append(CystPrompt(cyst_id=next_cyst, bbox=box))
            next_cyst += 1
        source_org_ids.append(org.organoid_id)
        organoids.append(
            OrganoidAnnotation(
                organoid_id=org_index, anchor=(float(ax), float(ay)),
                cysts=tuple(cysts),
            )
        )

    normalized = replace(session, organoids=tuple(organoids))
    return ValidatedSession(
        session=normalized,
        source_organoid_ids=tuple(source_org_ids),
        source_cyst_ids=tuple(source_cyst_ids),
    )


def _normalize_box(cyst_id, bbox, w: int, h: int) -> tuple[int, int, int, int]:
    # Canvas front ends send float coordinates; snap to the pixel grid first.
    x0, y0, x1, y1 = (int(round(float(v))) for v in bbox)
    if x0 >= x1 or y0 >= y1:
        raise BoxOutOfBoundsError(
            f"cyst {cyst_id!r}: degenerate box ({x0},{y0})-({x1},{y1})"
        )
    if x0 < 0 or y0 < 0 or x1 > w or y1 > h:
        raise BoxOutOfBoundsError(
            f"cyst {cyst_id!r}: box ({x0},{y0})-({x1},{y1}) outside {w}x{h} frame"
        )
    if (x1 - x0) * (y1 - y0) < 4:
        raise BoxOutOfBoundsError(
            f"cyst {cyst_id!r}: box area {(x1 - x0) * (y1 - y0)} px is below 4 px"
        )
    return (x0, y0, x1, y1)


def session_to_dict(session: AnnotationSession) -> dict:
    cal = session.calibration
    cal_doc = {
        "um_per_pixel": cal.um_per_pixel,
        "total_duration_hours": cal.total_duration_hours,
        "frame_count": cal.frame_count,
    }
    if cal.timestamps_hours is not None:
        cal_doc["timestamps_hours"] = list(cal.timestamps_hours)
    return {
        "frame_width": session.frame_width,
        "frame_height": session.frame_height,
        "annotated_frame_index": session.annotated_frame_index,
        "calibration": cal_doc,
        "organoids": [
            {
                "organoid_id": org.organoid_id,
                "anchor": list(org.anchor),
                "cysts": [
                    {"cyst_id": c.cyst_id, "bbox": list(c.bbox)} for c in org.cysts
                ],
            }
            for org in session.organoids
        ],
    }


def session_from_dict(doc: dict) -> AnnotationSession:
    try:
        cal_doc = doc["calibration"]
        ts = cal_doc.get("timestamps_hours")
        cal = Calibration(
            um_per_pixel=float(cal_doc["um_per_pixel"]),
            total_duration_hours=float(cal_doc["total_duration_hours"]),
            frame_count=int(cal_doc["frame_count"]),
            timestamps_hours=tuple(float(t) for t in ts) if ts is not None else None,
        )
        organoids = tuple(
            OrganoidAnnotation(
                organoid_id=org["organoid_id"],
                anchor=(float(org["anchor"][0]), float(org["anchor"][1])),
                cysts=tuple(
                    CystPrompt(
                        cyst_id=c["cyst_id"],
                        bbox=tuple(c["bbox"]),
                    )
                    for c in org.get("cysts", [])
                ),
            )
            for org in doc.get("organoids", [])
        )
        return AnnotationSession(
            frame_width=int(doc["frame_width"]),
            frame_height=int(doc["frame_height"]),
            annotated_frame_index=int(doc["annotated_frame_index"]),
            calibration=cal,
            organoids=organoids,
        )
    except (KeyError, TypeError, ValueError, IndexError) as exc:
        raise AnnotationError(f"malformed annotation document: {exc}") from exc


def dumps(session: AnnotationSession) -> str:
    return json.dumps(session_to_dict(session), indent=2)


def loads(text: str) -> AnnotationSession:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise AnnotationError(f"annotation file is not valid JSON: {exc}") from exc
    if not isinstance(doc, dict):
        raise AnnotationError("annotation document must be a JSON object")
    return session_from_dict(doc)


def load_file(path) -> AnnotationSession:
    with open(path, "r", encoding="utf-8") as fh:
        return loads(fh.read())


def save_file(session: AnnotationSession, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        fh.write(dumps(session))
        fh.write("\n")
