"""Segmenter wire protocol: RLE mask codec and the /segment HTTP contract.

A remote segmentation backend is any HTTP server exposing POST /segment.
Frames arrive in processing order (index 0 is the prompted frame) encoded
inline as base64 PNG, so no shared filesystem is assumed:

    request  = {"frames":  [{"index": int, "png_b64": str}, ...],
                "prompts": [{"object_id": int, "bbox": [x0, y0, x1, y1]}, ...],
                "params":  {...}}
    response = {"masks": [{"object_id": int, "frame_index": int,
                           "rle": [int, ...], "present": bool}, ...]}

Every (object_id, frame_index) pair must appear exactly once in the
response. RLE is bit-exact by definition: row-major scan, alternating run
lengths starting with the count of background pixels (possibly 0), runs
summing to width*height. present=false carries an empty rle.
"""

from __future__ import annotations

import base64
import io

import numpy as np
from PIL import Image


class WireProtocolError(Exception):
    """Request or response violates the /segment contract."""


def rle_encode(mask: np.ndarray) -> list[int]:
    """Encode a 2D bool mask as alternating background/foreground runs."""
    flat = np.asarray(mask, dtype=bool).ravel()
    if flat.size == 0:
        return []
    boundaries = np.flatnonzero(np.diff(flat)) + 1
    runs = np.diff(np.concatenate(([0], boundaries, [flat.size])))
    counts = runs.tolist()
    if flat[0]:
        counts.insert(0, 0)
    return [int(c) for c in counts]


def rle_decode(runs: list[int], width: int, height: int) -> np.ndarray:
    """Inverse of rle_encode; validates that runs sum to width*height."""
    total = width * height
    if any((not isinstance(r, int)) or r < 0 for r in runs):
        raise WireProtocolError(f"rle runs must be non-negative integers: {runs[:8]}...")
    if sum(runs) != total:
        raise WireProtocolError(
            f"rle runs sum to {sum(runs)}, expected width*height = {total}"
        )
    flat = np.zeros(total, dtype=bool)
    pos = 0
    value = False
    for run in runs:
        if value:
            flat[pos : pos + run] = True
        pos += run
        value = not value
    return flat.reshape(height, width)


def encode_frame_png(frame: np.ndarray) -> str:
    """Base64-encode a grayscale frame (uint8 or uint16) as PNG."""
    arr = np.asarray(frame)
    if arr.dtype == np.uint16:
        img = Image.fromarray(arr)
    else:
        img = Image.fromarray(arr.astype(np.uint8), mode="L")
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return base64.b64encode(buf.getvalue()).decode("ascii")


def decode_frame_png(data_b64: str) -> np.ndarray:
    img = Image.open(io.BytesIO(base64.b64decode(data_b64)))
    arr = np.asarray(img)
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.int32:  # PIL "I" mode for 16-bit PNGs
        arr = arr.astype(np.uint16)
    return arr


def build_segment_request(frames, prompts, params: dict) -> dict:
    """Assemble the /segment request body.

    ``frames``: images in processing order. ``prompts``: (object_id, bbox)
    pairs applying to processing frame 0.
    """
    return {
        "frames": [
            {"index": i, "png_b64": encode_frame_png(f)} for i, f in enumerate(frames)
        ],
        "prompts": [
            {"object_id": int(oid), "bbox": [int(v) for v in bbox]}
            for oid, bbox in prompts
        ],
        "params": dict(params),
    }


def parse_segment_response(
    body: dict, n_frames: int, object_ids: list[int], width: int, height: int
) -> dict[int, list[np.ndarray | None]]:
    """Validate a /segment response and decode it to per-object mask lists.

    Returns {object_id: [mask or None per processing frame]}. Raises
    WireProtocolError on any contract violation: missing or duplicate
    (object, frame) pairs, bad run sums, or present/rle disagreement.
    """
    if not isinstance(body, dict) or "masks" not in body:
        raise WireProtocolError("response must be an object with a 'masks' list")
    entries = body["masks"]
    if not isinstance(entries, list):
        raise WireProtocolError("'masks' must be a list")

    out: dict[int, list] = {oid: [None] * n_frames for oid in object_ids}
    seen: set[tuple[int, int]] = set()
    for entry in entries:
        try:
            oid = int(entry["object_id"])
            fidx = int(entry["frame_index"])
            runs = entry["rle"]
            present = bool(entry["present"])
        except (KeyError, TypeError, ValueError) as exc:
            raise WireProtocolError(f"malformed mask entry: {entry!r}") from exc
        if oid not in out:
            raise WireProtocolError(f"unknown object_id {oid} in response")
        if not 0 <= fidx < n_frames:
            raise WireProtocolError(f"frame_index {fidx} out of range 0..{n_frames - 1}")
        if (oid, fidx) in seen:
            raise WireProtocolError(f"duplicate mask for object {oid} frame {fidx}")
        seen.add((oid, fidx))
        if present:
            mask = rle_decode(runs, width, height)
            if not mask.any():
                raise WireProtocolError(
                    f"object {oid} frame {fidx}: present=true but mask is empty"
                )
            out[oid][fidx] = mask
        else:
            if runs:
                raise WireProtocolError(
                    f"object {oid} frame {fidx}: present=false must carry an empty rle"
                )
            out[oid][fidx] = None

    missing = [
        (oid, f) for oid in object_ids for f in range(n_frames) if (oid, f) not in seen
    ]
    if missing:
        raise WireProtocolError(f"response missing {len(missing)} masks, e.g. {missing[:3]}")
    return out


def build_segment_response(masks_by_object: dict[int, list]) -> dict:
    """Assemble a protocol-conformant response from per-object mask lists."""
    entries = []
    for oid, masks in masks_by_object.items():
        for fidx, mask in enumerate(masks):
            present = mask is not None and bool(np.asarray(mask).any())
            entries.append(
                {
                    "object_id": int(oid),
                    "frame_index": fidx,
                    "rle": rle_encode(mask) if present else [],
                    "present": present,
                }
            )
    return {"masks": entries}
