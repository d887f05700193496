"""Wire-protocol server: POST /segment backed by a video predictor.

Request/response format is the cystrack segmenter protocol (frames as
base64 PNG in processing order, masks as row-major RLE). The server is
stateless between requests; inference runs one request at a time.
"""

from __future__ import annotations

import base64
import io
import threading
import traceback
import uuid

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from PIL import Image

from . import rle


def _decode_frame(entry: dict) -> np.ndarray:
    arr = np.asarray(Image.open(io.BytesIO(base64.b64decode(entry["png_b64"]))))
    if arr.ndim == 3:
        arr = arr[..., 0]
    if arr.dtype == np.int32:
        arr = arr.astype(np.uint16)
    return arr


def _parse_request(body: dict):
    if not isinstance(body, dict):
        raise HTTPException(400, "request body must be a JSON object")
    raw_frames = body.get("frames")
    raw_prompts = body.get("prompts")
    if not isinstance(raw_frames, list) or not raw_frames:
        raise HTTPException(400, "'frames' must be a non-empty list")
    if not isinstance(raw_prompts, list) or not raw_prompts:
        raise HTTPException(400, "'prompts' must be a non-empty list")
    try:
        ordered = sorted(raw_frames, key=lambda f: int(f["index"]))
        frames = [_decode_frame(f) for f in ordered]
    except Exception as exc:
        raise HTTPException(400, f"malformed frame entry: {exc}")
    if any(f.shape != frames[0].shape for f in frames):
        raise HTTPException(400, "frames have mismatched dimensions")
    prompts = []
    seen = set()
    for p in raw_prompts:
        try:
            object_id = int(p["object_id"])
            box = tuple(int(v) for v in p["bbox"])
        except Exception as exc:
            raise HTTPException(400, f"malformed prompt entry: {exc}")
        if len(box) != 4 or box[0] >= box[2] or box[1] >= box[3]:
            raise HTTPException(400, f"prompt {object_id}: degenerate bbox {box}")
        if object_id in seen:
            raise HTTPException(400, f"duplicate object_id {object_id}")
        seen.add(object_id)
        prompts.append((object_id, box))
    params = body.get("params") or {}
    if not isinstance(params, dict):
        raise HTTPException(400, "'params' must be an object")
    return frames, prompts, params


def create_app(predictor=None) -> FastAPI:
    """Build the server; ``predictor`` defaults to the SAM2 wrapper,
    constructed lazily on first request so startup never needs weights."""
    app = FastAPI(title="sam2 sidecar")
    lock = threading.Lock()
    holder = {"predictor": predictor}

    def get_predictor():
        if holder["predictor"] is None:
            from .predictor import from_env

            holder["predictor"] = from_env()
        return holder["predictor"]

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/segment")
    def segment(body: dict = Body(...)):
        frames, prompts, params = _parse_request(body)
        try:
            with lock:  # one inference at a time; requests queue here
                masks = get_predictor().propagate(frames, prompts, params)
        except HTTPException:
            raise
        except Exception:
            error_id = uuid.uuid4().hex[:8]
            traceback.print_exc()
            raise HTTPException(500, f"model failure (trace id {error_id})")

        entries = []
        for object_id, _ in prompts:
            timeline = masks.get(object_id)
            if timeline is None or len(timeline) != len(frames):
                error_id = uuid.uuid4().hex[:8]
                raise HTTPException(
                    500, f"predictor returned incomplete timeline (trace id {error_id})"
                )
            for frame_index, mask in enumerate(timeline):
                present = mask is not None and bool(np.asarray(mask).any())
                entries.append(
                    {
                        "object_id": object_id,
                        "frame_index": frame_index,
                        "rle": rle.encode(mask) if present else [],
                        "present": present,
                    }
                )
        return {"masks": entries}

    return app


def main() -> None:
    import os

    import uvicorn

    bind = os.environ.get("BIND_ADDR", "127.0.0.1:8500")
    host, _, port = bind.partition(":")
    uvicorn.run(create_app(), host=host or "127.0.0.1", port=int(port or 8500))


if __name__ == "__main__":
    main()
