"""SAM2 video predictor wrapper.

The sam2/torch stack is imported lazily so the protocol server can start
(and be tested) without model weights. Any object with the same
``propagate`` signature can stand in for the model.
"""

from __future__ import annotations

import os
import tempfile
from pathlib import Path
from typing import Optional, Protocol

import numpy as np
from PIL import Image


class VideoPredictor(Protocol):
    def propagate(
        self,
        frames: list[np.ndarray],
        prompts: list[tuple[int, tuple[int, int, int, int]]],
        params: dict,
    ) -> dict[int, list[Optional[np.ndarray]]]:
        """Per-object masks (None where the model emits an empty mask),
        one entry per frame in the given (already reversed) order."""
        ...


class Sam2Predictor:
    """Box-prompted SAM2 video propagation.

    Frames arrive in processing order; frame 0 carries the prompts. The
    adapter does no formation detection of its own: whatever the model
    emits is returned as-is (the engine repairs monotone presence).
    Propagation params are passed through without extra defaults.
    """

    def __init__(self, checkpoint_path: str, model_config: str, device: str = "cuda"):
        import torch
        from sam2.build_sam import build_sam2_video_predictor

        if device == "cuda" and not torch.cuda.is_available():
            device = "cpu"
        self.device = device
        self.predictor = build_sam2_video_predictor(
            config_file=model_config, ckpt_path=checkpoint_path, device=device,
            mode="eval",
        )

    def propagate(self, frames, prompts, params):
        import torch

        # SAM2's state init reads a directory of JPEG frames.
        with tempfile.TemporaryDirectory() as tmp:
            for i, frame in enumerate(frames):
                arr = np.asarray(frame)
                if arr.dtype == np.uint16:
                    arr = (arr // 257).astype(np.uint8)
                Image.fromarray(arr).convert("RGB").save(
                    Path(tmp) / f"{i:05d}.jpg", quality=95
                )
            state = self.predictor.init_state(video_path=tmp)
            for object_id, (x0, y0, x1, y1) in prompts:
                self.predictor.add_new_points_or_box(
                    inference_state=state,
                    frame_idx=0,
                    obj_id=int(object_id),
                    box=torch.tensor([x0, y0, x1, y1], dtype=torch.float32),
                )
            n = len(frames)
            results = {int(oid): [None] * n for oid, _ in prompts}
            propagate_kwargs = dict(params.get("propagation", {}))
            for frame_idx, object_ids, logits in self.predictor.propagate_in_video(
                state, **propagate_kwargs
            ):
                for i, object_id in enumerate(object_ids):
                    mask = (logits[i] > 0.0).squeeze().cpu().numpy().astype(bool)
                    results[int(object_id)][frame_idx] = mask if mask.any() else None
            return results


def from_env() -> Sam2Predictor:
    checkpoint = os.environ.get("CHECKPOINT_PATH")
    if not checkpoint:
        raise RuntimeError("CHECKPOINT_PATH is not set")
    model_config = os.environ.get("MODEL_CONFIG", "sam2_hiera_b+.yaml")
    device = os.environ.get("DEVICE", "cuda")
    return Sam2Predictor(checkpoint, model_config, device=device)
