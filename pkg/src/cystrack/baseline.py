"""Deterministic baseline segmenter: greedy backward propagation.

Stands in for a learned video segmenter so the pipeline is self-contained
and testable. On the prompted frame each object is the best Otsu-threshold
component inside its (margin-dilated) box; on every earlier frame,
candidates come from the same local thresholding inside the previous
mask's dilated bbox and the maximum-IoU candidate keeps the identity.
Unlike zero-shot video models, it declares an object absent once the
match collapses, which is what makes formation events detectable.
"""

from __future__ import annotations

import math
from typing import Callable, Optional

import numpy as np
from scipy import ndimage
from skimage.filters import threshold_otsu

from .tracking import PromptMismatchError, TrackerParams, TrackingCancelled

_STRUCT8 = np.ones((3, 3), dtype=bool)

# Polarity of the Otsu split: whether the object is brighter or darker
# than its surroundings. Chosen once on the prompted frame, then frozen.
BRIGHT = "bright"
DARK = "dark"


def _dilated_window(box, margin_frac, width, height):
    """Clip ``box`` dilated by margin_frac * its diagonal to the frame."""
    x0, y0, x1, y1 = box
    margin = margin_frac * math.hypot(x1 - x0, y1 - y0)
    wx0 = max(0, int(math.floor(x0 - margin)))
    wy0 = max(0, int(math.floor(y0 - margin)))
    wx1 = min(width, int(math.ceil(x1 + margin)))
    wy1 = min(height, int(math.ceil(y1 + margin)))
    return wx0, wy0, wx1, wy1


def _threshold_components(frame, window, polarity, min_contrast):
    """Label the local Otsu foreground; yields (mask_in_window, area, centroid).

    Centroids are in full-frame coordinates. Returns [] when the window is
    too uniform to threshold or the Otsu split separates classes by less
    than ``min_contrast`` gray levels (plain background noise splits at
    ~1.6 sigma, far below any real object's contrast).
    """
    wx0, wy0, wx1, wy1 = window
    win = frame[wy0:wy1, wx0:wx1]
    if win.size == 0 or win.min() == win.max():
        return []
    thr = threshold_otsu(win)
    fg = win > thr if polarity == BRIGHT else win < thr
    if not fg.any() or fg.all():
        return []
    separation = abs(float(win[fg].mean()) - float(win[~fg].mean()))
    if separation < min_contrast:
        return []
    labels, n = ndimage.label(fg, structure=_STRUCT8)
    out = []
    for i in range(1, n + 1):
        comp = labels == i
        ys, xs = np.nonzero(comp)
        out.append(
            (
                comp,
                int(comp.sum()),
                (float(xs.mean()) + wx0, float(ys.mean()) + wy0),
            )
        )
    return out


def _embed(comp, window, width, height):
    wx0, wy0, wx1, wy1 = window
    full = np.zeros((height, width), dtype=bool)
    full[wy0:wy1, wx0:wx1] = comp
    return full


def _box_overlap_score(comp, window, box):
    """IoU between a candidate component and the prompt box interior."""
    wx0, wy0, _, _ = window
    bx0, by0, bx1, by1 = box
    box_in_win = np.zeros_like(comp)
    box_in_win[by0 - wy0 : by1 - wy0, bx0 - wx0 : bx1 - wx0] = True
    inter = int(np.logical_and(comp, box_in_win).sum())
    union = int(comp.sum()) + (bx1 - bx0) * (by1 - by0) - inter
    return inter / union if union else 0.0


def _mask_iou_in_window(comp, window, prev_mask, prev_count):
    wx0, wy0, wx1, wy1 = window
    prev_in_win = prev_mask[wy0:wy1, wx0:wx1]
    inter = int(np.logical_and(comp, prev_in_win).sum())
    union = int(comp.sum()) + prev_count - inter
    return inter / union if union else 0.0


class BaselineBackend:
    """Promptable segmenter built on local Otsu thresholding."""

    name = "baseline"

    def segment(
        self,
        frames: list[np.ndarray],
        prompts: list[tuple[int, tuple[int, int, int, int]]],
        params: TrackerParams = TrackerParams(),
        progress: Optional[Callable[[int, int], None]] = None,
        cancel: Optional[Callable[[], bool]] = None,
    ) -> dict[int, list[Optional[np.ndarray]]]:
        """Propagate each prompt backward through ``frames``.

        ``frames`` are in processing order: index 0 is the prompted
        (chronologically last) frame. Once an object is declared absent it
        stays absent for all remaining (chronologically earlier) frames.
        """
        if not prompts:
            raise ValueError("prompts must be non-empty")
        height, width = frames[0].shape
        n = len(frames)
        results: dict[int, list[Optional[np.ndarray]]] = {
            oid: [None] * n for oid, _ in prompts
        }

        # Prompted frame: seed each object and freeze its polarity.
        state = {}
        for oid, box in sorted(prompts, key=lambda p: p[0]):
            try:
                mask, polarity = self._seed_object(frames[0], box, params, width, height)
            except PromptMismatchError as exc:
                raise PromptMismatchError(f"cyst {oid}: {exc}") from None
            results[oid][0] = mask
            state[oid] = {"mask": mask, "polarity": polarity, "alive": True}
        if progress is not None:
            progress(1, n)

        for fidx in range(1, n):
            if cancel is not None and cancel():
                raise TrackingCancelled(f"cancelled before processing frame {fidx}")
            frame = frames[fidx]
            for oid, _ in sorted(prompts, key=lambda p: p[0]):
                st = state[oid]
                if not st["alive"]:
                    continue
                mask = self._propagate(frame, st, params, width, height)
                if mask is None:
                    st["alive"] = False
                else:
                    st["mask"] = mask
                    results[oid][fidx] = mask
            if progress is not None:
                progress(fidx + 1, n)
        return results

    def _seed_object(self, frame, box, params, width, height):
        window = _dilated_window(box, params.search_margin, width, height)
        best = None  # (score, area, scan_index, comp, polarity)
        for polarity in (BRIGHT, DARK):
            for idx, (comp, area, _) in enumerate(
                _threshold_components(frame, window, polarity, params.min_contrast)
            ):
                score = _box_overlap_score(comp, window, box)
                if score <= 0.0:
                    continue
                key = (score, area, -idx)
                if best is None or key > best[0]:
                    best = (key, comp, polarity)
        if best is None:
            raise PromptMismatchError(
                f"prompt box {box} matches no candidate on the final frame"
            )
        _, comp, polarity = best
        # The polarity vote also picks the seed: the candidate that best
        # fills the box is the object, regardless of larger neighbors.
        return _embed(comp, window, width, height), polarity

    def _propagate(self, frame, st, params, width, height):
        prev_mask = st["mask"]
        prev_count = int(prev_mask.sum())
        ys, xs = np.nonzero(prev_mask)
        prev_centroid = (float(xs.mean()), float(ys.mean()))
        box = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
        window = _dilated_window(box, params.search_margin, width, height)

        best = None  # (iou, -centroid_dist, -scan_index), comp, area
        for idx, (comp, area, centroid) in enumerate(
            _threshold_components(frame, window, st["polarity"], params.min_contrast)
        ):
            score = _mask_iou_in_window(comp, window, prev_mask, prev_count)
            dist = math.hypot(
                centroid[0] - prev_centroid[0], centroid[1] - prev_centroid[1]
            )
            key = (score, -dist, -idx)
            if best is None or key > best[0]:
                best = (key, comp, area)

        if best is None:
            return None
        (iou_score, _, _), comp, area = best
        if iou_score < params.iou_floor or area < params.min_area_px:
            return None
        return _embed(comp, window, width, height)
