"""Geometric and morphometric operations on binary masks.

Masks are plain 2D numpy bool arrays (row-major, shape (height, width)).
Coordinates follow image convention: x is the column index (rightward),
y is the row index (downward), pixel centers at integer coordinates.

All functions here are pure; nothing mutates its inputs.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import ndimage
from skimage import measure

# 8-connected neighborhood for blob labeling
_STRUCT8 = np.ones((3, 3), dtype=bool)

# Below this pixel count the traced contour is dominated by discretization
# artifacts and morphometry is flagged unreliable.
UNRELIABLE_AREA_PX = 5

# Corner-averaging passes applied to the marching-squares polygon. The raw
# polygon zigzags along the pixel grid and overestimates smooth perimeters
# by ~5%, which would depress circularity of genuine circles to ~0.9; two
# passes shrink the bias below 1% without visibly eroding corners.
CONTOUR_SMOOTHING_PASSES = 2


class MaskError(Exception):
    """Base class for mask geometry errors."""


class EmptyMaskError(MaskError):
    """Operation requires at least one foreground pixel."""


class MultipleComponentsError(MaskError):
    """Operation requires a single 8-connected component."""


class DimensionMismatchError(MaskError):
    """Operands must share the same width and height."""


@dataclass(frozen=True)
class Morphometry:
    """Shape measurements of a mask, in pixel units.

    ``bbox`` is half-open: (x0, y0, x1, y1) with x0 <= x < x1, y0 <= y < y1.
    ``unreliable`` marks masks under UNRELIABLE_AREA_PX pixels, where the
    contour is degenerate-dominated.
    """

    area_px: int
    perimeter_px: float
    circularity: float
    centroid: tuple[float, float]
    bbox: tuple[int, int, int, int]
    unreliable: bool


def as_mask(a) -> np.ndarray:
    """Coerce input to a 2D bool array without copying when possible."""
    m = np.asarray(a)
    if m.ndim != 2:
        raise ValueError(f"mask must be 2D, got shape {m.shape}")
    return m.astype(bool, copy=False)


def connected_components(mask: np.ndarray) -> list[np.ndarray]:
    """Split a mask into its 8-connected foreground components.

    Each component is returned as a full-size mask, ordered by first
    occurrence in row-major scan order. The union of the outputs equals
    the input and they are pairwise disjoint. An empty mask yields [].
    """
    mask = as_mask(mask)
    labels, n = ndimage.label(mask, structure=_STRUCT8)
    return [labels == i for i in range(1, n + 1)]


def trace_contour(
    mask: np.ndarray, smoothing_passes: int = CONTOUR_SMOOTHING_PASSES
) -> np.ndarray:
    """Trace the sub-pixel outline of a single-component mask.

    Runs marching squares at level 0.5 on the component's indicator with
    linear interpolation on cell edges (every crossing sits halfway
    between a foreground and a background pixel center), then applies
    ``smoothing_passes`` rounds of corner averaging to lift the polygon
    off the pixel-grid staircase. Returns the outer closed polygon as an
    (N, 2) float array of (x, y) vertices, N >= 3, without a duplicated
    endpoint. Interior hole boundaries are ignored.

    Raises EmptyMaskError on an all-background mask and
    MultipleComponentsError when the mask holds more than one component.
    """
    mask = as_mask(mask)
    if not mask.any():
        raise EmptyMaskError("cannot trace contour of an empty mask")
    _, n = ndimage.label(mask, structure=_STRUCT8)
    if n > 1:
        raise MultipleComponentsError(f"expected one component, found {n}")

    # Pad so components touching the border still close.
    padded = np.pad(mask.astype(float), 1)
    contours = measure.find_contours(padded, 0.5, fully_connected="high")
    # Outer boundary is the longest polyline; holes are shorter.
    outer = max(contours, key=_polyline_length)
    # find_contours yields (row, col) with a repeated endpoint.
    pts = outer[:-1, ::-1] - 1.0
    return smooth_contour(pts, smoothing_passes)


def smooth_contour(points: np.ndarray, passes: int = 1) -> np.ndarray:
    """Corner-average a closed polygon: v_i <- (v_{i-1} + 2 v_i + v_{i+1}) / 4.

    Collinear runs are fixed points, so axis-parallel edges survive; only
    the staircase corners move. Vertex count is preserved.
    """
    pts = np.asarray(points, dtype=float)
    for _ in range(passes):
        pts = (np.roll(pts, 1, axis=0) + 2.0 * pts + np.roll(pts, -1, axis=0)) / 4.0
    return pts


def _polyline_length(pts: np.ndarray) -> float:
    return float(np.linalg.norm(np.diff(pts, axis=0), axis=1).sum())


def contour_perimeter(contour: np.ndarray) -> float:
    """Arc length of a closed polygon given as (N, 2) vertices."""
    closed = np.vstack([contour, contour[:1]])
    return _polyline_length(closed)


def morphometry(mask: np.ndarray, component_policy: str = "largest") -> Morphometry:
    """Measure area, perimeter, circularity, centroid and bbox of a mask.

    ``component_policy`` controls multi-component masks (a tracker may emit
    fragments): "largest" measures only the biggest component, "merge"
    measures all foreground with the perimeter summed over per-component
    contours. Circularity is 4*pi*area / perimeter**2 clamped to [0, 1].

    Raises EmptyMaskError on an all-background mask.
    """
    if component_policy not in ("largest", "merge"):
        raise ValueError(f"unknown component_policy {component_policy!r}")
    components = connected_components(mask)
    if not components:
        raise EmptyMaskError("cannot measure an empty mask")

    if component_policy == "largest":
        # Scan-order labeling makes the tie-break deterministic.
        selected = [max(components, key=lambda c: int(c.sum()))]
    else:
        selected = components

    area = int(sum(int(c.sum()) for c in selected))
    perimeter = float(sum(contour_perimeter(trace_contour(c)) for c in selected))
    circ = 0.0
    if perimeter > 0:
        circ = float(np.clip(4.0 * np.pi * area / perimeter**2, 0.0, 1.0))

    union = selected[0] if len(selected) == 1 else np.logical_or.reduce(selected)
    ys, xs = np.nonzero(union)
    centroid = (float(xs.mean()), float(ys.mean()))
    bbox = (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)

    return Morphometry(
        area_px=area,
        perimeter_px=perimeter,
        circularity=circ,
        centroid=centroid,
        bbox=bbox,
        unreliable=area < UNRELIABLE_AREA_PX,
    )


def iou(a: np.ndarray, b: np.ndarray) -> float:
    """Intersection over union of two same-sized masks; 0 if both empty."""
    a = as_mask(a)
    b = as_mask(b)
    if a.shape != b.shape:
        raise DimensionMismatchError(f"shape mismatch: {a.shape} vs {b.shape}")
    union = int(np.logical_or(a, b).sum())
    if union == 0:
        return 0.0
    inter = int(np.logical_and(a, b).sum())
    return inter / union


def bbox_of(mask: np.ndarray) -> tuple[int, int, int, int]:
    """Half-open bounding box (x0, y0, x1, y1) of the foreground."""
    mask = as_mask(mask)
    ys, xs = np.nonzero(mask)
    if xs.size == 0:
        raise EmptyMaskError("empty mask has no bounding box")
    return (int(xs.min()), int(ys.min()), int(xs.max()) + 1, int(ys.max()) + 1)
