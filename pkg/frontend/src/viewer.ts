/**
 * Frame viewer state: zoom/pan transform math and the report scrubber.
 * Pure functions so the canvas layer stays a thin shell.
 */

export interface ViewTransform {
  zoom: number;
  panX: number;
  panY: number;
}

export const IDENTITY: ViewTransform = { zoom: 1, panX: 0, panY: 0 };
export const MIN_ZOOM = 0.25;
export const MAX_ZOOM = 16;

export function zoomAt(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
  factor: number,
): ViewTransform {
  const zoom = Math.min(MAX_ZOOM, Math.max(MIN_ZOOM, t.zoom * factor));
  const applied = zoom / t.zoom;
  // Keep the point under the cursor fixed while zooming.
  return {
    zoom,
    panX: canvasX - (canvasX - t.panX) * applied,
    panY: canvasY - (canvasY - t.panY) * applied,
  };
}

export function panBy(t: ViewTransform, dx: number, dy: number): ViewTransform {
  return { zoom: t.zoom, panX: t.panX + dx, panY: t.panY + dy };
}

export function canvasToImage(
  t: ViewTransform,
  canvasX: number,
  canvasY: number,
): [number, number] {
  return [(canvasX - t.panX) / t.zoom, (canvasY - t.panY) / t.zoom];
}

export function imageToCanvas(
  t: ViewTransform,
  imageX: number,
  imageY: number,
): [number, number] {
  return [imageX * t.zoom + t.panX, imageY * t.zoom + t.panY];
}

/** Same palette as the engine's overlay renderer, cycled by cyst id. */
export const PALETTE: string[] = [
  "#e6194b", "#3cb44b", "#ffe119", "#0082c8", "#f58230", "#911eb4",
  "#46f0f0", "#f032e6", "#d2f53c", "#fabed4", "#008080", "#dcbeff",
];

export function cystColor(cystId: number): string {
  return PALETTE[cystId % PALETTE.length];
}

/** Chronological frame scrubber over a rendered overlay sequence. */
export class Scrubber {
  private index = 0;

  constructor(readonly frameCount: number) {
    if (frameCount < 1) throw new Error("scrubber needs at least one frame");
  }

  get frame(): number {
    return this.index;
  }

  set frame(i: number) {
    this.index = Math.max(0, Math.min(this.frameCount - 1, Math.round(i)));
  }

  framePath(kind: "overlay" | "masks" | "side_by_side" = "overlay"): string {
    const n = String(this.index).padStart(4, "0");
    return `overlays/${kind}/frame_${n}.png`;
  }
}
