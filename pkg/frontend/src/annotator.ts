/**
 * Final-frame annotation state machine.
 *
 * Interaction protocol: a left-click on the canvas starts a new organoid
 * at the click point and makes it active; a drag appends a cyst box to
 * the active organoid; the next click starts the next organoid. Editing
 * is allowed only while viewing the final frame; navigation elsewhere is
 * read-only. Every mutation lands on an undo/redo stack.
 *
 * All coordinates handed to the annotator are image pixels (the canvas
 * layer converts from screen space first).
 */

import {
  AnnotationDocument,
  Calibration,
  OrganoidAnnotation,
  validateDocument,
} from "./schema.js";

/** Pointer travel below this many image pixels counts as a click. */
export const DRAG_THRESHOLD_PX = 3;

export interface AnnotatorSnapshot {
  organoids: OrganoidAnnotation[];
  activeOrganoid: number | null;
}

function cloneState(s: AnnotatorSnapshot): AnnotatorSnapshot {
  return {
    activeOrganoid: s.activeOrganoid,
    organoids: s.organoids.map((o) => ({
      organoid_id: o.organoid_id,
      anchor: [o.anchor[0], o.anchor[1]],
      cysts: o.cysts.map((c) => ({ cyst_id: c.cyst_id, bbox: [...c.bbox] as
        [number, number, number, number] })),
    })),
  };
}

export class Annotator {
  readonly frameWidth: number;
  readonly frameHeight: number;
  readonly frameCount: number;

  private state: AnnotatorSnapshot = { organoids: [], activeOrganoid: null };
  private undoStack: AnnotatorSnapshot[] = [];
  private redoStack: AnnotatorSnapshot[] = [];
  private drag: { x0: number; y0: number; x1: number; y1: number } | null = null;

  /** Index of the frame the viewer is showing. */
  currentFrame: number;
  /** Inline feedback for the last rejected interaction, if any. */
  message: string | null = null;

  constructor(frameWidth: number, frameHeight: number, frameCount: number) {
    this.frameWidth = frameWidth;
    this.frameHeight = frameHeight;
    this.frameCount = frameCount;
    this.currentFrame = frameCount - 1;
  }

  get finalFrame(): number {
    return this.frameCount - 1;
  }

  get canEdit(): boolean {
    return this.currentFrame === this.finalFrame;
  }

  get organoids(): OrganoidAnnotation[] {
    return cloneState(this.state).organoids;
  }

  get activeOrganoid(): number | null {
    return this.state.activeOrganoid;
  }

  get cystCount(): number {
    return this.state.organoids.reduce((n, o) => n + o.cysts.length, 0);
  }

  get dragInProgress(): boolean {
    return this.drag !== null;
  }

  setFrame(index: number): void {
    this.currentFrame = Math.max(0, Math.min(this.frameCount - 1, index));
  }

  pointerDown(x: number, y: number): void {
    this.message = null;
    if (!this.canEdit) {
      this.message = "annotation is only allowed on the final frame";
      return;
    }
    this.drag = { x0: x, y0: y, x1: x, y1: y };
  }

  pointerMove(x: number, y: number): void {
    if (this.drag) {
      this.drag.x1 = x;
      this.drag.y1 = y;
    }
  }

  pointerUp(x: number, y: number): void {
    if (!this.drag) return;
    this.drag.x1 = x;
    this.drag.y1 = y;
    const { x0, y0, x1, y1 } = this.drag;
    this.drag = null;
    const travel = Math.hypot(x1 - x0, y1 - y0);
    if (travel < DRAG_THRESHOLD_PX) {
      this.addOrganoid(x1, y1);
    } else {
      this.addBox(x0, y0, x1, y1);
    }
  }

  private commit(next: AnnotatorSnapshot): void {
    this.undoStack.push(cloneState(this.state));
    this.redoStack = [];
    this.state = next;
  }

  private addOrganoid(x: number, y: number): void {
    if (x < 0 || y < 0 || x >= this.frameWidth || y >= this.frameHeight) {
      this.message = "organoid anchor must be inside the image";
      return;
    }
    const next = cloneState(this.state);
    next.organoids.push({
      organoid_id: next.organoids.length,
      anchor: [x, y],
      cysts: [],
    });
    next.activeOrganoid = next.organoids.length - 1;
    this.commit(next);
  }

  private addBox(ax: number, ay: number, bx: number, by: number): void {
    if (this.state.activeOrganoid === null) {
      this.message = "click an organoid before drawing cyst boxes";
      return;
    }
    let x0 = Math.min(ax, bx);
    let x1 = Math.max(ax, bx);
    let y0 = Math.min(ay, by);
    let y1 = Math.max(ay, by);
    if (x1 <= 0 || y1 <= 0 || x0 >= this.frameWidth || y0 >= this.frameHeight) {
      this.message = "cyst box is entirely outside the image";
      return;
    }
    // Partially outside: clamp to the frame.
    x0 = Math.max(0, Math.round(x0));
    y0 = Math.max(0, Math.round(y0));
    x1 = Math.min(this.frameWidth, Math.round(x1));
    y1 = Math.min(this.frameHeight, Math.round(y1));
    if ((x1 - x0) * (y1 - y0) < 4) {
      this.message = "cyst box is too small (minimum 4 px)";
      return;
    }
    const next = cloneState(this.state);
    const organoid = next.organoids[this.state.activeOrganoid];
    organoid.cysts.push({
      cyst_id: this.nextCystId(),
      bbox: [x0, y0, x1, y1],
    });
    this.commit(next);
  }

  private nextCystId(): number {
    let max = -1;
    for (const o of this.state.organoids) {
      for (const c of o.cysts) max = Math.max(max, c.cyst_id);
    }
    return max + 1;
  }

  get canUndo(): boolean {
    return this.undoStack.length > 0;
  }

  get canRedo(): boolean {
    return this.redoStack.length > 0;
  }

  undo(): void {
    const prev = this.undoStack.pop();
    if (prev === undefined) return;
    this.redoStack.push(cloneState(this.state));
    this.state = prev;
  }

  redo(): void {
    const next = this.redoStack.pop();
    if (next === undefined) return;
    this.undoStack.push(cloneState(this.state));
    this.state = next;
  }

  /** Serialize the committed state to the annotation document schema. */
  toDocument(calibration: Calibration): AnnotationDocument {
    return {
      frame_width: this.frameWidth,
      frame_height: this.frameHeight,
      annotated_frame_index: this.finalFrame,
      calibration: { ...calibration, frame_count: this.frameCount },
      organoids: cloneState(this.state).organoids,
    };
  }

  /** Issues that would make the service reject a save; [] when valid. */
  issues(calibration: Calibration) {
    return validateDocument(this.toDocument(calibration));
  }
}
