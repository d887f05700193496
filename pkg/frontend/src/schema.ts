/**
 * Annotation document schema shared with the engine, plus client-side
 * validation mirroring the server rules so the UI never submits a
 * document the service would reject.
 *
 * Coordinates are pixels of the final frame, origin top-left; boxes are
 * half-open (x0 <= x < x1).
 */

export interface CystPrompt {
  cyst_id: number;
  bbox: [number, number, number, number];
}

export interface OrganoidAnnotation {
  organoid_id: number;
  anchor: [number, number];
  cysts: CystPrompt[];
}

export interface Calibration {
  um_per_pixel: number;
  total_duration_hours: number;
  frame_count: number;
  timestamps_hours?: number[];
}

export interface AnnotationDocument {
  frame_width: number;
  frame_height: number;
  annotated_frame_index: number;
  calibration: Calibration;
  organoids: OrganoidAnnotation[];
}

export interface ValidationIssue {
  entity: string;
  message: string;
}

export const MIN_BOX_AREA_PX = 4;

export function validateDocument(doc: AnnotationDocument): ValidationIssue[] {
  const issues: ValidationIssue[] = [];
  const { frame_width: w, frame_height: h, calibration: cal } = doc;

  if (!(w >= 1) || !(h >= 1)) {
    issues.push({ entity: "frame", message: `bad frame dimensions ${w}x${h}` });
  }
  if (!(cal.um_per_pixel > 0)) {
    issues.push({ entity: "calibration", message: "um_per_pixel must be > 0" });
  }
  if (!(cal.total_duration_hours > 0)) {
    issues.push({ entity: "calibration", message: "total duration must be > 0" });
  }
  if (!(cal.frame_count >= 2)) {
    issues.push({ entity: "calibration", message: "frame_count must be >= 2" });
  }
  if (doc.annotated_frame_index !== cal.frame_count - 1) {
    issues.push({
      entity: "session",
      message: `annotation must be on the last frame (${cal.frame_count - 1})`,
    });
  }
  if (doc.organoids.length === 0) {
    issues.push({ entity: "session", message: "at least one organoid is required" });
  }

  const organoidIds = new Set<number>();
  const cystIds = new Set<number>();
  const boxKeys = new Map<string, number>();
  for (const organoid of doc.organoids) {
    const oid = `organoid ${organoid.organoid_id}`;
    if (organoidIds.has(organoid.organoid_id)) {
      issues.push({ entity: oid, message: "duplicate organoid id" });
    }
    organoidIds.add(organoid.organoid_id);
    const [ax, ay] = organoid.anchor;
    if (!(ax >= 0 && ax < w && ay >= 0 && ay < h)) {
      issues.push({ entity: oid, message: `anchor (${ax}, ${ay}) outside the frame` });
    }
    for (const cyst of organoid.cysts) {
      const cid = `cyst ${cyst.cyst_id}`;
      const [x0, y0, x1, y1] = cyst.bbox;
      if (!(x0 < x1 && y0 < y1)) {
        issues.push({ entity: cid, message: "degenerate box" });
        continue;
      }
      if (x0 < 0 || y0 < 0 || x1 > w || y1 > h) {
        issues.push({ entity: cid, message: "box outside the frame" });
      }
      if ((x1 - x0) * (y1 - y0) < MIN_BOX_AREA_PX) {
        issues.push({ entity: cid, message: `box smaller than ${MIN_BOX_AREA_PX} px` });
      }
      if (cystIds.has(cyst.cyst_id)) {
        issues.push({ entity: cid, message: "duplicate cyst id" });
      }
      cystIds.add(cyst.cyst_id);
      const key = cyst.bbox.join(",");
      const firstOwner = boxKeys.get(key);
      if (firstOwner !== undefined) {
        issues.push({
          entity: cid,
          message: `identical box already drawn as cyst ${firstOwner}`,
        });
      } else {
        boxKeys.set(key, cyst.cyst_id);
      }
    }
  }
  return issues;
}
