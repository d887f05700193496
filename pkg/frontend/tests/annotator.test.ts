import { describe, expect, it } from "vitest";

import { Annotator } from "../src/annotator.js";
import { Calibration } from "../src/schema.js";

const CAL: Calibration = {
  um_per_pixel: 1.29,
  total_duration_hours: 144,
  frame_count: 7,
};

function click(a: Annotator, x: number, y: number) {
  a.pointerDown(x, y);
  a.pointerUp(x, y);
}

function drag(a: Annotator, x0: number, y0: number, x1: number, y1: number) {
  a.pointerDown(x0, y0);
  a.pointerMove((x0 + x1) / 2, (y0 + y1) / 2);
  a.pointerUp(x1, y1);
}

describe("annotation interaction loop", () => {
  it("click, drag x2, click, drag x1 gives 2 organoids with 2 and 1 cysts", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 100, 100);
    drag(a, 80, 80, 120, 110);
    drag(a, 130, 90, 160, 130);
    click(a, 300, 300);
    drag(a, 280, 280, 330, 320);

    const organoids = a.organoids;
    expect(organoids.length).toBe(2);
    expect(organoids[0].cysts.length).toBe(2);
    expect(organoids[1].cysts.length).toBe(1);
    expect(a.cystCount).toBe(3);

    const doc = a.toDocument(CAL);
    expect(doc.organoids.length).toBe(2);
    expect(a.issues(CAL)).toEqual([]);
  });

  it("reproduces the 14-organoid / 7-cyst population scene", () => {
    const a = new Annotator(1280, 960, 7);
    let cysts = 0;
    for (let i = 0; i < 14; i++) {
      const x = 40 + i * 85;
      click(a, x, 700);
      const boxes = i === 0 ? 2 : i < 6 ? 1 : 0;
      for (let b = 0; b < boxes; b++) {
        const bx = 30 + cysts * 90;
        drag(a, bx, 100, bx + 40, 160);
        cysts += 1;
      }
    }
    expect(a.organoids.length).toBe(14);
    expect(a.cystCount).toBe(7);
    expect(a.issues(CAL)).toEqual([]);
    const doc = a.toDocument(CAL);
    const withCysts = doc.organoids.filter((o) => o.cysts.length > 0);
    expect(withCysts.length).toBe(6);
  });

  it("new click switches the active organoid", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    expect(a.activeOrganoid).toBe(0);
    click(a, 200, 200);
    expect(a.activeOrganoid).toBe(1);
    drag(a, 180, 180, 220, 230);
    expect(a.organoids[0].cysts.length).toBe(0);
    expect(a.organoids[1].cysts.length).toBe(1);
  });

  it("rejects a drag fully outside the image with an inline message", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    drag(a, 700, 500, 800, 600);
    expect(a.cystCount).toBe(0);
    expect(a.message).toMatch(/outside the image/);
  });

  it("clamps a partially-outside drag to the frame", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    drag(a, 600, 440, 700, 520);
    expect(a.cystCount).toBe(1);
    expect(a.organoids[0].cysts[0].bbox).toEqual([600, 440, 640, 480]);
  });

  it("rejects a drag before any organoid exists", () => {
    const a = new Annotator(640, 480, 7);
    drag(a, 10, 10, 60, 60);
    expect(a.organoids.length).toBe(0);
    expect(a.message).toMatch(/click an organoid/);
  });

  it("rejects clicks outside the frame", () => {
    const a = new Annotator(640, 480, 7);
    click(a, -3, 10);
    expect(a.organoids.length).toBe(0);
    expect(a.message).toMatch(/inside the image/);
  });

  it("only the final frame is editable", () => {
    const a = new Annotator(640, 480, 7);
    a.setFrame(2);
    expect(a.canEdit).toBe(false);
    click(a, 50, 50);
    expect(a.organoids.length).toBe(0);
    expect(a.message).toMatch(/final frame/);
    a.setFrame(6);
    click(a, 50, 50);
    expect(a.organoids.length).toBe(1);
  });

  it("supports undo and redo across mixed actions", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    drag(a, 30, 30, 80, 80);
    click(a, 200, 200);
    expect(a.organoids.length).toBe(2);

    a.undo();
    expect(a.organoids.length).toBe(1);
    a.undo();
    expect(a.cystCount).toBe(0);
    a.undo();
    expect(a.organoids.length).toBe(0);
    expect(a.canUndo).toBe(false);

    a.redo();
    a.redo();
    expect(a.organoids.length).toBe(1);
    expect(a.cystCount).toBe(1);
    a.redo();
    expect(a.organoids.length).toBe(2);
    expect(a.canRedo).toBe(false);
  });

  it("a new action clears the redo stack", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    click(a, 100, 100);
    a.undo();
    click(a, 150, 150);
    expect(a.canRedo).toBe(false);
    expect(a.organoids.length).toBe(2);
  });

  it("identical duplicate boxes are flagged before save", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    drag(a, 30, 30, 80, 80);
    drag(a, 30, 30, 80, 80);
    const issues = a.issues(CAL);
    expect(issues.some((i) => i.message.includes("identical box"))).toBe(true);
  });

  it("cyst ids stay unique after undo/redo interleaving", () => {
    const a = new Annotator(640, 480, 7);
    click(a, 50, 50);
    drag(a, 10, 10, 40, 40);
    drag(a, 50, 50, 90, 90);
    a.undo();
    drag(a, 100, 100, 140, 140);
    const ids = a.organoids.flatMap((o) => o.cysts.map((c) => c.cyst_id));
    expect(new Set(ids).size).toBe(ids.length);
  });
});
