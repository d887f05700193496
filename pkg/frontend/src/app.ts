/**
 * Browser shell: wires the annotator, viewer transforms, job monitor and
 * report browser onto the DOM. All logic lives in the sibling modules;
 * this file only moves pixels and form values around.
 */

import { ApiClient } from "./api.js";
import { Annotator } from "./annotator.js";
import { JobFailedError, pollJob, progressFraction } from "./jobs.js";
import { Calibration } from "./schema.js";
import {
  IDENTITY,
  Scrubber,
  ViewTransform,
  canvasToImage,
  cystColor,
  panBy,
  zoomAt,
} from "./viewer.js";

function el<T extends HTMLElement>(id: string): T {
  const node = document.getElementById(id);
  if (!node) throw new Error(`missing element #${id}`);
  return node as T;
}

class App {
  private api!: ApiClient;
  private annotator: Annotator | null = null;
  private transform: ViewTransform = { ...IDENTITY };
  private projectId: string | null = null;
  private frames: string[] = [];
  private frameImage: HTMLImageElement | null = null;
  private panning: { x: number; y: number } | null = null;

  private canvas = el<HTMLCanvasElement>("canvas");
  private statusLine = el<HTMLDivElement>("status");
  private logPane = el<HTMLPreElement>("log");

  connect(): void {
    const base = (el<HTMLInputElement>("server-url").value || "").replace(/\/$/, "");
    const token = el<HTMLInputElement>("auth-token").value;
    this.api = new ApiClient(base, token);
    this.api
      .listProjects()
      .then((projects) => {
        const select = el<HTMLSelectElement>("project-select");
        select.innerHTML = "";
        for (const p of projects) {
          const option = document.createElement("option");
          option.value = p.project_id;
          option.textContent = `${p.name} (${p.project_id})`;
          select.appendChild(option);
        }
        this.say(`connected; ${projects.length} project(s)`);
      })
      .catch((err) => this.say(`connection failed: ${err}`, true));
  }

  async openProject(): Promise<void> {
    const projectId = el<HTMLSelectElement>("project-select").value;
    const doc = await this.api.getProject(projectId);
    if (!doc.frames.length || doc.frame_width === null) {
      this.say("project has no frames yet", true);
      return;
    }
    this.projectId = projectId;
    this.frames = doc.frames;
    this.annotator = new Annotator(
      doc.frame_width,
      doc.frame_height as number,
      doc.frames.length,
    );
    const slider = el<HTMLInputElement>("frame-slider");
    slider.max = String(doc.frames.length - 1);
    slider.value = String(doc.frames.length - 1);
    this.transform = { ...IDENTITY };
    await this.showFrame(doc.frames.length - 1);
  }

  private async showFrame(index: number): Promise<void> {
    if (!this.annotator || !this.projectId) return;
    this.annotator.setFrame(index);
    // Frames are served straight from the content store via the report
    // path of a completed job when present; before any job exists we show
    // the raw uploaded frame through an object URL.
    const image = new Image();
    image.src = `${el<HTMLInputElement>("server-url").value}/api/v1/projects/`
      + `${this.projectId}/frames/${this.frames[index]}`;
    await image.decode().catch(() => undefined);
    this.frameImage = image;
    el<HTMLSpanElement>("frame-label").textContent =
      `frame ${index}${this.annotator.canEdit ? " (annotating)" : " (read-only)"}`;
    this.draw();
  }

  private draw(): void {
    const ctx = this.canvas.getContext("2d");
    if (!ctx || !this.annotator) return;
    ctx.setTransform(1, 0, 0, 1, 0, 0);
    ctx.clearRect(0, 0, this.canvas.width, this.canvas.height);
    const t = this.transform;
    ctx.setTransform(t.zoom, 0, 0, t.zoom, t.panX, t.panY);
    if (this.frameImage) ctx.drawImage(this.frameImage, 0, 0);

    for (const organoid of this.annotator.organoids) {
      ctx.fillStyle =
        organoid.organoid_id === this.annotator.activeOrganoid ? "#ff0" : "#fff";
      const [ax, ay] = organoid.anchor;
      ctx.beginPath();
      ctx.arc(ax, ay, 4 / t.zoom, 0, Math.PI * 2);
      ctx.fill();
      for (const cyst of organoid.cysts) {
        const [x0, y0, x1, y1] = cyst.bbox;
        ctx.strokeStyle = cystColor(cyst.cyst_id);
        ctx.lineWidth = 2 / t.zoom;
        ctx.strokeRect(x0, y0, x1 - x0, y1 - y0);
      }
    }
    el<HTMLSpanElement>("count-label").textContent =
      `${this.annotator.organoids.length} organoids / ${this.annotator.cystCount} cysts`;
  }

  bindCanvas(): void {
    this.canvas.addEventListener("pointerdown", (ev) => {
      if (!this.annotator) return;
      if (ev.button === 1 || ev.shiftKey) {
        this.panning = { x: ev.offsetX, y: ev.offsetY };
        return;
      }
      const [x, y] = canvasToImage(this.transform, ev.offsetX, ev.offsetY);
      this.annotator.pointerDown(x, y);
    });
    this.canvas.addEventListener("pointermove", (ev) => {
      if (this.panning) {
        this.transform = panBy(
          this.transform,
          ev.offsetX - this.panning.x,
          ev.offsetY - this.panning.y,
        );
        this.panning = { x: ev.offsetX, y: ev.offsetY };
        this.draw();
        return;
      }
      if (!this.annotator) return;
      const [x, y] = canvasToImage(this.transform, ev.offsetX, ev.offsetY);
      this.annotator.pointerMove(x, y);
    });
    this.canvas.addEventListener("pointerup", (ev) => {
      if (this.panning) {
        this.panning = null;
        return;
      }
      if (!this.annotator) return;
      const [x, y] = canvasToImage(this.transform, ev.offsetX, ev.offsetY);
      this.annotator.pointerUp(x, y);
      if (this.annotator.message) this.say(this.annotator.message, true);
      this.draw();
    });
    this.canvas.addEventListener("wheel", (ev) => {
      ev.preventDefault();
      this.transform = zoomAt(
        this.transform,
        ev.offsetX,
        ev.offsetY,
        ev.deltaY < 0 ? 1.2 : 1 / 1.2,
      );
      this.draw();
    });
  }

  private calibration(): Calibration | null {
    const umPerPixel = Number(el<HTMLInputElement>("um-per-pixel").value);
    const duration = Number(el<HTMLInputElement>("duration-hours").value);
    if (!(umPerPixel > 0) || !(duration > 0)) {
      this.say("enter µm/pixel and total duration before continuing", true);
      return null;
    }
    return {
      um_per_pixel: umPerPixel,
      total_duration_hours: duration,
      frame_count: this.frames.length,
    };
  }

  async save(): Promise<void> {
    if (!this.annotator || !this.projectId) return;
    const calibration = this.calibration();
    if (!calibration) return;
    const issues = this.annotator.issues(calibration);
    if (issues.length) {
      this.say(issues.map((i) => `${i.entity}: ${i.message}`).join("; "), true);
      return;
    }
    try {
      const res = await this.api.putAnnotation(
        this.projectId,
        this.annotator.toDocument(calibration),
      );
      this.say(`saved: ${res.n_organoids} organoids, ${res.n_cysts} cysts`);
    } catch (err: unknown) {
      // 422 carries {error, detail} naming the offending entity.
      this.say(`rejected by server: ${JSON.stringify((err as Error).message)}`, true);
    }
  }

  async launchJob(): Promise<void> {
    if (!this.projectId) return;
    if (!this.calibration()) return; // calibration is required before launch
    const backend = el<HTMLSelectElement>("backend-select").value as
      | "baseline"
      | "remote";
    const quality = el<HTMLSelectElement>("quality-select").value as
      | "preview"
      | "full";
    const { job_id } = await this.api.startJob(this.projectId, { backend, quality });
    this.say(`job ${job_id} queued`);
    const bar = el<HTMLProgressElement>("job-progress");
    try {
      const status = await pollJob(this.api, job_id, {
        onUpdate: async (s) => {
          bar.value = progressFraction(s);
          this.logPane.textContent = await this.api.jobLog(job_id);
        },
      });
      this.say(`job ${status.job_id} done`);
      await this.showReport(job_id);
    } catch (err) {
      if (err instanceof JobFailedError) {
        this.say(`job ${err.status.state}`, true);
        this.logPane.textContent = err.logExcerpt;
      } else {
        this.say(String(err), true);
      }
    }
  }

  private async showReport(jobId: string): Promise<void> {
    const manifest = await this.api.reportManifest(jobId);
    const pane = el<HTMLDivElement>("plots");
    pane.innerHTML = "";
    for (const name of ["areas", "circularity", "scatter", "heatmap"]) {
      const img = document.createElement("img");
      img.alt = name;
      img.src = this.api.artifactUrl(jobId, `plots/${name}.svg`);
      pane.appendChild(img);
    }
    const tables = el<HTMLPreElement>("tables");
    tables.textContent = [
      await this.api.fetchArtifactText(jobId, "population.csv"),
      await this.api.fetchArtifactText(jobId, "growth.csv"),
    ].join("\n");

    const overlaySeq = manifest.artifacts.find(
      (a) => a.kind === "sequence" && a.path === "overlays/overlay",
    );
    const scrubber = new Scrubber(overlaySeq?.frame_count ?? this.frames.length);
    const slider = el<HTMLInputElement>("scrub-slider");
    const frame = el<HTMLImageElement>("scrub-frame");
    slider.max = String(scrubber.frameCount - 1);
    const show = () => {
      scrubber.frame = Number(slider.value);
      frame.src = this.api.artifactUrl(jobId, scrubber.framePath());
    };
    slider.oninput = show;
    show();
    const legend = el<HTMLDivElement>("legend");
    legend.innerHTML = "";
    this.annotator?.organoids.forEach((o) =>
      o.cysts.forEach((c) => {
        const chip = document.createElement("span");
        chip.textContent = `cyst ${c.cyst_id}`;
        chip.style.borderLeft = `12px solid ${cystColor(c.cyst_id)}`;
        chip.style.paddingLeft = "4px";
        chip.style.marginRight = "8px";
        legend.appendChild(chip);
      }),
    );
  }

  private say(message: string, isError = false): void {
    this.statusLine.textContent = message;
    this.statusLine.className = isError ? "error" : "";
  }

  start(): void {
    this.bindCanvas();
    el<HTMLButtonElement>("connect-btn").onclick = () => this.connect();
    el<HTMLButtonElement>("open-btn").onclick = () => void this.openProject();
    el<HTMLButtonElement>("save-btn").onclick = () => void this.save();
    el<HTMLButtonElement>("launch-btn").onclick = () => void this.launchJob();
    el<HTMLButtonElement>("undo-btn").onclick = () => {
      this.annotator?.undo();
      this.draw();
    };
    el<HTMLButtonElement>("redo-btn").onclick = () => {
      this.annotator?.redo();
      this.draw();
    };
    el<HTMLInputElement>("frame-slider").oninput = (ev) =>
      void this.showFrame(Number((ev.target as HTMLInputElement).value));
  }
}

new App().start();
