/**
 * Typed client for the engine's /api/v1 REST surface. The UI talks to
 * the service exclusively through this module.
 */

import { AnnotationDocument } from "./schema.js";

export interface JobStatus {
  job_id: string;
  project_id: string;
  backend: string;
  state: "queued" | "running" | "done" | "failed" | "cancelled";
  progress: { frames_done: number; frames_total: number };
  error: string | null;
  report: string | null;
}

export interface ManifestArtifact {
  path: string;
  kind: "file" | "sequence";
  sha256?: string;
  frame_count?: number;
  files?: { path: string; sha256: string }[];
}

export interface ReportManifest {
  quality: string;
  warnings: string[];
  artifacts: ManifestArtifact[];
}

export class ApiError extends Error {
  status: number;
  detail: unknown;

  constructor(status: number, detail: unknown) {
    super(`HTTP ${status}: ${JSON.stringify(detail)}`);
    this.status = status;
    this.detail = detail;
  }
}

export class ApiClient {
  constructor(
    private baseUrl: string,
    private token: string,
    private fetchImpl: typeof fetch = fetch,
  ) {}

  private headers(json = true): Record<string, string> {
    const h: Record<string, string> = { Authorization: `Bearer ${this.token}` };
    if (json) h["Content-Type"] = "application/json";
    return h;
  }

  private async request<T>(path: string, init?: RequestInit): Promise<T> {
    const res = await this.fetchImpl(`${this.baseUrl}/api/v1${path}`, init);
    const body = res.headers.get("content-type")?.includes("json")
      ? await res.json()
      : await res.text();
    if (!res.ok) {
      throw new ApiError(res.status, (body as { detail?: unknown }).detail ?? body);
    }
    return body as T;
  }

  health(): Promise<{ status: string }> {
    return this.request("/health");
  }

  createProject(name: string): Promise<{ project_id: string }> {
    return this.request("/projects", {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ name }),
    });
  }

  listProjects(): Promise<{ project_id: string; name: string }[]> {
    return this.request("/projects", { headers: this.headers(false) });
  }

  getProject(projectId: string): Promise<{
    project_id: string;
    name: string;
    frames: string[];
    frame_width: number | null;
    frame_height: number | null;
    has_annotation?: boolean;
  }> {
    return this.request(`/projects/${projectId}`, { headers: this.headers(false) });
  }

  uploadFramesDirectory(projectId: string, directory: string): Promise<unknown> {
    return this.request(`/projects/${projectId}/frames`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify({ directory }),
    });
  }

  uploadFrameFiles(projectId: string, files: File[]): Promise<unknown> {
    const form = new FormData();
    for (const f of files) form.append("files", f, f.name);
    return this.request(`/projects/${projectId}/frames`, {
      method: "POST",
      headers: this.headers(false),
      body: form,
    });
  }

  putAnnotation(
    projectId: string,
    doc: AnnotationDocument,
  ): Promise<{ ok: boolean; n_organoids: number; n_cysts: number }> {
    return this.request(`/projects/${projectId}/annotation`, {
      method: "PUT",
      headers: this.headers(),
      body: JSON.stringify(doc),
    });
  }

  getAnnotation(projectId: string): Promise<AnnotationDocument> {
    return this.request(`/projects/${projectId}/annotation`, {
      headers: this.headers(false),
    });
  }

  startJob(
    projectId: string,
    options: { backend?: "baseline" | "remote"; quality?: "preview" | "full";
               params?: Record<string, unknown> } = {},
  ): Promise<{ job_id: string }> {
    return this.request(`/projects/${projectId}/jobs`, {
      method: "POST",
      headers: this.headers(),
      body: JSON.stringify(options),
    });
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.request(`/jobs/${jobId}`, { headers: this.headers(false) });
  }

  async jobLog(jobId: string): Promise<string> {
    return this.request(`/jobs/${jobId}/log`, { headers: this.headers(false) });
  }

  cancelJob(jobId: string): Promise<JobStatus> {
    return this.request(`/jobs/${jobId}/cancel`, {
      method: "POST",
      headers: this.headers(false),
    });
  }

  reportManifest(jobId: string): Promise<ReportManifest> {
    return this.request(`/jobs/${jobId}/report`, { headers: this.headers(false) });
  }

  artifactUrl(jobId: string, path: string): string {
    return `${this.baseUrl}/api/v1/jobs/${jobId}/report/${path}`;
  }

  async fetchArtifactText(jobId: string, path: string): Promise<string> {
    const res = await this.fetchImpl(this.artifactUrl(jobId, path), {
      headers: this.headers(false),
    });
    if (!res.ok) throw new ApiError(res.status, await res.text());
    return res.text();
  }
}
