import type {
  InpaintResponse,
  JobStatus,
  Point,
  ProjectSummary,
  SemanticRaster,
  TrajectoryPreview,
} from "./types";
import { decodeSemanticBin } from "./palette";

export type FetchLike = (url: string, init?: RequestInit) => Promise<Response>;

/** Raised for non-2xx responses, carrying the service's detail message. */
export class ApiError extends Error {
  constructor(
    public status: number,
    message: string,
  ) {
    super(message);
  }
}

async function asJson<T>(resp: Response): Promise<T> {
  if (!resp.ok) {
    let detail = resp.statusText;
    try {
      const body = await resp.json();
      detail = typeof body.detail === "string" ? body.detail : JSON.stringify(body);
    } catch {
      /* plain-text error body */
    }
    throw new ApiError(resp.status, detail);
  }
  return (await resp.json()) as T;
}

/** Thin typed client over the studio HTTP API. */
export class StudioClient {
  constructor(
    public baseUrl: string,
    private fetchImpl: FetchLike = fetch.bind(globalThis),
  ) {}

  private async post<T>(path: string, body: unknown): Promise<T> {
    const resp = await this.fetchImpl(this.baseUrl + path, {
      method: "POST",
      headers: { "content-type": "application/json" },
      body: JSON.stringify(body),
    });
    return asJson<T>(resp);
  }

  private async get<T>(path: string): Promise<T> {
    return asJson<T>(await this.fetchImpl(this.baseUrl + path));
  }

  generateLayout(width: number, height: number, seed: number): Promise<ProjectSummary> {
    return this.post("/api/projects", { width, height, seed, sampler: "procedural" });
  }

  getProject(projectId: string): Promise<ProjectSummary> {
    return this.get(`/api/projects/${projectId}`);
  }

  /** polygon vertices must already be in layout raster coordinates */
  inpaint(projectId: string, revision: number, polygon: Point[], seed: number): Promise<InpaintResponse> {
    return this.post(`/api/projects/${projectId}/inpaint`, {
      revision,
      polygon: polygon.map((p) => [p.x, p.y]),
      seed,
    });
  }

  previewTrajectory(projectId: string, body: unknown): Promise<TrajectoryPreview> {
    return this.post(`/api/projects/${projectId}/trajectories`, body);
  }

  submitRender(projectId: string, revision: number, trajectory: string, styleSeed = 0): Promise<{ job_id: string; total: number }> {
    return this.post(`/api/projects/${projectId}/renders`, {
      revision,
      trajectory,
      style_seed: styleSeed,
    });
  }

  jobStatus(jobId: string): Promise<JobStatus> {
    return this.get(`/api/jobs/${jobId}`);
  }

  frameUrl(jobId: string, index: number): string {
    return `${this.baseUrl}/api/jobs/${jobId}/frames/${index}.png`;
  }

  semanticPngUrl(projectId: string, scale = 1): string {
    return `${this.baseUrl}/api/projects/${projectId}/semantic.png?scale=${scale}`;
  }

  async fetchSemanticRaster(projectId: string): Promise<SemanticRaster> {
    const resp = await this.fetchImpl(`${this.baseUrl}/api/projects/${projectId}/semantic.bin`);
    if (!resp.ok) throw new ApiError(resp.status, resp.statusText);
    return decodeSemanticBin(await resp.arrayBuffer());
  }
}
