/** Shared API payload types mirroring the studio service. */

export interface ProjectSummary {
  project_id: string;
  revision: number;
  width: number;
  height: number;
  instances: number;
  trajectories: string[];
  preview: { semantic: string; height: string };
}

export interface InpaintResponse extends ProjectSummary {
  region_bbox: [number, number, number, number]; // x0, y0, x1, y1 inclusive
}

export interface TrajectoryPreview {
  name: string;
  count: number;
  poses: unknown[];
  thumbnails: { frame: number; png_base64: string }[];
}

export type JobState = "queued" | "running" | "done" | "failed";

export interface JobStatus {
  job_id: string;
  status: JobState;
  progress: number;
  total: number;
  error: string;
  frames: number[];
}

export interface Point {
  x: number;
  y: number;
}

export interface SemanticRaster {
  width: number;
  height: number;
  cells: Uint8Array;
}

export type Tool = "pan" | "mask-draw" | "trajectory-draw";

export type TrajectoryMode = "orbit" | "point_to_point" | "keypoints";

export interface TrajectoryDraft {
  mode: TrajectoryMode;
  radiusM: number;
  altitudeM: number;
  frames: number;
  stepsPerSegment: number;
  /** vertices in layout raster coordinates */
  vertices: Point[];
}
