import type { Point, TrajectoryDraft } from "./types";

/** Validated parameter ranges, mirrored from the service. */
export const RADIUS_RANGE_M: [number, number] = [125, 813];
export const ALTITUDE_RANGE_M: [number, number] = [112, 884];
export const DEFAULT_ORBIT_FRAMES = 60;

export interface DraftCheck {
  ok: boolean;
  /** human-readable range hint when a parameter is out of bounds */
  hint?: string;
}

export function validateDraft(draft: TrajectoryDraft): DraftCheck {
  if (draft.mode === "orbit") {
    if (draft.vertices.length !== 1) {
      return { ok: false, hint: "orbit needs exactly one center point" };
    }
    const [rLo, rHi] = RADIUS_RANGE_M;
    if (draft.radiusM < rLo || draft.radiusM > rHi) {
      return { ok: false, hint: `radius must be ${rLo}-${rHi} m` };
    }
    const [aLo, aHi] = ALTITUDE_RANGE_M;
    if (draft.altitudeM < aLo || draft.altitudeM > aHi) {
      return { ok: false, hint: `altitude must be ${aLo}-${aHi} m` };
    }
    if (draft.frames < 2) return { ok: false, hint: "need at least 2 frames" };
    return { ok: true };
  }
  const needed = draft.mode === "point_to_point" ? 2 : 2;
  if (draft.vertices.length < needed) {
    return { ok: false, hint: `need at least ${needed} keypoints` };
  }
  if (draft.stepsPerSegment < 1) {
    return { ok: false, hint: "steps per segment must be >= 1" };
  }
  return { ok: true };
}

/** Pose count the backend will produce for a keypoint path. */
export function keypointPoseCount(nPoints: number, stepsPerSegment: number): number {
  return (nPoints - 1) * stepsPerSegment + 1;
}

/** Tick positions for the orbit overlay, one per frame. */
export function orbitTicks(center: Point, radiusPx: number, frames = DEFAULT_ORBIT_FRAMES): Point[] {
  const ticks: Point[] = [];
  for (let k = 0; k < frames; k++) {
    const theta = (2 * Math.PI * k) / frames;
    ticks.push({
      x: center.x + radiusPx * Math.cos(theta),
      y: center.y + radiusPx * Math.sin(theta),
    });
  }
  return ticks;
}

/** Request body for POST /api/projects/{id}/trajectories. */
export function draftToRequest(draft: TrajectoryDraft, name: string, voxelSizeM = 0.5972) {
  if (draft.mode === "orbit") {
    return {
      name,
      mode: "orbit",
      center: [draft.vertices[0].x, draft.vertices[0].y],
      radius_m: draft.radiusM,
      altitude_m: draft.altitudeM,
      frames: draft.frames,
    };
  }
  const altVox = draft.altitudeM / voxelSizeM;
  return {
    name,
    mode: "keypoints",
    keypoints: draft.vertices.map((v, i) => {
      const next = draft.vertices[Math.min(i + 1, draft.vertices.length - 1)];
      const prev = draft.vertices[Math.max(i - 1, 0)];
      const ahead = i + 1 < draft.vertices.length ? next : { x: 2 * v.x - prev.x, y: 2 * v.y - prev.y };
      return {
        position: [v.x, v.y, altVox],
        look_at: [ahead.x, ahead.y, 0],
      };
    }),
    steps_per_segment: draft.stepsPerSegment,
  };
}
