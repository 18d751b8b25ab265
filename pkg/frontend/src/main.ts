import { ApiError, StudioClient } from "./api";
import { CanvasLayoutView } from "./canvasView";
import { diffCells } from "./palette";
import { JobMonitor } from "./jobs";
import { draftToRequest, validateDraft, DEFAULT_ORBIT_FRAMES } from "./trajectory";
import type { ProjectSummary, SemanticRaster, Tool, TrajectoryDraft } from "./types";

const client = new StudioClient("");
const $ = <T extends HTMLElement>(id: string) => document.getElementById(id) as T;

let project: ProjectSummary | null = null;
let raster: SemanticRaster | null = null;
let trajectoryCounter = 0;

const canvas = $("layout-canvas") as unknown as HTMLCanvasElement;
const viewer = new CanvasLayoutView(canvas);

function setStatus(text: string, isError = false): void {
  const el = $("status");
  el.textContent = text;
  el.className = isError ? "error" : "";
}

function setRevisionBadge(): void {
  $("revision").textContent = project ? `rev ${project.revision}` : "-";
}

async function refreshRaster(): Promise<void> {
  if (!project) return;
  const next = await client.fetchSemanticRaster(project.project_id);
  if (raster && raster.width === next.width && raster.height === next.height) {
    viewer.showDiff(diffCells(raster, next));
  }
  raster = next;
  viewer.setRaster(next);
}

async function onGenerate(): Promise<void> {
  const width = Number(($("gen-width") as HTMLInputElement).value);
  const height = Number(($("gen-height") as HTMLInputElement).value);
  const seed = Number(($("gen-seed") as HTMLInputElement).value);
  try {
    project = await client.generateLayout(width, height, seed);
    setRevisionBadge();
    await refreshRaster();
    setStatus(`layout ${width}x${height}, ${project.instances} building instances`);
  } catch (err) {
    setStatus(err instanceof ApiError ? err.message : String(err), true);
  }
}

async function onMaskRegenerate(): Promise<void> {
  if (!project) return setStatus("generate a layout first", true);
  if (viewer.vertices.length < 3) return setStatus("draw at least 3 mask vertices", true);
  try {
    const resp = await client.inpaint(
      project.project_id,
      project.revision,
      viewer.vertices,
      Number(($("gen-seed") as HTMLInputElement).value) + project.revision,
    );
    project = resp;
    setRevisionBadge();
    viewer.clearDrawing();
    await refreshRaster();
    setStatus("region regenerated");
  } catch (err) {
    if (err instanceof ApiError && err.status === 409) {
      setStatus("layout changed elsewhere, refresh before editing", true);
      project = await client.getProject(project.project_id);
      setRevisionBadge();
      await refreshRaster();
    } else {
      setStatus(err instanceof ApiError ? err.message : String(err), true);
    }
  }
}

function currentDraft(): TrajectoryDraft {
  return {
    mode: "orbit",
    radiusM: Number(($("orbit-radius") as HTMLInputElement).value),
    altitudeM: Number(($("orbit-altitude") as HTMLInputElement).value),
    frames: DEFAULT_ORBIT_FRAMES,
    stepsPerSegment: 10,
    vertices: viewer.vertices.slice(-1),
  };
}

async function onPreviewTrajectory(): Promise<void> {
  if (!project) return setStatus("generate a layout first", true);
  const draft = currentDraft();
  const check = validateDraft(draft);
  if (!check.ok) return setStatus(check.hint ?? "invalid trajectory", true);
  viewer.orbitDraft = draft;
  viewer.redraw();
  try {
    const name = `traj-${++trajectoryCounter}`;
    const preview = await client.previewTrajectory(project.project_id, draftToRequest(draft, name));
    const strip = $("preview-strip");
    strip.replaceChildren();
    for (const thumb of preview.thumbnails) {
      const img = document.createElement("img");
      img.src = `data:image/png;base64,${thumb.png_base64}`;
      img.title = `frame ${thumb.frame}`;
      strip.appendChild(img);
    }
    ($("render-traj") as HTMLInputElement).value = name;
    setStatus(`trajectory ${name}: ${preview.count} poses`);
  } catch (err) {
    setStatus(err instanceof ApiError ? err.message : String(err), true);
  }
}

async function onRender(): Promise<void> {
  if (!project) return setStatus("generate a layout first", true);
  const name = ($("render-traj") as HTMLInputElement).value;
  try {
    const { job_id } = await client.submitRender(project.project_id, project.revision, name);
    setStatus(`job ${job_id} submitted`);
    const framesEl = $("frames");
    framesEl.replaceChildren();
    const monitor = new JobMonitor(
      () => client.jobStatus(job_id),
      {
        onUpdate: (progress, total, fresh) => {
          $("job-progress").textContent = `${progress}/${total}`;
          for (const idx of fresh) {
            const img = document.createElement("img");
            img.src = client.frameUrl(job_id, idx);
            framesEl.appendChild(img);
          }
        },
        onDone: (s) => {
          setStatus(`job ${job_id} complete`);
          ($("btn-play") as HTMLButtonElement).onclick = () => startPlayback(job_id, s.total);
          ($("btn-play") as HTMLButtonElement).disabled = false;
        },
        onFailed: (s) => setStatus(`job failed: ${s.error}`, true),
      },
    );
    await monitor.run();
  } catch (err) {
    setStatus(err instanceof ApiError ? err.message : String(err), true);
  }
}

let playbackTimer: number | null = null;

function startPlayback(jobId: string, frameCount: number, intervalMs = 100): void {
  const stage = $("playback") as HTMLImageElement;
  let k = 0;
  if (playbackTimer !== null) clearInterval(playbackTimer);
  playbackTimer = window.setInterval(() => {
    stage.src = client.frameUrl(jobId, k);
    k = (k + 1) % frameCount;
  }, intervalMs);
  ($("btn-play") as HTMLButtonElement).disabled = false;
}

function updateMaskButton(): void {
  const disabled = viewer.tool === "mask-draw" && viewer.vertices.length < 3;
  ($("btn-regenerate") as HTMLButtonElement).disabled = disabled;
}

function bindToolButtons(): void {
  for (const tool of ["pan", "mask-draw", "trajectory-draw"] as Tool[]) {
    $(`tool-${tool}`).addEventListener("click", () => {
      viewer.tool = tool;
      viewer.clearDrawing();
      document.querySelectorAll(".tool").forEach((b) => b.classList.remove("active"));
      $(`tool-${tool}`).classList.add("active");
    });
  }
}

bindToolButtons();
viewer.onVerticesChanged = updateMaskButton;
updateMaskButton();
$("btn-generate").addEventListener("click", () => void onGenerate());
$("btn-regenerate").addEventListener("click", () => void onMaskRegenerate());
$("btn-preview").addEventListener("click", () => void onPreviewTrajectory());
$("btn-render").addEventListener("click", () => void onRender());
