"""HTTP studio service: layout generation, inpainting, trajectory previews,
render jobs, and frame retrieval.

State lives on the filesystem under the data directory; every mutation is
guarded by an optimistic revision check and render jobs snapshot the layout
at submission, so long renders are immune to later edits.
"""

from __future__ import annotations

import base64
import io
import json
import threading
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import FastAPI, HTTPException, Response
from PIL import Image
from pydantic import BaseModel, Field

from . import geo
from .errors import ValidationError
from .geo import HeightField, SemanticMap, load_city, save_city
from .layout import CityLayout, instantiate_buildings
from .pipeline import FeatureFactory, render_city_frame
from .rng import derive_seed
from .synth import ExemplarTokenizer, ProceduralSampler, extrapolate, inpaint
from .trajectory import (
    OrbitSpec,
    Trajectory,
    keypoint_trajectory,
    orbit_trajectory,
    project_annotations,
)
from .volren import CameraIntrinsics, RenderSettings

SAMPLERS = {"procedural": ProceduralSampler}

THUMB_WIDTH = 128


@dataclass
class ServiceConfig:
    host: str = "127.0.0.1"
    port: int = 8645
    workers: int = 2
    data_dir: Path = Path("./cityforge_data")
    render_step: float = 0.5
    use_features: bool = True

    @classmethod
    def load(cls, path: str | Path | None = None, env: dict | None = None) -> "ServiceConfig":
        import os

        env = env if env is not None else dict(os.environ)
        cfg = cls()
        path = path or env.get("CITYFORGE_CONFIG")
        if path and Path(path).exists():
            raw = json.loads(Path(path).read_text())
            cfg = cls(
                host=raw.get("host", cfg.host),
                port=int(raw.get("port", cfg.port)),
                workers=int(raw.get("workers", cfg.workers)),
                data_dir=Path(raw.get("data_dir", cfg.data_dir)),
                render_step=float(raw.get("render_step", cfg.render_step)),
                use_features=bool(raw.get("use_features", cfg.use_features)),
            )
        if "CITYFORGE_DATA_DIR" in env:
            cfg.data_dir = Path(env["CITYFORGE_DATA_DIR"])
        return cfg


@dataclass
class Project:
    id: str
    semantic: SemanticMap
    height: HeightField
    seed: int
    sampler: str
    revision: int = 1
    trajectories: dict = field(default_factory=dict)  # name -> Trajectory
    lock: threading.Lock = field(default_factory=threading.Lock, repr=False)

    @property
    def layout(self) -> CityLayout:
        return CityLayout(self.semantic, self.height)

    def instances(self):
        return instantiate_buildings(self.semantic, self.height)


@dataclass
class Job:
    id: str
    project_id: str
    revision: int
    trajectory_name: str
    status: str = "queued"  # queued -> running -> done | failed
    progress: int = 0
    total: int = 0
    error: str = ""
    out_dir: Path | None = None


class Studio:
    """Application state: projects, jobs, and their persistence."""

    def __init__(self, config: ServiceConfig):
        self.config = config
        self.projects: dict[str, Project] = {}
        self.jobs: dict[str, Job] = {}
        self.executor = ThreadPoolExecutor(max_workers=config.workers)
        self.jobs_lock = threading.Lock()
        config.data_dir.mkdir(parents=True, exist_ok=True)
        self._restore()

    # -- persistence --------------------------------------------------------

    def _project_dir(self, pid: str) -> Path:
        return self.config.data_dir / "projects" / pid

    def save_project(self, project: Project) -> None:
        pdir = self._project_dir(project.id)
        save_city(project.semantic, project.height, pdir)
        state = {
            "id": project.id,
            "seed": project.seed,
            "sampler": project.sampler,
            "revision": project.revision,
            "trajectories": {name: t.to_json() for name, t in project.trajectories.items()},
        }
        (pdir / "state.json").write_text(json.dumps(state))

    def _restore(self) -> None:
        root = self.config.data_dir / "projects"
        if not root.exists():
            return
        for pdir in root.iterdir():
            state_file = pdir / "state.json"
            if not state_file.exists():
                continue
            state = json.loads(state_file.read_text())
            sm, hf = load_city(pdir)
            self.projects[state["id"]] = Project(
                id=state["id"],
                semantic=sm,
                height=hf,
                seed=state["seed"],
                sampler=state["sampler"],
                revision=state["revision"],
                trajectories={
                    name: Trajectory.from_json(tj) for name, tj in state.get("trajectories", {}).items()
                },
            )
        jobs_root = self.config.data_dir / "jobs"
        if jobs_root.exists():
            for jdir in jobs_root.iterdir():
                jfile = jdir / "job.json"
                if not jfile.exists():
                    continue
                raw = json.loads(jfile.read_text())
                job = Job(**{**raw, "out_dir": jdir})
                if job.status == "running":  # interrupted by restart
                    job.status = "failed"
                    job.error = "interrupted by service restart"
                self.jobs[job.id] = job

    def save_job(self, job: Job) -> None:
        jdir = self.config.data_dir / "jobs" / job.id
        jdir.mkdir(parents=True, exist_ok=True)
        payload = {
            "id": job.id,
            "project_id": job.project_id,
            "revision": job.revision,
            "trajectory_name": job.trajectory_name,
            "status": job.status,
            "progress": job.progress,
            "total": job.total,
            "error": job.error,
        }
        (jdir / "job.json").write_text(json.dumps(payload))
        job.out_dir = jdir


# ---------------------------------------------------------------------------
# Request models
# ---------------------------------------------------------------------------


class GenerateRequest(BaseModel):
    width: int = Field(ge=16)
    height: int = Field(ge=16)
    seed: int = 0
    sampler: str = "procedural"


class InpaintRequest(BaseModel):
    revision: int
    polygon: list[tuple[float, float]] = Field(min_length=3)
    seed: int = 0


class TrajectoryRequest(BaseModel):
    name: str = Field(min_length=1)
    mode: str = "orbit"  # orbit | keypoints
    center: tuple[float, float] | None = None
    radius_m: float = 400.0
    altitude_m: float = 300.0
    frames: int = 60
    allow_range_override: bool = False
    keypoints: list[dict] | None = None  # {"position": [...], "look_at": [...]}
    steps_per_segment: int = 10
    width: int = 480
    height: int = 270
    focal: float = 400.0
    preview_every: int = 10


class RenderRequest(BaseModel):
    revision: int
    trajectory: str
    style_seed: int = 0
    step_size: float | None = None
    use_features: bool | None = None


# ---------------------------------------------------------------------------
# Helpers
# ---------------------------------------------------------------------------


def _semantic_png_bytes(grid: np.ndarray, scale: int = 1) -> bytes:
    img = Image.fromarray(np.asarray(grid, np.uint8), mode="P")
    pal = []
    for code in range(256):
        pal.extend(geo.SEMANTIC_PALETTE.get(code, (0, 0, 0)))
    img.putpalette(pal)
    if scale > 1:
        img = img.resize((img.width // scale, img.height // scale), Image.NEAREST)
    buf = io.BytesIO()
    img.save(buf, format="PNG")
    return buf.getvalue()


def _color_png_bytes(color: np.ndarray) -> bytes:
    arr = np.clip(np.rint(color * 255.0), 0, 255).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(arr).save(buf, format="PNG")
    return buf.getvalue()


def _polygon_mask(polygon, shape) -> np.ndarray:
    mask = np.zeros(shape, bool)
    xs = np.array([p[0] for p in polygon], float)
    ys = np.array([p[1] for p in polygon], float)
    geo._fill_polygon(mask, xs, ys)
    return mask


def _intrinsics(width: int, height: int, focal: float) -> CameraIntrinsics:
    return CameraIntrinsics(fx=focal, fy=focal, cx=width / 2, cy=height / 2, width=width, height=height)


def _build_trajectory(req: TrajectoryRequest, layout: CityLayout) -> Trajectory:
    intr = _intrinsics(req.width, req.height, req.focal)
    if req.mode == "orbit":
        if req.center is None:
            raise ValidationError("orbit requires a center")
        spec = OrbitSpec(
            center=tuple(req.center),
            radius_m=req.radius_m,
            altitude_m=req.altitude_m,
            intrinsics=intr,
            frames=req.frames,
            allow_range_override=req.allow_range_override,
        )
        return orbit_trajectory(spec, layout)
    if req.mode in ("keypoints", "point_to_point"):
        if not req.keypoints:
            raise ValidationError("keypoint trajectory requires keypoints")
        pts = [(np.asarray(k["position"], float), np.asarray(k["look_at"], float)) for k in req.keypoints]
        return keypoint_trajectory(pts, req.steps_per_segment, intr)
    raise ValidationError(f"unknown trajectory mode {req.mode!r}")


# ---------------------------------------------------------------------------
# App
# ---------------------------------------------------------------------------


def create_app(config: ServiceConfig | None = None) -> FastAPI:
    config = config or ServiceConfig.load()
    studio = Studio(config)
    app = FastAPI(title="cityforge studio")
    app.state.studio = studio

    def get_project(pid: str) -> Project:
        project = studio.projects.get(pid)
        if project is None:
            raise HTTPException(404, f"unknown project {pid}")
        return project

    @app.get("/health")
    def health():
        return {"status": "ok"}

    @app.post("/api/projects")
    def generate_layout(req: GenerateRequest):
        if req.width < 512 or req.height < 512 or req.width % 16 or req.height % 16:
            raise HTTPException(422, "layout dims must be >= 512 and multiples of 16")
        sampler_cls = SAMPLERS.get(req.sampler)
        if sampler_cls is None:
            raise HTTPException(422, f"unknown sampler {req.sampler!r}")
        tok = ExemplarTokenizer()
        sm, hf = extrapolate((req.width, req.height), tok, sampler_cls(tok), seed=req.seed)
        project = Project(
            id=uuid.uuid4().hex[:12], semantic=sm, height=hf, seed=req.seed, sampler=req.sampler
        )
        studio.projects[project.id] = project
        studio.save_project(project)
        return _project_summary(project)

    def _project_summary(project: Project) -> dict:
        return {
            "project_id": project.id,
            "revision": project.revision,
            "width": project.semantic.config.width,
            "height": project.semantic.config.height,
            "instances": len(project.instances()),
            "trajectories": sorted(project.trajectories),
            "preview": {
                "semantic": f"/api/projects/{project.id}/semantic.png?scale=4",
                "height": f"/api/projects/{project.id}/height.png",
            },
        }

    @app.get("/api/projects/{pid}")
    def project_info(pid: str):
        return _project_summary(get_project(pid))

    @app.get("/api/projects/{pid}/semantic.png")
    def semantic_png(pid: str, scale: int = 1):
        project = get_project(pid)
        return Response(_semantic_png_bytes(project.semantic.grid, scale), media_type="image/png")

    @app.get("/api/projects/{pid}/height.png")
    def height_png(pid: str):
        project = get_project(pid)
        buf = io.BytesIO()
        Image.fromarray(project.height.grid.astype(np.uint16)).save(buf, format="PNG")
        return Response(buf.getvalue(), media_type="image/png")

    @app.get("/api/projects/{pid}/semantic.bin")
    def semantic_bin(pid: str):
        project = get_project(pid)
        g = project.semantic.grid
        header = np.array([g.shape[1], g.shape[0]], "<u4").tobytes()
        return Response(header + g.astype("<u1").tobytes(), media_type="application/octet-stream")

    @app.get("/api/projects/{pid}/height.bin")
    def height_bin(pid: str):
        project = get_project(pid)
        g = project.height.grid
        header = np.array([g.shape[1], g.shape[0]], "<u4").tobytes()
        return Response(header + g.astype("<u2").tobytes(), media_type="application/octet-stream")

    @app.post("/api/projects/{pid}/inpaint")
    def inpaint_region(pid: str, req: InpaintRequest):
        project = get_project(pid)
        with project.lock:
            if req.revision != project.revision:
                raise HTTPException(409, f"stale revision {req.revision}, current is {project.revision}")
            mask = _polygon_mask(req.polygon, project.semantic.grid.shape)
            if not mask.any():
                raise HTTPException(422, "polygon covers no cells")
            tok = ExemplarTokenizer()
            sampler = SAMPLERS[project.sampler](tok)
            try:
                sm, hf = inpaint(project.semantic, project.height, mask, tok, sampler, seed=req.seed)
            except ValidationError as exc:
                raise HTTPException(422, str(exc)) from exc
            project.semantic = sm
            project.height = hf
            project.revision += 1
            studio.save_project(project)
            ii, jj = np.nonzero(mask)
            bbox = [int(jj.min()), int(ii.min()), int(jj.max()), int(ii.max())]
        return {"revision": project.revision, "region_bbox": bbox, **_project_summary(project)}

    @app.post("/api/projects/{pid}/trajectories")
    def preview_trajectory(pid: str, req: TrajectoryRequest):
        project = get_project(pid)
        try:
            traj = _build_trajectory(req, project.layout)
        except ValidationError as exc:
            raise HTTPException(422, str(exc)) from exc
        with project.lock:
            project.trajectories[req.name] = traj
            studio.save_project(project)
        instances = project.instances()
        thumbs = []
        scale = max(1, req.width // THUMB_WIDTH)
        t_intr = CameraIntrinsics(
            fx=req.focal / scale, fy=req.focal / scale,
            cx=req.width / 2 / scale, cy=req.height / 2 / scale,
            width=req.width // scale, height=req.height // scale,
        )
        for k in range(0, len(traj), max(1, req.preview_every)):
            pose, _ = traj.frames[k]
            sem, _, _ = project_annotations(project.layout, instances, pose, t_intr)
            thumbs.append(
                {"frame": k, "png_base64": base64.b64encode(_semantic_png_bytes(sem)).decode()}
            )
        return {
            "name": req.name,
            "count": len(traj),
            "poses": traj.to_json()["frames"],
            "thumbnails": thumbs,
        }

    @app.post("/api/projects/{pid}/renders")
    def submit_render(pid: str, req: RenderRequest):
        project = get_project(pid)
        with project.lock:
            if req.revision != project.revision:
                raise HTTPException(409, f"stale revision {req.revision}, current is {project.revision}")
            traj = project.trajectories.get(req.trajectory)
            if traj is None:
                raise HTTPException(404, f"unknown trajectory {req.trajectory!r}")
            # snapshot: layouts are immutable arrays, so references are safe;
            # instance detection binds to the current revision here
            layout = project.layout
            instances = project.instances()
        job = Job(
            id=uuid.uuid4().hex[:12],
            project_id=pid,
            revision=project.revision,
            trajectory_name=req.trajectory,
            total=len(traj),
        )
        with studio.jobs_lock:
            studio.jobs[job.id] = job
            studio.save_job(job)
        settings = RenderSettings(step_size=req.step_size or config.render_step)
        use_features = config.use_features if req.use_features is None else req.use_features
        features = FeatureFactory(seed=derive_seed(project.seed, "features")) if use_features else None

        def run():
            job.status = "running"
            studio.save_job(job)
            try:
                for idx, (pose, intr) in enumerate(traj.frames):
                    frame = render_city_frame(
                        layout, instances, pose, intr,
                        settings=settings, style_seed=req.style_seed, features=features,
                    )
                    png = _color_png_bytes(frame.composite.color)
                    (job.out_dir / f"frame_{idx:05d}.png").write_bytes(png)
                    job.progress = idx + 1
                    studio.save_job(job)
                job.status = "done"
            except Exception as exc:  # job errors surface via status
                job.status = "failed"
                job.error = str(exc)
            studio.save_job(job)

        studio.executor.submit(run)
        return {"job_id": job.id, "total": job.total}

    @app.get("/api/jobs/{job_id}")
    def job_status(job_id: str):
        job = studio.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        frames = []
        if job.out_dir and job.out_dir.exists():
            frames = sorted(int(p.stem.split("_")[1]) for p in job.out_dir.glob("frame_*.png"))
        return {
            "job_id": job.id,
            "status": job.status,
            "progress": job.progress,
            "total": job.total,
            "error": job.error,
            "frames": frames,
        }

    @app.get("/api/jobs/{job_id}/frames/{idx}.png")
    def job_frame(job_id: str, idx: int):
        job = studio.jobs.get(job_id)
        if job is None:
            raise HTTPException(404, f"unknown job {job_id}")
        path = job.out_dir / f"frame_{idx:05d}.png"
        if not path.exists():
            raise HTTPException(404, f"frame {idx} not rendered yet")
        return Response(path.read_bytes(), media_type="image/png")

    return app
