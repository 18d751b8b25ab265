"""Command line entry points wrapping the library operations."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from .compositor import camera_error, depth_error
from .dataset import export_dataset
from .errors import DegenerateInputError, ValidationError
from .geo import load_city, load_height_png, save_city
from .layout import CityLayout, instantiate_buildings
from .pipeline import FeatureFactory, render_city_frame
from .rng import derive_seed
from .synth import ExemplarTokenizer, ProceduralSampler, extrapolate
from .trajectory import OrbitSpec, Trajectory, evaluation_preset, orbit_trajectory, project_annotations
from .volren import CameraIntrinsics, RenderSettings


def _parse_size(text: str) -> tuple[int, int]:
    try:
        w, h = text.lower().split("x")
        return int(w), int(h)
    except ValueError:
        raise ValidationError(f"expected WIDTHxHEIGHT, got {text!r}") from None


def _load_layout(city_dir: str) -> CityLayout:
    sm, hf = load_city(city_dir)
    return CityLayout(sm, hf)


def _build_traj(args, layout: CityLayout) -> Trajectory:
    if args.traj:
        return Trajectory.load(args.traj)
    if args.preset == "eval":
        h, w = layout.shape
        spec = evaluation_preset((w / 2, h / 2))
        if args.frames:
            spec = OrbitSpec(
                center=spec.center, radius_m=spec.radius_m, altitude_m=spec.altitude_m,
                intrinsics=spec.intrinsics, frames=args.frames,
            )
        return orbit_trajectory(spec, layout)
    if args.orbit:
        cx, cy, radius_m, altitude_m = (float(v) for v in args.orbit.split(","))
        w, h = _parse_size(args.resolution)
        intr = CameraIntrinsics(fx=args.focal, fy=args.focal, cx=w / 2, cy=h / 2, width=w, height=h)
        spec = OrbitSpec(
            center=(cx, cy), radius_m=radius_m, altitude_m=altitude_m,
            intrinsics=intr, frames=args.frames or 60,
        )
        return orbit_trajectory(spec, layout)
    raise ValidationError("provide --traj FILE, --orbit cx,cy,radius_m,altitude_m, or --preset eval")


def cmd_generate_layout(args) -> int:
    w, h = _parse_size(args.size)
    tok = ExemplarTokenizer()
    sm, hf = extrapolate((w, h), tok, ProceduralSampler(tok), seed=args.seed)
    save_city(sm, hf, args.out)
    print(f"layout {w}x{h} seed={args.seed} -> {args.out}")
    return 0


def cmd_instantiate(args) -> int:
    layout = _load_layout(args.city)
    instances = instantiate_buildings(layout.semantic, layout.height)
    print(f"instances: {len(instances)}")
    if args.out:
        payload = [
            {
                "id": i.id,
                "center": list(i.center),
                "bbox": list(i.bbox),
                "size": i.size,
                "height_max": i.height_max,
            }
            for i in instances
        ]
        Path(args.out).write_text(json.dumps(payload, indent=2))
        print(f"wrote {args.out}")
    return 0


def _render_frames(args, with_annotations: bool):
    layout = _load_layout(args.city)
    instances = instantiate_buildings(layout.semantic, layout.height)
    traj = _build_traj(args, layout)
    settings = RenderSettings(step_size=args.step)
    features = FeatureFactory(seed=derive_seed(args.seed, "features")) if args.features else None
    renders, annotations = [], []
    for k, (pose, intr) in enumerate(traj.frames):
        frame = render_city_frame(
            layout, instances, pose, intr,
            settings=settings, style_seed=args.style_seed, features=features,
        )
        renders.append(frame.composite)
        if with_annotations:
            annotations.append(project_annotations(layout, instances, pose, intr))
        print(f"frame {k + 1}/{len(traj)}", file=sys.stderr)
    return traj, renders, annotations


def cmd_render(args) -> int:
    from PIL import Image

    traj, renders, _ = _render_frames(args, with_annotations=False)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    for k, render in enumerate(renders):
        arr = np.clip(np.rint(render.color * 255.0), 0, 255).astype(np.uint8)
        Image.fromarray(arr).save(out / f"frame_{k:05d}.png")
    traj.save(out / "trajectory.json")
    print(f"{len(renders)} frames -> {out}")
    return 0


def cmd_export_dataset(args) -> int:
    traj, renders, annotations = _render_frames(args, with_annotations=True)
    manifest = export_dataset(
        traj, renders, annotations, args.out,
        config={"seed": args.seed, "style_seed": args.style_seed, "step": args.step},
    )
    print(f"{manifest['frames']} frames + annotations -> {args.out}")
    return 0


def _load_depth(path: str) -> np.ndarray:
    if path.endswith(".npy"):
        return np.load(path)
    return load_height_png(path).astype(np.float64)


def cmd_metrics(args) -> int:
    if args.metric == "de":
        pred = _load_depth(args.pred)
        ref = _load_depth(args.ref)
        mask = None
        if args.mask:
            mask = np.asarray(_load_depth(args.mask) > 0)
        name, value = "de", depth_error(pred, ref, mask)
    else:
        a = Trajectory.load(args.a)
        b = Trajectory.load(args.b)
        name, value = "ce", camera_error(a, b, include_rotation=args.rotation)
    print(f"{name}={value:.6f}")
    if args.out:
        Path(args.out).write_text(json.dumps({name: value}))
    return 0


def cmd_serve(args) -> int:
    import uvicorn

    from .service import ServiceConfig, create_app

    cfg = ServiceConfig.load(args.config)
    if args.host:
        cfg.host = args.host
    if args.port:
        cfg.port = args.port
    if args.data_dir:
        cfg.data_dir = Path(args.data_dir)
    if args.workers:
        cfg.workers = args.workers
    uvicorn.run(create_app(cfg), host=cfg.host, port=cfg.port, log_level="warning")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cityforge", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    g = sub.add_parser("generate-layout", help="synthesize a city layout")
    g.add_argument("--size", required=True, help="WIDTHxHEIGHT in pixels")
    g.add_argument("--seed", type=int, default=0)
    g.add_argument("--out", required=True)
    g.add_argument("--sampler", default="procedural", choices=["procedural"])
    g.add_argument("--config", default=None)
    g.set_defaults(fn=cmd_generate_layout)

    i = sub.add_parser("instantiate", help="detect building instances")
    i.add_argument("--city", required=True, help="directory with semantic/height PNGs")
    i.add_argument("--out", default=None, help="write instance list as JSON")
    i.add_argument("--config", default=None)
    i.set_defaults(fn=cmd_instantiate)

    def add_render_args(sp):
        sp.add_argument("--city", required=True)
        sp.add_argument("--out", required=True)
        sp.add_argument("--traj", default=None, help="trajectory JSON file")
        sp.add_argument("--orbit", default=None, help="cx,cy,radius_m,altitude_m")
        sp.add_argument("--preset", default=None, choices=["eval"])
        sp.add_argument("--frames", type=int, default=None)
        sp.add_argument("--resolution", default="480x270")
        sp.add_argument("--focal", type=float, default=400.0)
        sp.add_argument("--step", type=float, default=0.5)
        sp.add_argument("--seed", type=int, default=0)
        sp.add_argument("--style-seed", dest="style_seed", type=int, default=0)
        sp.add_argument("--features", action=argparse.BooleanOptionalAction, default=True)
        sp.add_argument("--config", default=None)

    r = sub.add_parser("render", help="render color frames along a trajectory")
    add_render_args(r)
    r.set_defaults(fn=cmd_render)

    e = sub.add_parser("export-dataset", help="render frames plus annotations and a manifest")
    add_render_args(e)
    e.set_defaults(fn=cmd_export_dataset)

    m = sub.add_parser("metrics", help="compute depth/camera errors")
    msub = m.add_subparsers(dest="metric", required=True)
    de = msub.add_parser("de")
    de.add_argument("--pred", required=True)
    de.add_argument("--ref", required=True)
    de.add_argument("--mask", default=None)
    de.add_argument("--out", default=None, help="also write the value as JSON")
    de.add_argument("--config", default=None)
    de.set_defaults(fn=cmd_metrics)
    ce = msub.add_parser("ce")
    ce.add_argument("--a", required=True)
    ce.add_argument("--b", required=True)
    ce.add_argument("--rotation", action="store_true", help="add the geodesic rotation term")
    ce.add_argument("--out", default=None, help="also write the value as JSON")
    ce.add_argument("--config", default=None)
    ce.set_defaults(fn=cmd_metrics)

    s = sub.add_parser("serve", help="start the studio HTTP service")
    s.add_argument("--host", default=None)
    s.add_argument("--port", type=int, default=None)
    s.add_argument("--data-dir", dest="data_dir", default=None)
    s.add_argument("--workers", type=int, default=None)
    s.add_argument("--config", default=None)
    s.set_defaults(fn=cmd_serve)
    return p


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ValidationError, DegenerateInputError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
