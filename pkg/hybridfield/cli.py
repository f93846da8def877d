"""Command-line entry point: gen-scene, train, render, eval and export.

Numeric modules are imported inside the command functions so that
``--threads`` can reach the BLAS runtimes before numpy loads.
"""

from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path
from typing import Any, Sequence

from .errors import HybridFieldError, InputError
from .selector import apply_thread_cap, select_thread_count

log = logging.getLogger("hybridfield.cli")

EXIT_OK = 0
EXIT_INTERNAL = 1
EXIT_BAD_INPUT = 2
LOG_LEVEL_ENV = "HYBRIDFIELD_LOG_LEVEL"


def _parse_times(raw: str | None) -> list[float] | None:
    if raw is None or not str(raw).strip():
        return None
    times = []
    for part in str(raw).split(","):
        part = part.strip()
        if not part:
            continue
        try:
            value = float(part)
        except ValueError as exc:
            raise InputError(f"bad time value {part!r}") from exc
        if not (0.0 <= value <= 1.0):
            raise InputError(f"time {value} outside [0, 1]")
        times.append(value)
    return times


def _load_dataset(path: str) -> Any:
    from .scene import load_dataset

    return load_dataset(path)


def cmd_gen_scene(args: argparse.Namespace) -> int:
    from .scene import OrbitCamera, generate, load_spec, preset, save_dataset, validate_spec

    if bool(args.preset) == bool(args.spec):
        raise InputError("gen-scene needs exactly one of --preset or --spec")
    spec = preset(args.preset) if args.preset else load_spec(args.spec)
    if args.frames is not None:
        spec.frames = int(args.frames)
    if args.size is not None:
        cam = spec.camera
        spec.camera = OrbitCamera(cam.radius, cam.elevation_deg, cam.fov_deg, int(args.size), int(args.size),
                                  cam.start_azimuth_deg, cam.turns)
    validate_spec(spec)
    dataset = generate(spec, seed=args.seed)
    root = save_dataset(dataset, args.out)
    log.info("[cli] wrote %d frames to %s", len(dataset.frames), root)
    return EXIT_OK


def cmd_train(args: argparse.Namespace) -> int:
    from .config import TrainConfig, apply_overrides, grid_schedule_for, load_config
    from .trainer import Trainer, run

    dataset_path = Path(args.dataset)
    if not (dataset_path / "manifest.json").is_file():
        raise InputError(f"dataset not found: {dataset_path}")
    if args.resume:
        fixed = [flag for flag, value in (("--config", args.config), ("--particles", args.particles),
                                          ("--grid", args.grid), ("--seed", args.seed), ("--model", args.model))
                 if value is not None]
        if fixed:
            raise InputError(f"--resume keeps the checkpoint's config; drop {', '.join(fixed)}")
    config = load_config(args.config) if args.config else TrainConfig()
    grid = grid_schedule_for(args.grid) if args.grid is not None else None
    config = apply_overrides(
        config,
        [
            ("steps", args.steps),
            ("particles", args.particles),
            ("seed", args.seed),
            ("model", str(args.model).strip().lower() if args.model else None),
            ("grid_voxels", grid),
        ],
    )
    dataset = _load_dataset(args.dataset)
    trainer = None
    if args.resume:
        trainer = Trainer.from_checkpoint(args.resume, dataset, config=None)
        if args.steps is not None:
            trainer.config = trainer.config.replace(steps=int(args.steps))
        config = trainer.config
    result = run(config, dataset, args.out, trainer=trainer, command="train")
    log.info("[cli] training finished: %d steps recorded, checkpoint %s", len(result.history), result.checkpoint)
    return EXIT_OK


def cmd_render(args: argparse.Namespace) -> int:
    import numpy as np

    from .evaluation import render_view
    from .radiance import background_color
    from .scene import OrbitCamera, orbit_poses, write_png
    from .trainer import load_checkpoint

    times = _parse_times(args.times)
    loaded = load_checkpoint(args.checkpoint)
    model = loaded.model
    kind, _, value = str(args.poses or "").partition(":")
    kind = kind.strip().lower()
    if kind == "dataset":
        dataset = _load_dataset(value)
        poses = [f.pose for f in dataset.frames]
        default_times = [f.time for f in dataset.frames]
    elif kind == "orbit":
        try:
            count = int(value)
        except ValueError as exc:
            raise InputError(f"orbit pose count must be an integer, got {value!r}") from exc
        if count < 1:
            raise InputError("orbit pose count must be >= 1")
        size = int(args.size)
        poses = orbit_poses(OrbitCamera(width=size, height=size), count)
        default_times = list(np.linspace(0.0, 1.0, count)) if count > 1 else [0.0]
    else:
        raise InputError("--poses must be dataset:DIR or orbit:N")
    if times is None:
        times = default_times
    if len(times) == 1 and len(poses) > 1:
        times = times * len(poses)
    if len(times) != len(poses):
        raise InputError(f"{len(times)} times given for {len(poses)} poses")

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    background = background_color(loaded.config.background)
    for i, (pose, t) in enumerate(zip(poses, times)):
        dump = out / f"rays_{i:04d}.csv" if args.dump_rays else None
        image = render_view(model, pose, float(t), model.bbox, samples=loaded.config.samples_per_ray,
                            background=background, component=args.component, dump_path=dump)
        write_png(out / f"frame_{i:04d}.png", image)
    log.info("[cli] rendered %d frames to %s", len(poses), out)
    return EXIT_OK


def cmd_eval(args: argparse.Namespace) -> int:
    from .evaluation import evaluate, report_to_json_ready, validate_report
    from .radiance import background_color
    from .trainer import load_checkpoint

    loaded = load_checkpoint(args.checkpoint)
    dataset = _load_dataset(args.dataset)
    baseline = load_checkpoint(args.baseline).model if args.baseline else None
    report = evaluate(
        loaded.model,
        dataset,
        samples=loaded.config.samples_per_ray,
        background=background_color(loaded.config.background),
        steps=loaded.step,
        baseline=baseline,
    )
    problems = validate_report(report)
    if problems:
        raise HybridFieldError("report failed schema validation: " + "; ".join(problems))
    text = json.dumps(report_to_json_ready(report), indent=2, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).parent.mkdir(parents=True, exist_ok=True)
        Path(args.out).write_text(text, encoding="utf-8")
        log.info("[cli] report written to %s", args.out)
    else:
        sys.stdout.write(text)
    return EXIT_OK


def cmd_export(args: argparse.Namespace) -> int:
    from .grids import save_grid
    from .particles import position_at, write_particles_ply, write_trajectories_csv
    from .trainer import load_checkpoint

    what = str(args.what or "").strip().lower()
    loaded = load_checkpoint(args.checkpoint)
    model = loaded.model
    out = Path(args.out)
    out.parent.mkdir(parents=True, exist_ok=True)
    particles = getattr(model, "particles", None)
    motion = getattr(model, "motion", None)
    if what == "static-grid":
        save_grid(out, model.grid_spec, model.static_grid.data)  # type: ignore[attr-defined]
    elif what in ("trajectories", "particles-at-t"):
        if particles is None or motion is None:
            raise InputError(f"model {model.model_id!r} has no particles to export")
        if what == "trajectories":
            write_trajectories_csv(out, particles, motion, samples=int(args.samples))
        else:
            t = _parse_times(str(args.t))
            positions = position_at(particles, motion, t[0] if t else 0.0).data
            write_particles_ply(out, positions, particles.alive_indices())
    else:
        raise InputError("--what must be trajectories, particles-at-t or static-grid")
    log.info("[cli] exported %s to %s", what, out)
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="hybridfield", description="Hybrid particle/grid dynamic radiance fields.")
    parser.add_argument("--log-level", default=None, help=f"Logging level (default: ${LOG_LEVEL_ENV} or INFO).")
    parser.add_argument("--threads", type=int, default=None, help="Thread cap for numeric kernels.")
    sub = parser.add_subparsers(dest="command", required=True)

    gen = sub.add_parser("gen-scene", help="Generate a synthetic dataset.")
    gen.add_argument("--preset", default=None, help="fall, orbit or bounce.")
    gen.add_argument("--spec", default=None, help="Scene spec JSON file.")
    gen.add_argument("--out", required=True, help="Dataset directory to write.")
    gen.add_argument("--seed", type=int, default=0)
    gen.add_argument("--frames", type=int, default=None)
    gen.add_argument("--size", type=int, default=None, help="Square image size in pixels.")
    gen.set_defaults(handler=cmd_gen_scene)

    train = sub.add_parser("train", help="Train a field on a dataset.")
    train.add_argument("dataset")
    train.add_argument("--config", default=None, help="key = value config file.")
    train.add_argument("--out", required=True, help="Run directory.")
    train.add_argument("--steps", type=int, default=None)
    train.add_argument("--particles", type=int, default=None)
    train.add_argument("--grid", type=int, default=None, help="Final grid resolution N (N^3 voxels).")
    train.add_argument("--seed", type=int, default=None)
    train.add_argument("--model", default=None, help="particles, static or deformation.")
    train.add_argument("--resume", default=None, help="Checkpoint to continue from.")
    train.set_defaults(handler=cmd_train)

    render = sub.add_parser("render", help="Render frames from a checkpoint.")
    render.add_argument("checkpoint")
    render.add_argument("--poses", required=True, help="dataset:DIR or orbit:N.")
    render.add_argument("--times", default=None, help="Comma-separated times in [0, 1].")
    render.add_argument("--out", required=True)
    render.add_argument("--component", default="full", choices=("full", "static", "dynamic"))
    render.add_argument("--size", type=int, default=64, help="Image size for orbit poses.")
    render.add_argument("--dump-rays", action="store_true", help="Write per-ray depth/sigma/weight CSV files.")
    render.set_defaults(handler=cmd_render)

    ev = sub.add_parser("eval", help="Evaluate a checkpoint on a dataset.")
    ev.add_argument("checkpoint")
    ev.add_argument("dataset")
    ev.add_argument("--baseline", default=None, help="Deformation-baseline checkpoint.")
    ev.add_argument("--out", default=None, help="Report path (stdout when omitted).")
    ev.set_defaults(handler=cmd_eval)

    export = sub.add_parser("export", help="Export particles or the static grid.")
    export.add_argument("checkpoint")
    export.add_argument("--what", required=True)
    export.add_argument("--t", default="0")
    export.add_argument("--samples", type=int, default=16)
    export.add_argument("--out", required=True)
    export.set_defaults(handler=cmd_export)
    return parser


def configure_logging(level: str | None) -> None:
    name = str(level or os.environ.get(LOG_LEVEL_ENV, "") or "INFO").strip().upper()
    logging.basicConfig(
        level=getattr(logging, name, logging.INFO),
        format="%(asctime)s %(levelname)s %(name)s %(message)s",
    )


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    configure_logging(args.log_level)
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return EXIT_BAD_INPUT
    apply_thread_cap(select_thread_count(flag=args.threads))
    try:
        return int(args.handler(args))
    except InputError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_BAD_INPUT
    except HybridFieldError as exc:
        print(f"error: {exc}", file=sys.stderr)
        log.debug("[cli] command failed", exc_info=True)
        return EXIT_INTERNAL
    except Exception as exc:  # noqa: BLE001
        print(f"internal error: {exc}", file=sys.stderr)
        log.debug("[cli] unexpected failure", exc_info=True)
        return EXIT_INTERNAL
