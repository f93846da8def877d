#!/usr/bin/env python3
"""Desk-scale acceptance trends for the hybrid field.

Trains the toy presets under several model variants and checks:
  reconstruction  full model vs static-only ablation, particle-count trend
  motion          learned MFE vs zero motion and vs the deformation baseline
  lifecycle       resampling curve, count conservation, survivor placement
  losses          all auxiliary losses vs none

Usage:
  python3 scripts/validate_acceptance.py --only motion --seeds 0 1 2
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from dataclasses import dataclass, field
from datetime import UTC, datetime
from pathlib import Path
from typing import Any

import numpy as np

ROOT = Path(__file__).resolve().parents[1]
if str(ROOT) not in sys.path:
    sys.path.insert(0, str(ROOT))

from hybridfield.config import TrainConfig, grid_schedule_for  # noqa: E402
from hybridfield.evaluation import evaluate, lifecycle_curve_problems, report_to_json_ready  # noqa: E402
from hybridfield.particles import position_at  # noqa: E402
from hybridfield.radiance import background_color  # noqa: E402
from hybridfield.scene import Dataset, OrbitCamera, SceneSpec, generate, preset  # noqa: E402
from hybridfield.trainer import Trainer, TrainResult, run  # noqa: E402

REPORT_ROOT = ROOT / ".tmp" / "acceptance"
CHECKS = ("reconstruction", "motion", "lifecycle", "losses")
PRESETS = ("fall", "orbit", "bounce")
PSNR_GAIN_DB = 3.0
PSNR_NOISE_DB = 0.3
PARTICLE_COUNTS = (20000, 2000, 500)
ZERO_MOTION_RATIO = 0.5
SURVIVOR_VOXELS = 2.0
SURVIVOR_SHARE = 0.9

log = logging.getLogger("hybridfield.acceptance")


@dataclass
class ValidationResult:
    started_at: str
    ended_at: str = ""
    ok: bool = False
    failures: list[str] = field(default_factory=list)
    summary: dict[str, Any] = field(default_factory=dict)


@dataclass
class Budget:
    steps: int
    frames: int
    size: int
    grid: int
    seeds: list[int]


def make_dataset(name: str, budget: Budget, seed: int) -> Dataset:
    spec = preset(name)
    spec.frames = budget.frames
    cam = spec.camera
    spec.camera = OrbitCamera(cam.radius, cam.elevation_deg, cam.fov_deg, budget.size, budget.size,
                              cam.start_azimuth_deg, cam.turns)
    return generate(spec, seed=seed)


def train(dataset: Dataset, budget: Budget, seed: int, **changes: Any) -> tuple[Trainer, TrainResult]:
    config = TrainConfig(steps=budget.steps, seed=seed, grid_voxels=grid_schedule_for(budget.grid),
                         log_every_steps=0, checkpoint_every_steps=0, validation_every_steps=0).replace(**changes)
    trainer = Trainer(config, dataset)
    started = time.monotonic()
    result = run(config, dataset, trainer=trainer)
    log.info("[acceptance] %s seed %d %s trained in %.1fs", config.model, seed,
             {k: v for k, v in changes.items() if k != "model"}, time.monotonic() - started)
    return trainer, result


def report_for(trainer: Trainer, dataset: Dataset, baseline: Trainer | None = None) -> dict[str, Any]:
    return evaluate(
        trainer.model,
        dataset,
        samples=trainer.config.samples_per_ray,
        background=background_color(trainer.config.background),
        steps=trainer.step,
        baseline=baseline.model if baseline is not None else None,
    )


def check_reconstruction(budget: Budget, failures: list[str]) -> dict[str, Any]:
    psnr: dict[str, list[float]] = {"static": []}
    psnr.update({f"particles_{n}": [] for n in PARTICLE_COUNTS})
    for seed in budget.seeds:
        dataset = make_dataset("fall", budget, seed)
        for count in PARTICLE_COUNTS:
            trainer, _ = train(dataset, budget, seed, model="particles", particles=count)
            psnr[f"particles_{count}"].append(report_for(trainer, dataset)["psnr_mean"])
        trainer, _ = train(dataset, budget, seed, model="static", particles=0)
        psnr["static"].append(report_for(trainer, dataset)["psnr_mean"])
    means = {key: float(np.mean(values)) for key, values in psnr.items()}
    full = f"particles_{PARTICLE_COUNTS[0]}"
    if means[full] - means["static"] < PSNR_GAIN_DB:
        failures.append(f"reconstruction: full model {means[full]:.2f} dB is not {PSNR_GAIN_DB} dB above "
                        f"static-only {means['static']:.2f} dB")
    for more, fewer in zip(PARTICLE_COUNTS, PARTICLE_COUNTS[1:]):
        if means[f"particles_{more}"] + PSNR_NOISE_DB < means[f"particles_{fewer}"]:
            failures.append(f"reconstruction: {more} particles score {means[f'particles_{more}']:.2f} dB, "
                            f"below {fewer} particles at {means[f'particles_{fewer}']:.2f} dB")
    return {"psnr": psnr, "psnr_mean": means}


def check_motion(budget: Budget, failures: list[str]) -> dict[str, Any]:
    summary: dict[str, Any] = {}
    wins = 0
    for name in PRESETS:
        learned, zero, baseline = [], [], []
        for seed in budget.seeds:
            dataset = make_dataset(name, budget, seed)
            particles, _ = train(dataset, budget, seed, model="particles")
            deformation, _ = train(dataset, budget, seed, model="deformation")
            report = report_for(particles, dataset, baseline=deformation)
            learned.append(report["mfe_particles"])
            zero.append(report["mfe_zero_motion"])
            baseline.append(report["mfe_baseline"])
        means = {"particles": float(np.mean(learned)), "zero_motion": float(np.mean(zero)),
                 "baseline": float(np.mean(baseline))}
        summary[name] = {"mfe_particles": learned, "mfe_zero_motion": zero, "mfe_baseline": baseline, "mean": means}
        if means["particles"] >= ZERO_MOTION_RATIO * means["zero_motion"]:
            failures.append(f"motion: {name} learned MFE {means['particles']:.4f} is not below "
                            f"{ZERO_MOTION_RATIO} x zero-motion {means['zero_motion']:.4f}")
        if means["particles"] < means["baseline"]:
            wins += 1
    summary["presets_beating_baseline"] = wins
    if wins < 2:
        failures.append(f"motion: learned particles beat the deformation baseline on {wins} of {len(PRESETS)} presets")
    return summary


def distance_to_moving_bodies(spec: SceneSpec, points: np.ndarray, t: float) -> np.ndarray:
    """Euclidean distance from each point to the nearest non-static body at time ``t``."""
    best = np.full(points.shape[0], np.inf)
    for body in spec.bodies:
        if getattr(body.trajectory, "kind", "") == "static":
            continue
        rel = points - body.trajectory.position(t)
        if body.primitive == "sphere":
            dist = np.maximum(np.linalg.norm(rel, axis=1) - body.half_extent()[0], 0.0)
        else:
            dist = np.linalg.norm(np.maximum(np.abs(rel) - body.half_extent(), 0.0), axis=1)
        best = np.minimum(best, dist)
    return best


def check_lifecycle(budget: Budget, failures: list[str]) -> dict[str, Any]:
    summary: dict[str, Any] = {}
    for seed in budget.seeds:
        dataset = make_dataset("fall", budget, seed)
        trainer, result = train(dataset, budget, seed, model="particles")
        particles = trainer.model.particles  # type: ignore[attr-defined]
        problems = lifecycle_curve_problems(result.lifecycle, particles.capacity)
        failures.extend(f"lifecycle seed {seed}: {p}" for p in problems)
        times = [frame.time for frame in dataset.frames]
        limit = SURVIVOR_VOXELS * trainer.model.grid_spec.voxel_edge
        near = np.zeros(particles.alive_count, dtype=bool)
        for t in times:
            pos = position_at(particles, trainer.model.motion, t).data.astype(np.float64)  # type: ignore[attr-defined]
            near |= distance_to_moving_bodies(dataset.spec, pos, t) <= limit
        share = float(near.mean()) if near.size else 0.0
        if share < SURVIVOR_SHARE:
            failures.append(f"lifecycle seed {seed}: only {share:.1%} of survivors lie near moving geometry")
        summary[str(seed)] = {
            "events": [e.as_row() for e in result.lifecycle],
            "survivors": particles.alive_count,
            "near_moving_share": share,
        }
    return summary


def check_losses(budget: Budget, failures: list[str]) -> dict[str, Any]:
    full, bare = [], []
    for seed in budget.seeds:
        dataset = make_dataset("fall", budget, seed)
        trainer, _ = train(dataset, budget, seed, model="particles")
        full.append(report_for(trainer, dataset)["psnr_mean"])
        trainer, _ = train(dataset, budget, seed, model="particles", weight_ptrgb=0.0, weight_bg=0.0,
                           weight_tvf=0.0, weight_tvm=0.0)
        bare.append(report_for(trainer, dataset)["psnr_mean"])
    if float(np.mean(full)) < float(np.mean(bare)):
        failures.append(f"losses: all auxiliary losses {np.mean(full):.2f} dB below none {np.mean(bare):.2f} dB")
    return {"psnr_all_losses": full, "psnr_no_aux": bare}


def validate(checks: list[str], budget: Budget) -> ValidationResult:
    result = ValidationResult(started_at=datetime.now(UTC).isoformat())
    runners = {
        "reconstruction": check_reconstruction,
        "motion": check_motion,
        "lifecycle": check_lifecycle,
        "losses": check_losses,
    }
    for name in checks:
        started = time.monotonic()
        result.summary[name] = runners[name](budget, result.failures)
        result.summary[name]["elapsed_sec"] = round(time.monotonic() - started, 1)
    result.ended_at = datetime.now(UTC).isoformat()
    result.ok = not result.failures
    return result


def main() -> int:
    parser = argparse.ArgumentParser(description="Run the desk-scale acceptance trends.")
    parser.add_argument("--report-dir", default=str(REPORT_ROOT), help="Where to write JSON acceptance reports.")
    parser.add_argument("--only", nargs="+", choices=CHECKS, default=list(CHECKS), help="Checks to run.")
    parser.add_argument("--seeds", nargs="+", type=int, default=[0, 1, 2])
    parser.add_argument("--steps", type=int, default=5000)
    parser.add_argument("--frames", type=int, default=60)
    parser.add_argument("--size", type=int, default=64)
    parser.add_argument("--grid", type=int, default=48, help="Final grid resolution N (N^3 voxels).")
    args = parser.parse_args()

    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(levelname)s %(name)s %(message)s")
    report_dir = Path(args.report_dir).expanduser().resolve()
    report_dir.mkdir(parents=True, exist_ok=True)

    budget = Budget(steps=args.steps, frames=args.frames, size=args.size, grid=args.grid, seeds=list(args.seeds))
    result = validate(list(args.only), budget)

    stamp = datetime.now(UTC).strftime("%Y%m%d-%H%M%S")
    report_path = report_dir / f"acceptance-{stamp}.json"
    report_path.write_text(
        json.dumps(
            report_to_json_ready(
                {
                    "started_at": result.started_at,
                    "ended_at": result.ended_at,
                    "ok": result.ok,
                    "budget": vars(budget),
                    "failures": result.failures,
                    "summary": result.summary,
                }
            ),
            ensure_ascii=False,
            indent=2,
        ) + "\n",
        encoding="utf-8",
    )
    print(report_path)
    if result.failures:
        for failure in result.failures:
            print(f"FAIL: {failure}", file=sys.stderr)
        return 1
    print("Acceptance trends passed.")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
