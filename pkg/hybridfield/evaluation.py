"""Image metrics and the motion-field error protocol."""

from __future__ import annotations

import logging
import math
from typing import TYPE_CHECKING, Any, Callable

import numpy as np
from scipy.signal import convolve2d

from .errors import InputError, ShapeError
from .particles import ParticleSet, check_time, position_at
from .scene import Dataset, GroundTruthOracle, dequantize, quantize, voxel_centers, voxelize_velocity
from .types import BoundingBox, VelocityField

if TYPE_CHECKING:
    from .layers import MotionNet
    from .model_interface import FieldModel

log = logging.getLogger(__name__)

MFE_RESOLUTION = 30
MFE_DT = 0.01
MFE_TIMES = (0.1, 0.3, 0.5, 0.7, 0.9)
SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03

REPORT_KEYS = ("scene", "steps", "psnr_mean", "ssim_mean", "per_view", "mfe_particles", "mfe_zero_motion", "protocol")


def psnr(image: np.ndarray, reference: np.ndarray) -> float:
    """``10 log10(1 / MSE)`` for images in [0, 1]; identical images give ``inf``."""
    a = np.asarray(image, dtype=np.float64)
    b = np.asarray(reference, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError("psnr", f"{a.shape} vs {b.shape}")
    mse = float(np.mean((a - b) ** 2))
    if mse == 0.0:
        return math.inf
    return 10.0 * math.log10(1.0 / mse)


def gaussian_window(size: int = SSIM_WINDOW, sigma: float = SSIM_SIGMA) -> np.ndarray:
    ax = np.arange(size, dtype=np.float64) - (size - 1) / 2.0
    g = np.exp(-(ax**2) / (2.0 * sigma**2))
    w = np.outer(g, g)
    return w / w.sum()


def _gray(image: np.ndarray) -> np.ndarray:
    arr = np.asarray(image, dtype=np.float64)
    return arr.mean(axis=-1) if arr.ndim == 3 else arr


def ssim(image: np.ndarray, reference: np.ndarray) -> float:
    """Mean local SSIM of the channel-mean images under an 11x11 Gaussian window."""
    x = _gray(image)
    y = _gray(reference)
    if x.shape != y.shape:
        raise ShapeError("ssim", f"{x.shape} vs {y.shape}")
    if x.shape[0] < SSIM_WINDOW or x.shape[1] < SSIM_WINDOW:
        raise ShapeError("ssim", f"image {x.shape} smaller than the {SSIM_WINDOW}x{SSIM_WINDOW} window")
    w = gaussian_window()
    c1 = SSIM_K1**2
    c2 = SSIM_K2**2

    def filt(a: np.ndarray) -> np.ndarray:
        return convolve2d(a, w, mode="valid")

    mu_x = filt(x)
    mu_y = filt(y)
    sxx = filt(x * x) - mu_x**2
    syy = filt(y * y) - mu_y**2
    sxy = filt(x * y) - mu_x * mu_y
    num = (2 * mu_x * mu_y + c1) * (2 * sxy + c2)
    den = (mu_x**2 + mu_y**2 + c1) * (sxx + syy + c2)
    return float(np.mean(num / den))


def _voxel_index(points: np.ndarray, bbox: BoundingBox, resolution: int) -> tuple[np.ndarray, np.ndarray]:
    rel = (points - bbox.minimum) / bbox.extent
    inside = np.all((rel >= 0.0) & (rel <= 1.0), axis=1)
    cell = np.clip(np.floor(rel * resolution).astype(np.int64), 0, resolution - 1)
    flat = (cell[:, 0] * resolution + cell[:, 1]) * resolution + cell[:, 2]
    return flat, inside


def _check_step(t: float, dt: float) -> None:
    check_time(t)
    if dt <= 0 or t + dt > 1.0 + 1e-12:
        raise InputError(f"velocity step needs dt > 0 and t + dt <= 1 (t={t}, dt={dt})")


def velocity_from_samples(points: np.ndarray, velocities: np.ndarray, bbox: BoundingBox, resolution: int) -> VelocityField:
    """Mean velocity of the samples whose point falls inside each voxel."""
    n = int(resolution)
    flat, inside = _voxel_index(np.asarray(points, dtype=np.float64), bbox, n)
    flat = flat[inside]
    vel = np.asarray(velocities, dtype=np.float64)[inside]
    counts = np.bincount(flat, minlength=n**3)
    sums = np.stack([np.bincount(flat, weights=vel[:, c], minlength=n**3) for c in range(3)], axis=1)
    valid = counts > 0
    mean = sums / np.where(valid, counts, 1)[:, None]
    return VelocityField(mean.reshape(n, n, n, 3), valid.reshape(n, n, n), bbox)


def particle_velocity_field(particles: ParticleSet, net: MotionNet, t: float, dt: float = MFE_DT,
                            resolution: int = MFE_RESOLUTION) -> VelocityField:
    """Per-voxel mean of ``(p(t + dt) - p(t)) / dt`` over the alive particles located in it at ``t``."""
    _check_step(t, dt)
    p0 = position_at(particles, net, t).data.astype(np.float64)
    p1 = position_at(particles, net, min(1.0, t + dt)).data.astype(np.float64)
    return velocity_from_samples(p0, (p1 - p0) / dt, particles.bbox, resolution)


def deformation_velocity_field(
    df: Callable[[np.ndarray, float], np.ndarray],
    t: float,
    dt: float,
    resolution: int,
    bbox: BoundingBox,
    occupied: np.ndarray | Callable[[np.ndarray], np.ndarray],
) -> VelocityField:
    """``(df(x, t) - df(x, t + dt)) / dt`` at voxel centers, zeroed where unoccupied."""
    _check_step(t, dt)
    n = int(resolution)
    centers = voxel_centers(bbox, n).reshape(-1, 3)
    vel = (np.asarray(df(centers, t), dtype=np.float64) - np.asarray(df(centers, min(1.0, t + dt)), dtype=np.float64)) / dt
    mask = occupied(centers) if callable(occupied) else occupied
    return VelocityField(vel.reshape(n, n, n, 3), np.asarray(mask, dtype=bool).reshape(n, n, n), bbox)


def zero_motion_field(bbox: BoundingBox, resolution: int = MFE_RESOLUTION) -> VelocityField:
    n = int(resolution)
    return VelocityField(np.zeros((n, n, n, 3)), np.zeros((n, n, n), dtype=bool), bbox)


def mfe(first: VelocityField, second: VelocityField) -> float:
    """Mean Euclidean norm of the per-voxel velocity difference over the whole voxel set."""
    if first.resolution != second.resolution:
        raise ShapeError("mfe", f"resolution {first.resolution} vs {second.resolution}")
    return float(np.mean(np.linalg.norm(first.vectors - second.vectors, axis=-1)))


def mfe_series(
    field_fn: Callable[[float], VelocityField],
    oracle: GroundTruthOracle,
    *,
    resolution: int = MFE_RESOLUTION,
    times: tuple[float, ...] = MFE_TIMES,
) -> list[float]:
    return [mfe(field_fn(float(t)), voxelize_velocity(oracle, float(t), resolution)) for t in times]


def render_view(model: FieldModel, frame_pose: Any, t: float, bbox: BoundingBox, *, samples: int,
                background: np.ndarray, component: str = "full", dump_path: Any = None) -> np.ndarray:
    from .radiance import render_image

    snapshot = model.prepare(t, component=component)
    return render_image(snapshot.query, frame_pose, bbox, samples=samples, background=background,
                        dtype=model.dtype, dump_path=dump_path)


def evaluate(
    model: FieldModel,
    dataset: Dataset,
    *,
    samples: int,
    background: np.ndarray,
    steps: int,
    scene: str = "",
    baseline: FieldModel | None = None,
    resolution: int = MFE_RESOLUTION,
    dt: float = MFE_DT,
    times: tuple[float, ...] = MFE_TIMES,
) -> dict[str, Any]:
    """Held-out PSNR/SSIM plus particle, zero-motion and optional baseline MFE."""
    if not dataset.test:
        raise InputError("dataset has an empty test split")
    per_view = []
    for index in dataset.test:
        frame = dataset.frames[index]
        image = dequantize(quantize(render_view(model, frame.pose, frame.time, dataset.bbox, samples=samples,
                                                background=background)))
        per_view.append({"index": int(index), "time": float(frame.time),
                         "psnr": psnr(image, frame.image), "ssim": ssim(image, frame.image)})
        log.info("[eval] view %d: psnr %.3f ssim %.4f", index, per_view[-1]["psnr"], per_view[-1]["ssim"])

    report: dict[str, Any] = {
        "scene": scene or (dataset.spec.name if dataset.spec is not None else ""),
        "steps": int(steps),
        "psnr_mean": float(np.mean([v["psnr"] for v in per_view])),
        "ssim_mean": float(np.mean([v["ssim"] for v in per_view])),
        "per_view": per_view,
        "protocol": {"N": int(resolution) ** 3, "dt": float(dt), "times": [float(t) for t in times]},
    }
    if dataset.spec is None:
        report["mfe_particles"] = None
        report["mfe_zero_motion"] = None
        log.warning("[eval] dataset has no scene.json; motion metrics skipped")
        return report

    oracle = dataset.oracle()
    learned = mfe_series(lambda t: model.velocity_field(t, dt, resolution), oracle, resolution=resolution, times=times)
    zero = mfe_series(lambda t: zero_motion_field(dataset.bbox, resolution), oracle, resolution=resolution, times=times)
    report["mfe_particles"] = float(np.mean(learned))
    report["mfe_zero_motion"] = float(np.mean(zero))
    per_time: dict[str, Any] = {"mfe_particles": learned, "mfe_zero_motion": zero}
    if baseline is not None:
        base = mfe_series(lambda t: baseline.velocity_field(t, dt, resolution), oracle, resolution=resolution,
                          times=times)
        report["mfe_baseline"] = float(np.mean(base))
        per_time["mfe_baseline"] = base
    report["per_time"] = per_time
    log.info("[eval] mfe particles %.4f zero-motion %.4f", report["mfe_particles"], report["mfe_zero_motion"])
    return report


def _is_number(value: Any) -> bool:
    if isinstance(value, bool):
        return False
    return isinstance(value, (int, float)) or value in ("inf", "-inf")


def validate_report(report: dict[str, Any]) -> list[str]:
    """Schema problems of a metrics report; empty when valid."""
    problems: list[str] = []
    if not isinstance(report, dict):
        return ["report is not an object"]
    for key in REPORT_KEYS:
        if key not in report:
            problems.append(f"missing key {key!r}")
    if problems:
        return problems
    if not isinstance(report["per_view"], list) or not report["per_view"]:
        problems.append("per_view must be a non-empty list")
    else:
        for i, view in enumerate(report["per_view"]):
            if not isinstance(view, dict) or not {"index", "psnr", "ssim"} <= set(view):
                problems.append(f"per_view[{i}] needs index, psnr and ssim")
    for key in ("psnr_mean", "ssim_mean"):
        if not _is_number(report[key]):
            problems.append(f"{key} must be a number")
    for key in ("mfe_particles", "mfe_zero_motion", "mfe_baseline"):
        value = report.get(key)
        if value is not None and (not isinstance(value, (int, float)) or value < 0):
            problems.append(f"{key} must be a non-negative number")
    protocol = report["protocol"]
    if not isinstance(protocol, dict) or not {"N", "dt", "times"} <= set(protocol):
        problems.append("protocol needs N, dt and times")
    return problems


def report_to_json_ready(report: dict[str, Any]) -> dict[str, Any]:
    """Replace infinite PSNR values with the string ``"inf"`` for strict JSON output."""

    def fix(value: Any) -> Any:
        if isinstance(value, float) and math.isinf(value):
            return "inf" if value > 0 else "-inf"
        if isinstance(value, dict):
            return {k: fix(v) for k, v in value.items()}
        if isinstance(value, list):
            return [fix(v) for v in value]
        return value

    return fix(report)


def lifecycle_curve_problems(events: list[Any], capacity: int, *, settle_after: int = 3,
                             final_fraction: float = 0.01) -> list[str]:
    """Check a removal/resampling history: the resampled count stops rising after
    ``settle_after`` events, ends below ``final_fraction`` of ``capacity``, and
    every event with survivors refills exactly the slots it freed."""
    if not events:
        return ["no lifecycle events recorded"]
    problems: list[str] = []
    for prev, cur in zip(events[settle_after - 1:], events[settle_after:]):
        if cur.resampled > prev.resampled:
            problems.append(f"resampled count rose from {prev.resampled} to {cur.resampled} at step {cur.step}")
    if events[-1].resampled >= final_fraction * capacity:
        problems.append(f"final event resampled {events[-1].resampled} of {capacity} particles")
    for event in events:
        if event.alive > 0 and event.resampled != event.removed:
            problems.append(f"step {event.step}: removed {event.removed} but resampled {event.resampled}")
    return problems
