"""Synthetic monocular dynamic scenes with analytic ground truth.

Bodies are spheres or axis-aligned boxes moving along closed-form
trajectories. Frames are ray traced with a flat Lambert term; the same scene
description answers occupancy and velocity queries exactly.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Protocol

import numpy as np
from PIL import Image

from .errors import DatasetError, InputError, SceneSpecError
from .types import BoundingBox, CameraPose, Frame, VelocityField

log = logging.getLogger(__name__)

LIGHT_DIRECTION = np.array([0.4, 0.3, 0.85]) / np.linalg.norm([0.4, 0.3, 0.85])
AMBIENT = 0.35
DIFFUSE = 0.65
WHITE = (1.0, 1.0, 1.0)
ESCAPE_CHECK_SAMPLES = 1001
TEST_EVERY = 10
TEST_OFFSET = 5


# -- trajectories ----------------------------------------------------------


class Trajectory(Protocol):
    kind: str

    def position(self, t: float) -> np.ndarray: ...

    def velocity(self, t: float) -> np.ndarray: ...

    def to_dict(self) -> dict[str, Any]: ...


@dataclass(slots=True)
class StaticTrajectory:
    center: np.ndarray
    kind: str = "static"

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self.center, dtype=np.float64)

    def velocity(self, t: float) -> np.ndarray:
        return np.zeros(3)

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.kind, "center": _floats(self.center)}


@dataclass(slots=True)
class LinearTrajectory:
    start: np.ndarray
    velocity_vec: np.ndarray
    kind: str = "linear"

    def position(self, t: float) -> np.ndarray:
        return np.asarray(self.start, dtype=np.float64) + float(t) * np.asarray(self.velocity_vec, dtype=np.float64)

    def velocity(self, t: float) -> np.ndarray:
        return np.asarray(self.velocity_vec, dtype=np.float64).copy()

    def to_dict(self) -> dict[str, Any]:
        return {"type": self.kind, "start": _floats(self.start), "velocity": _floats(self.velocity_vec)}


@dataclass(slots=True)
class CircularTrajectory:
    center: np.ndarray
    radius: float
    angular_speed: float
    phase: float = 0.0
    normal: np.ndarray = field(default_factory=lambda: np.array([0.0, 0.0, 1.0]))
    kind: str = "circular"

    def _basis(self) -> tuple[np.ndarray, np.ndarray]:
        n = np.asarray(self.normal, dtype=np.float64)
        n = n / np.linalg.norm(n)
        helper = np.array([1.0, 0.0, 0.0]) if abs(n[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        e1 = np.cross(n, helper)
        e1 /= np.linalg.norm(e1)
        return e1, np.cross(n, e1)

    def position(self, t: float) -> np.ndarray:
        e1, e2 = self._basis()
        theta = self.angular_speed * float(t) + self.phase
        return np.asarray(self.center, dtype=np.float64) + self.radius * (math.cos(theta) * e1 + math.sin(theta) * e2)

    def velocity(self, t: float) -> np.ndarray:
        e1, e2 = self._basis()
        theta = self.angular_speed * float(t) + self.phase
        return self.radius * self.angular_speed * (-math.sin(theta) * e1 + math.cos(theta) * e2)

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.kind,
            "center": _floats(self.center),
            "radius": float(self.radius),
            "angular_speed": float(self.angular_speed),
            "phase": float(self.phase),
            "normal": _floats(self.normal),
        }


@dataclass(slots=True)
class BounceTrajectory:
    """Straight motion folded between per-axis walls ``low``/``high`` (elastic reflection).

    At an impact instant the velocity is the post-impact value.
    """

    start: np.ndarray
    velocity_vec: np.ndarray
    low: np.ndarray
    high: np.ndarray
    kind: str = "bounce"

    def _fold(self, t: float) -> tuple[np.ndarray, np.ndarray]:
        lo = np.asarray(self.low, dtype=np.float64)
        span = np.asarray(self.high, dtype=np.float64) - lo
        u = np.asarray(self.velocity_vec, dtype=np.float64)
        r = np.mod(np.asarray(self.start, dtype=np.float64) - lo + float(t) * u, 2.0 * span)
        r = np.where(r >= 2.0 * span, r - 2.0 * span, r)
        # on the low wall moving down: already reflected
        r = np.where((u < 0) & (r == 0), 2.0 * span, r)
        rising = np.where(u > 0, (r >= 0) & (r < span), (r > 0) & (r <= span))
        rising |= u == 0
        pos = np.where(rising, lo + r, lo + 2.0 * span - r)
        vel = np.where(rising, u, -u)
        return pos, vel

    def position(self, t: float) -> np.ndarray:
        return self._fold(t)[0]

    def velocity(self, t: float) -> np.ndarray:
        return self._fold(t)[1]

    def to_dict(self) -> dict[str, Any]:
        return {
            "type": self.kind,
            "start": _floats(self.start),
            "velocity": _floats(self.velocity_vec),
            "low": _floats(self.low),
            "high": _floats(self.high),
        }


def _floats(values: Any) -> list[float]:
    return [float(v) for v in np.asarray(values, dtype=np.float64).reshape(-1)]


# -- scene description -----------------------------------------------------


@dataclass(slots=True)
class Body:
    primitive: str
    size: np.ndarray
    albedo: np.ndarray
    trajectory: Trajectory
    name: str = ""

    def half_extent(self) -> np.ndarray:
        if self.primitive == "sphere":
            return np.full(3, float(np.asarray(self.size).reshape(-1)[0]))
        return np.asarray(self.size, dtype=np.float64).reshape(3)

    def contains(self, points: np.ndarray, center: np.ndarray) -> np.ndarray:
        rel = np.asarray(points, dtype=np.float64) - center
        if self.primitive == "sphere":
            r = float(np.asarray(self.size).reshape(-1)[0])
            return np.einsum("...i,...i->...", rel, rel) <= r * r
        return np.all(np.abs(rel) <= self.half_extent(), axis=-1)

    def to_dict(self) -> dict[str, Any]:
        size: Any = float(np.asarray(self.size).reshape(-1)[0]) if self.primitive == "sphere" else _floats(self.size)
        return {
            "name": self.name,
            "primitive": self.primitive,
            "size": size,
            "albedo": _floats(self.albedo),
            "trajectory": self.trajectory.to_dict(),
        }


@dataclass(slots=True)
class OrbitCamera:
    radius: float = 4.0
    elevation_deg: float = 25.0
    fov_deg: float = 50.0
    width: int = 64
    height: int = 64
    start_azimuth_deg: float = 0.0
    turns: float = 1.0

    def to_dict(self) -> dict[str, Any]:
        return {
            "radius": float(self.radius),
            "elevation_deg": float(self.elevation_deg),
            "fov_deg": float(self.fov_deg),
            "width": int(self.width),
            "height": int(self.height),
            "start_azimuth_deg": float(self.start_azimuth_deg),
            "turns": float(self.turns),
        }


@dataclass(slots=True)
class SceneSpec:
    bodies: list[Body] = field(default_factory=list)
    background: np.ndarray = field(default_factory=lambda: np.array(WHITE))
    bbox: BoundingBox = field(default_factory=lambda: BoundingBox(-np.ones(3), np.ones(3)))
    frames: int = 60
    camera: OrbitCamera = field(default_factory=OrbitCamera)
    name: str = "custom"

    def to_dict(self) -> dict[str, Any]:
        return {
            "name": self.name,
            "bodies": [b.to_dict() for b in self.bodies],
            "background": _floats(self.background),
            "bbox": self.bbox.to_dict(),
            "frames": int(self.frames),
            "camera": self.camera.to_dict(),
        }


def _vec(payload: dict[str, Any], key: str, where: str, length: int = 3, default: Any = None) -> np.ndarray:
    raw = payload.get(key, default)
    if raw is None:
        raise SceneSpecError(f"missing {key!r}", where=where)
    try:
        arr = np.asarray(raw, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise SceneSpecError(f"{key!r} must be numeric", where=where) from exc
    if arr.size != length or not np.all(np.isfinite(arr)):
        raise SceneSpecError(f"{key!r} must hold {length} finite numbers", where=where)
    return arr


def _num(payload: dict[str, Any], key: str, where: str, default: Any = None) -> float:
    return float(_vec(payload, key, where, 1, default)[0])


def trajectory_from_dict(payload: dict[str, Any], where: str) -> Trajectory:
    kind = str(payload.get("type") or "").strip().lower()
    if kind == "static":
        return StaticTrajectory(_vec(payload, "center", where))
    if kind == "linear":
        return LinearTrajectory(_vec(payload, "start", where), _vec(payload, "velocity", where))
    if kind == "circular":
        return CircularTrajectory(
            center=_vec(payload, "center", where),
            radius=_num(payload, "radius", where),
            angular_speed=_num(payload, "angular_speed", where),
            phase=_num(payload, "phase", where, 0.0),
            normal=_vec(payload, "normal", where, default=[0.0, 0.0, 1.0]),
        )
    if kind == "bounce":
        return BounceTrajectory(
            start=_vec(payload, "start", where),
            velocity_vec=_vec(payload, "velocity", where),
            low=_vec(payload, "low", where),
            high=_vec(payload, "high", where),
        )
    raise SceneSpecError(f"unknown trajectory type {kind!r}", where=where)


def spec_from_dict(payload: dict[str, Any]) -> SceneSpec:
    if not isinstance(payload, dict):
        raise SceneSpecError("scene spec must be a JSON object")
    bodies: list[Body] = []
    for i, raw in enumerate(payload.get("bodies") or []):
        where = f"bodies[{i}]"
        if not isinstance(raw, dict):
            raise SceneSpecError("body must be an object", where=where)
        primitive = str(raw.get("primitive") or "").strip().lower()
        if primitive == "sphere":
            size = np.array([_num(raw, "size", where)])
            if size[0] <= 0:
                raise SceneSpecError("sphere radius must be > 0", where=where)
        elif primitive == "box":
            size = _vec(raw, "size", where)
            if np.any(size <= 0):
                raise SceneSpecError("box half extents must be > 0", where=where)
        else:
            raise SceneSpecError(f"unknown primitive {primitive!r}", where=where)
        albedo = _vec(raw, "albedo", where)
        if np.any(albedo < 0) or np.any(albedo > 1):
            raise SceneSpecError("albedo must lie in [0, 1]", where=where)
        traj_raw = raw.get("trajectory") or {"type": "static", "center": [0.0, 0.0, 0.0]}
        if not isinstance(traj_raw, dict):
            raise SceneSpecError("trajectory must be an object", where=where)
        bodies.append(
            Body(
                primitive=primitive,
                size=size,
                albedo=albedo,
                trajectory=trajectory_from_dict(traj_raw, f"{where}.trajectory"),
                name=str(raw.get("name") or f"body{i}"),
            )
        )
    bbox_raw = payload.get("bbox") or {"min": [-1.0, -1.0, -1.0], "max": [1.0, 1.0, 1.0]}
    bbox = BoundingBox(_vec(bbox_raw, "min", "bbox"), _vec(bbox_raw, "max", "bbox"))
    cam_raw = payload.get("camera") or {}
    if not isinstance(cam_raw, dict):
        raise SceneSpecError("camera must be an object", where="camera")
    defaults = OrbitCamera()
    camera = OrbitCamera(
        radius=_num(cam_raw, "radius", "camera", defaults.radius),
        elevation_deg=_num(cam_raw, "elevation_deg", "camera", defaults.elevation_deg),
        fov_deg=_num(cam_raw, "fov_deg", "camera", defaults.fov_deg),
        width=int(_num(cam_raw, "width", "camera", defaults.width)),
        height=int(_num(cam_raw, "height", "camera", defaults.height)),
        start_azimuth_deg=_num(cam_raw, "start_azimuth_deg", "camera", defaults.start_azimuth_deg),
        turns=_num(cam_raw, "turns", "camera", defaults.turns),
    )
    spec = SceneSpec(
        bodies=bodies,
        background=_vec(payload, "background", "background", default=list(WHITE)),
        bbox=bbox,
        frames=int(_num(payload, "frames", "frames", 60)),
        camera=camera,
        name=str(payload.get("name") or "custom"),
    )
    validate_spec(spec)
    return spec


def load_spec(path: str | Path) -> SceneSpec:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except OSError as exc:
        raise SceneSpecError(f"cannot read scene spec {p}: {exc}") from exc
    try:
        payload = json.loads(text)
    except json.JSONDecodeError as exc:
        raise SceneSpecError(f"line {exc.lineno}: {exc.msg}", where=str(p)) from exc
    return spec_from_dict(payload)


def validate_spec(spec: SceneSpec) -> None:
    if spec.frames < 2:
        raise SceneSpecError("frame count must be >= 2", where="frames")
    if np.any(spec.bbox.extent <= 0):
        raise SceneSpecError("bounding box is degenerate", where="bbox")
    cam = spec.camera
    if cam.width < 1 or cam.height < 1 or not (0.0 < cam.fov_deg < 180.0) or cam.radius <= 0:
        raise SceneSpecError("camera needs positive size, radius and a field of view in (0, 180)", where="camera")
    times = np.linspace(0.0, 1.0, ESCAPE_CHECK_SAMPLES)
    for i, body in enumerate(spec.bodies):
        half = body.half_extent()
        for t in times:
            center = body.trajectory.position(float(t))
            if np.any(center - half < spec.bbox.minimum - 1e-9) or np.any(center + half > spec.bbox.maximum + 1e-9):
                raise SceneSpecError(
                    f"trajectory leaves the bounding box at t={float(t):.3f}",
                    where=f"bodies[{i}]",
                )


# -- presets ---------------------------------------------------------------


def _preset_fall() -> SceneSpec:
    return SceneSpec(
        name="fall",
        bodies=[
            Body("sphere", np.array([0.3]), np.array([0.9, 0.2, 0.2]),
                 LinearTrajectory(np.array([0.0, 0.0, 0.6]), np.array([0.0, 0.0, -1.2])), name="ball"),
            Body("box", np.array([0.2, 0.2, 0.2]), np.array([0.2, 0.3, 0.9]),
                 StaticTrajectory(np.array([0.6, -0.6, -0.7])), name="crate"),
        ],
    )


def _preset_orbit() -> SceneSpec:
    return SceneSpec(
        name="orbit",
        bodies=[
            Body("sphere", np.array([0.25]), np.array([0.2, 0.8, 0.3]),
                 CircularTrajectory(np.zeros(3), 0.5, 2.0 * math.pi), name="moon"),
            Body("box", np.array([0.3, 0.3, 0.15]), np.array([0.2, 0.3, 0.9]),
                 StaticTrajectory(np.array([0.0, 0.0, -0.8])), name="plinth"),
        ],
    )


def _preset_bounce() -> SceneSpec:
    r = 0.25
    return SceneSpec(
        name="bounce",
        bodies=[
            Body("sphere", np.array([r]), np.array([0.95, 0.8, 0.2]),
                 BounceTrajectory(np.array([-0.3, 0.2, 0.5]), np.array([0.8, -0.4, -2.0]),
                                  np.full(3, -1.0 + r), np.full(3, 1.0 - r)), name="ball"),
            Body("box", np.array([0.15, 0.15, 0.1]), np.array([0.2, 0.3, 0.9]),
                 StaticTrajectory(np.array([-0.8, 0.8, -0.9])), name="crate"),
        ],
    )


PRESETS: dict[str, Callable[[], SceneSpec]] = {
    "fall": _preset_fall,
    "orbit": _preset_orbit,
    "bounce": _preset_bounce,
}


def preset(name: str) -> SceneSpec:
    key = str(name or "").strip().lower()
    builder = PRESETS.get(key)
    if builder is None:
        raise SceneSpecError(f"unknown preset {name!r}; choose from {', '.join(sorted(PRESETS))}")
    spec = builder()
    validate_spec(spec)
    return spec


# -- cameras and rays ------------------------------------------------------


def focal_from_fov(width: int, fov_deg: float) -> float:
    return 0.5 * width / math.tan(math.radians(fov_deg) / 2.0)


def look_at(eye: np.ndarray, target: np.ndarray, *, focal_px: float, width: int, height: int,
            up: np.ndarray | None = None) -> CameraPose:
    eye = np.asarray(eye, dtype=np.float64)
    forward = np.asarray(target, dtype=np.float64) - eye
    forward /= np.linalg.norm(forward)
    up_vec = np.array([0.0, 0.0, 1.0]) if up is None else np.asarray(up, dtype=np.float64)
    right = np.cross(forward, up_vec)
    if np.linalg.norm(right) < 1e-9:
        right = np.cross(forward, np.array([0.0, 1.0, 0.0]))
    right /= np.linalg.norm(right)
    down = np.cross(forward, right)
    return CameraPose(np.stack([right, down, forward], axis=1), eye, focal_px, width, height)


def orbit_poses(camera: OrbitCamera, count: int, target: np.ndarray | None = None) -> list[CameraPose]:
    center = np.zeros(3) if target is None else np.asarray(target, dtype=np.float64)
    focal = focal_from_fov(camera.width, camera.fov_deg)
    elev = math.radians(camera.elevation_deg)
    poses = []
    for i in range(int(count)):
        az = math.radians(camera.start_azimuth_deg) + 2.0 * math.pi * camera.turns * i / max(int(count), 1)
        eye = center + camera.radius * np.array([math.cos(elev) * math.cos(az), math.cos(elev) * math.sin(az), math.sin(elev)])
        poses.append(look_at(eye, center, focal_px=focal, width=camera.width, height=camera.height))
    return poses


def rays_for_pixels(pose: CameraPose, px: np.ndarray, py: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Origins and unit directions for pixel index arrays (pixel centers at +0.5)."""
    px = np.asarray(px)
    py = np.asarray(py)
    if np.any(px < 0) or np.any(px >= pose.width) or np.any(py < 0) or np.any(py >= pose.height):
        raise InputError(f"pixel outside the {pose.width}x{pose.height} image")
    cam = np.stack(
        [
            (px.astype(np.float64) + 0.5 - 0.5 * pose.width) / pose.focal_px,
            (py.astype(np.float64) + 0.5 - 0.5 * pose.height) / pose.focal_px,
            np.ones(px.shape, dtype=np.float64),
        ],
        axis=-1,
    )
    dirs = cam @ pose.rotation.T
    dirs /= np.linalg.norm(dirs, axis=-1, keepdims=True)
    origins = np.broadcast_to(pose.position, dirs.shape).copy()
    return origins, dirs


def ray_for_pixel(pose: CameraPose, px: int, py: int) -> tuple[np.ndarray, np.ndarray]:
    o, d = rays_for_pixels(pose, np.array([px]), np.array([py]))
    return o[0], d[0]


def pixel_grid(pose: CameraPose) -> tuple[np.ndarray, np.ndarray]:
    py, px = np.meshgrid(np.arange(pose.height), np.arange(pose.width), indexing="ij")
    return px.reshape(-1), py.reshape(-1)


def ray_box_interval(origins: np.ndarray, dirs: np.ndarray, bbox: BoundingBox) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Slab test; returns (near, far, hit) with near clamped to stay positive."""
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(dirs != 0.0, 1.0 / np.where(dirs != 0.0, dirs, 1.0), np.inf)
        t1 = (bbox.minimum - origins) * inv
        t2 = (bbox.maximum - origins) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    near = np.max(np.minimum(t1, t2), axis=-1)
    far = np.min(np.maximum(t1, t2), axis=-1)
    near = np.maximum(near, 1e-6)
    hit = far > near
    return near, far, hit


# -- ground truth ----------------------------------------------------------


@dataclass(slots=True)
class GroundTruthOracle:
    spec: SceneSpec

    def _hits(self, points: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
        occupied = np.zeros(pts.shape[0], dtype=bool)
        velocity = np.zeros(pts.shape, dtype=np.float64)
        # first body in list order wins where bodies overlap
        for body in self.spec.bodies:
            inside = body.contains(pts, body.trajectory.position(t)) & ~occupied
            velocity[inside] = body.trajectory.velocity(t)
            occupied |= inside
        return occupied, velocity

    def occupancy(self, points: np.ndarray, t: float) -> np.ndarray:
        return self._hits(points, t)[0]

    def velocity(self, points: np.ndarray, t: float) -> tuple[np.ndarray, np.ndarray]:
        return self._hits(points, t)


def _check_time(t: float) -> float:
    value = float(t)
    if not (0.0 <= value <= 1.0):
        raise InputError(f"time {value} outside [0, 1]")
    return value


def gt_velocity(oracle: GroundTruthOracle, x: np.ndarray, t: float) -> tuple[bool, np.ndarray]:
    occ, vel = oracle.velocity(np.asarray(x).reshape(1, 3), _check_time(t))
    return bool(occ[0]), vel[0]


def gt_occupancy(oracle: GroundTruthOracle, x: np.ndarray, t: float) -> bool:
    return bool(oracle.occupancy(np.asarray(x).reshape(1, 3), _check_time(t))[0])


def voxel_centers(bbox: BoundingBox, resolution: int) -> np.ndarray:
    """``(R, R, R, 3)`` centers of an even ``R^3`` voxelization of ``bbox``."""
    n = int(resolution)
    axes = [bbox.minimum[a] + (np.arange(n) + 0.5) * bbox.extent[a] / n for a in range(3)]
    gx, gy, gz = np.meshgrid(*axes, indexing="ij")
    return np.stack([gx, gy, gz], axis=-1)


def voxelize_velocity(oracle: GroundTruthOracle, t: float, resolution: int) -> VelocityField:
    centers = voxel_centers(oracle.spec.bbox, resolution)
    occ, vel = oracle.velocity(centers.reshape(-1, 3), _check_time(t))
    n = int(resolution)
    return VelocityField(vel.reshape(n, n, n, 3), occ.reshape(n, n, n), oracle.spec.bbox)


# -- rendering -------------------------------------------------------------


def _intersect_sphere(o: np.ndarray, d: np.ndarray, center: np.ndarray, radius: float) -> tuple[np.ndarray, np.ndarray]:
    oc = o - center
    b = np.einsum("ij,ij->i", d, oc)
    c = np.einsum("ij,ij->i", oc, oc) - radius * radius
    disc = b * b - c
    root = np.sqrt(np.maximum(disc, 0.0))
    s = np.where(-b - root > 0, -b - root, -b + root)
    s = np.where((disc >= 0) & (s > 0), s, np.inf)
    normal = o + s[:, None] * d - center
    with np.errstate(invalid="ignore", divide="ignore"):
        normal = normal / np.linalg.norm(normal, axis=1, keepdims=True)
    return s, np.nan_to_num(normal)


def _intersect_box(o: np.ndarray, d: np.ndarray, center: np.ndarray, half: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    box = BoundingBox(center - half, center + half)
    with np.errstate(divide="ignore", invalid="ignore"):
        inv = np.where(d != 0.0, 1.0 / np.where(d != 0.0, d, 1.0), np.inf)
        t1 = (box.minimum - o) * inv
        t2 = (box.maximum - o) * inv
    t1 = np.where(np.isnan(t1), -np.inf, t1)
    t2 = np.where(np.isnan(t2), np.inf, t2)
    tmins = np.minimum(t1, t2)
    near = np.max(tmins, axis=1)
    far = np.min(np.maximum(t1, t2), axis=1)
    s = np.where((far >= near) & (near > 0), near, np.inf)
    axis = np.argmax(tmins, axis=1)
    normal = np.zeros_like(o)
    rows = np.arange(o.shape[0])
    normal[rows, axis] = -np.sign(d[rows, axis])
    return s, normal


def render_frame(spec: SceneSpec, pose: CameraPose, t: float) -> np.ndarray:
    """Float RGB image ``(H, W, 3)`` in [0, 1]."""
    px, py = pixel_grid(pose)
    o, d = rays_for_pixels(pose, px, py)
    best = np.full(o.shape[0], np.inf)
    color = np.broadcast_to(np.asarray(spec.background, dtype=np.float64), o.shape).copy()
    for body in spec.bodies:
        center = body.trajectory.position(t)
        if body.primitive == "sphere":
            s, normal = _intersect_sphere(o, d, center, float(body.half_extent()[0]))
        else:
            s, normal = _intersect_box(o, d, center, body.half_extent())
        closer = s < best
        shade = AMBIENT + DIFFUSE * np.maximum(0.0, normal @ LIGHT_DIRECTION)
        color[closer] = shade[closer, None] * np.asarray(body.albedo)[None, :]
        best = np.where(closer, s, best)
    return np.clip(color, 0.0, 1.0).reshape(pose.height, pose.width, 3)


# -- datasets --------------------------------------------------------------


@dataclass(slots=True)
class Dataset:
    frames: list[Frame]
    train: list[int]
    test: list[int]
    bbox: BoundingBox
    background: np.ndarray
    spec: SceneSpec | None = None
    root: Path | None = None
    seed: int = 0

    @property
    def width(self) -> int:
        return self.frames[0].pose.width

    @property
    def height(self) -> int:
        return self.frames[0].pose.height

    def oracle(self) -> GroundTruthOracle:
        if self.spec is None:
            raise DatasetError("dataset has no scene description for ground truth", path=str(self.root or ""))
        return GroundTruthOracle(self.spec)


def split_indices(count: int) -> tuple[list[int], list[int]]:
    test = list(range(TEST_OFFSET, count, TEST_EVERY))
    taken = set(test)
    return [i for i in range(count) if i not in taken], test


def frame_times(count: int) -> np.ndarray:
    return np.linspace(0.0, 1.0, int(count))


def quantize(image: np.ndarray) -> np.ndarray:
    return np.clip(np.round(np.asarray(image, dtype=np.float64) * 255.0), 0, 255).astype(np.uint8)


def dequantize(image: np.ndarray) -> np.ndarray:
    return np.asarray(image, dtype=np.float64) / 255.0


def write_png(path: Path, image: np.ndarray) -> None:
    data = image if image.dtype == np.uint8 else quantize(image)
    Image.fromarray(np.ascontiguousarray(data)).save(path, format="PNG", optimize=False, compress_level=6)


def read_png(path: Path) -> np.ndarray:
    with Image.open(path) as img:
        return dequantize(np.asarray(img.convert("RGB")))


def generate(spec: SceneSpec, seed: int = 0) -> Dataset:
    """Ray trace every frame of ``spec`` along its orbit; images are 8-bit quantized."""
    validate_spec(spec)
    poses = orbit_poses(spec.camera, spec.frames)
    times = frame_times(spec.frames)
    frames = [
        Frame(image=dequantize(quantize(render_frame(spec, pose, float(t)))), pose=pose, time=float(t),
              file=f"frames/{i:04d}.png")
        for i, (pose, t) in enumerate(zip(poses, times))
    ]
    train, test = split_indices(spec.frames)
    log.info("[scene] generated %s: %d frames at %dx%d", spec.name, spec.frames, spec.camera.width, spec.camera.height)
    return Dataset(frames, train, test, spec.bbox, np.asarray(spec.background, dtype=np.float64), spec=spec, seed=int(seed))


def save_dataset(dataset: Dataset, out_dir: str | Path) -> Path:
    root = Path(out_dir)
    (root / "frames").mkdir(parents=True, exist_ok=True)
    first = dataset.frames[0].pose
    entries = []
    for frame in dataset.frames:
        write_png(root / frame.file, frame.image)
        entries.append(
            {
                "file": frame.file,
                "time": float(frame.time),
                "rotation": _floats(frame.pose.rotation),
                "position": _floats(frame.pose.position),
            }
        )
    manifest = {
        "width": int(first.width),
        "height": int(first.height),
        "focal_px": float(first.focal_px),
        "frames": entries,
        "bbox": dataset.bbox.to_dict(),
        "background": _floats(dataset.background),
        "split": {"train": list(dataset.train), "test": list(dataset.test)},
        "seed": int(dataset.seed),
    }
    (root / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    if dataset.spec is not None:
        (root / "scene.json").write_text(json.dumps(dataset.spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")
    dataset.root = root
    return root


def load_dataset(path: str | Path) -> Dataset:
    root = Path(path)
    manifest_path = root / "manifest.json"
    if not manifest_path.is_file():
        raise DatasetError("dataset manifest not found", path=str(manifest_path))
    try:
        manifest = json.loads(manifest_path.read_text(encoding="utf-8"))
        width = int(manifest["width"])
        height = int(manifest["height"])
        focal = float(manifest["focal_px"])
        bbox = BoundingBox.from_dict(manifest["bbox"])
        background = np.asarray(manifest.get("background", list(WHITE)), dtype=np.float64)
        split = manifest.get("split") or {}
        entries = list(manifest["frames"])
    except (ValueError, KeyError, TypeError) as exc:
        raise DatasetError(f"invalid dataset manifest: {exc}", path=str(manifest_path)) from exc
    frames: list[Frame] = []
    for entry in entries:
        image_path = root / str(entry["file"])
        if not image_path.is_file():
            raise DatasetError("frame image missing", path=str(image_path))
        image = read_png(image_path)
        if image.shape != (height, width, 3):
            raise DatasetError(f"frame has shape {image.shape}, expected {(height, width, 3)}", path=str(image_path))
        pose = CameraPose(np.asarray(entry["rotation"], dtype=np.float64).reshape(3, 3),
                          np.asarray(entry["position"]), focal, width, height)
        frames.append(Frame(image=image, pose=pose, time=float(entry["time"]), file=str(entry["file"])))
    if len(frames) < 2:
        raise DatasetError("dataset needs at least two frames", path=str(manifest_path))
    times = np.array([f.time for f in frames])
    if np.any(np.diff(times) <= 0):
        raise DatasetError("frame timestamps must be strictly increasing", path=str(manifest_path))
    spec = None
    scene_path = root / "scene.json"
    if scene_path.is_file():
        spec = load_spec(scene_path)
    default_train, default_test = split_indices(len(frames))
    return Dataset(
        frames=frames,
        train=[int(i) for i in split.get("train", default_train)],
        test=[int(i) for i in split.get("test", default_test)],
        bbox=bbox,
        background=background,
        spec=spec,
        root=root,
        seed=int(manifest.get("seed", 0)),
    )
