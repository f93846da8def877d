"""Optimization loop: minibatches, Adam, coarse-to-fine growth and the particle lifecycle."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import Any

import numpy as np

from . import losses
from . import ndiff as nd
from .config import TrainConfig, config_to_text, parse_config_text
from .errors import DatasetError, InputError, NonFiniteError, TrainingAborted
from .evaluation import render_view
from .model_interface import FieldModel
from .model_registry import ModelRegistry, default_registry
from .optim import Adam, lr_at
from .particles import remove, resample
from .radiance import RaySampleSet, background_color, render_rays, sample_rays, update_occupancy
from .scene import Dataset, rays_for_pixels, write_png
from .types import BoundingBox, LifecycleEvent, LossRecord, RunManifest

UTC = timezone.utc  # datetime.UTC needs Python 3.11

log = logging.getLogger(__name__)

SOFTWARE_VERSION = "0.1.0"
MAX_CONSECUTIVE_FAILURES = 3


@dataclass(slots=True)
class RayBatch:
    samples: RaySampleSet
    target: np.ndarray
    time: float
    frame: int


@dataclass
class TrainResult:
    history: list[LossRecord] = field(default_factory=list)
    lifecycle: list[LifecycleEvent] = field(default_factory=list)
    checkpoint: Path | None = None
    run_dir: Path | None = None


def base_rates(config: TrainConfig) -> dict[str, float]:
    return {
        "features": config.lr_features,
        "starts": config.lr_starts,
        "motion": config.lr_motion,
        "grid": config.lr_grid,
        "heads": config.lr_heads,
    }


def build_model(config: TrainConfig, bbox: BoundingBox, rng: np.random.Generator,
                registry: ModelRegistry | None = None) -> FieldModel:
    reg = registry or default_registry()
    factory = reg.get(config.model)
    if factory is None:
        raise InputError(f"unknown model {config.model!r}; choose from {', '.join(reg.ids())}")
    return factory.create(config, bbox, rng)


class Trainer:
    def __init__(
        self,
        config: TrainConfig,
        dataset: Dataset,
        *,
        registry: ModelRegistry | None = None,
        model: FieldModel | None = None,
        rng: np.random.Generator | None = None,
    ) -> None:
        if not dataset.train:
            raise DatasetError("dataset has an empty train split", path=str(dataset.root or ""))
        self.config = config
        self.dataset = dataset
        self.rng = rng if rng is not None else np.random.default_rng(config.seed)
        self.model = model if model is not None else build_model(config, dataset.bbox, self.rng, registry)
        self.background = background_color(config.background)
        self.weights = losses.LossWeights(config.weight_ptrgb, config.weight_bg, config.weight_tvf, config.weight_tvm)
        self.optimizer = Adam(beta1=config.adam_beta1, beta2=config.adam_beta2, eps=config.adam_eps)
        for name, params in self.model.parameter_groups().items():
            self.optimizer.add_group(name, params)
        self.step = 0
        self.failures = 0
        self.occupied_nodes = 0

    # -- batches -----------------------------------------------------------

    def make_batch(self) -> RayBatch:
        """One uniformly chosen training frame, pixels uniform within it, jittered samples."""
        frame_index = int(self.dataset.train[int(self.rng.integers(0, len(self.dataset.train)))])
        frame = self.dataset.frames[frame_index]
        pixels = self.rng.integers(0, frame.pose.width * frame.pose.height, size=self.config.batch_rays)
        px = pixels % frame.pose.width
        py = pixels // frame.pose.width
        origins, dirs = rays_for_pixels(frame.pose, px, py)
        samples = sample_rays(origins, dirs, self.dataset.bbox, self.config.samples_per_ray, self.rng)
        return RayBatch(samples=samples, target=frame.image[py, px].astype(self.model.dtype), time=frame.time,
                        frame=frame_index)

    def loss_terms(self, batch: RayBatch) -> losses.LossTerms:
        snapshot = self.model.prepare(batch.time)
        out = render_rays(batch.samples, snapshot.query, self.background, dtype=self.model.dtype)
        terms = losses.LossTerms(photo=losses.photometric(out.color, batch.target))
        if self.weights.ptrgb > 0:
            terms.ptrgb = losses.per_point_rgb(out.sample_colors, out.weights, batch.target)
        if self.weights.bg > 0:
            terms.bg = losses.bg_entropy(out.t_far)
        if self.weights.tvf > 0 or self.weights.tvm > 0:
            tvf, tvm = self.model.regularizers(snapshot)
            terms.tvf = tvf if self.weights.tvf > 0 else None
            terms.tvm = tvm if self.weights.tvm > 0 else None
        return terms

    def batch_loss(self, batch: RayBatch) -> float:
        """Total loss of ``batch`` evaluated without recording a graph."""
        return float(losses.total(self.loss_terms(batch), self.weights).data)

    # -- one step ----------------------------------------------------------

    def rates(self) -> dict[str, float]:
        return lr_at(self.step, self.config.steps, base_rates(self.config), final=self.config.lr_decay_factor)

    def train_step(self, batch: RayBatch | None = None) -> LossRecord:
        batch = batch if batch is not None else self.make_batch()
        rates = self.rates()
        graph = nd.Graph()
        try:
            with graph.recording():
                terms = self.loss_terms(batch)
                loss = losses.total(terms, self.weights)
            grads = graph.backward(loss)
        except NonFiniteError as exc:
            self.failures += 1
            log.warning("[train] step %d skipped (%d in a row): %s", self.step, self.failures, exc)
            self.step += 1
            if self.failures >= MAX_CONSECUTIVE_FAILURES:
                raise TrainingAborted(f"{self.failures} consecutive non-finite steps, last at step {self.step - 1}") from exc
            return LossRecord(step=self.step - 1, photo=float("nan"), total=float("nan"), lr=rates["features"],
                              alive_particles=self._alive())
        self.failures = 0
        self.optimizer.step(grads, rates)
        values = terms.values()
        record = LossRecord(
            step=self.step,
            photo=values["photo"],
            ptrgb=values["ptrgb"],
            bg=values["bg"],
            tvf=values["tvf"],
            tvm=values["tvm"],
            total=float(loss.data),
            lr=rates["features"],
            alive_particles=self._alive(),
        )
        self.step += 1
        return record

    def _alive(self) -> int:
        particles = getattr(self.model, "particles", None)
        return particles.alive_count if particles is not None else 0

    # -- schedule hooks ------------------------------------------------------

    def maybe_grow_grid(self) -> bool:
        if self.step == 0 or self.step not in self.config.milestone_steps():
            return False
        grown = self.model.resize_grid(self.config.grid_voxels_at(self.step))
        if grown:
            self.optimizer.replace_group("grid", self.model.parameter_groups()["grid"])
            occupancy = update_occupancy(self.model, self.config.eps_alpha)
            self.occupied_nodes = occupancy.occupied_count
            log.info("[grid] step %d: grid now %s, %d nodes occupied", self.step, self.model.grid_spec.extents,
                     self.occupied_nodes)
        return grown

    def lifecycle_event(self) -> LifecycleEvent | None:
        particles = getattr(self.model, "particles", None)
        motion = getattr(self.model, "motion", None)
        if particles is None or motion is None or particles.capacity == 0:
            return None
        occupancy = update_occupancy(self.model, self.config.eps_alpha)
        self.occupied_nodes = occupancy.occupied_count
        removal = remove(particles, motion, occupancy, eps_traj=self.config.eps_traj_bbox_units,
                         samples=self.config.trajectory_samples)
        radius = self.config.resample_radius_voxels * self.model.grid_spec.voxel_edge
        slots = resample(particles, int(removal.removed.size), radius, rng=self.rng)
        if slots.size:
            self.optimizer.reset_rows(particles.starts, slots)
            self.optimizer.reset_rows(particles.features, slots)
        event = LifecycleEvent(
            step=self.step,
            removed=int(removal.removed.size),
            resampled=int(slots.size),
            alive=particles.alive_count,
            occupied_nodes=self.occupied_nodes,
            removed_free_space=removal.free_space,
            removed_immobile=removal.immobile,
        )
        log.info("[lifecycle] step %d: removed %d, resampled %d, alive %d", event.step, event.removed,
                 event.resampled, event.alive)
        return event

    # -- checkpoints -----------------------------------------------------------

    def save_checkpoint(self, path: str | Path) -> Path:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        arrays: dict[str, np.ndarray] = {}
        for name, params in self.model.parameter_groups().items():
            for i, p in enumerate(params):
                arrays[f"param/{name}/{i}"] = p.data
        arrays.update(self.optimizer.export())
        particles = getattr(self.model, "particles", None)
        if particles is not None:
            arrays["alive"] = particles.alive
        meta = {
            "config": config_to_text(self.config),
            "step": self.step,
            "failures": self.failures,
            "adam_t": self.optimizer.t,
            "rng_state": self.rng.bit_generator.state,
            "model": self.model.meta(),
            "bbox": self.model.bbox.to_dict(),
            "background": [float(v) for v in self.dataset.background],
            "dataset": str(self.dataset.root or ""),
            "software_version": SOFTWARE_VERSION,
        }
        arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode("utf-8"), dtype=np.uint8)
        with open(target, "wb") as fh:
            np.savez(fh, **arrays)
        return target

    @classmethod
    def from_checkpoint(cls, path: str | Path, dataset: Dataset, *,
                        config: TrainConfig | None = None) -> Trainer:
        """Rebuild a trainer mid-run; ``config`` may only change settings that do not alter shapes."""
        loaded = load_checkpoint(path)
        trainer = cls(config or loaded.config, dataset, model=loaded.model, rng=loaded.rng)
        trainer.optimizer.load(loaded.arrays, loaded.meta["adam_t"])
        trainer.step = int(loaded.meta["step"])
        trainer.failures = int(loaded.meta.get("failures", 0))
        return trainer


@dataclass
class LoadedCheckpoint:
    model: FieldModel
    config: TrainConfig
    meta: dict[str, Any]
    arrays: dict[str, np.ndarray]
    rng: np.random.Generator

    @property
    def step(self) -> int:
        return int(self.meta["step"])


def load_checkpoint(path: str | Path, registry: ModelRegistry | None = None) -> LoadedCheckpoint:
    source = Path(path)
    if not source.is_file():
        raise InputError(f"checkpoint not found: {source}")
    try:
        with np.load(source, allow_pickle=False) as data:
            arrays = {key: np.array(data[key]) for key in data.files}
        meta = json.loads(arrays.pop("__meta__").tobytes().decode("utf-8"))
    except (OSError, ValueError, KeyError) as exc:
        raise InputError(f"unreadable checkpoint {source}: {exc}") from exc
    config = parse_config_text(meta["config"])
    bbox = BoundingBox.from_dict(meta["bbox"])
    rng = np.random.default_rng(config.seed)
    model = build_model(config, bbox, rng, registry)
    model.set_grid_extents(tuple(meta["model"]["grid_extents"]))
    for name, params in model.parameter_groups().items():
        for i, p in enumerate(params):
            stored = arrays[f"param/{name}/{i}"]
            if stored.shape != p.shape:
                raise InputError(f"checkpoint tensor param/{name}/{i} has shape {stored.shape}, expected {p.shape}")
            p.data[...] = stored
    particles = getattr(model, "particles", None)
    if particles is not None and "alive" in arrays:
        particles.alive[...] = arrays["alive"].astype(bool)
    rng.bit_generator.state = meta["rng_state"]
    return LoadedCheckpoint(model=model, config=config, meta=meta, arrays=arrays, rng=rng)


def _now() -> str:
    return datetime.now(UTC).isoformat(timespec="seconds")


def _append_rows(path: Path, columns: tuple[str, ...], rows: list[list[Any]]) -> None:
    fresh = not path.exists()
    with open(path, "a", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        if fresh:
            writer.writerow(columns)
        writer.writerows(rows)


def run(
    config: TrainConfig,
    dataset: Dataset,
    out_dir: str | Path | None = None,
    *,
    trainer: Trainer | None = None,
    command: str = "train",
) -> TrainResult:
    """Train to ``config.steps`` and write the run directory when ``out_dir`` is given."""
    tr = trainer if trainer is not None else Trainer(config, dataset)
    result = TrainResult()
    run_dir = Path(out_dir) if out_dir is not None else None
    started = _now()
    if run_dir is not None:
        (run_dir / "checkpoints").mkdir(parents=True, exist_ok=True)
        (run_dir / "config.txt").write_text(config_to_text(tr.config), encoding="utf-8")
        result.run_dir = run_dir
    cfg = tr.config
    log.info("[train] model %s, %d steps from step %d, grid %s", cfg.model, cfg.steps, tr.step,
             tr.model.grid_spec.extents)

    while tr.step < cfg.steps:
        tr.maybe_grow_grid()
        record = tr.train_step()
        result.history.append(record)
        if cfg.log_every_steps and (record.step % cfg.log_every_steps == 0 or tr.step == cfg.steps):
            log.info("[train] step %d total %.6f photo %.6f alive %d", record.step, record.total, record.photo,
                     record.alive_particles)
        if tr.step % cfg.removal_every_steps == 0:
            event = tr.lifecycle_event()
            if event is not None:
                result.lifecycle.append(event)
        if run_dir is not None:
            _append_rows(run_dir / "loss.csv", LossRecord.CSV_COLUMNS, [record.as_row()])
            if result.lifecycle and result.lifecycle[-1].step == tr.step:
                _append_rows(run_dir / "lifecycle.csv", LifecycleEvent.CSV_COLUMNS, [result.lifecycle[-1].as_row()])
            if cfg.checkpoint_every_steps and tr.step % cfg.checkpoint_every_steps == 0 and tr.step < cfg.steps:
                tr.save_checkpoint(run_dir / "checkpoints" / f"step_{tr.step:06d}.npz")
            if cfg.validation_every_steps and tr.step % cfg.validation_every_steps == 0:
                write_validation_render(tr, run_dir / "validation" / f"step_{tr.step:06d}.png")

    if run_dir is not None:
        if not (run_dir / "loss.csv").exists():
            _append_rows(run_dir / "loss.csv", LossRecord.CSV_COLUMNS, [])
        result.checkpoint = tr.save_checkpoint(run_dir / "checkpoints" / "final.npz")
        manifest = RunManifest(
            command=command,
            config=cfg.to_dict(),
            seed=cfg.seed,
            started_at=started,
            finished_at=_now(),
            artifacts={
                "config": "config.txt",
                "loss": "loss.csv",
                "lifecycle": "lifecycle.csv",
                "checkpoint": "checkpoints/final.npz",
            },
            software_version=SOFTWARE_VERSION,
            metadata={"dataset": str(dataset.root or ""), "final_step": tr.step, "model": tr.model.meta()},
        )
        (run_dir / "manifest.json").write_text(json.dumps(manifest.to_dict(), indent=2, sort_keys=True) + "\n",
                                               encoding="utf-8")
    return result


def write_validation_render(trainer: Trainer, path: Path) -> Path:
    ds = trainer.dataset
    index = ds.test[0] if ds.test else ds.train[0]
    frame = ds.frames[index]
    image = render_view(trainer.model, frame.pose, frame.time, ds.bbox, samples=trainer.config.samples_per_ray,
                        background=trainer.background)
    path.parent.mkdir(parents=True, exist_ok=True)
    write_png(path, image)
    return path
