import csv
import json
import math
import tempfile
import unittest
from pathlib import Path
from unittest import mock

import numpy as np

from hybridfield import losses
from hybridfield import ndiff as nd
from hybridfield.config import TrainConfig
from hybridfield.errors import DatasetError, InputError, TrainingAborted
from hybridfield.scene import Dataset, OrbitCamera, generate, preset
from hybridfield.trainer import Trainer, build_model, load_checkpoint, run


def _dataset(frames=10, size=16):
    spec = preset("fall")
    spec.frames = frames
    spec.camera = OrbitCamera(width=size, height=size)
    return generate(spec, seed=0)


def _config(**overrides):
    base = dict(
        steps=6, particles=40, feature_dim=3, hidden_width=8, freq_position=2, freq_time=2, freq_direction=1,
        freq_feature=1, batch_rays=32, samples_per_ray=8, precision="float64",
        grid_voxels=(512, 1000), grid_milestone_fractions=(0.5,), removal_every_steps=3,
        log_every_steps=0, checkpoint_every_steps=2, validation_every_steps=3,
    )
    base.update(overrides)
    return TrainConfig(**base)


def _params(model):
    return {f"{name}/{i}": p.data.copy() for name, group in model.parameter_groups().items()
            for i, p in enumerate(group)}


def _assert_same_params(test, a, b):
    test.assertEqual(set(a), set(b))
    for key in a:
        np.testing.assert_array_equal(a[key], b[key], err_msg=key)


class TrainerStepTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dataset = _dataset()

    def test_fixed_batch_loss_goes_down(self):
        tr = Trainer(_config(steps=100, lr_grid=0.01, lr_heads=0.01), self.dataset)
        batch = tr.make_batch()
        before = tr.batch_loss(batch)
        for _ in range(25):
            tr.train_step(batch)
        self.assertLess(tr.batch_loss(batch), before)

    def test_zero_learning_rates_freeze_parameters(self):
        cfg = _config(lr_features=0.0, lr_starts=0.0, lr_motion=0.0, lr_grid=0.0, lr_heads=0.0)
        tr = Trainer(cfg, self.dataset)
        initial = _params(tr.model)
        record = tr.train_step()
        tr.train_step()
        _assert_same_params(self, initial, _params(tr.model))
        self.assertEqual(record.step, 0)
        self.assertEqual(tr.step, 2)
        self.assertEqual(tr.optimizer.t, 2)

    def test_zero_rate_freezes_only_that_group(self):
        for group in ("features", "starts", "motion", "grid", "heads"):
            with self.subTest(group=group):
                tr = Trainer(_config(**{f"lr_{group}": 0.0}), self.dataset)
                initial = _params(tr.model)
                for _ in range(3):
                    tr.train_step()
                after = _params(tr.model)
                for key in initial:
                    if key.split("/")[0] == group:
                        np.testing.assert_array_equal(after[key], initial[key], err_msg=key)
                for other in {key.split("/")[0] for key in initial} - {group}:
                    moved = any(not np.array_equal(after[key], initial[key])
                                for key in initial if key.split("/")[0] == other)
                    self.assertTrue(moved, msg=f"{other} did not move with {group} frozen")

    def test_record_columns(self):
        tr = Trainer(_config(), self.dataset)
        record = tr.train_step()
        self.assertTrue(math.isfinite(record.total))
        self.assertEqual(record.alive_particles, 40)
        self.assertAlmostEqual(record.lr, 0.005)
        self.assertGreaterEqual(record.total, record.photo)

    def test_three_non_finite_steps_abort(self):
        tr = Trainer(_config(), self.dataset)
        bad = losses.LossTerms(photo=nd.Tensor(float("nan")))
        with mock.patch.object(tr, "loss_terms", return_value=bad):
            first = tr.train_step()
            tr.train_step()
            with self.assertLogs("hybridfield.trainer", level="WARNING"), self.assertRaises(TrainingAborted):
                tr.train_step()
        self.assertTrue(math.isnan(first.total))
        self.assertEqual(tr.step, 3)

    def test_good_step_resets_failure_count(self):
        tr = Trainer(_config(), self.dataset)
        bad = losses.LossTerms(photo=nd.Tensor(float("inf")))
        with mock.patch.object(tr, "loss_terms", return_value=bad):
            tr.train_step()
            tr.train_step()
        tr.train_step()
        self.assertEqual(tr.failures, 0)

    def test_grid_grows_at_milestone(self):
        tr = Trainer(_config(), self.dataset)
        self.assertFalse(tr.maybe_grow_grid())
        tr.step = 3
        self.assertTrue(tr.maybe_grow_grid())
        self.assertEqual(tr.model.grid_spec.extents, (10, 10, 10))
        grid = tr.model.parameter_groups()["grid"][0]
        self.assertEqual(tr.optimizer.state[id(grid)].m.shape, grid.shape)
        tr.train_step()

    def test_lifecycle_keeps_capacity(self):
        tr = Trainer(_config(), self.dataset)
        tr.train_step()
        event = tr.lifecycle_event()
        self.assertGreaterEqual(event.removed, max(event.removed_free_space, event.removed_immobile))
        self.assertLessEqual(event.removed, event.removed_free_space + event.removed_immobile)
        self.assertLessEqual(event.resampled, event.removed)
        self.assertEqual(event.alive, 40 - event.removed + event.resampled)
        self.assertEqual(tr.model.particles.capacity, 40)

    def test_static_model_has_no_lifecycle(self):
        tr = Trainer(_config(model="static"), self.dataset)
        tr.train_step()
        self.assertIsNone(tr.lifecycle_event())

    def test_deformation_baseline_trains(self):
        tr = Trainer(_config(model="deformation"), self.dataset)
        record = tr.train_step()
        self.assertTrue(math.isfinite(record.total))
        self.assertEqual(record.alive_particles, 0)

    def test_empty_train_split(self):
        ds = self.dataset
        empty = Dataset(ds.frames, [], ds.test, ds.bbox, ds.background, spec=ds.spec)
        with self.assertRaises(DatasetError):
            Trainer(_config(), empty)

    def test_unknown_model(self):
        with self.assertRaises(InputError):
            build_model(_config(model="nerf"), self.dataset.bbox, np.random.default_rng(0))


class CheckpointTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dataset = _dataset()

    def test_round_trip(self):
        tr = Trainer(_config(), self.dataset)
        tr.train_step()
        tr.train_step()
        tr.model.particles.alive[[1, 7]] = False
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            path = tr.save_checkpoint(Path(tmp) / "ck.npz")
            loaded = load_checkpoint(path)
        self.assertEqual(loaded.step, 2)
        self.assertEqual(loaded.config, tr.config)
        self.assertEqual(loaded.model.meta(), tr.model.meta())
        np.testing.assert_array_equal(loaded.model.particles.alive, tr.model.particles.alive)
        _assert_same_params(self, _params(tr.model), _params(loaded.model))
        self.assertEqual(loaded.rng.bit_generator.state, tr.rng.bit_generator.state)

    def test_missing_checkpoint(self):
        with self.assertRaises(InputError):
            load_checkpoint("/nonexistent/final.npz")

    def test_corrupt_checkpoint(self):
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            path = Path(tmp) / "bad.npz"
            path.write_bytes(b"not a zip archive")
            with self.assertRaises(InputError):
                load_checkpoint(path)

    def test_resume_matches_uninterrupted_run(self):
        cfg = _config()
        straight = Trainer(cfg, self.dataset)
        run(cfg, self.dataset, trainer=straight)

        first = Trainer(cfg, self.dataset)
        for _ in range(2):
            first.maybe_grow_grid()
            first.train_step()
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            path = first.save_checkpoint(Path(tmp) / "mid.npz")
            resumed = Trainer.from_checkpoint(path, self.dataset)
        self.assertEqual(resumed.step, 2)
        run(cfg, self.dataset, trainer=resumed)
        self.assertEqual(resumed.model.grid_spec.extents, straight.model.grid_spec.extents)
        _assert_same_params(self, _params(straight.model), _params(resumed.model))
        np.testing.assert_array_equal(straight.model.particles.alive, resumed.model.particles.alive)


class RunTests(unittest.TestCase):
    @classmethod
    def setUpClass(cls):
        cls.dataset = _dataset()

    def test_run_directory_layout(self):
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            out = Path(tmp) / "run"
            result = run(_config(), self.dataset, out)
            with open(out / "loss.csv", newline="", encoding="utf-8") as fh:
                loss_rows = list(csv.reader(fh))
            with open(out / "lifecycle.csv", newline="", encoding="utf-8") as fh:
                life_rows = list(csv.reader(fh))
            manifest = json.loads((out / "manifest.json").read_text(encoding="utf-8"))
            self.assertTrue((out / "config.txt").is_file())
            self.assertTrue((out / "checkpoints" / "step_000002.npz").is_file())
            self.assertTrue((out / "checkpoints" / "step_000004.npz").is_file())
            self.assertFalse((out / "checkpoints" / "step_000006.npz").exists())
            self.assertTrue((out / "validation" / "step_000003.png").is_file())
            self.assertEqual(result.checkpoint, out / "checkpoints" / "final.npz")
        self.assertEqual(loss_rows[0][:2], ["step", "L_photo"])
        self.assertEqual([int(r[0]) for r in loss_rows[1:]], list(range(6)))
        self.assertEqual([int(r[0]) for r in life_rows[1:]], [3, 6])
        self.assertEqual(manifest["command"], "train")
        self.assertEqual(manifest["metadata"]["final_step"], 6)

    def test_zero_steps_saves_initial_model(self):
        cfg = _config(steps=0)
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            result = run(cfg, self.dataset, Path(tmp))
            loaded = load_checkpoint(result.checkpoint)
            with open(Path(tmp) / "loss.csv", newline="", encoding="utf-8") as fh:
                rows = list(csv.reader(fh))
        fresh = build_model(cfg, self.dataset.bbox, np.random.default_rng(cfg.seed))
        _assert_same_params(self, _params(fresh), _params(loaded.model))
        self.assertEqual(len(rows), 1)

    def test_same_seed_same_weights(self):
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            a = load_checkpoint(run(_config(steps=3), self.dataset, Path(tmp) / "a").checkpoint)
            b = load_checkpoint(run(_config(steps=3), self.dataset, Path(tmp) / "b").checkpoint)
        _assert_same_params(self, _params(a.model), _params(b.model))


if __name__ == "__main__":
    unittest.main()
