import tempfile
import unittest
from pathlib import Path

import numpy as np

from hybridfield.config import (
    TrainConfig,
    apply_overrides,
    config_to_text,
    grid_schedule_for,
    load_config,
    parse_config_text,
)
from hybridfield.errors import ConfigError
from hybridfield.model_registry import ModelRegistry, default_registry
from hybridfield.selector import BLAS_THREAD_VARS, apply_thread_cap, select_dtype, select_thread_count


class ConfigParseTests(unittest.TestCase):
    def test_defaults(self):
        cfg = TrainConfig()
        self.assertEqual(cfg.particles, 20000)
        self.assertEqual(cfg.grid_voxels, (24**3, 36**3, 48**3))
        self.assertEqual(cfg.milestone_steps(), [1250, 2500])

    def test_grid_schedule(self):
        cfg = TrainConfig(steps=100)
        self.assertEqual(cfg.grid_voxels_at(0), 24**3)
        self.assertEqual(cfg.grid_voxels_at(25), 36**3)
        self.assertEqual(cfg.grid_voxels_at(99), 48**3)

    def test_parse_with_comments_and_case(self):
        cfg = parse_config_text("# toy run\nsteps = 200\nMODEL = Deformation  # baseline\ngrid_voxels = 512, 1000\n"
                                "grid_milestone_fractions = 0.5\n")
        self.assertEqual(cfg.steps, 200)
        self.assertEqual(cfg.model, "deformation")
        self.assertEqual(cfg.grid_voxels, (512, 1000))

    def test_unknown_key_reports_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text("steps = 10\n\nlearning_rate = 0.1\n")
        self.assertEqual(ctx.exception.line, 3)

    def test_bad_value_reports_line(self):
        with self.assertRaises(ConfigError) as ctx:
            parse_config_text("particles = many\n")
        self.assertEqual(ctx.exception.line, 1)

    def test_validation(self):
        with self.assertRaises(ConfigError):
            TrainConfig(samples_per_ray=1)
        with self.assertRaises(ConfigError):
            TrainConfig(grid_voxels=(1000, 512), grid_milestone_fractions=(0.5,))
        with self.assertRaises(ConfigError):
            TrainConfig(precision="float16")

    def test_text_echo_is_stable(self):
        cfg = TrainConfig(steps=321, lr_heads=1.5e-4, grid_voxels=(512,), grid_milestone_fractions=())
        text = config_to_text(cfg)
        self.assertEqual(parse_config_text(text), cfg)
        self.assertEqual(config_to_text(parse_config_text(text)), text)

    def test_load_and_override(self):
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            path = Path(tmp) / "run.cfg"
            path.write_text("steps = 50\nparticles = 10\n", encoding="utf-8")
            cfg = apply_overrides(load_config(path), [("steps", 7), ("particles", None)])
        self.assertEqual(cfg.steps, 7)
        self.assertEqual(cfg.particles, 10)

    def test_missing_file(self):
        with self.assertRaises(ConfigError):
            load_config("/nonexistent/hybridfield.cfg")

    def test_grid_flag(self):
        self.assertEqual(grid_schedule_for(48), (24**3, 36**3, 48**3))


class SelectorTests(unittest.TestCase):
    def test_dtype_names(self):
        self.assertEqual(select_dtype("F64"), np.float64)
        self.assertEqual(select_dtype("single"), np.float32)
        with self.assertRaises(ValueError):
            select_dtype("half")

    def test_thread_resolution_order(self):
        self.assertEqual(select_thread_count(flag=3, env={"HYBRIDFIELD_THREADS": "5"}, cpu_count=8), 3)
        self.assertEqual(select_thread_count(flag=None, env={"HYBRIDFIELD_THREADS": "5"}, cpu_count=8), 5)
        self.assertEqual(select_thread_count(flag=None, env={"HYBRIDFIELD_THREADS": "x"}, cpu_count=8), 8)

    def test_thread_cap_exports(self):
        env: dict[str, str] = {}
        apply_thread_cap(2, env)
        self.assertEqual({env[name] for name in BLAS_THREAD_VARS}, {"2"})


class RegistryTests(unittest.TestCase):
    def test_default_models(self):
        self.assertEqual(default_registry().ids(), ["deformation", "particles", "static"])

    def test_lookup_is_case_insensitive(self):
        self.assertIsNotNone(default_registry().get(" Particles "))
        self.assertIsNone(default_registry().get("nerf"))

    def test_empty_id_rejected(self):
        class Nameless:
            model_id = ""

        with self.assertRaises(ValueError):
            ModelRegistry().register(Nameless)  # type: ignore[arg-type]


if __name__ == "__main__":
    unittest.main()
