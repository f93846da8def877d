import unittest

import numpy as np

from hybridfield import losses
from hybridfield import ndiff as nd
from hybridfield.config import TrainConfig
from hybridfield.errors import NonDeterministicLossError
from hybridfield.gradcheck import finite_difference_gradient, gradient_check, relative_error
from hybridfield.models import HybridFieldModel
from hybridfield.radiance import render_rays, sample_rays
from hybridfield.types import BoundingBox


def micro_config(**overrides):
    values = dict(
        precision="float64",
        particles=50,
        feature_dim=4,
        hidden_width=16,
        freq_position=1,
        freq_time=1,
        freq_direction=1,
        freq_feature=1,
        density_shift=0.0,
        samples_per_ray=8,
        batch_rays=4,
        grid_voxels=(512,),
        grid_milestone_fractions=(),
    )
    values.update(overrides)
    return TrainConfig(**values)


class FiniteDifferenceTests(unittest.TestCase):
    def test_square_at_three(self):
        x = nd.parameter([3.0])
        (g,) = finite_difference_gradient(lambda: nd.square(x).data, [x], 1e-4)
        self.assertAlmostEqual(float(g[0]), 6.0, delta=1e-6)

    def test_non_deterministic_loss_rejected(self):
        x = nd.parameter([1.0])
        rng = np.random.default_rng()
        with self.assertRaises(NonDeterministicLossError):
            finite_difference_gradient(lambda: float(x.data[0] + rng.uniform()), [x], 1e-4)

    def test_step_must_be_positive(self):
        x = nd.parameter([1.0])
        with self.assertRaises(ValueError):
            finite_difference_gradient(lambda: x.data, [x], 0.0)

    def test_indices_limit_checked_entries(self):
        x = nd.parameter([1.0, 2.0, 3.0])
        (g,) = finite_difference_gradient(lambda: nd.sum(nd.square(x)).data, [x], 1e-4, indices={0: [2]})
        np.testing.assert_allclose(g, [0.0, 0.0, 6.0], atol=1e-6)

    def test_relative_error_of_equal_arrays_is_zero(self):
        self.assertEqual(relative_error(np.ones(3), np.ones(3)), 0.0)


class RenderLossGradientTests(unittest.TestCase):
    """Backward through the full render loss agrees with central differences in 64-bit."""

    def setUp(self):
        rng = np.random.default_rng(11)
        self.config = micro_config()
        bbox = BoundingBox(-np.ones(3), np.ones(3))
        self.model = HybridFieldModel(self.config, bbox, rng)
        self.assertEqual(self.model.grid_spec.extents, (8, 8, 8))
        groups = self.model.parameter_groups()
        for name, params in groups.items():
            for p in params:
                scale = 0.05 if name == "motion" else 0.5
                p.data[...] = rng.normal(scale=scale, size=p.shape)
        self.model.particles.starts.data[...] = rng.uniform(-0.6, 0.6, size=self.model.particles.starts.shape)
        origins = np.array([[0.0, 0.0, -3.0], [0.3, -0.2, -3.0], [-0.4, 0.1, -3.0], [0.15, 0.35, -3.0]])
        dirs = np.array([[0.0, 0.0, 1.0], [0.05, 0.02, 1.0], [0.0, -0.03, 1.0], [-0.04, 0.01, 1.0]])
        dirs = dirs / np.linalg.norm(dirs, axis=1, keepdims=True)
        self.samples = sample_rays(origins, dirs, bbox, self.config.samples_per_ray, np.random.default_rng(2))
        self.target = rng.uniform(size=(4, 3))
        # per-point RGB detaches its weights, so finite differences cannot see the same function
        self.weights = losses.LossWeights(ptrgb=0.0, bg=0.01, tvf=0.05, tvm=0.05)
        self.background = np.ones(3)

    def build(self):
        snapshot = self.model.prepare(0.4)
        out = render_rays(self.samples, snapshot.query, self.background, dtype=np.float64)
        tvf, tvm = self.model.regularizers(snapshot)
        terms = losses.LossTerms(
            photo=losses.photometric(out.color, self.target),
            bg=losses.bg_entropy(out.t_far),
            tvf=tvf,
            tvm=tvm,
        )
        return losses.total(terms, self.weights)

    def test_each_parameter_group_matches(self):
        for name, params in self.model.parameter_groups().items():
            indices = {i: range(0, p.size, max(1, p.size // 12)) for i, p in enumerate(params)}
            errors = gradient_check(self.build, params, step=1e-5, indices=indices)
            with self.subTest(group=name):
                self.assertLessEqual(max(errors), 1e-4)

    def test_mask_mixes_static_and_dynamic_nodes(self):
        mask = self.model.prepare(0.4).scatter.mask
        self.assertGreater(int(mask.sum()), 0)
        self.assertLess(int(mask.sum()), mask.size)

    def test_loss_is_bitwise_reproducible(self):
        first = self.build().data.tobytes()
        second = self.build().data.tobytes()
        self.assertEqual(first, second)


if __name__ == "__main__":
    unittest.main()
