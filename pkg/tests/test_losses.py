import math
import unittest

import numpy as np

from hybridfield import losses
from hybridfield import ndiff as nd
from hybridfield.errors import NonFiniteError, ShapeError
from hybridfield.grids import GridSpec, motion_grid
from hybridfield.types import BoundingBox


class PhotometricTests(unittest.TestCase):
    def test_exact_match_is_zero(self):
        x = np.random.default_rng(0).uniform(size=(4, 3))
        self.assertEqual(float(losses.photometric(nd.Tensor(x), x).data), 0.0)

    def test_black_vs_white(self):
        self.assertAlmostEqual(float(losses.photometric(nd.Tensor(np.zeros((1, 3))), np.ones((1, 3))).data), 3.0)

    def test_random_batch_matches_direct_sum(self):
        rng = np.random.default_rng(1)
        a, b = rng.uniform(size=(32, 3)), rng.uniform(size=(32, 3))
        expected = sum(sum((a[i, c] - b[i, c]) ** 2 for c in range(3)) for i in range(32)) / 32
        self.assertAlmostEqual(float(losses.photometric(nd.Tensor(a), b).data), expected, delta=1e-7)

    def test_shape_mismatch(self):
        with self.assertRaises(ShapeError):
            losses.photometric(nd.Tensor(np.zeros((2, 3))), np.zeros((3, 3)))


class PerPointTests(unittest.TestCase):
    def test_colors_at_target(self):
        target = np.array([[0.2, 0.4, 0.6]])
        colors = nd.Tensor(np.tile(target, (1, 5, 1)).reshape(1, 5, 3))
        out = losses.per_point_rgb(colors, nd.Tensor(np.full((1, 5), 0.2)), target)
        self.assertEqual(float(out.data), 0.0)

    def test_single_unit_weight(self):
        d = 0.3
        target = np.array([[0.5, 0.5, 0.5]])
        colors = nd.Tensor(np.full((1, 1, 3), 0.5 + d))
        out = losses.per_point_rgb(colors, nd.Tensor(np.ones((1, 1))), target)
        self.assertAlmostEqual(float(out.data), 3 * d * d)

    def test_random_case_matches_loop(self):
        rng = np.random.default_rng(2)
        colors, weights, target = rng.uniform(size=(6, 9, 3)), rng.uniform(size=(6, 9)), rng.uniform(size=(6, 3))
        expected = 0.0
        for r in range(6):
            for k in range(9):
                expected += weights[r, k] * float(np.sum((colors[r, k] - target[r]) ** 2))
        expected /= 6
        out = losses.per_point_rgb(nd.Tensor(colors), nd.Tensor(weights), target)
        self.assertAlmostEqual(float(out.data), expected, delta=1e-7)

    def test_weights_receive_no_gradient(self):
        weights = nd.parameter(np.full((1, 2), 0.5))
        colors = nd.parameter(np.zeros((1, 2, 3)))
        graph = nd.Graph()
        out = graph.forward(lambda: losses.per_point_rgb(colors, weights, np.ones((1, 3))))
        grads = graph.backward(out)
        self.assertNotIn(weights, grads)
        self.assertTrue(np.all(grads[colors] < 0))


class EntropyTests(unittest.TestCase):
    def test_half_transmittance(self):
        self.assertAlmostEqual(float(losses.bg_entropy(nd.Tensor([0.5])).data), math.log(2.0), places=6)

    def test_clamped_at_extremes(self):
        out = float(losses.bg_entropy(nd.Tensor([0.0, 1.0])).data)
        self.assertTrue(math.isfinite(out))
        self.assertLess(out, 1e-4)

    def test_mixed_batch_matches_formula(self):
        p = np.array([0.1, 0.3, 0.9, 0.65])
        expected = -np.mean(p * np.log(p) + (1 - p) * np.log(1 - p))
        self.assertAlmostEqual(float(losses.bg_entropy(nd.Tensor(p)).data), float(expected), delta=1e-7)


class TotalVariationTests(unittest.TestCase):
    def test_constant_grid(self):
        self.assertEqual(float(losses.tv(nd.Tensor(np.full((27, 2), 3.0)), (3, 3, 3)).data), 0.0)

    def test_two_node_grid(self):
        f1, f2 = np.array([1.0, 2.0]), np.array([4.0, 6.0])
        out = losses.tv(nd.Tensor(np.stack([f1, f2])), (2, 1, 1))
        self.assertAlmostEqual(float(out.data), float(np.linalg.norm(f1 - f2)) / 2)

    def test_random_grid_matches_triple_loop(self):
        g = np.random.default_rng(3).normal(size=(4, 4, 4, 2))
        expected = 0.0
        for i in range(4):
            for j in range(4):
                for k in range(4):
                    if i + 1 < 4:
                        expected += np.linalg.norm(g[i + 1, j, k] - g[i, j, k])
                    if j + 1 < 4:
                        expected += np.linalg.norm(g[i, j + 1, k] - g[i, j, k])
                    if k + 1 < 4:
                        expected += np.linalg.norm(g[i, j, k + 1] - g[i, j, k])
        expected /= 64
        out = losses.tv(nd.Tensor(g.reshape(64, 2)), (4, 4, 4))
        self.assertAlmostEqual(float(out.data), expected, delta=1e-6)

    def test_adding_constant_vector_leaves_tv_unchanged(self):
        g = np.random.default_rng(5).normal(size=(60, 3))
        shifted = g + np.array([2.5, -1.0, 0.75])
        base = float(losses.tv(nd.Tensor(g), (3, 4, 5)).data)
        self.assertAlmostEqual(float(losses.tv(nd.Tensor(shifted), (3, 4, 5)).data), base, delta=1e-9)

    def test_zero_offsets_give_zero_motion_tv(self):
        spec = GridSpec((5, 5, 5), BoundingBox(-np.ones(3), np.ones(3)))
        pos = np.random.default_rng(6).uniform(-1.0, 1.0, size=(80, 3))
        mg = motion_grid(spec, nd.Tensor(pos), nd.Tensor(np.zeros((80, 3))))
        self.assertGreater(int(mg.valid.sum()), 0)
        self.assertEqual(float(losses.tv(mg.grid, spec.extents, mg.valid).data), 0.0)

    def test_invalid_nodes_excluded(self):
        g = np.zeros((8, 1))
        g[7] = 5.0
        valid = np.ones(8, dtype=bool)
        valid[7] = False
        self.assertEqual(float(losses.tv(nd.Tensor(g), (2, 2, 2), valid).data), 0.0)


class TotalLossTests(unittest.TestCase):
    def test_aux_weights_zero(self):
        terms = losses.LossTerms(photo=nd.Tensor(0.7), ptrgb=nd.Tensor(1.0), bg=nd.Tensor(1.0))
        out = losses.total(terms, losses.LossWeights(0.0, 0.0, 0.0, 0.0))
        self.assertAlmostEqual(float(out.data), 0.7)

    def test_unit_terms_default_weights(self):
        one = nd.Tensor(1.0)
        terms = losses.LossTerms(photo=one, ptrgb=one, bg=one, tvf=one, tvm=one)
        self.assertAlmostEqual(float(losses.total(terms, losses.LossWeights()).data), 1.031)

    def test_non_finite_term_names_itself(self):
        terms = losses.LossTerms(photo=nd.Tensor(1.0), tvf=nd.Tensor(float("nan")))
        with self.assertRaises(NonFiniteError) as ctx:
            losses.total(terms, losses.LossWeights())
        self.assertEqual(ctx.exception.primitive, "loss:tvf")

    def test_negative_weight_rejected(self):
        with self.assertRaises(ValueError):
            losses.LossWeights(ptrgb=-1.0)


if __name__ == "__main__":
    unittest.main()
