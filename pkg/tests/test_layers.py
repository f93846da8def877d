import unittest

import numpy as np

from hybridfield import ndiff as nd
from hybridfield.layers import MLP, EncodingSpec, MotionNet, RadianceNets, encode, encoded_size


class EncodingTests(unittest.TestCase):
    def test_raw_input_comes_first(self):
        x = nd.Tensor(np.array([[0.25, -0.5]]))
        out = encode(x, 2)
        self.assertEqual(out.shape, (1, encoded_size(2, 2)))
        np.testing.assert_allclose(out.data[0, :2], [0.25, -0.5])

    def test_sin_cos_pairs_per_component(self):
        x = nd.Tensor(np.array([[0.25]]))
        out = encode(x, 2).data[0]
        expected = [0.25, np.sin(np.pi * 0.25), np.cos(np.pi * 0.25), np.sin(2 * np.pi * 0.25), np.cos(2 * np.pi * 0.25)]
        np.testing.assert_allclose(out, expected, atol=1e-12)

    def test_zero_frequencies_is_identity(self):
        x = nd.Tensor(np.ones((3, 3)))
        self.assertIs(encode(x, 0), x)

    def test_negative_frequencies_rejected(self):
        with self.assertRaises(ValueError):
            encode(nd.Tensor(np.ones((1, 1))), -1)


class NetworkTests(unittest.TestCase):
    def setUp(self):
        self.rng = np.random.default_rng(0)
        self.enc = EncodingSpec(position=2, time=2, direction=1, feature=1)

    def test_mlp_zero_last_outputs_zero(self):
        mlp = MLP([4, 8, 3], rng=self.rng, dtype=np.float64, zero_last=True)
        out = mlp(nd.Tensor(self.rng.normal(size=(5, 4))))
        np.testing.assert_array_equal(out.data, np.zeros((5, 3)))
        self.assertEqual(len(mlp.parameters()), 4)

    def test_mlp_needs_two_sizes(self):
        with self.assertRaises(ValueError):
            MLP([4], rng=self.rng, dtype=np.float64)

    def test_motion_net_starts_with_zero_offsets(self):
        net = MotionNet(width=8, enc=self.enc, rng=self.rng, dtype=np.float32)
        starts = nd.Tensor(self.rng.uniform(-1, 1, size=(7, 3)).astype(np.float32))
        out = net.offsets(starts, 0.5)
        self.assertEqual(out.shape, (7, 3))
        self.assertEqual(out.dtype, np.float32)
        np.testing.assert_array_equal(out.data, 0.0)

    def test_radiance_heads_initial_output(self):
        nets = RadianceNets(3, 8, self.enc, self.rng, np.float64)
        feats = nd.Tensor(self.rng.normal(size=(4, 3)))
        pts = nd.Tensor(self.rng.uniform(-1, 1, size=(4, 3)))
        dirs = nd.Tensor(np.tile([0.0, 0.0, 1.0], (4, 1)))
        out = nets(feats, pts, dirs)
        np.testing.assert_allclose(out.sigma.data, np.log1p(np.exp(-10.0)))
        np.testing.assert_allclose(out.color.data, 0.5)
        np.testing.assert_allclose(nets.density(feats, pts).data, out.sigma.data)

    def test_density_is_non_negative(self):
        nets = RadianceNets(3, 8, self.enc, self.rng, np.float64, zero_heads=False)
        feats = nd.Tensor(self.rng.normal(scale=5.0, size=(50, 3)))
        pts = nd.Tensor(self.rng.uniform(-1, 1, size=(50, 3)))
        self.assertTrue(np.all(nets.density(feats, pts).data >= 0.0))


if __name__ == "__main__":
    unittest.main()
