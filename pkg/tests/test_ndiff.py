import unittest

import numpy as np

from hybridfield import ndiff as nd
from hybridfield.errors import GraphStateError, NonFiniteError, ShapeError
from hybridfield.gradcheck import gradient_check


def _grad(build, *params):
    graph = nd.Graph()
    out = graph.forward(build)
    grads = graph.backward(out)
    return out, [grads[p] for p in params]


class ForwardPrimitiveTests(unittest.TestCase):
    def test_relu_clamps_negatives(self):
        out = nd.relu(nd.Tensor([-1.0, 0.0, 2.0]))
        np.testing.assert_array_equal(out.data, [0.0, 0.0, 2.0])

    def test_identity_matmul(self):
        x = nd.Tensor([[3.5, -2.0]])
        out = nd.matmul(nd.Tensor([[1.0]]), x)
        np.testing.assert_array_equal(out.data, x.data)

    def test_exp_log_inverse(self):
        out = nd.log(nd.exp(nd.Tensor([0.5])))
        self.assertAlmostEqual(float(out.data[0]), 0.5, delta=1e-6)

    def test_matmul_shape_mismatch_names_primitive(self):
        with self.assertRaises(ShapeError) as ctx:
            nd.matmul(nd.Tensor(np.ones((2, 3))), nd.Tensor(np.ones((2, 3))))
        self.assertEqual(ctx.exception.primitive, "matmul")

    def test_broadcast_mismatch_is_rejected(self):
        with self.assertRaises(ShapeError):
            nd.add(nd.Tensor(np.ones(3)), nd.Tensor(np.ones(4)))

    def test_non_finite_flagged_with_node_index(self):
        x = nd.parameter([1.0, 0.0])
        graph = nd.Graph()
        with self.assertRaises(NonFiniteError) as ctx:
            with graph.recording():
                y = nd.mul(x, 2.0)
                nd.log(nd.sub(y, 2.0))
        self.assertEqual(ctx.exception.primitive, "log")
        self.assertEqual(ctx.exception.node_index, 2)

    def test_eager_mode_records_nothing(self):
        x = nd.parameter([1.0, 2.0])
        y = nd.square(x)
        self.assertFalse(y.requires_grad)
        self.assertIsNone(nd.active_graph())

    def test_scatter_weighted_sums_in_particle_order(self):
        values = nd.Tensor([[1.0], [2.0], [4.0]])
        weights = nd.Tensor([[0.5, 0.5], [1.0, 0.0], [0.25, 0.75]])
        index = np.array([[0, 1], [1, 2], [0, 2]])
        out = nd.scatter_weighted(values, weights, index, rows=3)
        np.testing.assert_allclose(out.data[:, 0], [0.5 + 1.0, 0.5 + 2.0, 0.0 + 3.0])

    def test_exclusive_cumsum(self):
        out = nd.cumsum(nd.Tensor([[1.0, 2.0, 3.0]]), axis=-1, exclusive=True)
        np.testing.assert_array_equal(out.data, [[0.0, 1.0, 3.0]])


class BackwardTests(unittest.TestCase):
    def test_square_gradient(self):
        x = nd.parameter([3.0])
        _, (g,) = _grad(lambda: nd.square(x), x)
        self.assertAlmostEqual(float(g[0]), 6.0)

    def test_sum_sin_gradient(self):
        x = nd.parameter([0.0, np.pi / 2])
        _, (g,) = _grad(lambda: nd.sum(nd.sin(x)), x)
        np.testing.assert_allclose(g, [1.0, 0.0], atol=1e-6)

    def test_fan_out_accumulates(self):
        x = nd.parameter([2.0])
        _, (g,) = _grad(lambda: nd.add(nd.mul(x, x), nd.mul(x, 3.0)), x)
        self.assertAlmostEqual(float(g[0]), 7.0)

    def test_unused_leaf_gets_zero_gradient(self):
        x = nd.parameter([1.0, 2.0])
        y = nd.parameter([5.0])
        _, (gx, gy) = _grad(lambda: nd.sum(nd.add(nd.square(x), nd.mul(y, 0.0))), x, y)
        np.testing.assert_allclose(gx, [2.0, 4.0])
        np.testing.assert_allclose(gy, [0.0])

    def test_backward_before_forward_rejected(self):
        with self.assertRaises(GraphStateError):
            nd.Graph().backward(nd.Tensor([1.0]))

    def test_seed_shape_must_match(self):
        x = nd.parameter([1.0, 2.0])
        graph = nd.Graph()
        out = graph.forward(lambda: nd.square(x))
        with self.assertRaises(GraphStateError):
            graph.backward(out, seed=np.ones(3))

    def test_stop_gradient_blocks_flow(self):
        x = nd.parameter([2.0])
        _, (g,) = _grad(lambda: nd.mul(nd.stop_gradient(x), x), x)
        self.assertAlmostEqual(float(g[0]), 2.0)

    def test_primitives_match_finite_differences(self):
        rng = np.random.default_rng(3)
        a = nd.parameter(rng.uniform(0.5, 1.5, size=(3, 4)))
        b = nd.parameter(rng.normal(size=(4, 2)))
        c = nd.parameter(rng.normal(size=(3, 2)))

        def build():
            h = nd.relu(nd.matmul(nd.log(a), b)) + nd.sigmoid(c)
            h = nd.concat([h, nd.softplus(c)], axis=1)
            h = nd.cumsum(h, axis=1, exclusive=True)
            rows = nd.gather(h, np.array([0, 2, 2, 1]))
            return nd.sum(nd.square(nd.norm(rows, axis=-1))) + nd.mean(nd.cos(nd.slice_axis(h, 1, 3, axis=1)))

        for err in gradient_check(build, [a, b, c], step=1e-6):
            self.assertLess(err, 1e-6)

    def test_scatter_gradient_reaches_values_and_weights(self):
        rng = np.random.default_rng(5)
        values = nd.parameter(rng.normal(size=(5, 2)))
        weights = nd.parameter(rng.uniform(size=(5, 8)))
        index = rng.integers(0, 6, size=(5, 8))

        def build():
            grid = nd.scatter_weighted(values, weights, index, rows=6)
            return nd.sum(nd.square(grid))

        for err in gradient_check(build, [values, weights], step=1e-6):
            self.assertLess(err, 1e-6)


if __name__ == "__main__":
    unittest.main()
