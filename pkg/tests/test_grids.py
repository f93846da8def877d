import tempfile
import unittest
from pathlib import Path

import numpy as np

from hybridfield import ndiff as nd
from hybridfield.errors import InputError, NonFiniteError, ShapeError
from hybridfield.grids import (
    GridSpec,
    empty_scatter,
    interp,
    load_grid,
    motion_grid,
    node_positions,
    resize,
    save_grid,
    scatter,
    shape_from_bbox,
    superpose,
    trilinear_stencil,
)
from hybridfield.types import BoundingBox

UNIT = BoundingBox(np.zeros(3), np.ones(3))


def _naive_scatter(spec, positions, features):
    out = np.zeros((spec.node_count, features.shape[1]))
    cell = spec.cell
    for p, v in zip(positions, features):
        u = (p - spec.bbox.minimum) / cell
        base = np.clip(np.floor(u).astype(int), 0, np.asarray(spec.extents) - 2)
        f = u - base
        for di in (0, 1):
            for dj in (0, 1):
                for dk in (0, 1):
                    w = (f[0] if di else 1 - f[0]) * (f[1] if dj else 1 - f[1]) * (f[2] if dk else 1 - f[2])
                    i, j, k = base + [di, dj, dk]
                    out[(i * spec.extents[1] + j) * spec.extents[2] + k] += w * v
    return out


class ShapeTests(unittest.TestCase):
    def test_unit_cube(self):
        self.assertEqual(shape_from_bbox(UNIT, 8**3), (8, 8, 8))

    def test_elongated_box(self):
        box = BoundingBox(np.zeros(3), np.array([2.0, 1.0, 1.0]))
        self.assertEqual(shape_from_bbox(box, 16), (4, 2, 2))

    def test_never_undershoots(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            box = BoundingBox(np.zeros(3), rng.uniform(0.2, 3.0, size=3))
            target = int(rng.integers(8, 5000))
            self.assertGreaterEqual(int(np.prod(shape_from_bbox(box, target))), target)

    def test_too_few_voxels(self):
        with self.assertRaises(InputError):
            shape_from_bbox(UNIT, 7)


class StencilTests(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec((3, 3, 3), UNIT)

    def test_corner_order_runs_dk_fastest(self):
        st = trilinear_stencil(self.spec, nd.Tensor([[0.1, 0.1, 0.1]]))
        expected = [self.spec.flat_index(np.array(i), np.array(j), np.array(k))
                    for i in (0, 1) for j in (0, 1) for k in (0, 1)]
        np.testing.assert_array_equal(st.index[0], expected)
        self.assertAlmostEqual(float(st.weights.data.sum()), 1.0)

    def test_weights_partition_unity(self):
        rng = np.random.default_rng(11)
        spec = GridSpec((7, 4, 9), BoundingBox(np.array([-1.0, 0.0, -0.5]), np.array([2.0, 1.5, 0.5])))
        pts = rng.uniform(spec.bbox.minimum - 0.2, spec.bbox.maximum + 0.2, size=(10_000, 3))
        st = trilinear_stencil(spec, nd.Tensor(pts))
        np.testing.assert_allclose(st.weights.data.sum(axis=1), 1.0, atol=1e-6)
        self.assertTrue(np.all(st.weights.data >= -1e-12))
        self.assertTrue(np.all((st.index >= 0) & (st.index < spec.node_count)))

    def test_nan_position_rejected(self):
        with self.assertRaises(NonFiniteError):
            trilinear_stencil(self.spec, nd.Tensor([[np.nan, 0.0, 0.0]]))

    def test_outside_positions_are_clamped(self):
        st = trilinear_stencil(self.spec, nd.Tensor([[1.5, 0.5, 0.5], [0.5, 0.5, 0.5]]))
        self.assertEqual(st.clamped, 1)

    def test_bad_shape(self):
        with self.assertRaises(ShapeError):
            trilinear_stencil(self.spec, nd.Tensor(np.zeros((2, 2))))


class ScatterTests(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec((3, 3, 3), UNIT)

    def test_particle_on_node(self):
        result = scatter(self.spec, nd.Tensor([[0.5, 0.5, 0.5]]), nd.Tensor([[2.0, -1.0]]))
        center = self.spec.flat_index(np.array(1), np.array(1), np.array(1))
        np.testing.assert_allclose(result.grid.data[center], [2.0, -1.0])
        others = np.delete(result.grid.data, center, axis=0)
        np.testing.assert_array_equal(others, 0.0)
        self.assertEqual(int(result.mask.sum()), 1)
        self.assertTrue(result.mask[center])

    def test_particle_at_cell_center(self):
        result = scatter(self.spec, nd.Tensor([[0.25, 0.25, 0.25]]), nd.Tensor([[8.0]]))
        touched = result.grid.data[result.mask, 0]
        self.assertEqual(touched.size, 8)
        np.testing.assert_allclose(touched, 1.0)

    def test_matches_naive_loop(self):
        rng = np.random.default_rng(1)
        spec = GridSpec((6, 5, 4), BoundingBox(-np.ones(3), np.array([1.0, 0.5, 2.0])))
        pos = rng.uniform(spec.bbox.minimum, spec.bbox.maximum, size=(1000, 3))
        feats = rng.normal(size=(1000, 3))
        result = scatter(spec, nd.Tensor(pos), nd.Tensor(feats))
        np.testing.assert_allclose(result.grid.data, _naive_scatter(spec, pos, feats), atol=1e-6)

    def test_scatter_is_adjoint_of_interp(self):
        rng = np.random.default_rng(12)
        for trial in range(100):
            extents = tuple(int(n) for n in rng.integers(2, 7, size=3))
            lo = rng.uniform(-1.0, 0.0, size=3)
            spec = GridSpec(extents, BoundingBox(lo, lo + rng.uniform(0.5, 2.0, size=3)))
            count = int(rng.integers(1, 40))
            pos = rng.uniform(spec.bbox.minimum, spec.bbox.maximum, size=(count, 3))
            g = rng.normal(size=(spec.node_count, 1))
            splat = scatter(spec, nd.Tensor(pos), nd.Tensor(np.ones((count, 1)))).grid.data
            queried = interp(nd.Tensor(g), spec, nd.Tensor(pos)).data
            with self.subTest(trial=trial):
                self.assertAlmostEqual(float(np.sum(g * splat)), float(np.sum(queried)), delta=1e-5)

    def test_feature_count_mismatch(self):
        with self.assertRaises(ShapeError):
            scatter(self.spec, nd.Tensor(np.zeros((2, 3))), nd.Tensor(np.zeros((3, 1))))


class SuperposeTests(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec((3, 3, 3), UNIT)
        self.static = nd.Tensor(np.random.default_rng(2).normal(size=(27, 2)))

    def test_no_particles_gives_static_grid(self):
        out = superpose(self.static, empty_scatter(self.spec, 2, np.float64))
        np.testing.assert_array_equal(out.data, self.static.data)

    def test_mixed_mask_selects_source_per_node(self):
        rng = np.random.default_rng(3)
        pos = rng.uniform(0.0, 0.5, size=(4, 3))
        result = scatter(self.spec, nd.Tensor(pos), nd.Tensor(rng.normal(size=(4, 2))))
        out = superpose(self.static, result)
        sums = np.zeros(27)
        st = trilinear_stencil(self.spec, nd.Tensor(pos))
        np.add.at(sums, st.index.reshape(-1), st.weights.data.reshape(-1))
        for n in range(27):
            source = result.grid.data[n] if sums[n] > 0 else self.static.data[n]
            np.testing.assert_allclose(out.data[n], source)

    def test_full_mask_gives_dynamic_grid(self):
        pos = node_positions(self.spec)
        result = scatter(self.spec, nd.Tensor(pos), nd.Tensor(np.ones((27, 2))))
        self.assertTrue(result.mask.all())
        np.testing.assert_allclose(superpose(self.static, result).data, result.grid.data)

    def test_components(self):
        result = scatter(self.spec, nd.Tensor([[0.5, 0.5, 0.5]]), nd.Tensor([[1.0, 1.0]]))
        self.assertIs(superpose(self.static, result, component="static"), self.static)
        dynamic = superpose(self.static, result, component="dynamic").data
        self.assertEqual(int(np.count_nonzero(dynamic.any(axis=1))), 1)
        with self.assertRaises(InputError):
            superpose(self.static, result, component="both")


class InterpTests(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec((4, 5, 3), BoundingBox(-np.ones(3), np.array([2.0, 1.0, 0.5])))

    def test_query_on_node(self):
        values = nd.Tensor(np.arange(self.spec.node_count, dtype=np.float64)[:, None])
        nodes = node_positions(self.spec)
        out = interp(values, self.spec, nd.Tensor(nodes[[0, 7, 33]]))
        np.testing.assert_allclose(out.data[:, 0], [0.0, 7.0, 33.0], atol=1e-12)

    def test_linear_field_reproduced(self):
        a = np.array([0.7, -1.3, 2.1])
        values = nd.Tensor((node_positions(self.spec) @ a + 0.4)[:, None])
        pts = np.random.default_rng(4).uniform(self.spec.bbox.minimum, self.spec.bbox.maximum, size=(200, 3))
        out = interp(values, self.spec, nd.Tensor(pts))
        np.testing.assert_allclose(out.data[:, 0], pts @ a + 0.4, atol=1e-6)

    def test_wrong_node_count(self):
        with self.assertRaises(ShapeError):
            interp(nd.Tensor(np.zeros((5, 1))), self.spec, nd.Tensor(np.zeros((1, 3))))


class MotionGridTests(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec((3, 3, 3), UNIT)

    def test_shared_offset_on_touched_nodes(self):
        rng = np.random.default_rng(5)
        pos = rng.uniform(0, 1, size=(10, 3))
        u = np.array([[0.1, -0.2, 0.3]])
        mg = motion_grid(self.spec, nd.Tensor(pos), nd.Tensor(np.repeat(u, 10, axis=0)))
        np.testing.assert_allclose(mg.grid.data[mg.valid], np.repeat(u, int(mg.valid.sum()), axis=0), atol=1e-12)
        np.testing.assert_array_equal(mg.grid.data[~mg.valid], 0.0)

    def test_two_particle_weighted_mean(self):
        pos = np.array([[0.5, 0.5, 0.5], [0.625, 0.5, 0.5]])
        offsets = np.array([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])
        mg = motion_grid(self.spec, nd.Tensor(pos), nd.Tensor(offsets))
        center = self.spec.flat_index(np.array(1), np.array(1), np.array(1))
        # second particle sits a quarter cell away: weight 0.75 on the shared node
        np.testing.assert_allclose(mg.grid.data[center], [1.0 / 1.75, 0.75 / 1.75, 0.0], atol=1e-6)


class ResizeTests(unittest.TestCase):
    def setUp(self):
        self.spec = GridSpec((3, 3, 3), UNIT)

    def test_identity_is_bit_identical(self):
        values = np.random.default_rng(6).normal(size=(27, 2))
        _, out = resize(self.spec, values, (3, 3, 3))
        self.assertEqual(out.tobytes(), values.tobytes())

    def test_constant_stays_constant(self):
        spec, out = resize(self.spec, np.full((27, 2), 0.7), (5, 6, 7))
        self.assertEqual(out.shape, (spec.node_count, 2))
        np.testing.assert_allclose(out, 0.7)

    def test_linear_ramp_doubled(self):
        values = node_positions(self.spec)[:, :1] * 2.0 - 0.5
        spec, out = resize(self.spec, values, (5, 5, 5))
        np.testing.assert_allclose(out, node_positions(spec)[:, :1] * 2.0 - 0.5, atol=1e-6)

    def test_shrinking_rejected(self):
        with self.assertRaises(InputError):
            resize(GridSpec((4, 4, 4), UNIT), np.zeros((64, 1)), (3, 3, 3))


class GridFileTests(unittest.TestCase):
    def test_save_and_load(self):
        spec = GridSpec((3, 4, 2), BoundingBox(-np.ones(3), np.array([1.0, 2.0, 0.5])))
        values = np.random.default_rng(7).normal(size=(spec.node_count, 3)).astype(np.float32)
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            path = Path(tmp) / "static.grid"
            save_grid(path, spec, values)
            self.assertEqual(path.stat().st_size, 44 + values.nbytes)
            loaded_spec, loaded = load_grid(path)
        self.assertEqual(loaded_spec.extents, spec.extents)
        np.testing.assert_array_equal(loaded, values)

    def test_rejects_foreign_file(self):
        with tempfile.TemporaryDirectory(prefix="hybridfield-") as tmp:
            path = Path(tmp) / "junk.grid"
            path.write_bytes(b"nope" + b"\0" * 60)
            with self.assertRaises(InputError):
                load_grid(path)


if __name__ == "__main__":
    unittest.main()
