"""
Tests for grid geometry, the density field and trilinear sampling
Run: python test_density_field.py
"""

import numpy as np
from numpy.testing import assert_allclose, assert_raises

from density_field import (
    DensityField, FeatureGrid, GridSpec, gather, sample_sigma, scatter_to_grid,
    trilinear_stencil, voxel_to_world, world_to_voxel,
)
from errors import GridError
from suite_runner import main_for


def test_gridspec_defaults():
    spec = GridSpec()
    assert spec.shape == (64, 256, 256)
    assert spec.height == 64.0
    assert_allclose(spec.extent, [256.0, 256.0, 64.0])
    assert spec.default_step == 0.5


def test_gridspec_rejects_bad_geometry():
    assert_raises(GridError, GridSpec, 0, 4, 4)
    assert_raises(GridError, GridSpec, 4, 4, 4, (1.0, -1.0, 1.0))
    assert_raises(GridError, GridSpec, 4, 4, 4, (1.0, 1.0, 1.0), (0.0, np.nan, 0.0))


def test_world_to_voxel_examples():
    spec = GridSpec(4, 4, 4)
    assert_allclose(world_to_voxel(spec, (0.5, 0.5, 0.5)), (0.5, 0.5, 0.5))
    assert_allclose(world_to_voxel(spec, (0.0, 0.0, 0.0)), (0.0, 0.0, 0.0))

    shifted = GridSpec(256, 256, 64, (1.0, 1.0, 1.0), (-128.0, -128.0, 0.0))
    assert_allclose(world_to_voxel(shifted, (0.0, 0.0, 32.0)), (128.0, 128.0, 32.0))


def test_world_voxel_round_trip():
    spec = GridSpec(16, 12, 8, (0.7, 1.3, 2.0), (-3.0, 5.0, 1.0))
    rng = np.random.default_rng(1)
    p = spec.lower + rng.random((100, 3)) * spec.extent
    assert_allclose(voxel_to_world(spec, world_to_voxel(spec, p)), p, atol=1e-9)


def test_density_field_validation():
    spec = GridSpec(2, 2, 2)
    assert_raises(GridError, DensityField, spec, np.full(spec.shape, -1.0))
    assert_raises(GridError, DensityField, spec, np.full(spec.shape, np.inf))
    assert_raises(GridError, DensityField, spec, np.zeros(7))
    # flat x-fastest payload reshapes into (nz, ny, nx)
    field = DensityField(spec, np.arange(8.0))
    assert field.sigma[0, 0, 1] == 1.0
    assert field.sigma[0, 1, 0] == 2.0
    assert field.sigma[1, 0, 0] == 4.0


def test_feature_grid_shapes():
    spec = GridSpec(3, 2, 2)
    assert FeatureGrid.zeros(spec, 4).channels == 4
    assert FeatureGrid(spec, np.ones(spec.shape)).channels == 1
    assert_raises(GridError, FeatureGrid, spec, np.ones((2, 2, 2, 2)))


def test_sample_uniform_and_outside():
    spec = GridSpec(4, 4, 4)
    field = DensityField.uniform(spec, 2.0)
    assert_allclose(sample_sigma(field, (1.3, 2.7, 0.1)), 2.0)
    assert_allclose(sample_sigma(field, (3.99, 0.01, 3.5)), 2.0)
    assert sample_sigma(field, (-0.1, 2.0, 2.0)) == 0.0
    assert sample_sigma(field, (2.0, 2.0, 4.5)) == 0.0


def test_sample_midpoint_between_voxels():
    spec = GridSpec(4, 4, 4)
    sigma = np.zeros(spec.shape)
    sigma[1, 1, 1] = 8.0
    field = DensityField(spec, sigma)
    assert_allclose(sample_sigma(field, (1.5, 1.5, 1.5)), 8.0)
    assert_allclose(sample_sigma(field, (2.0, 1.5, 1.5)), 4.0)


def test_sample_exact_at_voxel_centers():
    spec = GridSpec(5, 4, 3)
    rng = np.random.default_rng(2)
    field = DensityField(spec, rng.random(spec.shape))
    centers = spec.voxel_centers().reshape(-1, 3)
    assert_allclose(sample_sigma(field, centers), field.flat(), atol=1e-12)


def test_sample_is_linear_in_storage():
    spec = GridSpec(6, 5, 4)
    rng = np.random.default_rng(3)
    f = DensityField(spec, rng.random(spec.shape))
    g = DensityField(spec, rng.random(spec.shape))
    fg = DensityField(spec, 2.0 * f.sigma + 3.0 * g.sigma)
    p = rng.random((50, 3)) * spec.extent
    assert_allclose(sample_sigma(fg, p), 2.0 * sample_sigma(f, p) + 3.0 * sample_sigma(g, p), atol=1e-12)


def test_sample_rejects_non_finite_point():
    field = DensityField.empty(GridSpec(2, 2, 2))
    assert_raises(GridError, sample_sigma, field, (np.nan, 0.0, 0.0))


def test_stencil_weights_and_adjoint():
    spec = GridSpec(5, 6, 4)
    rng = np.random.default_rng(4)
    p = rng.random((40, 3)) * spec.extent
    idx, w = trilinear_stencil(spec, p)
    assert_allclose(w.sum(axis=1), 1.0, atol=1e-12)

    values = rng.random(spec.size)
    upstream = rng.standard_normal(40)
    lhs = np.dot(gather(values, idx, w), upstream)
    rhs = np.dot(values, scatter_to_grid(spec, idx, w, upstream))
    assert_allclose(lhs, rhs, rtol=1e-12)


def test_ray_box_interval():
    spec = GridSpec(4, 4, 4)
    t0, t1 = spec.ray_box_interval([[2.0, 2.0, 2.0]], [[1.0, 0.0, 0.0]])
    assert_allclose(t0, [-2.0])
    assert_allclose(t1, [2.0])
    t0, t1 = spec.ray_box_interval([[-1.0, 5.0, 2.0]], [[1.0, 0.0, 0.0]])
    assert t1[0] < t0[0]


def main():
    main_for("DENSITY FIELD TEST SUITE", globals())


if __name__ == "__main__":
    main()
