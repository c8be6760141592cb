"""
Tests for the box-world scene oracle
Run: python test_scene_sim.py
"""

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal, assert_raises

from errors import SceneError
from render import pano_angles
from scene_sim import (
    Box, SceneSpec, canonical_scenes, make_truth, occupancy_field, rasterize_height,
    raycast_pano_depth,
)
from suite_runner import main_for


def _one_box():
    return SceneSpec(footprint=(32.0, 32.0), boxes=[Box(5.0, 5.0, 10.0, 10.0, 7.0)],
                     camera=(20.0, 20.0, 2.0), max_height=16.0)


def test_scene_validation():
    assert_raises(SceneError, SceneSpec, footprint=(0.0, 10.0))
    assert_raises(SceneError, SceneSpec, footprint=(10.0,))
    assert_raises(SceneError, SceneSpec, footprint=(10.0, 10.0), boxes=[Box(8.0, 0.0, 4.0, 4.0, 2.0)])
    assert_raises(SceneError, SceneSpec, footprint=(10.0, 10.0), max_height=5.0,
                  boxes=[Box(0.0, 0.0, 2.0, 2.0, 6.0)])
    assert_raises(SceneError, SceneSpec, footprint=(10.0, 10.0),
                  boxes=[Box(0.0, 0.0, 4.0, 4.0, 2.0), Box(3.0, 3.0, 4.0, 4.0, 2.0)])
    assert_raises(SceneError, SceneSpec, footprint=(10.0, 10.0),
                  boxes=[Box(4.0, 4.0, 2.0, 2.0, 3.0)], camera=(5.0, 5.0, 2.0))
    assert_raises(SceneError, SceneSpec, footprint=(10.0, 10.0), camera=(11.0, 5.0, 2.0))
    # touching footprints are allowed
    SceneSpec(footprint=(10.0, 10.0), boxes=[Box(0.0, 0.0, 4.0, 4.0, 2.0), Box(4.0, 0.0, 4.0, 4.0, 2.0)],
              camera=(9.0, 9.0, 1.0))


def test_default_camera_and_grid():
    scene = SceneSpec()
    assert scene.camera == (128.0, 128.0, 2.0)
    grid = scene.grid()
    assert grid.shape == (64, 256, 256)
    coarse = scene.grid(voxel_size=4.0, vz=2.0)
    assert coarse.shape == (32, 64, 64)
    assert_raises(SceneError, scene.grid, 3.0)


def test_rasterized_box_area():
    scene = _one_box()
    height = rasterize_height(scene, scene.grid())
    assert height.shape == (32, 32)
    assert int(np.count_nonzero(height == 7.0)) == 100
    assert int(np.count_nonzero(height)) == 100
    assert height[10, 10] == 7.0 and height[4, 10] == 0.0


def test_empty_scene_pano():
    scene = SceneSpec(camera=(128.0, 128.0, 2.0))
    depth, sky = raycast_pano_depth(scene, pano_w=64, pano_h=32)
    _, lam = pano_angles(64, 32)
    assert_array_equal(sky, lam >= 0)
    below = lam < 0
    assert_allclose(depth[below], 2.0 / np.sin(-lam[below]), rtol=1e-12)
    assert_array_equal(depth[sky], 0.0)


def test_wall_distance():
    scene = SceneSpec(boxes=[Box(118.0, 108.0, 20.0, 10.0, 30.0)], camera=(128.0, 128.0, 2.0))
    depth, sky = raycast_pano_depth(scene, pano_w=64, pano_h=32)
    phi, lam = pano_angles(64, 32)
    for v in (15, 16):
        expected = 10.0 / (np.cos(lam[v, 0]) * np.cos(phi[v, 0]))
        assert_allclose(depth[v, 0], expected, rtol=1e-9)
        assert not sky[v, 0]


def test_noise_is_seeded_and_keeps_sky():
    scene = _one_box()
    clean, sky = raycast_pano_depth(scene, pano_w=32, pano_h=16)
    a, sky_a = raycast_pano_depth(scene, pano_w=32, pano_h=16, noise=0.05, seed=3)
    b, _ = raycast_pano_depth(scene, pano_w=32, pano_h=16, noise=0.05, seed=3)
    assert_array_equal(a, b)
    assert_array_equal(sky_a, sky)
    assert_array_equal(a[sky], 0.0)
    assert not np.array_equal(a, clean)


def test_raycast_rejects_camera_in_box():
    scene = _one_box()
    assert_raises(SceneError, raycast_pano_depth, scene, (10.0, 10.0, 3.0), 8, 4)


def test_occupancy_field():
    scene = _one_box()
    field = occupancy_field(scene, scene.grid())
    assert int(np.count_nonzero(field.sigma)) == 10 * 10 * 7
    assert field.sigma.max() == 1e3
    assert_raises(SceneError, occupancy_field, scene, scene.grid(), 0.0)


def test_make_truth_shapes():
    scene = _one_box()
    truth = make_truth(scene, scene.grid(), pano_w=16, pano_h=8)
    assert truth.height.shape == (32, 32)
    assert truth.pano_depth.shape == (8, 16) and truth.sky.shape == (8, 16)
    assert_allclose(truth.cam, scene.camera)


def test_canonical_scenes():
    scenes = canonical_scenes()
    assert set(scenes) == {'flat', 'two-box', 'dense'}
    assert [b.height for b in scenes['two-box'].boxes] == [10.0, 25.0]
    assert len(scenes['dense'].boxes) == 7
    for scene in scenes.values():
        assert scene.camera == (128.0, 128.0, 2.0)
        _, sky = raycast_pano_depth(scene, pano_w=32, pano_h=16)
        assert not sky[-1].any()


def test_scene_dict_round_trip():
    scene = canonical_scenes()['dense']
    assert SceneSpec.from_dict(scene.to_dict()) == scene
    assert_raises(SceneError, SceneSpec.from_dict, {'boxes': [{'x': 1.0}]})


def main():
    main_for("SCENE ORACLE TEST SUITE", globals())


if __name__ == "__main__":
    main()
