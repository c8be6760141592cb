"""
Tests for panorama cutouts, bilinear resampling and lifting
Run: python test_pano_geometry.py
"""

import numpy as np
from numpy.testing import assert_allclose, assert_raises

from density_field import GridSpec
from errors import GeometryError
from pano_geometry import (
    CutoutSpec, cutout_angles, cutout_map, direction_to_angles, extract_cutout,
    extract_cutouts, lift_multiscale, lift_pano_to_grid, pano_bilinear_map, pano_pyramid,
    sample_pano,
)
from render import pano_angles, pano_directions
from suite_runner import main_for


def _quadrant_pano(w=64, h=32):
    phi, _ = pano_angles(w, h)
    deg = np.degrees(phi)
    # quadrant k is centred on heading 90·k
    return np.floor(np.mod(deg + 45.0, 360.0) / 90.0)


def test_cutout_spec_validation():
    assert_raises(GeometryError, CutoutSpec, fov=180.0)
    assert_raises(GeometryError, CutoutSpec, fov=0.0)
    assert_raises(GeometryError, CutoutSpec, out_w=0)


def test_cutout_center_and_edge_angles():
    spec = CutoutSpec(heading=0.0, fov=90.0)
    phi, lam = cutout_angles(0.0, 0.0, spec)
    assert_allclose([phi, lam], [0.0, 0.0], atol=1e-12)
    phi, lam = cutout_angles(1.0, 0.0, spec)
    assert_allclose(np.degrees(phi), 45.0, atol=1e-12)
    assert_allclose(lam, 0.0, atol=1e-12)
    # top edge looks up
    _, lam = cutout_angles(0.0, -1.0, spec)
    assert_allclose(np.degrees(lam), 45.0, atol=1e-12)


def test_cutout_pitch_and_heading():
    phi, lam = cutout_angles(0.0, 0.0, CutoutSpec(heading=90.0, pitch=30.0))
    assert_allclose(np.degrees(phi), 90.0, atol=1e-9)
    assert_allclose(np.degrees(lam), 30.0, atol=1e-9)


def test_constant_pano_constant_cutout():
    pano = np.full((32, 64), 7.5)
    cut = extract_cutout(pano, CutoutSpec(heading=33.0, fov=75.0, out_w=40, out_h=30))
    assert cut.shape == (30, 40)
    assert_allclose(cut, 7.5, atol=1e-12)


def test_multichannel_cutout():
    pano = np.stack([np.full((16, 32), 1.0), np.full((16, 32), 2.0)], axis=-1)
    cut = extract_cutout(pano, CutoutSpec(out_w=8, out_h=8))
    assert cut.shape == (8, 8, 2)
    assert_allclose(cut[..., 1], 2.0)


def test_quadrant_round_trip():
    pano = _quadrant_pano()
    cuts = extract_cutouts(pano, size=32)
    a = 2.0 * (np.arange(32) + 0.5) / 32 - 1.0
    interior = np.abs(a) <= 0.75
    for k, heading in enumerate((0.0, 90.0, 180.0, 270.0)):
        assert_allclose(cuts[heading][:, interior], float(k), atol=1e-12)


def test_azimuth_wraparound_is_continuous():
    w, h = 128, 64
    phi, lam = pano_angles(w, h)
    pano = np.cos(phi) + 0.5 * np.sin(lam)
    left = extract_cutout(pano, CutoutSpec(heading=359.0, out_w=24, out_h=24))
    right = extract_cutout(pano, CutoutSpec(heading=1.0, out_w=24, out_h=24))
    centre = extract_cutout(pano, CutoutSpec(heading=0.0, out_w=24, out_h=24))
    assert np.max(np.abs(left - right)) < 0.1
    assert np.max(np.abs(left - centre)) < 0.05


def test_bilinear_map_adjoint():
    rng = np.random.default_rng(8)
    cmap = cutout_map(CutoutSpec(heading=200.0, fov=60.0, pitch=-10.0, out_w=12, out_h=9), 32, 16)
    x = rng.standard_normal((16, 32))
    y = rng.standard_normal((9, 12))
    assert_allclose(np.sum(cmap.apply(x) * y), np.sum(x * cmap.adjoint(y)), rtol=1e-12)


def test_sample_pano_hits_pixel_centres():
    rng = np.random.default_rng(9)
    pano = rng.random((8, 16))
    phi, lam = pano_angles(16, 8)
    assert_allclose(sample_pano(pano, phi, lam), pano, atol=1e-12)


def test_direction_angle_round_trip():
    phi, lam = pano_angles(24, 12)
    back_phi, back_lam = direction_to_angles(pano_directions(phi, lam))
    assert_allclose(back_phi, phi, atol=1e-12)
    assert_allclose(back_lam, lam, atol=1e-12)


def test_lift_constant():
    spec = GridSpec(8, 8, 8)
    cam = (4.5, 4.5, 2.5)
    lifted = lift_pano_to_grid(np.full((16, 32), 3.0), spec, cam)
    assert lifted.channels == 1
    values = lifted.data[0].copy()
    assert values[2, 4, 4] == 0.0
    values[2, 4, 4] = 3.0
    assert_allclose(values, 3.0, atol=1e-12)


def test_lift_forward_voxel_reads_heading_zero():
    rng = np.random.default_rng(10)
    pano = rng.random((16, 32))
    spec = GridSpec(8, 8, 8)
    lifted = lift_pano_to_grid(pano, spec, (4.5, 4.5, 2.5))
    # voxel centre (4.5, 1.5, 2.5) lies straight along -y
    assert_allclose(lifted.data[0, 2, 1, 4], sample_pano(pano, 0.0, 0.0), atol=1e-12)


def test_lift_ray_constancy():
    rng = np.random.default_rng(11)
    pano = rng.random((32, 64))
    spec = GridSpec(16, 16, 16)
    lifted = lift_pano_to_grid(pano, spec, (8.5, 8.5, 4.5)).data[0]
    # offsets (1, 2, 1) and (3, 6, 3) from the camera
    assert_allclose(lifted[5, 10, 9], lifted[7, 14, 11], atol=1e-6)


def test_lift_camera_outside():
    assert_raises(GeometryError, lift_pano_to_grid, np.ones((4, 8)), GridSpec(4, 4, 4), (9.0, 1.0, 1.0))


def test_lift_multiscale():
    spec = GridSpec(6, 6, 6)
    cam = (3.1, 2.9, 1.7)
    rng = np.random.default_rng(12)
    pano = rng.random((8, 16))
    single = lift_pano_to_grid(pano, spec, cam).data
    assert_allclose(lift_multiscale([pano], spec, cam).data, single)
    assert_allclose(lift_multiscale([pano, pano], spec, cam).data, 2.0 * single)

    mixed = lift_multiscale([np.full((8, 16), 1.5), np.full((16, 32), 2.0)], spec, cam).data
    assert_allclose(mixed, 3.5, atol=1e-12)

    assert_raises(GeometryError, lift_multiscale, [], spec, cam)
    assert_raises(GeometryError, lift_multiscale, [np.ones((8, 16)), np.ones((8, 16, 2))], spec, cam)


def test_pano_pyramid_block_means():
    pano = np.arange(8 * 16, dtype=np.float64).reshape(8, 16)
    levels = pano_pyramid(pano, 3)
    assert [p.shape for p in levels] == [(8, 16, 1), (4, 8, 1), (2, 4, 1)]
    assert_allclose(levels[1][0, 0, 0], np.mean([0.0, 1.0, 16.0, 17.0]))
    assert_allclose(levels[2][..., 0].mean(), pano.mean())

    # 6×12 halves once, then 3×6 has an odd side
    assert len(pano_pyramid(np.ones((6, 12, 2)), 5)) == 2
    assert len(pano_pyramid(pano, 1)) == 1
    assert_raises(GeometryError, pano_pyramid, pano, 0)


def test_bilinear_map_rejects_wrong_source():
    bmap = pano_bilinear_map(np.zeros(3), np.zeros(3), 16, 8)
    assert_raises(GeometryError, bmap.apply, np.ones((4, 16)))


def main():
    main_for("PANO GEOMETRY TEST SUITE", globals())


if __name__ == "__main__":
    main()
