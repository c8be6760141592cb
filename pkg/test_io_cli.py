"""
Tests for the raster / field / CSV formats and the command line
Run: python test_io_cli.py
"""

import io
import os
import tempfile
from contextlib import redirect_stderr, redirect_stdout

import numpy as np
from numpy.testing import assert_allclose, assert_array_equal, assert_raises

import cli
import file_io
from density_field import DensityField, GridSpec
from errors import FormatError
from losses import RankPairs, total_loss
from metrics import MetricReport
from scene_sim import Box, SceneSpec
from suite_runner import main_for


def _run(argv):
    """main() with captured output; returns (code, stdout, stderr)"""
    out, err = io.StringIO(), io.StringIO()
    with redirect_stdout(out), redirect_stderr(err):
        code = cli.main(argv)
    return code, out.getvalue(), err.getvalue()


def _small_scene_dir(tmp):
    scene = SceneSpec(footprint=(16.0, 16.0), boxes=[Box(3.0, 3.0, 4.0, 4.0, 5.0)],
                      camera=(8.0, 8.0, 2.0), max_height=8.0)
    spec_path = os.path.join(tmp, 'input.json')
    file_io.write_scene(spec_path, scene)
    out_dir = os.path.join(tmp, 'scene')
    code, _, _ = _run(['scene', 'gen', spec_path, '--out-dir', out_dir,
                       '--pano-w', '32', '--pano-h', '16', '--field'])
    assert code == 0
    return out_dir


# ==========================================
# FORMATS
# ==========================================
def test_pfm_round_trip():
    rng = np.random.default_rng(50)
    raster = rng.normal(size=(7, 11)).astype(np.float32)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'r.pfm')
        file_io.write_pfm(path, raster)
        back = file_io.read_pfm(path)
        assert back.dtype == np.float32
        assert_array_equal(back, raster)
        # bottom-to-top storage: first payload row is the last image row
        with open(path, 'rb') as f:
            data = f.read()
        first = np.frombuffer(data[-4 * 7 * 11:][:4 * 11], dtype='<f4')
        assert_array_equal(first, raster[-1])


def test_pfm_rejects_bad_files():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'bad.pfm')
        with open(path, 'wb') as f:
            f.write(b"Pf\n2 2\n1.0\n" + b"\0" * 16)
        assert_raises(FormatError, file_io.read_pfm, path)

        with open(path, 'wb') as f:
            f.write(b"Pf\n2 2\n-1.0\n" + b"\0" * 12)
        try:
            file_io.read_pfm(path)
        except FormatError as e:
            assert "expected 16 bytes, got 12" in str(e)
            assert e.offset is not None
        else:
            raise AssertionError("truncated PFM was accepted")

        with open(path, 'wb') as f:
            f.write(b"PF\n1 1\n-1.0\n" + b"\0" * 12)
        assert_raises(FormatError, file_io.read_pfm, path)


def test_pgm_round_trip():
    mask = np.zeros((5, 9), dtype=bool)
    mask[1:3, 2:7] = True
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'm.pgm')
        file_io.write_pgm(path, mask)
        assert_array_equal(file_io.read_pgm(path), mask)

        with open(path, 'wb') as f:
            f.write(b"P5\n# comment\n3 1\n255\n\x00\x07\x00")
        assert_array_equal(file_io.read_pgm(path), [[False, True, False]])


def test_df32_round_trip():
    spec = GridSpec(5, 4, 3, (0.5, 1.0, 2.0), (-1.0, 2.0, 0.0))
    rng = np.random.default_rng(51)
    field = DensityField(spec, rng.random(spec.shape).astype(np.float32).astype(np.float64))
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'f.df32')
        file_io.write_df32(path, field)
        back = file_io.read_df32(path)
        assert back.spec == spec
        assert_array_equal(back.sigma, field.sigma)

        with open(path, 'rb') as f:
            data = f.read()
        with open(path, 'wb') as f:
            f.write(data[:-4])
        assert_raises(FormatError, file_io.read_df32, path)


def test_scene_json_errors():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 's.json')
        with open(path, 'w') as f:
            f.write('{"boxes": [')
        assert_raises(FormatError, file_io.read_scene, path)


def test_pairs_and_trace_csv():
    pairs = RankPairs([0, 3], [1, 2], [4, 5], [1, 0], [1, -1])
    trace = [(1, total_loss(0.5, 0.25, 0.125, 1.0), 0.05), (2, total_loss(0.4, 0.2, 0.1, 1.0), 0.05)]
    with tempfile.TemporaryDirectory() as tmp:
        p_path = os.path.join(tmp, 'pairs.csv')
        file_io.write_pairs(p_path, pairs)
        back = file_io.read_pairs(p_path, seed=9)
        assert_array_equal(back.r, [1, -1])
        assert_array_equal(back.j_u, [4, 5])
        assert back.seed == 9

        t_path = os.path.join(tmp, 'trace.csv')
        file_io.write_trace(t_path, trace)
        rows = file_io.read_trace(t_path)
        assert [r['epoch'] for r in rows] == [1, 2]
        assert rows[0]['l_total'] == 0.875

        m_path = os.path.join(tmp, 'metrics.csv')
        file_io.write_metrics(m_path, [('a', MetricReport(1.0, 2.0, 0.5, 10))])
        with open(m_path) as f:
            assert f.readline().startswith('label,mae,rmse,ssim')


# ==========================================
# COMMAND LINE
# ==========================================
def test_cli_usage_errors():
    assert _run(['optimize', '--bogus'])[0] == 1
    assert _run([])[0] == 1
    assert _run(['render', 'height', '--field', 'x.df32', '--out', 'y.pfm', '--cam', '1,2'])[0] == 1


def test_cli_runtime_error_on_missing_file():
    code, _, err = _run(['metrics', '--pred', '/nonexistent/a.pfm', '--gt', '/nonexistent/b.pfm'])
    assert code == 2
    assert err.strip()


def test_cli_metrics_identical():
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, 'h.pfm')
        file_io.write_pfm(path, np.arange(256, dtype=np.float32).reshape(16, 16))
        code, out, _ = _run(['metrics', '--pred', path, '--gt', path,
                             '--csv', os.path.join(tmp, 'm.csv')])
        assert code == 0
        assert 'mae=0.000000' in out and 'ssim=1.000000' in out
        assert os.path.exists(os.path.join(tmp, 'm.csv'))


def test_cli_scene_render_optimize():
    with tempfile.TemporaryDirectory() as tmp:
        scene_dir = _small_scene_dir(tmp)
        for name in ('scene.json', 'height.pfm', 'pano_depth.pfm', 'sky.pgm', 'field.df32'):
            assert os.path.exists(os.path.join(scene_dir, name))
        gt = file_io.read_pfm(os.path.join(scene_dir, 'height.pfm'))
        assert gt.shape == (16, 16) and gt.max() == 5.0

        rendered = os.path.join(tmp, 'rendered.pfm')
        code, _, _ = _run(['render', 'height', '--field', os.path.join(scene_dir, 'field.df32'),
                           '--out', rendered])
        assert code == 0
        assert np.max(np.abs(file_io.read_pfm(rendered) - gt)) <= 1.0

        out = os.path.join(tmp, 'fit.df32')
        trace = os.path.join(tmp, 'trace.csv')
        code, stdout, _ = _run([
            'optimize', '--gt', os.path.join(scene_dir, 'height.pfm'),
            '--pano', os.path.join(scene_dir, 'pano_depth.pfm'),
            '--sky', os.path.join(scene_dir, 'sky.pgm'),
            '--cam', '8,8,2', '--nz', '8', '--epochs', '3', '--alpha', '1',
            '--k', '32', '--min', '1', '--max', '4', '--out', out, '--trace', trace,
        ])
        assert code == 0, stdout
        assert file_io.read_df32(out).spec.shape == (8, 16, 16)
        assert len(file_io.read_trace(trace)) == 3

        code, _, _ = _run(['optimize', '--gt', os.path.join(scene_dir, 'height.pfm'),
                           '--pano', os.path.join(scene_dir, 'pano_depth.pfm'),
                           '--nz', '8', '--epochs', '1', '--out', out])
        assert code == 1


def test_cli_rejects_nonpositive_voxel():
    with tempfile.TemporaryDirectory() as tmp:
        out_dir = os.path.join(tmp, 'scene')
        assert _run(['scene', 'gen', '--canonical', 'flat', '--out-dir', out_dir, '--voxel', '0'])[0] == 1
        assert _run(['scene', 'gen', '--canonical', 'flat', '--out-dir', out_dir, '--vz', '-2'])[0] == 1
        assert not os.path.exists(out_dir)


def test_cli_fixed_pairs_and_lift_init():
    with tempfile.TemporaryDirectory() as tmp:
        scene_dir = _small_scene_dir(tmp)
        height = os.path.join(scene_dir, 'height.pfm')
        depth = os.path.join(scene_dir, 'pano_depth.pfm')
        sky = os.path.join(scene_dir, 'sky.pgm')
        pairs = os.path.join(tmp, 'pairs.csv')
        out = os.path.join(tmp, 'fit.df32')
        code, _, _ = _run(['pairs', '--depth', depth, '--sky', sky, '--k', '20',
                           '--min', '1', '--max', '4', '--out', pairs])
        assert code == 0

        base = ['optimize', '--gt', height, '--pairs', pairs, '--sky', sky, '--cam', '8,8,2',
                '--nz', '8', '--epochs', '1', '--out', out]
        code, _, err = _run(base + ['--rank-source', 'cutouts'])
        assert code == 2
        assert 'rank_source' in err
        assert _run(base + ['--rank-source', 'pano'])[0] == 0

        code, _, _ = _run(['optimize', '--gt', height, '--pano', depth, '--sky', sky,
                           '--cam', '8,8,2', '--nz', '8', '--epochs', '2', '--alpha', '0',
                           '--init-lift', '--out', out])
        assert code == 0
        assert _run(['optimize', '--gt', height, '--nz', '8', '--epochs', '1',
                     '--init-lift', '--out', out])[0] == 1


def test_cli_render_pano():
    with tempfile.TemporaryDirectory() as tmp:
        scene_dir = _small_scene_dir(tmp)
        out = os.path.join(tmp, 'pano.pfm')
        opacity = os.path.join(tmp, 'opacity.pfm')
        code, _, _ = _run(['render', 'pano', '--field', os.path.join(scene_dir, 'field.df32'),
                           '--cam', '8,8,2', '--width', '32', '--height', '16',
                           '--ground-plane', '--opacity', opacity, '--out', out])
        assert code == 0
        assert file_io.read_pfm(out).shape == (16, 32)
        assert_allclose(file_io.read_pfm(opacity)[-1], 1.0, atol=1e-6)


def test_cli_pairs_and_cutout():
    with tempfile.TemporaryDirectory() as tmp:
        scene_dir = _small_scene_dir(tmp)
        depth = os.path.join(scene_dir, 'pano_depth.pfm')
        code, out, _ = _run(['pairs', '--depth', depth, '--sky', os.path.join(scene_dir, 'sky.pgm'),
                             '--k', '10', '--min', '1', '--max', '3'])
        assert code == 0
        lines = out.strip().splitlines()
        assert lines[0] == 'i_u,i_v,j_u,j_v,r' and len(lines) == 11

        cut = os.path.join(tmp, 'cut.pfm')
        code, _, _ = _run(['cutout', '--pano', depth, '--heading', '90', '--size', '12', '--out', cut])
        assert code == 0
        assert file_io.read_pfm(cut).shape == (12, 12)


def test_cli_config():
    code, out, _ = _run(['config'])
    assert code == 0
    assert 'DENSITYFIT CONFIGURATION' in out


def test_cli_gradcheck():
    code, out, _ = _run(['gradcheck', '--seed', '3', '--skip-objective'])
    assert code == 0
    assert out.count('✅') == 3


def main():
    main_for("I/O & CLI TEST SUITE", globals())


if __name__ == "__main__":
    main()
