"""
Tests for MAE, RMSE and SSIM
Run: python test_metrics.py
"""

import numpy as np
from numpy.testing import assert_allclose, assert_raises

import config
from errors import MetricError
from metrics import MetricReport, evaluate, format_table, gaussian_window, mae, rmse, ssim
from suite_runner import main_for


def _ssim_reference(x, y, data_range):
    """Window-by-window SSIM with explicit loops"""
    win = config.SSIM_WINDOW
    w = gaussian_window()
    c1 = (config.SSIM_K1 * data_range) ** 2
    c2 = (config.SSIM_K2 * data_range) ** 2
    values = []
    for i in range(x.shape[0] - win + 1):
        for j in range(x.shape[1] - win + 1):
            px = x[i:i + win, j:j + win]
            py = y[i:i + win, j:j + win]
            mx, my = np.sum(w * px), np.sum(w * py)
            vx = np.sum(w * (px - mx) ** 2)
            vy = np.sum(w * (py - my) ** 2)
            cxy = np.sum(w * (px - mx) * (py - my))
            values.append((2 * mx * my + c1) * (2 * cxy + c2)
                          / ((mx ** 2 + my ** 2 + c1) * (vx + vy + c2)))
    return float(np.mean(values))


def test_mae_rmse_examples():
    assert mae([0.0, 2.0], [1.0, 3.0]) == 1.0
    assert rmse([0.0, 0.0], [3.0, 3.0]) == 3.0
    assert_allclose(rmse([0.0, 0.0], [1.0, np.sqrt(3.0)]), np.sqrt(2.0), rtol=1e-12)
    assert rmse([3.0], [0.0]) == 3.0
    assert_allclose(rmse([0.0, 2.0], [0.0, 0.0]), np.sqrt(2.0), rtol=1e-12)
    assert mae([1.0, 5.0, 9.0], [1.0, 0.0, 9.0], mask=[True, False, True]) == 0.0


def test_metrics_are_permutation_invariant():
    rng = np.random.default_rng(40)
    pred, gt = rng.random(100), rng.random(100)
    perm = rng.permutation(100)
    assert_allclose(mae(pred[perm], gt[perm]), mae(pred, gt), rtol=1e-12)
    assert_allclose(rmse(pred[perm], gt[perm]), rmse(pred, gt), rtol=1e-12)


def test_mae_never_exceeds_rmse():
    rng = np.random.default_rng(41)
    for _ in range(20):
        pred, gt = rng.normal(size=(8, 8)), rng.normal(size=(8, 8))
        assert mae(pred, gt) <= rmse(pred, gt) + 1e-12


def test_metric_errors():
    assert_raises(MetricError, mae, [1.0], [1.0, 2.0])
    assert_raises(MetricError, rmse, [1.0], [1.0], mask=[False])
    assert_raises(MetricError, ssim, np.ones((8, 8)), np.ones((8, 8)))


def test_ssim_identity():
    rng = np.random.default_rng(42)
    x = rng.uniform(0.0, 30.0, size=(24, 24))
    assert_allclose(ssim(x, x), 1.0, atol=1e-12)
    flat = np.full((16, 16), 4.0)
    assert_allclose(ssim(flat, flat, data_range=1.0), 1.0, atol=1e-9)


def test_ssim_drops_with_offset():
    rng = np.random.default_rng(43)
    x = rng.uniform(1.0, 5.0, size=(20, 20))
    scores = [ssim(x + c, x, data_range=4.0) for c in (0.0, 0.5, 1.0, 2.0)]
    assert all(a > b for a, b in zip(scores, scores[1:]))


def test_ssim_matches_direct_loop():
    rng = np.random.default_rng(44)
    x = rng.uniform(0.0, 10.0, size=(32, 32))
    y = x + rng.normal(0.0, 1.0, size=(32, 32))
    assert abs(ssim(y, x, data_range=10.0) - _ssim_reference(y, x, 10.0)) <= 1e-6


def test_ssim_symmetric_with_fixed_range():
    rng = np.random.default_rng(45)
    x, y = rng.random((16, 16)), rng.random((16, 16))
    assert_allclose(ssim(x, y, data_range=1.0), ssim(y, x, data_range=1.0), rtol=1e-12)


def test_evaluate_and_table():
    gt = np.zeros((12, 12))
    gt[3:9, 3:9] = 10.0
    pred = gt + 1.0
    report = evaluate(pred, gt)
    assert_allclose([report.mae, report.rmse], [1.0, 1.0])
    assert report.n == 144 and report.data_range == 10.0
    assert report.to_row()['ssim'] == report.ssim

    masked = evaluate(pred, gt, mask=gt > 0)
    assert masked.n == 36

    table = format_table([('height only', report), ('+ sky', MetricReport(0.5, 0.7, 0.9, 144))])
    lines = table.splitlines()
    assert len(lines) == 4
    assert 'MAE' in lines[0] and lines[3].startswith('+ sky')
    assert '0.5000' in lines[3]


def main():
    main_for("METRICS TEST SUITE", globals())


if __name__ == "__main__":
    main()
