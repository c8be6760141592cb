"""
Height Map Metrics
===================
MAE, RMSE and SSIM between a predicted and a ground-truth height raster.
"""

from dataclasses import dataclass, asdict

import numpy as np
from scipy.signal import convolve2d

import config
from errors import MetricError


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    ssim: float
    n: int
    ssim_window: int = config.SSIM_WINDOW
    k1: float = config.SSIM_K1
    k2: float = config.SSIM_K2
    data_range: float = None

    def to_row(self):
        return asdict(self)


CSV_FIELDS = ('mae', 'rmse', 'ssim', 'n', 'ssim_window', 'k1', 'k2', 'data_range')


def _pair(pred, gt, mask=None):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise MetricError(f"Prediction {pred.shape} and ground truth {gt.shape} differ in shape")
    if mask is None:
        diff = (pred - gt).ravel()
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise MetricError(f"Mask {mask.shape} does not match {pred.shape}")
        diff = (pred - gt)[mask]
    if diff.size == 0:
        raise MetricError("No pixels to evaluate")
    return diff


def mae(pred, gt, mask=None):
    return float(np.mean(np.abs(_pair(pred, gt, mask))))


def rmse(pred, gt, mask=None):
    return float(np.sqrt(np.mean(_pair(pred, gt, mask) ** 2)))


def gaussian_window(size=config.SSIM_WINDOW, sigma=config.SSIM_SIGMA):
    """Normalized 2D Gaussian kernel"""
    ax = np.arange(size) - (size - 1) / 2.0
    g = np.exp(-(ax ** 2) / (2.0 * sigma ** 2))
    g /= g.sum()
    return np.outer(g, g)


def ssim_map(pred, gt, data_range=None, window=config.SSIM_WINDOW, sigma=config.SSIM_SIGMA,
             k1=config.SSIM_K1, k2=config.SSIM_K2):
    """SSIM over every fully-covered window position ('valid' region)"""
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape or pred.ndim != 2:
        raise MetricError(f"SSIM needs two 2D rasters of equal shape, got {pred.shape} and {gt.shape}")
    if min(pred.shape) < window:
        raise MetricError(f"Image {pred.shape} is smaller than the {window}×{window} SSIM window")
    if data_range is None:
        data_range = max(float(gt.max() - gt.min()), config.SSIM_MIN_RANGE)

    w = gaussian_window(window, sigma)

    def filt(img):
        return convolve2d(img, w, mode='valid')

    mu_x = filt(pred)
    mu_y = filt(gt)
    var_x = filt(pred * pred) - mu_x ** 2
    var_y = filt(gt * gt) - mu_y ** 2
    cov = filt(pred * gt) - mu_x * mu_y

    c1 = (k1 * data_range) ** 2
    c2 = (k2 * data_range) ** 2
    num = (2 * mu_x * mu_y + c1) * (2 * cov + c2)
    den = (mu_x ** 2 + mu_y ** 2 + c1) * (var_x + var_y + c2)
    return num / den


def ssim(pred, gt, data_range=None):
    """Mean SSIM; data_range defaults to the ground truth's value span"""
    return float(np.mean(ssim_map(pred, gt, data_range)))


def evaluate(pred, gt, mask=None, data_range=None):
    """All three metrics; the mask restricts MAE/RMSE only, SSIM is always full-frame"""
    diff = _pair(pred, gt, mask)
    gt_arr = np.asarray(gt, dtype=np.float64)
    if data_range is None:
        data_range = max(float(gt_arr.max() - gt_arr.min()), config.SSIM_MIN_RANGE)
    return MetricReport(
        mae=float(np.mean(np.abs(diff))),
        rmse=float(np.sqrt(np.mean(diff ** 2))),
        ssim=ssim(pred, gt, data_range),
        n=int(diff.size),
        data_range=data_range,
    )


def format_table(rows):
    """
    Aligned text table.

    rows: iterable of (label, MetricReport).
    """
    rows = list(rows)
    width = max([len('Method')] + [len(label) for label, _ in rows])
    lines = [f"{'Method':<{width}}  {'MAE↓':>8}  {'RMSE↓':>8}  {'SSIM↑':>8}"]
    lines.append('-' * len(lines[0]))
    for label, rep in rows:
        lines.append(f"{label:<{width}}  {rep.mae:>8.4f}  {rep.rmse:>8.4f}  {rep.ssim:>8.4f}")
    return '\n'.join(lines)
