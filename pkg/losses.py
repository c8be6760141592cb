"""
Losses
=======
Scale-invariant height loss, pairwise depth ranking loss and the sky-masked
opacity loss. Every loss returns its value together with the analytic gradient
with respect to the prediction it scores.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import expit

import config
from errors import LossError

CONVENTIONS = ('verbatim', 'ordinal')

# ==========================================
# TYPES
# ==========================================
@dataclass
class RankPairs:
    """K pixel pairs (u = column, v = row) with ordinal labels r ∈ {-1, 0, +1}"""
    i_u: np.ndarray
    i_v: np.ndarray
    j_u: np.ndarray
    j_v: np.ndarray
    r: np.ndarray
    seed: int = None

    def __post_init__(self):
        arrays = [np.asarray(a).astype(np.int64).ravel()
                  for a in (self.i_u, self.i_v, self.j_u, self.j_v, self.r)]
        if len({a.size for a in arrays}) != 1:
            raise LossError("Rank pair columns have different lengths")
        if arrays[0].size < 1:
            raise LossError("RankPairs needs at least one pair")
        if not np.all(np.isin(arrays[4], (-1, 0, 1))):
            raise LossError("Rank labels must be -1, 0 or +1")
        self.i_u, self.i_v, self.j_u, self.j_v, self.r = arrays

    def __len__(self):
        return self.r.size

    def check_bounds(self, shape):
        h, w = shape
        for name, col, limit in (('i_u', self.i_u, w), ('j_u', self.j_u, w),
                                 ('i_v', self.i_v, h), ('j_v', self.j_v, h)):
            if np.any(col < 0) or np.any(col >= limit):
                raise LossError(f"Rank pair column {name} out of bounds for raster {shape}")

    def separations(self, width=None):
        """Pixel distance of each pair; width enables azimuthal wrap"""
        du = np.abs(self.i_u - self.j_u)
        if width is not None:
            du = np.minimum(du, width - du)
        return np.hypot(du, self.i_v - self.j_v)


@dataclass(frozen=True)
class LossBreakdown:
    l_h: float
    l_rank: float
    l_sky: float
    l_total: float
    alpha: float


def check_sky_mask(sky, shape):
    sky = np.asarray(sky)
    if sky.shape != tuple(shape):
        raise LossError(f"Sky mask shape {sky.shape} does not match panorama {tuple(shape)}")
    return sky.astype(bool)


def _check_pair(pred, gt, what):
    pred = np.asarray(pred, dtype=np.float64)
    gt = np.asarray(gt, dtype=np.float64)
    if pred.shape != gt.shape:
        raise LossError(f"{what}: prediction {pred.shape} and target {gt.shape} differ in shape")
    if np.isnan(pred).any() or np.isnan(gt).any():
        raise LossError(f"{what}: NaN in input")
    return pred, gt


# ==========================================
# HEIGHT LOSS
# ==========================================
def scale_invariant_loss(pred, gt, mask=None, lam=config.SI_LAMBDA, eps=config.HEIGHT_EPS):
    """
    Scale-invariant log loss on height rasters.

    With a = log y - log ŷ (both clamped below at eps) over the N pixels where
    mask is True:  L = ½·(mean((a - ā)²) + (1 - lam)·ā²), equal to
    ½·(mean(a²) - lam·ā²) but never negative for lam ≤ 1. lam = 1 is fully
    scale invariant; the clamp makes the gradient vanish wherever ŷ ≤ eps.

    Returns (L, ∂L/∂pred).
    """
    pred, gt = _check_pair(pred, gt, "scale_invariant_loss")
    if np.any(pred < 0) or np.any(gt < 0):
        raise LossError("scale_invariant_loss: heights must be >= 0")
    if mask is None:
        mask = np.ones(pred.shape, dtype=bool)
    else:
        mask = np.asarray(mask, dtype=bool)
        if mask.shape != pred.shape:
            raise LossError(f"scale_invariant_loss: mask {mask.shape} does not match {pred.shape}")
    n = int(mask.sum())
    if n == 0:
        raise LossError("scale_invariant_loss: no unmasked pixels")

    p = np.maximum(pred, eps)
    a = np.log(np.maximum(gt, eps)) - np.log(p)
    a_m = a[mask]
    mean_a = a_m.mean()
    loss = 0.5 * (np.mean((a_m - mean_a) ** 2) + (1.0 - lam) * mean_a ** 2)

    grad = np.zeros_like(pred)
    live = mask & (pred > eps)
    grad[live] = -(a[live] - lam * mean_a) / (n * p[live])
    return float(loss), grad


# ==========================================
# RANKING
# ==========================================
def _annulus_offsets(min_dist, max_dist, shape, wrap):
    h, w = shape
    reach = int(np.floor(max_dist))
    du, dv = np.meshgrid(np.arange(-reach, reach + 1), np.arange(-reach, reach + 1))
    du, dv = du.ravel(), dv.ravel()
    dist = np.hypot(du, dv)
    keep = (dist >= min_dist) & (dist <= max_dist) & (np.abs(dv) < h)
    # Wrapped offsets beyond half the width would alias to a shorter separation
    keep &= (np.abs(du) <= w // 2) if wrap else (np.abs(du) < w)
    return du[keep], dv[keep]


def rank_labels(d_i, d_j, tau_rel=config.RANK_TAU_REL, eps=config.HEIGHT_EPS):
    """0 within the relative equality band, +1 if d_i < d_j, else -1"""
    d_i = np.asarray(d_i, dtype=np.float64)
    d_j = np.asarray(d_j, dtype=np.float64)
    band = tau_rel * np.maximum(np.maximum(d_i, d_j), eps)
    return np.where(np.abs(d_i - d_j) <= band, 0, np.where(d_i < d_j, 1, -1)).astype(np.int64)


def sample_rank_pairs(depth, k=config.RANK_PAIRS, min_dist=config.RANK_MIN_DIST,
                      max_dist=config.RANK_MAX_DIST, tau_rel=config.RANK_TAU_REL,
                      seed=config.DEFAULT_SEED, valid=None, wrap=True, max_rounds=100):
    """
    Seeded pair sampler on a depth raster.

    First pixel uniform over valid pixels, second pixel uniform over the lattice
    annulus [min_dist, max_dist] around it (u wraps when wrap=True). Candidates
    that leave the raster vertically or land on an invalid pixel are redrawn.
    """
    depth = np.asarray(depth, dtype=np.float64)
    if depth.ndim != 2:
        raise LossError(f"Depth raster must be 2D, got shape {depth.shape}")
    if not np.all(np.isfinite(depth)):
        raise LossError("Depth raster contains NaN or Inf")
    h, w = depth.shape
    if int(k) < 1:
        raise LossError(f"Pair count must be >= 1, got {k}")
    if not (0 < min_dist <= max_dist < np.hypot(h, w)):
        raise LossError(
            f"Pair distance range [{min_dist}, {max_dist}] invalid for a {w}×{h} raster"
        )
    if valid is None:
        valid = np.ones(depth.shape, dtype=bool)
    else:
        valid = check_sky_mask(valid, depth.shape)

    du, dv = _annulus_offsets(min_dist, max_dist, depth.shape, wrap)
    first = np.flatnonzero(valid)
    if du.size == 0 or first.size == 0:
        raise LossError(
            f"No pixel pairs satisfy separation [{min_dist}, {max_dist}] on a {w}×{h} raster"
        )

    rng = np.random.default_rng(seed)
    k = int(k)
    picked = []
    have = 0
    for _ in range(max_rounds):
        start = first[rng.integers(0, first.size, size=k)]
        off = rng.integers(0, du.size, size=k)
        i_v, i_u = np.divmod(start, w)
        j_v = i_v + dv[off]
        j_u = i_u + du[off]
        if wrap:
            j_u = np.mod(j_u, w)
        ok = (j_v >= 0) & (j_v < h) & (j_u >= 0) & (j_u < w)
        ok[ok] = valid[j_v[ok], j_u[ok]]
        batch = np.stack([i_u, i_v, j_u, j_v], axis=1)[ok]
        picked.append(batch)
        have += len(batch)
        if have >= k:
            break
    else:
        raise LossError(f"Could only sample {have} of {k} rank pairs after {max_rounds} rounds")

    cols = np.concatenate(picked)[:k]
    i_u, i_v, j_u, j_v = cols.T
    r = rank_labels(depth[i_v, i_u], depth[j_v, j_u], tau_rel)
    return RankPairs(i_u, i_v, j_u, j_v, r, seed=seed)


def ranking_loss(pred, pairs, convention='verbatim'):
    """
    Three-case pairwise loss on a depth raster.

    verbatim: r=+1 → log(1+exp(y_j - y_i)), r=-1 → log(1+exp(y_i - y_j));
    ordinal swaps the two logistic cases; r=0 → (y_i - y_j)².

    Returns (sum, mean, ∂mean/∂pred).
    """
    if convention not in CONVENTIONS:
        raise LossError(f"Unknown ranking convention '{convention}', use one of {CONVENTIONS}")
    pred = np.asarray(pred, dtype=np.float64)
    if pred.ndim != 2:
        raise LossError(f"Predicted depth must be 2D, got shape {pred.shape}")
    pairs.check_bounds(pred.shape)

    y_i = pred[pairs.i_v, pairs.i_u]
    y_j = pred[pairs.j_v, pairs.j_u]
    diff = y_i - y_j
    sign = -pairs.r if convention == 'verbatim' else pairs.r
    tie = pairs.r == 0

    z = sign * diff
    psi = np.where(tie, diff ** 2, np.logaddexp(0.0, z))
    d_diff = np.where(tie, 2.0 * diff, sign * expit(z))

    k = len(pairs)
    total = float(psi.sum())
    grad = np.zeros(pred.size)
    w = pred.shape[1]
    grad += np.bincount(pairs.i_v * w + pairs.i_u, weights=d_diff / k, minlength=pred.size)
    grad -= np.bincount(pairs.j_v * w + pairs.j_u, weights=d_diff / k, minlength=pred.size)
    return total, total / k, grad.reshape(pred.shape)


# ==========================================
# SKY
# ==========================================
def sky_loss(opacity, sky):
    """
    Mean absolute opacity error: target 1 on non-sky rays, 0 on sky rays.

    Returns (L, ∂L/∂opacity); the subgradient is 0 at the kinks.
    """
    opacity = np.asarray(opacity, dtype=np.float64)
    sky = check_sky_mask(sky, opacity.shape)
    if np.isnan(opacity).any():
        raise LossError("sky_loss: NaN in opacity")
    n = opacity.size
    if n == 0:
        raise LossError("sky_loss: empty opacity raster")
    resid = np.where(sky, opacity, opacity - 1.0)
    return float(np.abs(resid).sum() / n), np.sign(resid) / n


# ==========================================
# TOTAL
# ==========================================
def total_loss(l_h, l_rank, l_sky, alpha=config.STREET_ALPHA):
    """l_total = l_h + alpha·(l_rank + l_sky)"""
    values = (l_h, l_rank, l_sky, alpha)
    if not all(np.isfinite(v) for v in values):
        raise LossError(f"total_loss: non-finite input {values}")
    l_total = l_h + alpha * (l_rank + l_sky)
    return LossBreakdown(float(l_h), float(l_rank), float(l_sky), float(l_total), float(alpha))
