"""
Finite-Difference Gradient Checks
==================================
Central-difference suites for the compositing adjoint, the batched renderer,
the three losses and the full optimizer objective.
"""

from dataclasses import dataclass

import numpy as np

import config
from density_field import DensityField, GridSpec
from logger import logger
from losses import ranking_loss, sample_rank_pairs, scale_invariant_loss, sky_loss
from optimize import OptimConfig, StreetSupervision, build_problem, objective
from render import backprop_bundle, composite, composite_grad, make_pano_rays, make_topdown_rays, render_bundle


@dataclass(frozen=True)
class SuiteResult:
    name: str
    max_rel_err: float
    tol: float
    checks: int

    @property
    def passed(self):
        return self.max_rel_err < self.tol


def rel_error(analytic, numeric, atol=config.GRADCHECK_ATOL):
    """|a - n| / max(|a|, |n|), or 0 when both agree to atol"""
    analytic = np.asarray(analytic, dtype=np.float64)
    numeric = np.asarray(numeric, dtype=np.float64)
    diff = np.abs(analytic - numeric)
    scale = np.maximum(np.abs(analytic), np.abs(numeric))
    with np.errstate(divide='ignore', invalid='ignore'):
        err = np.where(diff <= atol, 0.0, diff / scale)
    return err


def central_diff(fn, x, index, h):
    """(f(x + h·e_i) - f(x - h·e_i)) / 2h for a flat index i"""
    xp = x.copy()
    xm = x.copy()
    xp.flat[index] += h
    xm.flat[index] -= h
    return (fn(xp) - fn(xm)) / (2.0 * h)


def _max_err(analytic, fn, x, indices, h):
    indices = np.asarray(list(indices), dtype=np.int64)
    numeric = np.array([central_diff(fn, x, i, h) for i in indices])
    return float(np.max(rel_error(np.ravel(analytic)[indices], numeric)))


# ==========================================
# SUITES
# ==========================================
def check_composite(rng, rays=8, h=config.GRADCHECK_H_RENDER):
    """Single-ray depth / opacity adjoint, with and without a background"""
    worst = 0.0
    checks = 0
    for r in range(rays):
        s = int(rng.integers(1, 65))
        sigma = rng.uniform(0.0, 2.0, size=(1, s))
        delta = rng.uniform(0.1, 0.6, size=(1, s))
        dist = 0.5 + np.cumsum(delta, axis=1) - 0.5 * delta
        background = None if r % 2 == 0 else np.array([dist[0, -1] + delta[0, -1]])
        for d_depth, d_opacity in ((1.0, 0.0), (0.0, 1.0)):
            def loss(sig):
                depth, opacity, _ = composite(sig, delta, dist, background)
                return d_depth * depth[0] + d_opacity * opacity[0]

            analytic = composite_grad(sigma, delta, dist, [d_depth], [d_opacity], background)
            worst = max(worst, _max_err(analytic, loss, sigma, range(s), h))
            checks += s
    return SuiteResult('composite', worst, config.GRADCHECK_TOL, checks)


def check_render_bundle(rng, h=config.GRADCHECK_H_RENDER, samples=24):
    """Batched top-down and panorama rendering through trilinear sampling"""
    spec = GridSpec(6, 6, 6, (1.0, 1.0, 1.0))
    sigma = rng.uniform(0.1, 2.0, size=spec.shape)
    bundles = [
        make_topdown_rays(spec),
        make_pano_rays(spec, spec.default_camera(2.0), 8, 4, ground_plane=True),
    ]
    worst = 0.0
    indices = rng.choice(spec.size, size=samples, replace=False)
    for bundle in bundles:
        c_depth = rng.standard_normal(bundle.raster_shape)
        c_opacity = rng.standard_normal(bundle.raster_shape)

        def loss(sig):
            depth, opacity = render_bundle(DensityField(spec, sig), bundle, workers=1)
            return float(np.sum(c_depth * depth) + np.sum(c_opacity * opacity))

        analytic = backprop_bundle(DensityField(spec, sigma), bundle, c_depth, c_opacity, workers=1)
        worst = max(worst, _max_err(analytic, loss, sigma, indices, h))
    return SuiteResult('render', worst, config.GRADCHECK_TOL, samples * len(bundles))


def check_losses(rng, h=config.GRADCHECK_H_LOSS):
    """Scale-invariant, ranking (both conventions) and sky losses"""
    worst = 0.0
    checks = 0

    pred = rng.uniform(0.5, 5.0, size=(6, 6))
    gt = rng.uniform(0.5, 5.0, size=(6, 6))
    for lam in (1.0, 0.5):
        _, grad = scale_invariant_loss(pred, gt, lam=lam)
        worst = max(worst, _max_err(grad, lambda p: scale_invariant_loss(p, gt, lam=lam)[0],
                                    pred, range(pred.size), h))
        checks += pred.size

    depth = rng.uniform(1.0, 20.0, size=(8, 16))
    pairs = sample_rank_pairs(depth, k=64, min_dist=1.0, max_dist=4.0, tau_rel=0.05,
                              seed=int(rng.integers(1 << 31)))
    y = rng.uniform(1.0, 20.0, size=depth.shape)
    touched = np.unique(np.concatenate([pairs.i_v * 16 + pairs.i_u, pairs.j_v * 16 + pairs.j_u]))
    for convention in ('verbatim', 'ordinal'):
        _, _, grad = ranking_loss(y, pairs, convention)
        worst = max(worst, _max_err(grad, lambda p: ranking_loss(p, pairs, convention)[1],
                                    y, touched, h))
        checks += touched.size

    opacity = rng.uniform(0.01, 0.99, size=(4, 8))
    sky = rng.random(opacity.shape) < 0.4
    _, grad = sky_loss(opacity, sky)
    worst = max(worst, _max_err(grad, lambda o: sky_loss(o, sky)[0], opacity, range(opacity.size), h))
    checks += opacity.size
    return SuiteResult('losses', worst, config.GRADCHECK_TOL, checks)


def check_objective(rng, h=config.GRADCHECK_H_RENDER, entries=32):
    """Full objective w.r.t. θ on an 8×8×8 grid with a 4×8 panorama"""
    spec = GridSpec(8, 8, 8, (1.0, 1.0, 1.0))
    cam = spec.default_camera(2.0)
    gt_height = rng.uniform(0.5, 6.0, size=(spec.ny, spec.nx))
    oracle = rng.uniform(1.0, 10.0, size=(4, 8))
    sky = rng.random(oracle.shape) < 0.25
    seed = int(rng.integers(1 << 31))
    pairs = sample_rank_pairs(oracle, k=16, min_dist=1.0, max_dist=3.0, seed=seed, valid=~sky)
    street = StreetSupervision(cam=cam, sky=sky, depth=oracle, pairs=pairs)
    cfg = OptimConfig(alpha=1.0, k=16, min_dist=1.0, max_dist=3.0, pano_w=8, pano_h=4, seed=seed)
    problem = build_problem(gt_height, spec, cfg, street)

    theta = rng.uniform(-4.0, -1.0, size=spec.shape)
    _, grad = objective(theta, problem, pairs)
    indices = rng.choice(spec.size, size=entries, replace=False)
    worst = _max_err(grad, lambda t: objective(t, problem, pairs)[0].l_total, theta, indices, h)
    return SuiteResult('objective', worst, config.GRADCHECK_TOL_E2E, entries)


def run_gradcheck(seed=config.DEFAULT_SEED, include_objective=True):
    """Run every suite from one seed; returns a list of SuiteResult"""
    rng = np.random.default_rng(seed)
    suites = [check_composite(rng), check_render_bundle(rng), check_losses(rng)]
    if include_objective:
        suites.append(check_objective(rng))
    for suite in suites:
        logger.log_gradcheck(suite.name, suite.max_rel_err, suite.tol)
    return suites
