"""
Volumetric Rendering
=====================
Ray generation (top-down parallel and equirectangular), midpoint ray marching,
the compositing equation for depth/opacity and its exact adjoint.
"""

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field as dc_field

import numpy as np

import config
from density_field import trilinear_stencil, gather, scatter_to_grid
from errors import RenderError
from logger import logger

# ==========================================
# TYPES
# ==========================================
@dataclass
class Ray:
    origin: np.ndarray
    direction: np.ndarray
    t_near: float
    t_far: float

    def __post_init__(self):
        self.origin = np.asarray(self.origin, dtype=np.float64).reshape(3)
        self.direction = np.asarray(self.direction, dtype=np.float64).reshape(3)
        if abs(np.linalg.norm(self.direction) - 1.0) > 1e-9:
            raise RenderError(f"Ray direction must be unit length, got |d|={np.linalg.norm(self.direction)}")
        if not (np.all(np.isfinite(self.origin)) and np.isfinite(self.t_near) and np.isfinite(self.t_far)):
            raise RenderError("Ray origin and interval must be finite")


@dataclass
class RaySamples:
    """Per-sample density σ_i, step δ_i and distance d_i along one ray"""
    sigma: np.ndarray
    delta: np.ndarray
    dist: np.ndarray

    def __post_init__(self):
        self.sigma = np.asarray(self.sigma, dtype=np.float64).ravel()
        self.delta = np.asarray(self.delta, dtype=np.float64).ravel()
        self.dist = np.asarray(self.dist, dtype=np.float64).ravel()
        if not (self.sigma.size == self.delta.size == self.dist.size):
            raise RenderError(
                f"Sample arrays differ in length: σ {self.sigma.size}, δ {self.delta.size}, d {self.dist.size}"
            )
        if np.any(self.sigma < 0):
            raise RenderError("Negative density sample")
        if np.any(self.delta <= 0):
            raise RenderError("Step sizes must be > 0")
        if self.dist.size > 1 and np.any(np.diff(self.dist) <= 0):
            raise RenderError("Sample distances must be strictly increasing")

    @property
    def count(self):
        return self.sigma.size


@dataclass
class RenderResult:
    depth: float
    opacity: float
    weights: np.ndarray = dc_field(repr=False)


@dataclass
class RayBundle:
    """
    A batch of rays.

    background holds an opaque backdrop depth per ray; NaN means none (sky).
    """
    origins: np.ndarray
    directions: np.ndarray
    t_near: np.ndarray
    t_far: np.ndarray
    background: np.ndarray = None
    raster_shape: tuple = None

    def __post_init__(self):
        n = self.origins.shape[0]
        if self.background is None:
            self.background = np.full(n, np.nan)
        if self.raster_shape is None:
            self.raster_shape = (n,)

    def __len__(self):
        return self.origins.shape[0]

    def ray(self, i):
        return Ray(self.origins[i], self.directions[i], self.t_near[i], self.t_far[i])

    def slice(self, start, stop):
        return RayBundle(
            self.origins[start:stop], self.directions[start:stop],
            self.t_near[start:stop], self.t_far[start:stop],
            self.background[start:stop],
        )


# ==========================================
# COMPOSITING (batched core)
# ==========================================
def _composite(sigma, delta, dist):
    tau = sigma * delta
    csum = np.cumsum(tau, axis=-1)
    trans = np.exp(-(csum - tau))
    weights = trans * -np.expm1(-tau)
    depth = np.sum(weights * dist, axis=-1)
    opacity = np.sum(weights, axis=-1)
    return depth, opacity, weights, trans, csum


def composite(sigma, delta, dist, background=None):
    """
    Depth and opacity for a batch of rays, arrays shaped (R, S).

    Padded samples must carry δ = 0. background is (R,) with NaN for rays
    without a backdrop.
    """
    depth, opacity, weights, _, _ = _composite(sigma, delta, dist)
    if background is not None:
        has_bg = ~np.isnan(background)
        bg = np.where(has_bg, background, 0.0)
        depth = depth + np.where(has_bg, (1.0 - opacity) * bg, 0.0)
        opacity = np.where(has_bg, 1.0, opacity)
    return depth, opacity, weights


def composite_grad(sigma, delta, dist, d_depth, d_opacity, background=None):
    """Adjoint of composite: upstream (R,) gradients → ∂L/∂σ of shape (R, S)"""
    _, _, weights, trans, csum = _composite(sigma, delta, dist)
    trans_next = trans * np.exp(-sigma * delta)
    trans_final = np.exp(-csum[..., -1:])

    wd = weights * dist
    after_wd = np.cumsum(wd[..., ::-1], axis=-1)[..., ::-1] - wd

    dd_dsigma = delta * (trans_next * dist - after_wd)
    do_dsigma = delta * trans_final

    d_depth = np.asarray(d_depth, dtype=np.float64).reshape(-1, 1)
    d_opacity = np.asarray(d_opacity, dtype=np.float64).reshape(-1, 1)
    if background is not None:
        has_bg = ~np.isnan(background)
        bg = np.where(has_bg, background, 0.0)[:, None]
        dd_dsigma = dd_dsigma - np.where(has_bg[:, None], bg * do_dsigma, 0.0)
        do_dsigma = np.where(has_bg[:, None], 0.0, do_dsigma)
    return d_depth * dd_dsigma + d_opacity * do_dsigma


# ==========================================
# SINGLE-RAY API
# ==========================================
def _check_background(background_depth):
    if background_depth is None:
        return None
    bg = float(background_depth)
    if not np.isfinite(bg) or bg < 0:
        raise RenderError(f"Background depth must be finite and >= 0, got {background_depth}")
    return np.array([bg])


def render_ray(samples, background_depth=None):
    """
    Composite one ray.

    d̂ = Σ T_i (1 - exp(-σ_i δ_i)) d_i,  Ô = Σ T_i (1 - exp(-σ_i δ_i)),
    T_i = exp(-Σ_{j<i} σ_j δ_j). With a background, the residual transmittance
    lands on an opaque backdrop at background_depth and Ô becomes 1.
    """
    bg = _check_background(background_depth)
    if samples.count == 0:
        if bg is not None:
            return RenderResult(float(bg[0]), 1.0, np.zeros(0))
        return RenderResult(0.0, 0.0, np.zeros(0))
    depth, opacity, weights = composite(
        samples.sigma[None], samples.delta[None], samples.dist[None], bg
    )
    return RenderResult(float(depth[0]), float(opacity[0]), weights[0])


def render_ray_grad(samples, background_depth=None, d_depth=1.0, d_opacity=0.0):
    """∂L/∂σ_i for one ray given ∂L/∂d̂ and ∂L/∂Ô"""
    bg = _check_background(background_depth)
    if samples.count == 0:
        return np.zeros(0)
    grad = composite_grad(
        samples.sigma[None], samples.delta[None], samples.dist[None],
        [d_depth], [d_opacity], bg,
    )
    return grad[0]


# ==========================================
# RAY BUILDERS
# ==========================================
def make_topdown_rays(spec):
    """One downward ray per column, from the grid top to a virtual ground at the floor"""
    xs, ys = spec.column_centers()
    n = xs.size
    origins = np.stack([xs.ravel(), ys.ravel(), np.full(n, spec.top_z)], axis=1)
    directions = np.tile([0.0, 0.0, -1.0], (n, 1))
    return RayBundle(
        origins=origins,
        directions=directions,
        t_near=np.zeros(n),
        t_far=np.full(n, spec.height),
        background=np.full(n, spec.height),
        raster_shape=(spec.ny, spec.nx),
    )


def pano_angles(pano_w, pano_h):
    """Azimuth φ and elevation λ of every panorama pixel center, shape (h, w)"""
    u = np.arange(pano_w)
    v = np.arange(pano_h)
    phi = 2.0 * np.pi * (u + 0.5) / pano_w
    lam = 0.5 * np.pi - np.pi * (v + 0.5) / pano_h
    return np.meshgrid(phi, lam)


def pano_directions(phi, lam):
    """d = (cosλ sinφ, -cosλ cosφ, sinλ)"""
    phi = np.asarray(phi, dtype=np.float64)
    lam = np.asarray(lam, dtype=np.float64)
    cl = np.cos(lam)
    return np.stack([cl * np.sin(phi), -cl * np.cos(phi), np.sin(lam)], axis=-1)


def _check_camera(spec, cam):
    cam = np.asarray(cam, dtype=np.float64).reshape(3)
    if not np.all(np.isfinite(cam)):
        raise RenderError(f"Camera position must be finite, got {cam}")
    if not spec.contains(cam):
        raise RenderError(
            f"Camera {tuple(cam)} is outside the grid [{tuple(spec.lower)}, {tuple(spec.upper)}]"
        )
    return cam


def make_pano_rays(spec, cam, pano_w, pano_h, ground_plane=False):
    """
    One ray per equirectangular pixel, from cam to the grid boundary.

    With ground_plane, rays leaving through the grid floor end on an opaque
    backdrop at their exit distance; all other rays keep no background (sky).
    """
    cam = _check_camera(spec, cam)
    if pano_w < 1 or pano_h < 1:
        raise RenderError(f"Panorama size must be positive, got {pano_w}×{pano_h}")
    phi, lam = pano_angles(pano_w, pano_h)
    directions = pano_directions(phi, lam).reshape(-1, 3)
    n = directions.shape[0]
    origins = np.tile(cam, (n, 1))
    _, t_exit = spec.ray_box_interval(origins, directions)
    t_far = np.maximum(t_exit, 0.0)

    background = np.full(n, np.nan)
    if ground_plane:
        exit_z = cam[2] + t_far * directions[:, 2]
        tol = 1e-9 * max(1.0, spec.height)
        floor_hit = (directions[:, 2] < 0) & (np.abs(exit_z - spec.origin[2]) <= tol)
        background[floor_hit] = t_far[floor_hit]

    return RayBundle(
        origins=origins,
        directions=directions,
        t_near=np.zeros(n),
        t_far=t_far,
        background=background,
        raster_shape=(pano_h, pano_w),
    )


# ==========================================
# SAMPLING
# ==========================================
def _sample_count(span, step):
    if span <= 0:
        return 0
    return int(math.ceil(span / step - 1e-9))


def sample_along_ray(field, ray, step=None):
    """Uniform midpoint samples; the last step is truncated at the grid exit"""
    step = field.spec.default_step if step is None else float(step)
    if not step > 0:
        raise RenderError(f"Step must be > 0, got {step}")
    span = ray.t_far - ray.t_near
    n = _sample_count(span, step)
    if n == 0:
        return RaySamples(np.zeros(0), np.zeros(0), np.zeros(0))
    delta = np.full(n, step)
    delta[-1] = span - (n - 1) * step
    dist = ray.t_near + (np.arange(n) + 0.5) * step
    dist[-1] = ray.t_near + (n - 1) * step + 0.5 * delta[-1]
    points = ray.origin[None] + dist[:, None] * ray.direction[None]
    idx, w = trilinear_stencil(field.spec, points)
    return RaySamples(gather(field.flat(), idx, w), delta, dist)


def _march(bundle, step):
    """Padded (R, S) sample layout for a bundle; padding has δ = 0"""
    span = np.maximum(bundle.t_far - bundle.t_near, 0.0)
    counts = np.where(span > 0, np.ceil(span / step - 1e-9), 0).astype(np.int64)
    s_max = int(counts.max()) if counts.size else 0
    if s_max == 0:
        r = len(bundle)
        return np.zeros((r, 0)), np.zeros((r, 0)), counts
    k = np.arange(s_max)[None, :]
    last = (counts - 1)[:, None]
    delta = np.where(k < last, step, 0.0)
    tail = span[:, None] - last * step
    delta = np.where(k == last, tail, delta)
    dist = bundle.t_near[:, None] + (k + 0.5) * step
    dist = np.where(k == last, bundle.t_near[:, None] + last * step + 0.5 * tail, dist)
    dist = np.where(k > last, bundle.t_far[:, None], dist)
    return dist, delta, counts


def _total_samples(bundle, step):
    span = np.maximum(bundle.t_far - bundle.t_near, 0.0)
    return int(np.sum(np.where(span > 0, np.ceil(span / step - 1e-9), 0)))


def _chunk_forward(flat_sigma, spec, bundle, step):
    dist, delta, _ = _march(bundle, step)
    r, s = dist.shape
    if s == 0:
        return dist, delta, None, None, np.zeros((r, 0))
    points = bundle.origins[:, None, :] + dist[..., None] * bundle.directions[:, None, :]
    idx, w = trilinear_stencil(spec, points.reshape(-1, 3))
    sigma = gather(flat_sigma, idx, w).reshape(r, s)
    return dist, delta, idx, w, sigma


def _chunks(n, chunk_size):
    chunk_size = max(1, int(chunk_size))
    return [(i, min(i + chunk_size, n)) for i in range(0, n, chunk_size)]


def _run(fn, jobs, workers):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(job) for job in jobs]
    with ThreadPoolExecutor(max_workers=workers) as pool:
        # map preserves job order, so reductions below are schedule independent
        return list(pool.map(fn, jobs))


def render_bundle(field, bundle, step=None, chunk_size=None, workers=None):
    """Forward render of every ray in a bundle → (depth, opacity) shaped like the raster"""
    step = field.spec.default_step if step is None else float(step)
    if not step > 0:
        raise RenderError(f"Step must be > 0, got {step}")
    chunk_size = config.RENDER_CHUNK_SIZE if chunk_size is None else chunk_size
    workers = config.RENDER_WORKERS if workers is None else workers
    flat_sigma = field.flat()
    started = time.time()

    def job(bounds):
        part = bundle.slice(*bounds)
        dist, delta, _, _, sigma = _chunk_forward(flat_sigma, field.spec, part, step)
        return composite(sigma, delta, dist, part.background)[:2]

    results = _run(job, _chunks(len(bundle), chunk_size), workers)
    depth = np.concatenate([d for d, _ in results]) if results else np.zeros(0)
    opacity = np.concatenate([o for _, o in results]) if results else np.zeros(0)
    logger.log_render('bundle', len(bundle), _total_samples(bundle, step), time.time() - started)
    return depth.reshape(bundle.raster_shape), opacity.reshape(bundle.raster_shape)


def backprop_bundle(field, bundle, d_depth, d_opacity=None, step=None, chunk_size=None, workers=None):
    """
    Adjoint of render_bundle.

    d_depth / d_opacity are per-ray upstream gradients (raster shaped or flat);
    returns ∂L/∂σ on the grid, shape (nz, ny, nx).
    """
    spec = field.spec
    step = spec.default_step if step is None else float(step)
    chunk_size = config.RENDER_CHUNK_SIZE if chunk_size is None else chunk_size
    workers = config.RENDER_WORKERS if workers is None else workers
    d_depth = np.asarray(d_depth, dtype=np.float64).ravel()
    d_opacity = np.zeros_like(d_depth) if d_opacity is None else np.asarray(d_opacity, dtype=np.float64).ravel()
    flat_sigma = field.flat()

    def job(bounds):
        start, stop = bounds
        part = bundle.slice(start, stop)
        dist, delta, idx, w, sigma = _chunk_forward(flat_sigma, spec, part, step)
        if idx is None:
            return None
        g = composite_grad(sigma, delta, dist, d_depth[start:stop], d_opacity[start:stop], part.background)
        return scatter_to_grid(spec, idx, w, g.ravel())

    grad = np.zeros(spec.size)
    for partial in _run(job, _chunks(len(bundle), chunk_size), workers):
        if partial is not None:
            grad += partial
    return grad.reshape(spec.shape)


# ==========================================
# HEIGHT MAPS & PANORAMAS
# ==========================================
def height_from_depth(depth, spec):
    """Invert overhead depth: height = clamp(grid_height - d̂, 0, grid_height)"""
    return np.clip(spec.height - depth, 0.0, spec.height)


def height_grad_to_depth(d_height, depth, spec):
    """Chain ∂L/∂height back to ∂L/∂d̂ through the clamp (pass-through on its closed range)"""
    raw = spec.height - depth
    inside = (raw >= 0.0) & (raw <= spec.height)
    return np.where(inside, -np.asarray(d_height, dtype=np.float64), 0.0)


def render_height_map(field, step=None):
    """Top-down parallel render inverted to an (ny, nx) height raster"""
    bundle = make_topdown_rays(field.spec)
    depth, _ = render_bundle(field, bundle, step)
    return height_from_depth(depth, field.spec)


def render_depth_pano(field, cam, pano_w=config.PANO_WIDTH, pano_h=config.PANO_HEIGHT,
                      step=None, ground_plane=False):
    """Equirectangular depth and opacity rasters, shape (pano_h, pano_w)"""
    bundle = make_pano_rays(field.spec, cam, pano_w, pano_h, ground_plane=ground_plane)
    return render_bundle(field, bundle, step)
