"""
Field Optimizer
================
Fits a density field to a ground-truth height map plus optional street-level
supervision (rank pairs and a sky mask) by Adam on θ, with σ = softplus(θ).
"""

from dataclasses import dataclass, field as dc_field, replace

import numpy as np
from scipy.special import expit
from tqdm import tqdm

import config
from density_field import DensityField, FeatureGrid
from errors import DivergenceError, GridError, LossError, OptimizeError
from logger import logger
from losses import (
    CONVENTIONS, LossBreakdown, RankPairs, check_sky_mask, ranking_loss,
    sample_rank_pairs, scale_invariant_loss, sky_loss, total_loss,
)
from pano_geometry import CutoutSpec, cutout_map, lift_multiscale, pano_pyramid
from render import (
    backprop_bundle, height_from_depth, height_grad_to_depth, make_pano_rays,
    make_topdown_rays, render_bundle,
)

RANK_SOURCES = ('pano', 'cutouts')

# ==========================================
# CONFIGURATION
# ==========================================
@dataclass(frozen=True)
class OptimConfig:
    alpha: float = config.STREET_ALPHA
    lr: float = config.LEARNING_RATE
    beta1: float = config.ADAM_BETA1
    beta2: float = config.ADAM_BETA2
    adam_eps: float = config.ADAM_EPS
    epochs: int = config.EPOCHS
    lr_decay: float = config.LR_DECAY
    lr_decay_every: int = config.LR_DECAY_EVERY
    seed: int = config.DEFAULT_SEED
    step: float = None
    cam: tuple = None
    k: int = config.RANK_PAIRS
    min_dist: float = config.RANK_MIN_DIST
    max_dist: float = config.RANK_MAX_DIST
    tau_rel: float = config.RANK_TAU_REL
    use_rank: bool = True
    use_sky: bool = True
    rank_convention: str = 'ordinal'
    rank_source: str = 'pano'
    si_lambda: float = config.SI_LAMBDA
    init_sigma: float = None
    init_height: float = config.INIT_HEIGHT
    init_gain: float = config.INIT_GAIN
    lift_init: bool = False
    lift_gain: float = config.LIFT_GAIN
    ground_plane: bool = True
    pano_w: int = config.PANO_WIDTH
    pano_h: int = config.PANO_HEIGHT
    deterministic: bool = True
    workers: int = None
    log_every: int = 10

    def __post_init__(self):
        if not self.lr > 0:
            raise OptimizeError(f"Learning rate must be > 0, got {self.lr}")
        for name in ('beta1', 'beta2'):
            beta = getattr(self, name)
            if not 0.0 <= beta < 1.0:
                raise OptimizeError(f"{name} must be in [0, 1), got {beta}")
        if int(self.epochs) != self.epochs or self.epochs < 1:
            raise OptimizeError(f"Epochs must be an integer >= 1, got {self.epochs}")
        if not self.adam_eps > 0:
            raise OptimizeError(f"adam_eps must be > 0, got {self.adam_eps}")
        if not (0.0 < self.lr_decay <= 1.0) or self.lr_decay_every < 1:
            raise OptimizeError("lr_decay must be in (0, 1] and lr_decay_every >= 1")
        if not (np.isfinite(self.alpha) and self.alpha >= 0):
            raise OptimizeError(f"alpha must be finite and >= 0, got {self.alpha}")
        if self.rank_convention not in CONVENTIONS:
            raise OptimizeError(f"rank_convention must be one of {CONVENTIONS}")
        if self.rank_source not in RANK_SOURCES:
            raise OptimizeError(f"rank_source must be one of {RANK_SOURCES}")
        if self.init_sigma is not None and not self.init_sigma > 0:
            raise OptimizeError(f"init_sigma must be > 0, got {self.init_sigma}")
        if not self.init_height > 0:
            raise OptimizeError(f"init_height must be > 0, got {self.init_height}")
        if not self.lift_gain >= 0:
            raise OptimizeError(f"lift_gain must be >= 0, got {self.lift_gain}")
        if self.step is not None and not self.step > 0:
            raise OptimizeError(f"Step must be > 0, got {self.step}")

    @property
    def render_workers(self):
        if self.deterministic:
            return 1
        return config.RENDER_WORKERS if self.workers is None else self.workers

    def lr_at(self, epoch):
        """Step schedule: lr · decay^⌊(epoch-1)/every⌋, epochs counted from 1"""
        return self.lr * self.lr_decay ** ((epoch - 1) // self.lr_decay_every)

    def start_sigma(self, spec):
        """Uniform starting density: init_sigma when set, else derived from init_height"""
        if self.init_sigma is not None:
            return self.init_sigma
        return initial_sigma(spec, self.init_height)


@dataclass
class OptimState:
    theta: np.ndarray
    m: np.ndarray
    v: np.ndarray
    t: int = 0
    trace: list = dc_field(default_factory=list)

    @classmethod
    def fresh(cls, theta):
        theta = np.asarray(theta, dtype=np.float64)
        return cls(theta.copy(), np.zeros_like(theta), np.zeros_like(theta))

    def field(self, spec):
        return DensityField(spec, softplus(self.theta))


@dataclass
class StreetSupervision:
    """
    Street-level targets for one panorama camera.

    depth is the (pseudo-)depth oracle used to label rank pairs; pairs, when
    given, are used as-is every epoch instead of resampling.
    """
    cam: np.ndarray
    sky: np.ndarray
    depth: np.ndarray = None
    pairs: RankPairs = None

    def __post_init__(self):
        self.cam = np.asarray(self.cam, dtype=np.float64).reshape(3)
        self.sky = np.asarray(self.sky).astype(bool)
        if self.depth is None and self.pairs is None:
            raise OptimizeError("Street supervision needs a depth oracle or fixed rank pairs")
        if self.depth is not None:
            self.depth = np.asarray(self.depth, dtype=np.float64)
            check_sky_mask(self.sky, self.depth.shape)

    @property
    def shape(self):
        return self.sky.shape


# ==========================================
# PARAMETERIZATION
# ==========================================
def softplus(theta):
    return np.logaddexp(0.0, theta)


def softplus_inverse(x):
    """log(exp(x) - 1) written as x + log(1 - exp(-x)) for x > 0"""
    x = np.asarray(x, dtype=np.float64)
    if np.any(x <= 0):
        raise OptimizeError("softplus_inverse needs strictly positive input")
    return x + np.log(-np.expm1(-x))


def init_from_lift(lifted, gain=config.INIT_GAIN):
    """θ = softplus⁻¹(max(gain·lifted, 1e-6)) from a single-channel lifted grid"""
    if isinstance(lifted, FeatureGrid):
        if lifted.channels != 1:
            raise OptimizeError(f"init_from_lift needs one channel, got {lifted.channels}")
        values = lifted.data[0]
    else:
        values = np.asarray(lifted, dtype=np.float64)
        if values.ndim != 3:
            raise OptimizeError(f"init_from_lift needs a single-channel grid, got shape {values.shape}")
    sigma = np.maximum(gain * values, config.MIN_LIFT_SIGMA)
    return OptimState.fresh(softplus_inverse(sigma))


def initial_sigma(spec, height=config.INIT_HEIGHT):
    """
    Uniform σ whose columns render about `height` meters.

    Thin-column limit of the top-down renderer: h ≈ σ·H²/2. The default
    height sits near sqrt(eps · roof height), so ground and roofs start at
    similar log distances from their targets.
    """
    if not 0.0 < height < spec.height:
        raise OptimizeError(f"Initial height must be in (0, {spec.height}) m, got {height}")
    return 2.0 * height / spec.height ** 2


def init_uniform(spec, sigma):
    return OptimState.fresh(np.full(spec.shape, float(softplus_inverse(sigma))))


def street_prior(street, spec, levels=config.LIFT_LEVELS):
    """Non-sky indicator lifted from the street camera, averaged over a panorama pyramid (values in [0, 1])"""
    pyramid = pano_pyramid((~street.sky).astype(np.float64), levels)
    lifted = lift_multiscale(pyramid, spec, street.cam)
    return FeatureGrid(spec, lifted.data / len(pyramid))


def fused_init(prior, sigma0, gain=config.LIFT_GAIN):
    """θ from σ₀·(1 + gain·prior): denser along directions the street camera sees as solid"""
    if prior.channels != 1:
        raise OptimizeError(f"Street prior needs one channel, got {prior.channels}")
    return init_from_lift(FeatureGrid(prior.spec, sigma0 * (1.0 + gain * prior.data)), 1.0)


# ==========================================
# ADAM
# ==========================================
def adam_step(state, grad, cfg, lr=None):
    """Bias-corrected Adam update of state.theta in place; returns the state"""
    grad = np.asarray(grad, dtype=np.float64)
    if grad.shape != state.theta.shape:
        raise OptimizeError(f"Gradient shape {grad.shape} does not match θ {state.theta.shape}")
    if not np.all(np.isfinite(grad)):
        raise OptimizeError("Non-finite gradient")
    lr = cfg.lr if lr is None else lr

    state.t += 1
    state.m = cfg.beta1 * state.m + (1.0 - cfg.beta1) * grad
    state.v = cfg.beta2 * state.v + (1.0 - cfg.beta2) * grad * grad
    m_hat = state.m / (1.0 - cfg.beta1 ** state.t)
    v_hat = state.v / (1.0 - cfg.beta2 ** state.t)
    state.theta = state.theta - lr * m_hat / (np.sqrt(v_hat) + cfg.adam_eps)
    return state


# ==========================================
# OBJECTIVE
# ==========================================
@dataclass
class FitProblem:
    """Everything an objective evaluation needs besides θ and the rank pairs"""
    spec: object
    cfg: OptimConfig
    gt_height: np.ndarray
    height_mask: np.ndarray = None
    street: StreetSupervision = None
    topdown: object = None
    pano: object = None
    cutouts: list = None

    @property
    def uses_street(self):
        return (self.street is not None and self.cfg.alpha > 0
                and (self.cfg.use_rank or self.cfg.use_sky))

    @property
    def uses_rank(self):
        return self.uses_street and self.cfg.use_rank


def build_problem(gt_height, spec, cfg, street=None, height_mask=None):
    gt_height = np.asarray(gt_height, dtype=np.float64)
    if gt_height.shape != (spec.ny, spec.nx):
        raise OptimizeError(
            f"Height map {gt_height.shape} does not match grid footprint {(spec.ny, spec.nx)}"
        )
    if height_mask is not None:
        height_mask = np.asarray(height_mask, dtype=bool)
        if height_mask.shape != gt_height.shape:
            raise OptimizeError(f"Height mask {height_mask.shape} does not match {gt_height.shape}")

    problem = FitProblem(spec, cfg, gt_height, height_mask, street, make_topdown_rays(spec))
    if problem.uses_street:
        pano_h, pano_w = street.shape
        problem.pano = make_pano_rays(spec, street.cam, pano_w, pano_h, ground_plane=cfg.ground_plane)
        if cfg.rank_source == 'cutouts' and cfg.use_rank:
            if street.pairs is not None:
                raise OptimizeError(
                    "Fixed rank pairs index panorama pixels; use rank_source='pano' with them "
                    "or give a depth oracle so pairs are drawn per cutout"
                )
            problem.cutouts = [
                cutout_map(CutoutSpec(heading=h, out_w=pano_h, out_h=pano_h), pano_w, pano_h)
                for h in config.CUTOUT_HEADINGS
            ]
    return problem


def sample_epoch_pairs(problem, epoch):
    """Rank pairs for one epoch: fixed pairs, or resampled with seed + epoch"""
    if not problem.uses_rank:
        return None
    street, cfg = problem.street, problem.cfg
    if street.pairs is not None:
        return street.pairs
    seed = cfg.seed + epoch
    if problem.cutouts is None:
        return sample_rank_pairs(street.depth, cfg.k, cfg.min_dist, cfg.max_dist, cfg.tau_rel,
                                 seed=seed, valid=~street.sky, wrap=True)
    per_view = max(1, cfg.k // len(problem.cutouts))
    pairs = []
    for offset, cmap in enumerate(problem.cutouts):
        depth = cmap.apply(street.depth)
        valid = cmap.apply(street.sky.astype(np.float64)) < 0.5
        pairs.append(sample_rank_pairs(depth, per_view, cfg.min_dist, cfg.max_dist, cfg.tau_rel,
                                       seed=seed * len(problem.cutouts) + offset,
                                       valid=valid, wrap=False))
    return pairs


def _rank_term(problem, depth, pairs):
    conv = problem.cfg.rank_convention
    if problem.cutouts is None:
        _, mean, grad = ranking_loss(depth, pairs, conv)
        return mean, grad
    n = len(problem.cutouts)
    total = 0.0
    grad = np.zeros(depth.shape)
    for cmap, view_pairs in zip(problem.cutouts, pairs):
        _, mean, g = ranking_loss(cmap.apply(depth), view_pairs, conv)
        total += mean / n
        grad += cmap.adjoint(g) / n
    return total, grad


def objective(theta, problem, pairs=None):
    """
    Full loss at θ and its analytic gradient.

    Returns (LossBreakdown, ∂L_total/∂θ). Non-finite loss components come back
    in the breakdown unchanged so the caller can decide how to fail.
    """
    spec, cfg = problem.spec, problem.cfg
    workers = cfg.render_workers
    step = cfg.step
    fld = DensityField(spec, softplus(theta))

    depth_td, _ = render_bundle(fld, problem.topdown, step, workers=workers)
    height = height_from_depth(depth_td, spec)
    l_h, g_height = scale_invariant_loss(height, problem.gt_height, problem.height_mask,
                                         lam=cfg.si_lambda)
    d_depth_td = height_grad_to_depth(g_height, depth_td, spec)
    grad_sigma = backprop_bundle(fld, problem.topdown, d_depth_td, step=step, workers=workers)

    l_rank = l_sky = 0.0
    if problem.uses_street:
        depth_p, opacity_p = render_bundle(fld, problem.pano, step, workers=workers)
        d_depth = np.zeros(depth_p.shape)
        d_opacity = np.zeros(opacity_p.shape)
        if cfg.use_rank:
            l_rank, g_rank = _rank_term(problem, depth_p, pairs)
            d_depth += cfg.alpha * g_rank
        if cfg.use_sky:
            l_sky, g_sky = sky_loss(opacity_p, problem.street.sky)
            d_opacity += cfg.alpha * g_sky
        grad_sigma = grad_sigma + backprop_bundle(fld, problem.pano, d_depth, d_opacity,
                                                  step=step, workers=workers)

    values = (l_h, l_rank, l_sky)
    if all(np.isfinite(values)):
        breakdown = total_loss(l_h, l_rank, l_sky, cfg.alpha)
    else:
        breakdown = LossBreakdown(l_h, l_rank, l_sky, float('nan'), cfg.alpha)
    return breakdown, grad_sigma * expit(theta)


# ==========================================
# FIT LOOP
# ==========================================
def _initial_state(spec, cfg, init, street):
    if cfg.lift_init:
        if init is not None:
            raise OptimizeError("lift_init builds its own starting field; drop the explicit init")
        if street is None:
            raise OptimizeError("lift_init needs street supervision for the sky mask and camera")
        logger.info(f"Starting from the lifted street prior (gain {cfg.lift_gain})", stage='optimize')
        return fused_init(street_prior(street, spec), cfg.start_sigma(spec), cfg.lift_gain)
    if init is None:
        return init_uniform(spec, cfg.start_sigma(spec))
    if isinstance(init, OptimState):
        if init.theta.shape != spec.shape:
            raise OptimizeError(f"Initial θ {init.theta.shape} does not match grid {spec.shape}")
        return init
    state = init_from_lift(init, cfg.init_gain)
    if state.theta.shape != spec.shape:
        raise OptimizeError(f"Initial grid {state.theta.shape} does not match {spec.shape}")
    return state


def fit_field(gt_height, spec, cfg=None, street=None, height_mask=None, init=None, progress=None):
    """
    Optimize θ for cfg.epochs epochs.

    Returns (DensityField, trace) where trace holds one (epoch, LossBreakdown, lr)
    tuple per completed epoch. A non-finite loss raises DivergenceError with the
    trace so far.
    """
    cfg = OptimConfig() if cfg is None else cfg
    problem = build_problem(gt_height, spec, cfg, street, height_mask)
    state = _initial_state(spec, cfg, init, street)
    show = config.SHOW_PROGRESS if progress is None else progress

    logger.info(
        f"Fitting {spec.nx}×{spec.ny}×{spec.nz} grid for {cfg.epochs} epochs "
        f"(alpha={cfg.alpha}, rank={problem.uses_rank}, sky={problem.uses_street and cfg.use_sky})",
        stage='optimize'
    )

    epochs = range(1, cfg.epochs + 1)
    bar = tqdm(epochs, desc='fit', unit='epoch', disable=not show, leave=False)
    for epoch in bar:
        lr = cfg.lr_at(epoch)
        pairs = sample_epoch_pairs(problem, epoch)
        try:
            breakdown, grad = objective(state.theta, problem, pairs)
        except (GridError, LossError) as e:
            if not np.all(np.isfinite(state.theta)):
                raise DivergenceError(f"θ became non-finite before epoch {epoch}", state.trace) from e
            raise

        if not np.isfinite(breakdown.l_total) or not np.all(np.isfinite(grad)):
            raise DivergenceError(
                f"Loss became non-finite at epoch {epoch} "
                f"(l_h={breakdown.l_h}, l_rank={breakdown.l_rank}, l_sky={breakdown.l_sky})",
                state.trace,
            )

        state.trace.append((epoch, breakdown, lr))
        logger.log_epoch(epoch, breakdown, lr, every=cfg.log_every)
        bar.set_postfix(loss=f"{breakdown.l_total:.4f}")
        adam_step(state, grad, cfg, lr=lr)

    bar.close()
    return state.field(spec), state.trace


def street_from_truth(truth, pairs=None):
    """Street supervision from an oracle SceneTruth"""
    return StreetSupervision(cam=truth.cam, sky=truth.sky, depth=truth.pano_depth, pairs=pairs)


def with_overrides(cfg, **changes):
    """Copy of cfg with some fields replaced (re-validated)"""
    return replace(cfg, **changes)
