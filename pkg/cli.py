"""
densityfit command line
========================
Scene generation, rendering, fitting, metrics, gradient checks, rank pairs,
cutouts and the loss ablation, all seeded from --seed.

Exit codes: 0 success, 1 usage error, 2 runtime / validation error.
"""

import argparse
import os
import sys
import time

import numpy as np

import config
import file_io
from density_field import GridSpec
from errors import DensityFitError, DivergenceError, UsageError
from gradcheck import run_gradcheck
from logger import ErrorCategory, log_error_with_context, log_run_footer, log_run_header, logger
from losses import sample_rank_pairs
from metrics import evaluate, format_table
from optimize import OptimConfig, StreetSupervision, fit_field
from pano_geometry import CutoutSpec, extract_cutout
from render import render_depth_pano, render_height_map
from scene_sim import canonical_scenes, make_truth, occupancy_field

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_RUNTIME = 2


class CliParser(argparse.ArgumentParser):
    """ArgumentParser whose usage errors surface as UsageError instead of exit(2)"""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _positive(text):
    try:
        value = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected a number, got '{text}'") from None
    if not value > 0:
        raise argparse.ArgumentTypeError(f"must be > 0, got {text}")
    return value


def _triple(text):
    try:
        values = tuple(float(v) for v in text.split(','))
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got '{text}'") from None
    if len(values) != 3:
        raise argparse.ArgumentTypeError(f"expected x,y,z, got '{text}'")
    return values


# ==========================================
# SCENE
# ==========================================
def _load_scene(args):
    if args.canonical:
        scenes = canonical_scenes()
        if args.canonical not in scenes:
            raise UsageError(f"Unknown canonical scene '{args.canonical}', choose from {sorted(scenes)}")
        return scenes[args.canonical]
    if not args.spec:
        raise UsageError("scene gen needs a scene JSON path or --canonical NAME")
    return file_io.read_scene(args.spec)


def cmd_scene_gen(args):
    scene = _load_scene(args)
    grid = scene.grid(args.voxel, args.vz)
    truth = make_truth(scene, grid, args.pano_w, args.pano_h, args.noise, args.seed)
    os.makedirs(args.out_dir, exist_ok=True)

    out = lambda name: os.path.join(args.out_dir, name)
    file_io.write_scene(out('scene.json'), scene)
    file_io.write_pfm(out('height.pfm'), truth.height)
    file_io.write_pfm(out('pano_depth.pfm'), truth.pano_depth)
    file_io.write_pgm(out('sky.pgm'), truth.sky)
    if args.field:
        file_io.write_df32(out('field.df32'), occupancy_field(scene, grid, args.sigma_hi))

    print(f"✅ Scene with {len(scene.boxes)} boxes → {args.out_dir}")
    print(f"   grid {grid.nx}×{grid.ny}×{grid.nz} | pano {args.pano_w}×{args.pano_h} | "
          f"sky {truth.sky.mean() * 100:.1f}%")
    return EXIT_OK


# ==========================================
# RENDER
# ==========================================
def cmd_render(args):
    field = file_io.read_df32(args.field)
    if args.mode == 'height':
        raster = render_height_map(field, args.step)
        file_io.write_pfm(args.out, raster)
        print(f"✅ Height map {raster.shape[1]}×{raster.shape[0]} → {args.out} "
              f"(max {raster.max():.3f} m)")
        return EXIT_OK

    cam = field.spec.default_camera() if args.cam is None else np.array(args.cam)
    depth, opacity = render_depth_pano(field, cam, args.width, args.height, args.step,
                                       ground_plane=args.ground_plane)
    file_io.write_pfm(args.out, depth)
    if args.opacity:
        file_io.write_pfm(args.opacity, opacity)
    print(f"✅ Depth panorama {args.width}×{args.height} → {args.out}")
    return EXIT_OK


# ==========================================
# OPTIMIZE
# ==========================================
def _grid_for(height, args):
    ny, nx = height.shape
    vz = args.voxel if args.vz is None else args.vz
    return GridSpec(nx, ny, args.nz, (args.voxel, args.voxel, vz))


def _optim_config(args, **overrides):
    values = dict(
        alpha=args.alpha, lr=args.lr, epochs=args.epochs, seed=args.seed, step=args.step,
        k=args.k, min_dist=args.min, max_dist=args.max, tau_rel=args.tau,
        use_rank=not args.no_rank, use_sky=not args.no_sky,
        rank_convention=args.convention, rank_source=args.rank_source,
        si_lambda=args.si_lambda, init_sigma=args.init_sigma, init_height=args.init_height,
        lift_gain=args.lift_gain, lift_init=getattr(args, 'init_lift', False),
    )
    values.update(overrides)
    return OptimConfig(**values)


def cmd_optimize(args):
    gt = file_io.read_pfm(args.gt).astype(np.float64)
    spec = _grid_for(gt, args)
    height_mask = None if args.mask is None else ~file_io.read_pgm(args.mask)

    if args.init_lift and not (args.pano or args.pairs):
        raise UsageError("--init-lift lifts the street sky mask; give --pano or --pairs with --sky")

    street = None
    if args.pano or args.pairs:
        if args.sky is None:
            raise UsageError("street supervision needs --sky alongside --pano / --pairs")
        sky = file_io.read_pgm(args.sky)
        depth = None if args.pano is None else file_io.read_pfm(args.pano).astype(np.float64)
        pairs = None if args.pairs is None else file_io.read_pairs(args.pairs, seed=args.seed)
        cam = spec.default_camera() if args.cam is None else np.array(args.cam)
        street = StreetSupervision(cam=cam, sky=sky, depth=depth, pairs=pairs)

    cfg = _optim_config(args)
    try:
        field, trace = fit_field(gt, spec, cfg, street=street, height_mask=height_mask)
    except DivergenceError as e:
        if args.trace:
            file_io.write_trace(args.trace, e.trace)
        raise

    file_io.write_df32(args.out, field)
    if args.trace:
        file_io.write_trace(args.trace, trace)
    final = trace[-1][1]
    print(f"✅ Fitted {spec.nx}×{spec.ny}×{spec.nz} field in {len(trace)} epochs → {args.out}")
    print(f"   L_total {final.l_total:.6f} (L_h {final.l_h:.6f}, L_rank {final.l_rank:.6f}, "
          f"L_sky {final.l_sky:.6f})")
    return EXIT_OK


# ==========================================
# METRICS / GRADCHECK / PAIRS / CUTOUT
# ==========================================
def cmd_metrics(args):
    pred = file_io.read_pfm(args.pred).astype(np.float64)
    gt = file_io.read_pfm(args.gt).astype(np.float64)
    mask = None if args.mask is None else ~file_io.read_pgm(args.mask)
    report = evaluate(pred, gt, mask, args.data_range)
    print(f"mae={report.mae:.6f} rmse={report.rmse:.6f} ssim={report.ssim:.6f}")
    if args.csv:
        file_io.write_metrics(args.csv, [(os.path.basename(args.pred), report)])
    return EXIT_OK


def cmd_gradcheck(args):
    suites = run_gradcheck(args.seed, include_objective=not args.skip_objective)
    for suite in suites:
        mark = '✅' if suite.passed else '❌'
        print(f"{mark} {suite.name:<10} max_rel_err={suite.max_rel_err:.3e} "
              f"tol={suite.tol:.0e} checks={suite.checks}")
    return EXIT_OK if all(s.passed for s in suites) else EXIT_RUNTIME


def cmd_pairs(args):
    depth = file_io.read_pfm(args.depth).astype(np.float64)
    valid = None if args.sky is None else ~file_io.read_pgm(args.sky)
    pairs = sample_rank_pairs(depth, args.k, args.min, args.max, args.tau, args.seed,
                              valid=valid, wrap=not args.no_wrap)
    if args.out:
        file_io.write_pairs(args.out, pairs)
        print(f"✅ {len(pairs)} pairs → {args.out}")
    else:
        print(','.join(file_io.PAIRS_HEADER))
        for row in zip(pairs.i_u, pairs.i_v, pairs.j_u, pairs.j_v, pairs.r):
            print(','.join(str(int(v)) for v in row))
    return EXIT_OK


def cmd_cutout(args):
    pano = file_io.read_pfm(args.pano).astype(np.float64)
    spec = CutoutSpec(heading=args.heading, fov=args.fov, pitch=args.pitch, roll=args.roll,
                      out_w=args.size, out_h=args.size)
    file_io.write_pfm(args.out, extract_cutout(pano, spec))
    print(f"✅ Cutout heading {args.heading}° fov {args.fov}° → {args.out}")
    return EXIT_OK


def cmd_config(args):
    config.print_config()
    return EXIT_OK


# ==========================================
# ABLATION
# ==========================================
ABLATIONS = (
    ('height only', dict(alpha=0.0)),
    ('+ rank', dict(use_sky=False)),
    ('+ sky', dict(use_rank=False)),
    ('+ rank + sky', dict()),
    ('height + lift', dict(alpha=0.0, lift_init=True)),
    ('lift + rank + sky', dict(lift_init=True)),
)


def cmd_ablation(args):
    scenes = canonical_scenes()
    if args.canonical not in scenes:
        raise UsageError(f"Unknown canonical scene '{args.canonical}', choose from {sorted(scenes)}")
    scene = scenes[args.canonical]
    grid = scene.grid(args.voxel, args.vz)
    truth = make_truth(scene, grid, args.pano_w, args.pano_h, seed=args.seed)
    street = StreetSupervision(cam=truth.cam, sky=truth.sky, depth=truth.pano_depth)

    height_mask = None
    if args.mask_box is not None:
        if not 0 <= args.mask_box < len(scene.boxes):
            raise UsageError(f"--mask-box must index one of {len(scene.boxes)} boxes")
        box = scene.boxes[args.mask_box]
        xs, ys = grid.column_centers()
        height_mask = ~((xs >= box.x) & (xs < box.x + box.w) & (ys >= box.y) & (ys < box.y + box.l))

    rows = []
    for label, overrides in ABLATIONS:
        cfg = _optim_config(args, **overrides)
        field, _ = fit_field(truth.height, grid, cfg, street=street, height_mask=height_mask)
        pred = render_height_map(field, cfg.step)
        rows.append((label, evaluate(pred, truth.height)))
        logger.info(f"Ablation '{label}' done: MAE {rows[-1][1].mae:.4f}", stage='ablation')

    print(format_table(rows))
    if args.csv:
        file_io.write_metrics(args.csv, rows)
    return EXIT_OK


# ==========================================
# PARSER
# ==========================================
def _add_fit_options(p):
    p.add_argument('--alpha', type=float, default=config.STREET_ALPHA)
    p.add_argument('--lr', type=float, default=config.LEARNING_RATE)
    p.add_argument('--epochs', type=int, default=config.EPOCHS)
    p.add_argument('--step', type=float, default=None)
    p.add_argument('--k', type=int, default=config.RANK_PAIRS)
    p.add_argument('--min', type=float, default=config.RANK_MIN_DIST)
    p.add_argument('--max', type=float, default=config.RANK_MAX_DIST)
    p.add_argument('--tau', type=float, default=config.RANK_TAU_REL)
    p.add_argument('--no-rank', action='store_true')
    p.add_argument('--no-sky', action='store_true')
    p.add_argument('--convention', choices=('verbatim', 'ordinal'), default='ordinal')
    p.add_argument('--rank-source', choices=('pano', 'cutouts'), default='pano')
    p.add_argument('--si-lambda', type=float, default=config.SI_LAMBDA)
    p.add_argument('--init-sigma', type=_positive, default=None,
                   help='Uniform starting density; overrides --init-height')
    p.add_argument('--init-height', type=_positive, default=config.INIT_HEIGHT)
    p.add_argument('--lift-gain', type=float, default=config.LIFT_GAIN)
    p.add_argument('--seed', type=int, default=config.DEFAULT_SEED)


def build_parser():
    parser = CliParser(prog='densityfit', description='Differentiable density-field toolkit')
    sub = parser.add_subparsers(dest='command', required=True)

    scene = sub.add_parser('scene', help='Synthetic box-world scenes')
    scene_sub = scene.add_subparsers(dest='action', required=True)
    gen = scene_sub.add_parser('gen', help='Write height / panorama / sky rasters for a scene')
    gen.add_argument('spec', nargs='?', help='Scene JSON')
    gen.add_argument('--canonical', help='flat, two-box or dense')
    gen.add_argument('--out-dir', required=True)
    gen.add_argument('--voxel', type=_positive, default=config.VOXEL_SIZE)
    gen.add_argument('--vz', type=_positive, default=None)
    gen.add_argument('--pano-w', type=int, default=config.PANO_WIDTH)
    gen.add_argument('--pano-h', type=int, default=config.PANO_HEIGHT)
    gen.add_argument('--noise', type=float, default=0.0)
    gen.add_argument('--field', action='store_true', help='Also write the occupancy field')
    gen.add_argument('--sigma-hi', type=float, default=config.OCCUPANCY_SIGMA)
    gen.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    gen.set_defaults(handler=cmd_scene_gen)

    render = sub.add_parser('render', help='Render a DF32 field')
    render.add_argument('mode', choices=('height', 'pano'))
    render.add_argument('--field', required=True)
    render.add_argument('--cam', type=_triple, default=None)
    render.add_argument('--step', type=float, default=None)
    render.add_argument('--width', type=int, default=config.PANO_WIDTH)
    render.add_argument('--height', type=int, default=config.PANO_HEIGHT)
    render.add_argument('--ground-plane', action='store_true')
    render.add_argument('--opacity', help='Also write the opacity panorama')
    render.add_argument('--out', required=True)
    render.set_defaults(handler=cmd_render)

    opt = sub.add_parser('optimize', help='Fit a field to a height map (+ street supervision)')
    opt.add_argument('--gt', required=True)
    opt.add_argument('--pano')
    opt.add_argument('--sky')
    opt.add_argument('--pairs')
    opt.add_argument('--mask', help='PGM, nonzero = exclude from the height loss')
    opt.add_argument('--cam', type=_triple, default=None)
    opt.add_argument('--voxel', type=_positive, default=config.VOXEL_SIZE)
    opt.add_argument('--vz', type=_positive, default=None)
    opt.add_argument('--nz', type=int, default=config.GRID_NZ)
    opt.add_argument('--out', required=True)
    opt.add_argument('--trace')
    opt.add_argument('--init-lift', action='store_true',
                     help='Start from the non-sky indicator lifted into the grid')
    _add_fit_options(opt)
    opt.set_defaults(handler=cmd_optimize)

    met = sub.add_parser('metrics', help='MAE / RMSE / SSIM between two height maps')
    met.add_argument('--pred', required=True)
    met.add_argument('--gt', required=True)
    met.add_argument('--mask')
    met.add_argument('--data-range', type=float, default=None)
    met.add_argument('--csv')
    met.set_defaults(handler=cmd_metrics)

    gc = sub.add_parser('gradcheck', help='Finite-difference gradient suites')
    gc.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    gc.add_argument('--skip-objective', action='store_true')
    gc.set_defaults(handler=cmd_gradcheck)

    pairs = sub.add_parser('pairs', help='Sample rank pairs from a depth raster')
    pairs.add_argument('--depth', required=True)
    pairs.add_argument('--sky')
    pairs.add_argument('--k', type=int, default=config.RANK_PAIRS)
    pairs.add_argument('--min', type=float, default=config.RANK_MIN_DIST)
    pairs.add_argument('--max', type=float, default=config.RANK_MAX_DIST)
    pairs.add_argument('--tau', type=float, default=config.RANK_TAU_REL)
    pairs.add_argument('--no-wrap', action='store_true')
    pairs.add_argument('--seed', type=int, default=config.DEFAULT_SEED)
    pairs.add_argument('--out')
    pairs.set_defaults(handler=cmd_pairs)

    cut = sub.add_parser('cutout', help='Perspective cutout of a panorama')
    cut.add_argument('--pano', required=True)
    cut.add_argument('--heading', type=float, default=0.0)
    cut.add_argument('--fov', type=float, default=config.CUTOUT_FOV)
    cut.add_argument('--pitch', type=float, default=0.0)
    cut.add_argument('--roll', type=float, default=0.0)
    cut.add_argument('--size', type=int, default=config.CUTOUT_SIZE)
    cut.add_argument('--out', required=True)
    cut.set_defaults(handler=cmd_cutout)

    abl = sub.add_parser('ablation', help='Loss-term ablation table on a canonical scene')
    abl.add_argument('--canonical', default='two-box')
    abl.add_argument('--voxel', type=_positive, default=4.0)
    abl.add_argument('--vz', type=_positive, default=2.0)
    abl.add_argument('--pano-w', type=int, default=64)
    abl.add_argument('--pano-h', type=int, default=32)
    abl.add_argument('--mask-box', type=int, default=None)
    abl.add_argument('--csv')
    _add_fit_options(abl)
    abl.set_defaults(handler=cmd_ablation)

    cfg = sub.add_parser('config', help='Print the active configuration')
    cfg.set_defaults(handler=cmd_config)
    return parser


# ==========================================
# ENTRY POINT
# ==========================================
def main(argv=None):
    """Run one command; returns the process exit code"""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as e:
        print(str(e), file=sys.stderr)
        return EXIT_USAGE
    except SystemExit as e:
        # --help / --version
        return EXIT_OK if not e.code else EXIT_USAGE

    if not config.validate_config():
        return EXIT_RUNTIME

    command = args.command if args.command != 'scene' else f"scene {args.action}"
    started = time.time()
    log_run_header(command, getattr(args, 'seed', None))
    try:
        code = args.handler(args)
    except UsageError as e:
        print(f"❌ {e}", file=sys.stderr)
        return EXIT_USAGE
    except (DensityFitError, OSError) as e:
        log_error_with_context(e, command, stage='cli')
        hint = ErrorCategory.format_error(ErrorCategory.for_exception(e))
        print(f"\n{hint['title']}: {e}", file=sys.stderr)
        print(f"{hint['description']}\n\n🔍 Possible causes:\n{hint['causes']}", file=sys.stderr)
        print(f"\n💡 Solutions:\n{hint['solutions']}", file=sys.stderr)
        return EXIT_RUNTIME
    log_run_footer(command, time.time() - started)
    return code


if __name__ == "__main__":
    sys.exit(main())
