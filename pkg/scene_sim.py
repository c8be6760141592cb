"""
Box-World Scene Oracle
=======================
Axis-aligned box scenes with exact height maps, analytic street-view depth
panoramas, sky masks and ground-truth occupancy fields.
"""

import math
from dataclasses import dataclass, field as dc_field

import numpy as np

import config
from density_field import DensityField, GridSpec
from errors import SceneError
from render import pano_angles, pano_directions

DEFAULT_FOOTPRINT = (config.GRID_NX * config.VOXEL_SIZE, config.GRID_NY * config.VOXEL_SIZE)
DEFAULT_MAX_HEIGHT = config.GRID_NZ * config.VOXEL_SIZE

# ==========================================
# TYPES
# ==========================================
@dataclass(frozen=True)
class Box:
    """Footprint [x, x+w) × [y, y+l) in meters, extruded from the ground to height"""
    x: float
    y: float
    w: float
    l: float
    height: float

    def overlaps(self, other):
        return (self.x < other.x + other.w and other.x < self.x + self.w
                and self.y < other.y + other.l and other.y < self.y + self.l)

    def contains(self, p):
        x, y, z = p
        return (self.x <= x <= self.x + self.w and self.y <= y <= self.y + self.l
                and 0.0 <= z <= self.height)

    def to_dict(self):
        return {'x': self.x, 'y': self.y, 'w': self.w, 'l': self.l, 'height': self.height}


@dataclass
class SceneSpec:
    footprint: tuple = DEFAULT_FOOTPRINT
    boxes: list = dc_field(default_factory=list)
    camera: tuple = None
    max_height: float = DEFAULT_MAX_HEIGHT

    def __post_init__(self):
        self.footprint = tuple(float(v) for v in self.footprint)
        self.boxes = [b if isinstance(b, Box) else Box(**b) for b in self.boxes]
        if self.camera is None:
            self.camera = (self.footprint[0] / 2.0, self.footprint[1] / 2.0, config.CAMERA_HEIGHT)
        self.camera = tuple(float(v) for v in self.camera)
        self.validate()

    def validate(self):
        if len(self.footprint) != 2:
            raise SceneError(f"Footprint must be two sizes, got {self.footprint}")
        fx, fy = self.footprint
        if not (fx > 0 and fy > 0):
            raise SceneError(f"Footprint must be two positive sizes, got {self.footprint}")
        if not self.max_height > 0:
            raise SceneError(f"max_height must be > 0, got {self.max_height}")

        for i, b in enumerate(self.boxes):
            if not (b.w > 0 and b.l > 0):
                raise SceneError(f"Box {i} has non-positive footprint {b.w}×{b.l}")
            if b.x < 0 or b.y < 0 or b.x + b.w > fx or b.y + b.l > fy:
                raise SceneError(f"Box {i} leaves the {fx}×{fy} footprint")
            if not (0 < b.height <= self.max_height):
                raise SceneError(f"Box {i} height {b.height} outside (0, {self.max_height}]")
            for j in range(i):
                if b.overlaps(self.boxes[j]):
                    raise SceneError(f"Boxes {j} and {i} have overlapping footprints")

        cx, cy, cz = self.camera
        if not (0.0 <= cx <= fx and 0.0 <= cy <= fy):
            raise SceneError(f"Camera {self.camera} is outside the footprint")
        if not (0.0 < cz < self.max_height):
            raise SceneError(f"Camera height {cz} must be in (0, {self.max_height})")
        self.check_camera(self.camera)

    def check_camera(self, cam):
        for i, b in enumerate(self.boxes):
            if b.contains(cam):
                raise SceneError(f"Camera {tuple(cam)} is inside box {i}")

    def grid(self, voxel_size=config.VOXEL_SIZE, vz=None):
        """Footprint-aligned grid tall enough for max_height"""
        vz = voxel_size if vz is None else vz
        nx = self.footprint[0] / voxel_size
        ny = self.footprint[1] / voxel_size
        if abs(nx - round(nx)) > 1e-9 or abs(ny - round(ny)) > 1e-9:
            raise SceneError(f"Footprint {self.footprint} is not a multiple of voxel size {voxel_size}")
        nz = int(math.ceil(self.max_height / vz - 1e-9))
        return GridSpec(int(round(nx)), int(round(ny)), nz, (voxel_size, voxel_size, vz))

    def to_dict(self):
        return {
            'footprint': list(self.footprint),
            'boxes': [b.to_dict() for b in self.boxes],
            'camera': list(self.camera),
            'max_height': self.max_height,
        }

    @classmethod
    def from_dict(cls, data):
        try:
            return cls(
                footprint=data.get('footprint', DEFAULT_FOOTPRINT),
                boxes=[Box(**{k: float(b[k]) for k in ('x', 'y', 'w', 'l', 'height')})
                       for b in data.get('boxes', [])],
                camera=data.get('camera'),
                max_height=float(data.get('max_height', DEFAULT_MAX_HEIGHT)),
            )
        except (KeyError, TypeError) as e:
            raise SceneError(f"Malformed scene description: {e}") from e


@dataclass
class SceneTruth:
    height: np.ndarray
    pano_depth: np.ndarray
    sky: np.ndarray
    cam: np.ndarray


# ==========================================
# ORACLES
# ==========================================
def rasterize_height(spec, grid):
    """Tallest box whose footprint covers each pixel center, else 0"""
    xs, ys = grid.column_centers()
    height = np.zeros(xs.shape)
    for b in spec.boxes:
        inside = (xs >= b.x) & (xs < b.x + b.w) & (ys >= b.y) & (ys < b.y + b.l)
        height = np.where(inside, np.maximum(height, b.height), height)
    return height


def _slab_hit(origin, dirs, lo, hi):
    """Nearest positive entry distance into [lo, hi] per ray, inf on miss"""
    with np.errstate(divide='ignore', invalid='ignore'):
        inv = 1.0 / dirs
        t0 = (lo - origin) * inv
        t1 = (hi - origin) * inv
    tmin = np.minimum(t0, t1)
    tmax = np.maximum(t0, t1)
    parallel = dirs == 0.0
    inside = (origin >= lo) & (origin <= hi)
    tmin = np.where(parallel, np.where(inside, -np.inf, np.inf), tmin)
    tmax = np.where(parallel, np.where(inside, np.inf, -np.inf), tmax)
    t_enter = tmin.max(axis=1)
    t_exit = tmax.min(axis=1)
    hit = (t_enter <= t_exit) & (t_enter > 0.0)
    return np.where(hit, t_enter, np.inf)


def raycast_pano_depth(spec, cam=None, pano_w=config.PANO_WIDTH, pano_h=config.PANO_HEIGHT,
                       noise=0.0, seed=config.DEFAULT_SEED):
    """
    Exact equirectangular depth from cam against the boxes and the ground.

    Ground hits count only inside the footprint. Rays that hit nothing are sky
    (depth 0). noise > 0 applies multiplicative Gaussian noise to non-sky depths.

    Returns (depth, sky), both (pano_h, pano_w).
    """
    cam = np.asarray(spec.camera if cam is None else cam, dtype=np.float64).reshape(3)
    spec.check_camera(cam)
    if cam[2] <= 0:
        raise SceneError(f"Camera must be above the ground, got z={cam[2]}")

    phi, lam = pano_angles(pano_w, pano_h)
    dirs = pano_directions(phi, lam).reshape(-1, 3)
    best = np.full(dirs.shape[0], np.inf)

    down = dirs[:, 2] < 0
    with np.errstate(divide='ignore', invalid='ignore'):
        t_ground = np.where(down, -cam[2] / dirs[:, 2], np.inf)
    gx = cam[0] + t_ground * dirs[:, 0]
    gy = cam[1] + t_ground * dirs[:, 1]
    fx, fy = spec.footprint
    on_footprint = down & (gx >= 0) & (gx <= fx) & (gy >= 0) & (gy <= fy)
    best = np.where(on_footprint, t_ground, best)

    for b in spec.boxes:
        lo = np.array([b.x, b.y, 0.0])
        hi = np.array([b.x + b.w, b.y + b.l, b.height])
        best = np.minimum(best, _slab_hit(cam, dirs, lo, hi))

    sky = ~np.isfinite(best)
    depth = np.where(sky, 0.0, best)
    if noise > 0:
        rng = np.random.default_rng(seed)
        factor = 1.0 + noise * rng.standard_normal(depth.shape)
        depth = np.where(sky, 0.0, np.maximum(depth * factor, 1e-6))
    return depth.reshape(pano_h, pano_w), sky.reshape(pano_h, pano_w)


def occupancy_field(spec, grid, sigma_hi=config.OCCUPANCY_SIGMA):
    """σ_hi at voxel centers inside any box, 0 elsewhere"""
    if not sigma_hi > 0:
        raise SceneError(f"sigma_hi must be > 0, got {sigma_hi}")
    centers = grid.voxel_centers()
    x, y, z = centers[..., 0], centers[..., 1], centers[..., 2]
    filled = np.zeros(grid.shape, dtype=bool)
    for b in spec.boxes:
        filled |= ((x >= b.x) & (x < b.x + b.w) & (y >= b.y) & (y < b.y + b.l)
                   & (z >= 0.0) & (z < b.height))
    return DensityField(grid, np.where(filled, float(sigma_hi), 0.0))


def make_truth(spec, grid, pano_w=config.PANO_WIDTH, pano_h=config.PANO_HEIGHT,
               noise=0.0, seed=config.DEFAULT_SEED):
    """Height raster plus the panorama oracle from the scene camera"""
    depth, sky = raycast_pano_depth(spec, spec.camera, pano_w, pano_h, noise, seed)
    return SceneTruth(rasterize_height(spec, grid), depth, sky, np.asarray(spec.camera))


# ==========================================
# CANONICAL LIBRARY
# ==========================================
def canonical_scenes():
    """Fixed scenes on the default 256 m footprint, camera at street level in the middle"""
    cam = (128.0, 128.0, config.CAMERA_HEIGHT)
    return {
        'flat': SceneSpec(boxes=[], camera=cam),
        'two-box': SceneSpec(boxes=[
            Box(88.0, 118.0, 20.0, 20.0, 10.0),
            Box(148.0, 118.0, 20.0, 20.0, 25.0),
        ], camera=cam),
        'dense': SceneSpec(boxes=[
            Box(60.0, 60.0, 20.0, 30.0, 12.0),
            Box(100.0, 40.0, 25.0, 20.0, 18.0),
            Box(170.0, 60.0, 30.0, 25.0, 30.0),
            Box(40.0, 150.0, 30.0, 30.0, 22.0),
            Box(150.0, 150.0, 20.0, 40.0, 8.0),
            Box(200.0, 190.0, 30.0, 30.0, 40.0),
            Box(90.0, 190.0, 25.0, 20.0, 15.0),
        ], camera=cam),
    }
