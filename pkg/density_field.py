"""
Density Field Core
===================
Grid geometry, the voxel density field and its continuous (trilinear) extension
"""

from dataclasses import dataclass, field as dc_field

import numpy as np

import config
from errors import GridError

# Corner offsets of a trilinear stencil, (dz, dy, dx) order matches storage
_CORNERS = np.array(
    [[dz, dy, dx] for dz in (0, 1) for dy in (0, 1) for dx in (0, 1)],
    dtype=np.int64,
)

# ==========================================
# GRID GEOMETRY
# ==========================================
@dataclass(frozen=True)
class GridSpec:
    """
    Axis-aligned voxel grid.

    x = east (image column), y = north (image row, increasing northward), z = up.
    Storage order of every grid array is (nz, ny, nx), so a flat view is
    x-fastest, then y, then z.
    """
    nx: int = config.GRID_NX
    ny: int = config.GRID_NY
    nz: int = config.GRID_NZ
    voxel_size: tuple = (config.VOXEL_SIZE, config.VOXEL_SIZE, config.VOXEL_SIZE)
    origin: tuple = (0.0, 0.0, 0.0)

    def __post_init__(self):
        counts = (self.nx, self.ny, self.nz)
        if any(int(n) != n or n < 1 for n in counts):
            raise GridError(f"Voxel counts must be integers >= 1, got {counts}")
        object.__setattr__(self, 'nx', int(self.nx))
        object.__setattr__(self, 'ny', int(self.ny))
        object.__setattr__(self, 'nz', int(self.nz))

        vs = tuple(float(v) for v in np.broadcast_to(np.asarray(self.voxel_size, float), (3,)))
        if not all(np.isfinite(v) and v > 0 for v in vs):
            raise GridError(f"Voxel sizes must be finite and > 0, got {vs}")
        object.__setattr__(self, 'voxel_size', vs)

        org = tuple(float(o) for o in np.asarray(self.origin, float).reshape(3))
        if not all(np.isfinite(o) for o in org):
            raise GridError(f"Origin must be finite, got {org}")
        object.__setattr__(self, 'origin', org)

    @property
    def shape(self):
        return (self.nz, self.ny, self.nx)

    @property
    def size(self):
        return self.nx * self.ny * self.nz

    @property
    def counts(self):
        return np.array([self.nx, self.ny, self.nz], dtype=np.int64)

    @property
    def extent(self):
        """World size in meters per axis"""
        return self.counts * np.asarray(self.voxel_size)

    @property
    def height(self):
        """Vertical extent in meters"""
        return self.nz * self.voxel_size[2]

    @property
    def top_z(self):
        return self.origin[2] + self.height

    @property
    def lower(self):
        return np.asarray(self.origin)

    @property
    def upper(self):
        return np.asarray(self.origin) + self.extent

    @property
    def default_step(self):
        return config.default_step(self.voxel_size)

    def contains(self, p):
        """True where world points lie inside the closed grid box"""
        p = np.asarray(p, dtype=np.float64)
        return np.all((p >= self.lower) & (p <= self.upper), axis=-1)

    def column_centers(self):
        """World x, y of every column center, arrays of shape (ny, nx)"""
        vx, vy, _ = self.voxel_size
        xs = self.origin[0] + (np.arange(self.nx) + 0.5) * vx
        ys = self.origin[1] + (np.arange(self.ny) + 0.5) * vy
        return np.meshgrid(xs, ys)

    def voxel_centers(self):
        """World coordinates of every voxel center, shape (nz, ny, nx, 3)"""
        idx = np.stack(np.meshgrid(
            np.arange(self.nx), np.arange(self.ny), np.arange(self.nz), indexing='xy'
        ), axis=-1)
        # meshgrid 'xy' over three axes yields (ny, nx, nz); move z first
        idx = np.transpose(idx, (2, 0, 1, 3)).astype(np.float64)
        return voxel_to_world(self, idx + 0.5)

    def default_camera(self, height=config.CAMERA_HEIGHT):
        """Horizontal grid center at street-view eye level above the floor"""
        cx, cy = self.lower[:2] + 0.5 * self.extent[:2]
        return np.array([cx, cy, self.origin[2] + height])

    def ray_box_interval(self, origins, directions):
        """
        Slab test against the grid box.

        Returns (t_enter, t_exit) per ray; rays missing the box get t_exit < t_enter.
        """
        origins = np.atleast_2d(np.asarray(origins, dtype=np.float64))
        directions = np.atleast_2d(np.asarray(directions, dtype=np.float64))
        with np.errstate(divide='ignore', invalid='ignore'):
            inv = 1.0 / directions
            t0 = (self.lower - origins) * inv
            t1 = (self.upper - origins) * inv
        tmin = np.where(np.isnan(t0), -np.inf, np.minimum(t0, t1))
        tmax = np.where(np.isnan(t1), np.inf, np.maximum(t0, t1))
        # Parallel rays: inside the slab → unbounded, outside → empty
        parallel = directions == 0.0
        inside_slab = (origins >= self.lower) & (origins <= self.upper)
        tmin = np.where(parallel, np.where(inside_slab, -np.inf, np.inf), tmin)
        tmax = np.where(parallel, np.where(inside_slab, np.inf, -np.inf), tmax)
        return tmin.max(axis=-1), tmax.min(axis=-1)


# ==========================================
# FIELDS
# ==========================================
@dataclass
class DensityField:
    """Non-negative extinction coefficients σ (1/m) on a GridSpec"""
    spec: GridSpec
    sigma: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.size != self.spec.size:
            raise GridError(
                f"Density payload has {sigma.size} values, grid needs {self.spec.size}"
            )
        sigma = sigma.reshape(self.spec.shape)
        if not np.all(np.isfinite(sigma)):
            raise GridError("Density field contains NaN or Inf")
        if np.any(sigma < 0):
            raise GridError(f"Density field has negative values (min {sigma.min():.3g})")
        self.sigma = sigma

    @classmethod
    def uniform(cls, spec, value):
        return cls(spec, np.full(spec.shape, float(value)))

    @classmethod
    def empty(cls, spec):
        return cls(spec, np.zeros(spec.shape))

    def flat(self):
        return self.sigma.ravel()


@dataclass
class FeatureGrid:
    """C-channel values on a GridSpec, data shape (C, nz, ny, nx)"""
    spec: GridSpec
    data: np.ndarray = dc_field(repr=False)

    def __post_init__(self):
        data = np.asarray(self.data, dtype=np.float64)
        if data.ndim == 3:
            data = data[None]
        if data.ndim != 4 or data.shape[1:] != self.spec.shape:
            raise GridError(
                f"Feature grid shape {data.shape} does not match (C, {self.spec.shape})"
            )
        if not np.all(np.isfinite(data)):
            raise GridError("Feature grid contains NaN or Inf")
        self.data = data

    @property
    def channels(self):
        return self.data.shape[0]

    @classmethod
    def zeros(cls, spec, channels=1):
        return cls(spec, np.zeros((channels,) + spec.shape))

    @classmethod
    def constant(cls, spec, value, channels=1):
        return cls(spec, np.full((channels,) + spec.shape, float(value)))


# ==========================================
# COORDINATE CONVERSIONS
# ==========================================
def world_to_voxel(spec, p):
    """(p - origin) / voxel_size; voxel center i sits at i + 0.5"""
    p = np.asarray(p, dtype=np.float64)
    return (p - spec.lower) / np.asarray(spec.voxel_size)


def voxel_to_world(spec, c):
    """Inverse of world_to_voxel"""
    c = np.asarray(c, dtype=np.float64)
    return spec.lower + c * np.asarray(spec.voxel_size)


# ==========================================
# TRILINEAR SAMPLING
# ==========================================
def trilinear_stencil(spec, points):
    """
    Flat corner indices and weights of the trilinear stencil at world points.

    Inside the world extent the stencil is clamped to the edge voxels; points
    outside the extent get all-zero weights (empty air).

    Returns (idx, w) with shape (N, 8).
    """
    pts = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    c = world_to_voxel(spec, pts)
    n = spec.counts
    inside = np.all((c >= 0.0) & (c <= n), axis=1)

    g = c - 0.5
    i0 = np.floor(g)
    f = g - i0
    i0 = i0.astype(np.int64)

    # (N, 3) in x, y, z order; corners are (dz, dy, dx)
    lo = np.clip(i0, 0, n - 1)
    hi = np.clip(i0 + 1, 0, n - 1)

    dx, dy, dz = _CORNERS[:, 2], _CORNERS[:, 1], _CORNERS[:, 0]
    ix = np.where(dx[None, :] == 0, lo[:, 0:1], hi[:, 0:1])
    iy = np.where(dy[None, :] == 0, lo[:, 1:2], hi[:, 1:2])
    iz = np.where(dz[None, :] == 0, lo[:, 2:3], hi[:, 2:3])
    idx = (iz * spec.ny + iy) * spec.nx + ix

    wx = np.where(dx[None, :] == 0, 1.0 - f[:, 0:1], f[:, 0:1])
    wy = np.where(dy[None, :] == 0, 1.0 - f[:, 1:2], f[:, 1:2])
    wz = np.where(dz[None, :] == 0, 1.0 - f[:, 2:3], f[:, 2:3])
    w = wx * wy * wz
    w[~inside] = 0.0
    return idx, w


def gather(flat_values, idx, w):
    """Apply a stencil to flat grid values"""
    return np.einsum('nk,nk->n', flat_values[idx], w)


def scatter_to_grid(spec, idx, w, upstream):
    """Adjoint of gather: accumulate upstream·w into a flat grid (deterministic)"""
    upstream = np.asarray(upstream, dtype=np.float64).reshape(-1, 1)
    return np.bincount(idx.ravel(), weights=(w * upstream).ravel(), minlength=spec.size)


def sample_sigma(field, p):
    """
    Trilinear density at world point(s) p.

    Returns a float for a single point, an array for (N, 3) input; 0 outside
    the grid's world extent.
    """
    arr = np.asarray(p, dtype=np.float64)
    if not np.all(np.isfinite(arr)):
        raise GridError(f"Query point must be finite, got {p}")
    if arr.shape[-1:] != (3,):
        raise GridError(f"Query points need 3 coordinates, got shape {arr.shape}")
    idx, w = trilinear_stencil(field.spec, arr)
    values = gather(field.flat(), idx, w)
    if arr.ndim == 1:
        return float(values[0])
    return values.reshape(arr.shape[:-1])
