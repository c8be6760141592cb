"""
Panoramic Geometry
===================
Equirectangular resampling: perspective cutouts and ray-based lifting of 2D
panoramas into the voxel grid.
"""

from dataclasses import dataclass

import numpy as np

import config
from density_field import FeatureGrid
from errors import GeometryError

TWO_PI = 2.0 * np.pi

# ==========================================
# TYPES
# ==========================================
@dataclass(frozen=True)
class CutoutSpec:
    heading: float = 0.0
    fov: float = config.CUTOUT_FOV
    pitch: float = 0.0
    roll: float = 0.0
    out_w: int = config.CUTOUT_SIZE
    out_h: int = config.CUTOUT_SIZE

    def __post_init__(self):
        if not (0.0 < self.fov < 180.0):
            raise GeometryError(f"Cutout FOV must be in (0, 180) degrees, got {self.fov}")
        if self.out_w < 1 or self.out_h < 1:
            raise GeometryError(f"Cutout size must be positive, got {self.out_w}×{self.out_h}")


@dataclass
class BilinearMap:
    """
    Precomputed 4-tap resampling from a source raster into an output raster.

    apply() resamples, adjoint() pushes output gradients back to the source.
    """
    idx: np.ndarray        # (N, 4) flat source indices
    weights: np.ndarray    # (N, 4)
    out_shape: tuple
    src_shape: tuple

    def apply(self, raster):
        raster = np.asarray(raster, dtype=np.float64)
        if raster.shape[:2] != self.src_shape:
            raise GeometryError(f"Raster shape {raster.shape[:2]} does not match map source {self.src_shape}")
        flat = raster.reshape(self.src_shape[0] * self.src_shape[1], -1)
        out = np.einsum('nk,nkc->nc', self.weights, flat[self.idx])
        if raster.ndim == 2:
            return out.reshape(self.out_shape)
        return out.reshape(self.out_shape + raster.shape[2:])

    def adjoint(self, grad_out):
        grad_out = np.asarray(grad_out, dtype=np.float64).ravel()
        size = self.src_shape[0] * self.src_shape[1]
        flat = np.bincount(
            self.idx.ravel(), weights=(self.weights * grad_out[:, None]).ravel(), minlength=size
        )
        return flat.reshape(self.src_shape)


# ==========================================
# ANGLES
# ==========================================
def direction_to_angles(d):
    """Inverse of the panorama direction formula → (φ ∈ [0, 2π), λ ∈ [-π/2, π/2])"""
    d = np.asarray(d, dtype=np.float64)
    phi = np.mod(np.arctan2(d[..., 0], -d[..., 1]), TWO_PI)
    lam = np.arctan2(d[..., 2], np.hypot(d[..., 0], d[..., 1]))
    return phi, lam


def angles_to_pixel(phi, lam, pano_w, pano_h):
    """Continuous pixel coordinates (u, v) whose centers sit at integer values"""
    u = np.asarray(phi) * pano_w / TWO_PI - 0.5
    v = (0.5 * np.pi - np.asarray(lam)) * pano_h / np.pi - 0.5
    return u, v


def pano_bilinear_map(phi, lam, pano_w, pano_h):
    """Bilinear taps for sampling a (pano_h, pano_w) panorama at (φ, λ); azimuth wraps, elevation clamps"""
    phi = np.asarray(phi, dtype=np.float64)
    out_shape = phi.shape
    u, v = angles_to_pixel(phi.ravel(), np.asarray(lam, dtype=np.float64).ravel(), pano_w, pano_h)

    u0 = np.floor(u)
    fu = u - u0
    u0 = u0.astype(np.int64)
    u1 = np.mod(u0 + 1, pano_w)
    u0 = np.mod(u0, pano_w)

    v = np.clip(v, 0.0, pano_h - 1)
    v0 = np.floor(v).astype(np.int64)
    fv = v - v0
    v1 = np.minimum(v0 + 1, pano_h - 1)

    idx = np.stack([v0 * pano_w + u0, v0 * pano_w + u1, v1 * pano_w + u0, v1 * pano_w + u1], axis=1)
    weights = np.stack([(1 - fu) * (1 - fv), fu * (1 - fv), (1 - fu) * fv, fu * fv], axis=1)
    return BilinearMap(idx, weights, out_shape, (pano_h, pano_w))


def sample_pano(pano, phi, lam):
    """Bilinear panorama lookup at arbitrary (φ, λ)"""
    pano = np.asarray(pano, dtype=np.float64)
    return pano_bilinear_map(phi, lam, pano.shape[1], pano.shape[0]).apply(pano)


# ==========================================
# CUTOUTS
# ==========================================
def cutout_angles(a, b, spec):
    """
    Panorama angles seen through normalized cutout coordinates (a, b) ∈ [-1, 1]².

    a grows to the right, b grows downward; the camera looks along φ = heading.
    """
    t = np.tan(np.radians(spec.fov) / 2.0)
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    x = a * t
    y = np.ones_like(x)
    z = -b * t

    roll = np.radians(spec.roll)
    x, z = x * np.cos(roll) - z * np.sin(roll), x * np.sin(roll) + z * np.cos(roll)
    pitch = np.radians(spec.pitch)
    y, z = y * np.cos(pitch) - z * np.sin(pitch), y * np.sin(pitch) + z * np.cos(pitch)

    phi = np.mod(np.arctan2(x, y) + np.radians(spec.heading), TWO_PI)
    lam = np.arctan2(z, np.hypot(x, y))
    return phi, lam


def cutout_map(spec, pano_w, pano_h):
    """Resampling map from a (pano_h, pano_w) panorama into a cutout"""
    a = 2.0 * (np.arange(spec.out_w) + 0.5) / spec.out_w - 1.0
    b = 2.0 * (np.arange(spec.out_h) + 0.5) / spec.out_h - 1.0
    aa, bb = np.meshgrid(a, b)
    phi, lam = cutout_angles(aa, bb, spec)
    return pano_bilinear_map(phi, lam, pano_w, pano_h)


def extract_cutout(pano, spec):
    """Gnomonic perspective view of a panorama, shape (out_h, out_w[, C])"""
    pano = np.asarray(pano, dtype=np.float64)
    if pano.ndim not in (2, 3):
        raise GeometryError(f"Panorama must be (h, w) or (h, w, C), got shape {pano.shape}")
    return cutout_map(spec, pano.shape[1], pano.shape[0]).apply(pano)


def extract_cutouts(pano, headings=config.CUTOUT_HEADINGS, fov=config.CUTOUT_FOV,
                    size=config.CUTOUT_SIZE):
    """The standard heading set → {heading: cutout}"""
    return {
        h: extract_cutout(pano, CutoutSpec(heading=h, fov=fov, out_w=size, out_h=size))
        for h in headings
    }


# ==========================================
# LIFTING
# ==========================================
def _as_channels(pano):
    pano = np.asarray(pano, dtype=np.float64)
    if pano.ndim == 2:
        pano = pano[..., None]
    if pano.ndim != 3:
        raise GeometryError(f"Panorama must be (h, w) or (h, w, C), got shape {pano.shape}")
    return pano


def lift_pano_to_grid(pano, spec, cam):
    """
    Back-project a panorama along its rays: every voxel takes the panorama value
    in the direction of its center as seen from cam. The camera voxel gets 0.
    """
    pano = _as_channels(pano)
    cam = np.asarray(cam, dtype=np.float64).reshape(3)
    if not (np.all(np.isfinite(cam)) and spec.contains(cam)):
        raise GeometryError(f"Camera {tuple(cam)} must lie inside the grid")

    rel = spec.voxel_centers().reshape(-1, 3) - cam
    norm = np.linalg.norm(rel, axis=1)
    degenerate = norm == 0.0
    phi, lam = direction_to_angles(rel)
    values = pano_bilinear_map(phi, lam, pano.shape[1], pano.shape[0]).apply(pano)
    values[degenerate] = 0.0
    data = values.T.reshape((pano.shape[2],) + spec.shape)
    return FeatureGrid(spec, data)


def pano_pyramid(pano, levels):
    """[pano, 2×2 block means, ...]; stops early once a side turns odd"""
    if levels < 1:
        raise GeometryError(f"Pyramid needs at least one level, got {levels}")
    pyramid = [_as_channels(pano)]
    while len(pyramid) < levels:
        top = pyramid[-1]
        h, w, c = top.shape
        if h % 2 or w % 2:
            break
        pyramid.append(top.reshape(h // 2, 2, w // 2, 2, c).mean(axis=(1, 3)))
    return pyramid


def lift_multiscale(panos, spec, cam):
    """Sum of per-scale liftings; all scales must share the channel count"""
    if not panos:
        raise GeometryError("lift_multiscale needs at least one scale")
    channels = {_as_channels(p).shape[2] for p in panos}
    if len(channels) != 1:
        raise GeometryError(f"Channel mismatch across scales: {sorted(channels)}")
    total = None
    for pano in panos:
        lifted = lift_pano_to_grid(pano, spec, cam).data
        total = lifted if total is None else total + lifted
    return FeatureGrid(spec, total)
