"""Desk-scale cone-beam scanner stand-in: analytic phantoms, short-scan
trajectory, exact forward projector, and rigid motion injection.

The projector integrates ellipsoid chord lengths in closed form, so clean
projections carry no sampling error and any epipolar inconsistency on clean
data reflects Radon-table discretization alone.
"""

import math
from dataclasses import dataclass, field

import numpy as np

from . import geometry as geo
from .errors import InvalidGeometry, LengthMismatch, UnknownPreset
from .motion_model import MotionSpline, expand
from .radon import ProjectionImage


@dataclass(frozen=True)
class Ellipsoid:
    center: tuple
    semi_axes: tuple
    density: float
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))

    def __post_init__(self):
        object.__setattr__(self, "rotation", np.asarray(self.rotation, dtype=float))


@dataclass(frozen=True)
class Phantom:
    """Sum of constant-density ellipsoids; negative densities carve cavities."""

    ellipsoids: tuple

    def __post_init__(self):
        if len(self.ellipsoids) == 0:
            raise ValueError("phantom needs at least one component")
        object.__setattr__(self, "ellipsoids", tuple(self.ellipsoids))


@dataclass(frozen=True)
class ScanGeometry:
    """Circular short-scan cone-beam geometry; distances in mm, pitch in mm/px."""

    n_projections: int = 60
    angular_range_deg: float = 210.0
    start_angle_deg: float = 0.0
    sid_mm: float = 60.0
    sdd_mm: float = 100.0
    det_rows: int = 64
    det_cols: int = 96
    pixel_pitch_mm: float = 0.5

    def __post_init__(self):
        if self.n_projections < 2:
            raise InvalidGeometry("need at least two projections")
        if not (0.0 < self.sid_mm < self.sdd_mm):
            raise InvalidGeometry("require 0 < source-isocenter < source-detector")
        if self.det_rows < 2 or self.det_cols < 2 or self.pixel_pitch_mm <= 0:
            raise InvalidGeometry("invalid detector")
        if not 180.0 < self.angular_range_deg < 360.0:
            raise InvalidGeometry("short scan needs angular range in (180, 360) deg")
        if self.angular_range_deg < 180.0 + math.degrees(2.0 * self.half_fan_rad):
            raise InvalidGeometry(
                "short-scan condition violated: range must cover 180 deg + fan angle"
            )

    @property
    def half_fan_rad(self):
        return math.atan2(0.5 * self.det_cols * self.pixel_pitch_mm, self.sdd_mm)

    @property
    def magnification(self):
        return self.sdd_mm / self.sid_mm


@dataclass(frozen=True)
class GridSpec:
    """Reconstruction voxel grid: index (iz, iy, ix), isotropic spacing in mm."""

    nx: int
    ny: int
    nz: int
    spacing: float
    origin: tuple = None  # center of voxel (0,0,0); default centers the grid

    def __post_init__(self):
        if self.spacing <= 0 or min(self.nx, self.ny, self.nz) < 1:
            raise ValueError("grid needs positive spacing and sizes")
        if self.origin is None:
            o = tuple(-0.5 * (n - 1) * self.spacing for n in (self.nx, self.ny, self.nz))
            object.__setattr__(self, "origin", o)
        else:
            object.__setattr__(self, "origin", tuple(float(v) for v in self.origin))

    def axes(self):
        ox, oy, oz = self.origin
        return (
            ox + self.spacing * np.arange(self.nx),
            oy + self.spacing * np.arange(self.ny),
            oz + self.spacing * np.arange(self.nz),
        )


@dataclass(frozen=True)
class Volume:
    """Scalar voxel grid with data indexed [iz, iy, ix]."""

    grid: GridSpec
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.grid.nz, self.grid.ny, self.grid.nx):
            raise LengthMismatch(f"data shape {data.shape} != (nz, ny, nx)")
        object.__setattr__(self, "data", data)


def default_grid():
    """64^3 grid sized to stay inside the default desk-scale field of view."""
    return GridSpec(nx=64, ny=64, nz=64, spacing=0.22)


def make_phantom(preset):
    """Bundled analytic phantoms.

    tibia-like mimics a long hollow bone shaft: an ellipsoid shell (wall
    density 1.0 via a -0.7 lumen subtraction) with 8 small trabecular-scale
    inclusions, nearly symmetric under rotation about its long (z) axis.
    """
    if preset == "single-sphere":
        return Phantom((Ellipsoid((0.0, 0.0, 0.0), (3.0, 3.0, 3.0), 1.0),))
    if preset == "two-spheres":
        return Phantom(
            (
                Ellipsoid((0.0, 0.0, 2.5), (2.0, 2.0, 2.0), 1.0),
                Ellipsoid((0.8, 0.0, -2.5), (1.5, 1.5, 1.5), 0.8),
            )
        )
    if preset == "tibia-like":
        parts = [
            Ellipsoid((0.0, 0.0, 0.0), (3.5, 3.5, 6.5), 1.0),
            Ellipsoid((0.0, 0.0, 0.0), (2.4, 2.4, 5.6), -0.7),
        ]
        # Interior inclusions on a loose helix; small offsets keep the phantom
        # only *nearly* rotation-symmetric about z.
        r_incl = 0.36
        for k in range(8):
            ang = math.radians(45.0 * k + 7.0 * (k % 3))
            rad = 1.2 + 0.15 * (k % 2)
            z = -4.2 + 1.2 * k
            parts.append(
                Ellipsoid(
                    (rad * math.cos(ang), rad * math.sin(ang), z),
                    (r_incl, r_incl, r_incl),
                    0.5,
                )
            )
        return Phantom(tuple(parts))
    raise UnknownPreset(f"unknown phantom preset {preset!r}")


def short_scan_trajectory(g):
    """Projection matrices for a circular short scan in the z = 0 plane.

    View i places the source at angle start + i * range/N; the flat detector
    is perpendicular to the central ray and the isocenter projects to the
    detector center pixel. Returns an (N, 3, 4) array.
    """
    n = g.n_projections
    step = math.radians(g.angular_range_deg) / n
    theta = math.radians(g.start_angle_deg) + step * np.arange(n)
    f = g.sdd_mm / g.pixel_pitch_mm
    k = np.array(
        [[f, 0.0, 0.5 * (g.det_cols - 1)], [0.0, f, 0.5 * (g.det_rows - 1)], [0.0, 0.0, 1.0]]
    )
    mats = np.empty((n, 3, 4))
    for i, th in enumerate(theta):
        ct, st = math.cos(th), math.sin(th)
        src = g.sid_mm * np.array([ct, st, 0.0])
        # Right-handed camera frame: u tangent, v along +z, optical axis
        # pointing from source through the isocenter.
        rot = np.array([[st, -ct, 0.0], [0.0, 0.0, 1.0], [-ct, -st, 0.0]])
        rt = np.empty((3, 4))
        rt[:, :3] = rot
        rt[:, 3] = -rot @ src
        mats[i] = k @ rt
    return mats


def view_angles(g):
    """Source angles in radians, matching short_scan_trajectory."""
    step = math.radians(g.angular_range_deg) / g.n_projections
    return math.radians(g.start_angle_deg) + step * np.arange(g.n_projections)


def forward_project(phantom, projection, rows, cols, pitch):
    """Analytic line-integral image of the phantom for one projection matrix.

    Each pixel value is the exact sum of ellipsoid chord lengths (times
    density) along the ray through the pixel center, in mm.
    """
    projection = np.asarray(projection, dtype=float)
    src = geo.source_position(projection)[:3]
    uu, vv = np.meshgrid(np.arange(cols, dtype=float), np.arange(rows, dtype=float))
    pix = np.stack([uu.ravel(), vv.ravel(), np.ones(uu.size)])
    dirs = np.linalg.solve(projection[:, :3], pix)
    dirs /= np.linalg.norm(dirs, axis=0)
    acc = np.zeros(uu.size)
    for e in phantom.ellipsoids:
        scale = e.rotation.T / np.asarray(e.semi_axes, dtype=float)[:, None]
        o = scale @ (src - np.asarray(e.center, dtype=float))
        d = scale @ dirs
        a = np.einsum("ij,ij->j", d, d)
        b = 2.0 * (o @ d)
        c = o @ o - 1.0
        disc = b * b - 4.0 * a * c
        hit = disc > 0.0
        acc[hit] += e.density * np.sqrt(disc[hit]) / a[hit]
    return ProjectionImage(width=cols, height=rows, spacing=pitch, data=acc.reshape(rows, cols))


def render_scan(phantom, matrices, g):
    """Forward-project every view of a scan."""
    return [
        forward_project(phantom, p, g.det_rows, g.det_cols, g.pixel_pitch_mm) for p in matrices
    ]


def rasterize(phantom, grid):
    """Sample the phantom density at voxel centers (ground-truth volume)."""
    xs, ys, zs = grid.axes()
    data = np.zeros((grid.nz, grid.ny, grid.nx))
    xx, yy = np.meshgrid(xs, ys)
    for iz, z in enumerate(zs):
        sl = np.zeros_like(xx)
        for e in phantom.ellipsoids:
            scale = e.rotation.T / np.asarray(e.semi_axes, dtype=float)[:, None]
            pts = np.stack([xx - e.center[0], yy - e.center[1], np.full_like(xx, z - e.center[2])])
            q = np.einsum("ij,jkl->ikl", scale, pts)
            sl += e.density * ((q * q).sum(axis=0) <= 1.0)
        data[iz] = sl
    return Volume(grid=grid, data=data)


def random_motion_spline(n_projections, n_nodes, amp_translation_mm, amp_rotation_deg,
                         mask, seed, center=True):
    """Seeded random Akima motion: uniform node draws within the amplitudes.

    With center=True each active parameter's node values are shifted to zero
    mean (then clipped back into the amplitude box). A constant rigid offset
    common to all views is a world-frame change that epipolar consistency
    cannot observe, so centering keeps the simulated motion inside the
    recoverable subspace.
    """
    from .motion_model import uniform_nodes

    rng = np.random.default_rng(seed)
    nodes = uniform_nodes(n_nodes, n_projections)
    amps = np.array([amp_translation_mm] * 3 + [amp_rotation_deg] * 3)
    values = rng.uniform(-1.0, 1.0, size=(6, n_nodes)) * amps[:, None]
    for k in range(6):
        if not mask.active[k]:
            values[k] = 0.0
        elif center:
            values[k] -= values[k].mean()
            values[k] = np.clip(values[k], -amps[k], amps[k])
    # Snap translations onto the um<->mm conversion fixed point so spline
    # files round-trip bit-exactly.
    values[:3] = (values[:3] * 1000.0) / 1000.0
    return MotionSpline(node_indices=nodes, node_values=values)


def inject_motion(matrices, spline):
    """Corrupt projection matrices by right-multiplying per-view transforms.

    Projection images are left untouched; the corruption is purely geometric.
    """
    matrices = np.asarray(matrices, dtype=float)
    params = expand(spline, matrices.shape[0])
    return np.stack([geo.apply_motion(p, q) for p, q in zip(matrices, params)])
