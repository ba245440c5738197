"""Projective and rigid-body algebra for cone-beam projection matrices.

World coordinates are millimeters, detector coordinates are pixels. A
projection matrix is a plain float64 ndarray of shape (3, 4) mapping
homogeneous world points to homogeneous detector points.
"""

from dataclasses import dataclass
import math

import numpy as np

from .errors import DegenerateBaseline, DegenerateMatrix, LineAtInfinity

# Rank / degeneracy thresholds, relative to the largest singular value.
_RANK_RTOL = 1e-10
_BASELINE_TOL_MM = 1e-9


@dataclass(frozen=True)
class RigidParams:
    """Six rigid degrees of freedom: translations in mm, rotations in degrees."""

    tx: float = 0.0
    ty: float = 0.0
    tz: float = 0.0
    rx: float = 0.0
    ry: float = 0.0
    rz: float = 0.0

    def as_array(self):
        return np.array([self.tx, self.ty, self.tz, self.rx, self.ry, self.rz], dtype=float)

    @classmethod
    def from_array(cls, a):
        a = np.asarray(a, dtype=float)
        if a.shape != (6,):
            raise ValueError(f"expected 6 rigid parameters, got shape {a.shape}")
        return cls(*a.tolist())


PARAM_NAMES = ("tx", "ty", "tz", "rx", "ry", "rz")


@dataclass(frozen=True)
class EpipolarPlane:
    """Homogeneous plane through both sources of a projection pair.

    ``e`` holds the 4 plane coefficients, ``kappa`` the rotation angle about
    the baseline that generated the plane.
    """

    e: np.ndarray
    kappa: float


def _params_array(p):
    if isinstance(p, RigidParams):
        return p.as_array()
    a = np.asarray(p, dtype=float)
    if a.shape != (6,):
        raise ValueError(f"expected 6 rigid parameters, got shape {a.shape}")
    return a


def compose_rigid(p):
    """Build the 4x4 homogeneous transform Trans(t) @ Rz @ Ry @ Rx.

    Rotation angles are in degrees; the rotation block is orthonormal with
    determinant +1.
    """
    tx, ty, tz, rx, ry, rz = _params_array(p)
    ax, ay, az = np.radians([rx, ry, rz])
    ca, sa = math.cos(ax), math.sin(ax)
    cb, sb = math.cos(ay), math.sin(ay)
    cc, sc = math.cos(az), math.sin(az)
    rot_x = np.array([[1, 0, 0], [0, ca, -sa], [0, sa, ca]])
    rot_y = np.array([[cb, 0, sb], [0, 1, 0], [-sb, 0, cb]])
    rot_z = np.array([[cc, -sc, 0], [sc, cc, 0], [0, 0, 1]])
    t = np.eye(4)
    t[:3, :3] = rot_z @ rot_y @ rot_x
    t[:3, 3] = (tx, ty, tz)
    return t


def inverse_params(p):
    """Exact parameters of the inverse transform, in the same Trans*Rz*Ry*Rx form.

    compose_rigid(inverse_params(p)) @ compose_rigid(p) is the identity up to
    rounding. Valid away from the ry = +-90 deg gimbal singularity, which the
    small motions handled here never approach.
    """
    t = compose_rigid(p)
    r_inv = t[:3, :3].T
    t_inv = -r_inv @ t[:3, 3]
    # Extract ZYX Euler angles from the inverse rotation block.
    ry = math.asin(-r_inv[2, 0])
    rz = math.atan2(r_inv[1, 0], r_inv[0, 0])
    rx = math.atan2(r_inv[2, 1], r_inv[2, 2])
    return RigidParams(
        t_inv[0], t_inv[1], t_inv[2], math.degrees(rx), math.degrees(ry), math.degrees(rz)
    )


def apply_motion(projection, p):
    """Right-multiply a projection matrix with the rigid transform of ``p``."""
    projection = np.asarray(projection, dtype=float)
    return projection @ compose_rigid(p)


def source_position(projection):
    """Null space of a 3x4 projection matrix, i.e. the homogeneous source point.

    Normalized so the last component is 1 when the source is finite.
    """
    projection = np.asarray(projection, dtype=float)
    u, s, vt = np.linalg.svd(projection)
    if s[2] <= _RANK_RTOL * s[0]:
        raise DegenerateMatrix("projection matrix has rank < 3")
    c = vt[3]
    if abs(c[3]) > 1e-12 * np.linalg.norm(c):
        c = c / c[3]
    return c


def source_positions(projections):
    """Vectorized source extraction for a stack of (N, 3, 4) matrices."""
    projections = np.asarray(projections, dtype=float)
    u, s, vt = np.linalg.svd(projections)
    if np.any(s[:, 2] <= _RANK_RTOL * s[:, 0]):
        raise DegenerateMatrix("projection matrix has rank < 3")
    c = vt[:, 3, :]
    w = c[:, 3:4]
    finite = np.abs(w[:, 0]) > 1e-12 * np.linalg.norm(c, axis=1)
    c = np.where(finite[:, None], c / np.where(finite[:, None], w, 1.0), c)
    return c


def _dehomogenize_source(c):
    c = np.asarray(c, dtype=float)
    if abs(c[3]) < 1e-12 * np.linalg.norm(c):
        raise DegenerateBaseline("source at infinity is not supported")
    return c[:3] / c[3]


def epipolar_pencil_axes(c0, c1):
    """Baseline direction and the two normals spanning the plane pencil.

    Returns (b_hat, n0, n_quad): the kappa = 0 plane normal n0 is the world
    z-axis projected orthogonal to the baseline (falling back to the x-axis
    when the baseline is parallel to z); n_quad = b_hat x n0 completes the
    rotation so that the pencil normal is cos(kappa)*n0 + sin(kappa)*n_quad.
    """
    p0 = _dehomogenize_source(c0)
    p1 = _dehomogenize_source(c1)
    b = p1 - p0
    nb = np.linalg.norm(b)
    if nb < _BASELINE_TOL_MM:
        raise DegenerateBaseline("source positions coincide")
    b_hat = b / nb
    ref = np.array([0.0, 0.0, 1.0])
    n0 = ref - (ref @ b_hat) * b_hat
    if np.linalg.norm(n0) < 1e-9:
        ref = np.array([1.0, 0.0, 0.0])
        n0 = ref - (ref @ b_hat) * b_hat
    n0 /= np.linalg.norm(n0)
    return b_hat, n0, np.cross(b_hat, n0)


def epipolar_plane(c0, c1, kappa):
    """Plane through both sources, rotated by ``kappa`` about the baseline."""
    p0 = _dehomogenize_source(c0)
    _, n0, nq = epipolar_pencil_axes(c0, c1)
    n = math.cos(kappa) * n0 + math.sin(kappa) * nq
    e = np.empty(4)
    e[:3] = n
    e[3] = -n @ p0
    return EpipolarPlane(e=e, kappa=float(kappa))


def plane_to_line(projection, plane):
    """Map an epipolar plane to its image line via the transpose pseudoinverse.

    The plane must contain the camera center; then every world point on the
    plane projects onto the returned homogeneous line.
    """
    projection = np.asarray(projection, dtype=float)
    e = plane.e if isinstance(plane, EpipolarPlane) else np.asarray(plane, dtype=float)
    l = np.linalg.pinv(projection).T @ e
    if math.hypot(l[0], l[1]) <= 1e-12 * np.linalg.norm(l):
        raise LineAtInfinity("plane projects to the line at infinity")
    return l


def line_to_hessian(l):
    """Convert a homogeneous 2D line to Hessian normal form (alpha, t).

    alpha lies in [0, pi); points (x, y) on the line satisfy
    cos(alpha)*x + sin(alpha)*y = t. Scale (including sign) of ``l`` does not
    affect the result.
    """
    l = np.asarray(l, dtype=float)
    n = math.hypot(l[0], l[1])
    if n <= 1e-12 * np.linalg.norm(l):
        raise LineAtInfinity("line at infinity has no Hessian form")
    alpha = math.atan2(l[1], l[0])
    t = -l[2] / n
    if alpha < 0.0:
        alpha += math.pi
        t = -t
    if alpha >= math.pi:  # atan2 returned exactly pi
        alpha -= math.pi
        t = -t
    return alpha, t
