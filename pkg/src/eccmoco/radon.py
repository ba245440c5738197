"""Sampled derivative of the 2D Radon transform of projection images.

Lines are parameterized in Hessian form (alpha, t) with the origin at the
image center; alpha is the line normal angle in [0, pi), t the signed
distance in pixels. Values for alpha outside [0, pi) follow from the fold
rule d/dt rho(alpha + pi, -t) = -d/dt rho(alpha, t).
"""

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .errors import InvalidGrid

INTEGRATION_STEP_PX = 0.5
DEFAULT_N_ALPHA = 200


@dataclass(frozen=True)
class ProjectionImage:
    """Line-integral image with physical pixel spacing in mm/pixel."""

    width: int
    height: int
    spacing: float
    data: np.ndarray

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.shape != (self.height, self.width):
            raise InvalidGrid(f"data shape {data.shape} != (height, width)")
        if not np.all(np.isfinite(data)):
            raise InvalidGrid("image contains non-finite values")
        object.__setattr__(self, "data", data)


def bilinear_sample(img, x, y):
    """Bilinearly interpolate img[y, x] at float coordinates; 0 outside."""
    h, w = img.shape
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    ix = np.floor(x).astype(np.int64)
    iy = np.floor(y).astype(np.int64)
    fx = x - ix
    fy = y - iy
    out = np.zeros(np.broadcast(x, y).shape, dtype=float)
    for dy in (0, 1):
        for dx in (0, 1):
            gx = ix + dx
            gy = iy + dy
            inside = (gx >= 0) & (gx < w) & (gy >= 0) & (gy < h)
            wgt = (fx if dx else 1.0 - fx) * (fy if dy else 1.0 - fy)
            vals = img[np.clip(gy, 0, h - 1), np.clip(gx, 0, w - 1)]
            out += np.where(inside, wgt * vals, 0.0)
    return out


@dataclass(frozen=True)
class RadonDerivativeTable:
    """Precomputed d/dt of the 2D Radon transform on an (alpha, t) grid.

    data has shape (n_alpha, n_t); row i holds alpha = i * alpha_spacing,
    column j holds t = -t_max + j * t_spacing. width/height record the source
    image dimensions in pixels.
    """

    data: np.ndarray
    alpha_spacing: float
    t_spacing: float
    width: int
    height: int

    def __post_init__(self):
        data = np.asarray(self.data, dtype=float)
        if data.ndim != 2 or data.shape[0] < 2 or data.shape[1] < 3 or data.shape[1] % 2 == 0:
            raise InvalidGrid("table needs n_alpha >= 2 and odd n_t >= 3")
        if not np.all(np.isfinite(data)):
            raise InvalidGrid("table contains non-finite values")
        object.__setattr__(self, "data", data)
        # Extra row at alpha = pi (fold of row 0) makes interpolation seamless
        # across the periodic boundary.
        ext = np.empty((data.shape[0] + 1, data.shape[1]))
        ext[:-1] = data
        ext[-1] = -data[0, ::-1]
        object.__setattr__(self, "_ext", ext)

    @property
    def n_alpha(self):
        return self.data.shape[0]

    @property
    def n_t(self):
        return self.data.shape[1]

    @property
    def t_max(self):
        return 0.5 * (self.n_t - 1) * self.t_spacing

    def sample(self, alpha, t):
        """Bilinear lookup at (alpha, t); total over all finite inputs.

        Folds alpha into [0, pi) with the antisymmetry rule and returns 0 for
        |t| beyond the table support.
        """
        alpha = np.asarray(alpha, dtype=float)
        t = np.asarray(t, dtype=float)
        k = np.floor(alpha / math.pi)
        a = alpha - k * math.pi
        sign = np.where(k.astype(np.int64) % 2 == 0, 1.0, -1.0)
        tf = sign * t
        val = bilinear_sample(self._ext, (tf + self.t_max) / self.t_spacing, a / self.alpha_spacing)
        val = np.where(np.abs(tf) > self.t_max, 0.0, val)
        out = sign * val
        return float(out) if out.ndim == 0 else out


def sample(table, alpha, t):
    """Module-level alias for RadonDerivativeTable.sample."""
    return table.sample(alpha, t)


def _grids(width, height, n_alpha, n_t):
    if n_alpha < 2:
        raise InvalidGrid(f"n_alpha must be >= 2, got {n_alpha}")
    if n_t < 3 or n_t % 2 == 0:
        raise InvalidGrid(f"n_t must be odd and >= 3, got {n_t}")
    t_max = 0.5 * math.hypot(width, height)
    alphas = np.arange(n_alpha) * (math.pi / n_alpha)
    ts = np.linspace(-t_max, t_max, n_t)
    return alphas, ts, t_max


def default_n_t(width, height):
    """Next odd count >= the image diagonal, putting t near native pixel pitch."""
    n = int(math.ceil(math.hypot(width, height)))
    return n if n % 2 == 1 else n + 1


def radon_transform(img, n_alpha, n_t, step=INTEGRATION_STEP_PX):
    """Plain 2D Radon transform on the table grid, by midpoint line integration.

    Line integrals use bilinear image interpolation at the given step (in
    pixels); the image origin is its center.
    """
    from scipy.ndimage import map_coordinates

    if isinstance(img, ProjectionImage):
        img = img.data
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    alphas, ts, t_max = _grids(w, h, n_alpha, n_t)
    cx = 0.5 * (w - 1)
    cy = 0.5 * (h - 1)
    # Even sample count keeps the midpoint grid symmetric about the line
    # center, so mirror symmetries of the image survive discretization.
    n_s = 2 * int(math.ceil(t_max / step))
    s = (np.arange(n_s) + 0.5 - 0.5 * n_s) * step
    out = np.empty((n_alpha, n_t))
    # Chunk over alpha to bound the coordinate-array memory.
    chunk = max(1, int(4e6 / (n_t * n_s)))
    for lo in range(0, n_alpha, chunk):
        a = alphas[lo : lo + chunk, None, None]
        ca, sa = np.cos(a), np.sin(a)
        t2 = ts[None, :, None]
        s2 = s[None, None, :]
        y = t2 * sa + s2 * ca + cy
        x = t2 * ca - s2 * sa + cx
        vals = map_coordinates(img, [y.ravel(), x.ravel()], order=1, mode="constant", cval=0.0)
        out[lo : lo + chunk] = vals.reshape(y.shape).sum(axis=2) * step
    return out


def radon_derivative(img, n_alpha=DEFAULT_N_ALPHA, n_t=None):
    """Tabulate d/dt of the Radon transform of a projection image.

    The transform is sampled on the (alpha, t) grid and differenced along t
    (central differences inside, one-sided at the edges).
    """
    if isinstance(img, ProjectionImage):
        img = img.data
    img = np.asarray(img, dtype=float)
    h, w = img.shape
    if n_t is None:
        n_t = default_n_t(w, h)
    rt = radon_transform(img, n_alpha, n_t)
    t_max = 0.5 * math.hypot(w, h)
    t_spacing = 2.0 * t_max / (n_t - 1)
    deriv = np.gradient(rt, t_spacing, axis=1)
    return RadonDerivativeTable(
        data=deriv,
        alpha_spacing=math.pi / n_alpha,
        t_spacing=t_spacing,
        width=w,
        height=h,
    )


def save_table(table, stem):
    """Write a table as raw little-endian float32 plus a JSON sidecar."""
    stem = Path(stem)
    table.data.astype("<f4").tofile(stem.with_suffix(".f32"))
    sidecar = {
        "n_alpha": table.n_alpha,
        "n_t": table.n_t,
        "alpha_spacing": table.alpha_spacing,
        "t_spacing": table.t_spacing,
        "width": table.width,
        "height": table.height,
    }
    stem.with_suffix(".json").write_text(json.dumps(sidecar, sort_keys=True) + "\n")


def load_table(stem):
    stem = Path(stem)
    meta = json.loads(stem.with_suffix(".json").read_text())
    data = np.fromfile(stem.with_suffix(".f32"), dtype="<f4").astype(float)
    data = data.reshape(meta["n_alpha"], meta["n_t"])
    return RadonDerivativeTable(
        data=data,
        alpha_spacing=meta["alpha_spacing"],
        t_spacing=meta["t_spacing"],
        width=meta["width"],
        height=meta["height"],
    )
