"""Image- and parameter-domain evaluation metrics."""

import numpy as np
from scipy.ndimage import uniform_filter

from .errors import LengthMismatch, ShapeMismatch
from .motion_model import N_PARAMS, expand

SSIM_WINDOW = 7
SSIM_K1 = 0.01
SSIM_K2 = 0.03


def _data(vol):
    if isinstance(vol, np.ndarray):
        return vol
    return np.asarray(vol.data, dtype=float) if hasattr(vol, "data") else np.asarray(vol, float)


def mse(a, b):
    """Mean squared difference between two equally shaped volumes."""
    a = _data(a)
    b = _data(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return float(np.mean((a - b) ** 2))


def ssim(a, b, data_range=None):
    """Mean structural similarity with a uniform cubic window.

    The dynamic range defaults to max(b) - min(b), treating b as the
    reference volume so before/after comparisons share one scale. Windows are
    evaluated fully inside the volume (border crop of half a window).
    """
    a = _data(a)
    b = _data(b)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    if min(a.shape) < SSIM_WINDOW:
        raise ShapeMismatch(f"volume smaller than the {SSIM_WINDOW}^3 SSIM window")
    if data_range is None:
        data_range = float(b.max() - b.min())
        if data_range == 0.0:
            data_range = 1.0
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_a = uniform_filter(a, SSIM_WINDOW)
    mu_b = uniform_filter(b, SSIM_WINDOW)
    # E[x y] - E[x] E[y] over each window; population (biased) moments.
    cov = uniform_filter(a * b, SSIM_WINDOW) - mu_a * mu_b
    var_a = uniform_filter(a * a, SSIM_WINDOW) - mu_a * mu_a
    var_b = uniform_filter(b * b, SSIM_WINDOW) - mu_b * mu_b

    num = (2.0 * mu_a * mu_b + c1) * (2.0 * cov + c2)
    den = (mu_a**2 + mu_b**2 + c1) * (var_a + var_b + c2)
    ssim_map = num / den
    pad = SSIM_WINDOW // 2
    core = ssim_map[pad:-pad, pad:-pad, pad:-pad]
    return float(core.mean())


def param_l1(gt_spline, est_spline, n_projections, mask):
    """Per-parameter mean absolute expanded difference between two motion splines.

    Returns a dict over parameter names; translations are reported in um,
    rotations in degrees. Inactive parameters map to None.
    """
    gt = expand(gt_spline, n_projections)
    est = expand(est_spline, n_projections)
    if gt.shape != est.shape:
        raise LengthMismatch(f"{gt.shape} vs {est.shape}")
    err = np.abs(gt - est).mean(axis=0)
    scale = np.array([1000.0] * 3 + [1.0] * 3)  # mm -> um for translations
    names = ("tx", "ty", "tz", "rx", "ry", "rz")
    return {
        names[k]: (float(err[k] * scale[k]) if mask.active[k] else None)
        for k in range(N_PARAMS)
    }
