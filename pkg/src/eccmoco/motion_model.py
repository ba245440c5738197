"""Akima-spline motion model: M node values per rigid parameter, expanded to
per-projection transforms.

Node values follow the RigidParams convention: rows (tx, ty, tz) in mm and
(rx, ry, rz) in degrees, over node positions given in projection-index units.
"""

from dataclasses import dataclass

import numpy as np

from .errors import LengthMismatch, NonMonotonicNodes, OutOfDomain

N_PARAMS = 6


@dataclass(frozen=True)
class MotionSpline:
    """Per-parameter Akima spline over projection index.

    node_indices: (M,) strictly increasing, spanning [0, N-1].
    node_values: (6, M), rows ordered (tx, ty, tz, rx, ry, rz).
    """

    node_indices: np.ndarray
    node_values: np.ndarray

    def __post_init__(self):
        idx = np.asarray(self.node_indices, dtype=float)
        val = np.asarray(self.node_values, dtype=float)
        if idx.ndim != 1 or idx.size < 2:
            raise NonMonotonicNodes("need at least 2 spline nodes")
        if np.any(np.diff(idx) <= 0):
            raise NonMonotonicNodes("node indices must be strictly increasing")
        if val.shape != (N_PARAMS, idx.size):
            raise LengthMismatch(
                f"node_values shape {val.shape} does not match {(N_PARAMS, idx.size)}"
            )
        object.__setattr__(self, "node_indices", idx)
        object.__setattr__(self, "node_values", val)

    @property
    def n_nodes(self):
        return self.node_indices.size


@dataclass(frozen=True)
class ScenarioMask:
    """Which of the six rigid parameters are active, in (tx,ty,tz,rx,ry,rz) order."""

    active: tuple

    def __post_init__(self):
        active = tuple(bool(a) for a in self.active)
        if len(active) != N_PARAMS or not any(active):
            raise ValueError("mask needs 6 flags with at least one active")
        object.__setattr__(self, "active", active)

    @property
    def n_active(self):
        return sum(self.active)


# Scenario names follow the plane spanned by the source trajectory (z = 0):
# out-of-plane motion moves out of it, in-plane motion stays within it.
SCENARIOS = {
    "oop": ScenarioMask((False, False, True, True, True, False)),
    "ip": ScenarioMask((True, True, False, False, False, True)),
    "full": ScenarioMask((True, True, True, True, True, True)),
}


def _akima_slopes(xs, ys):
    """Node slopes by Akima's rule with quadratic-extrapolation phantom points."""
    m = np.diff(ys) / np.diff(xs)
    # Two phantom secant slopes on each side (Akima 1970).
    m_ext = np.empty(m.size + 4)
    m_ext[2:-2] = m
    m_ext[1] = 2.0 * m[0] - m[1]
    m_ext[0] = 2.0 * m_ext[1] - m[0]
    m_ext[-2] = 2.0 * m[-1] - m[-2]
    m_ext[-1] = 2.0 * m_ext[-2] - m[-1]
    w1 = np.abs(m_ext[3:] - m_ext[2:-1])  # |m_{i+1} - m_i|
    w2 = np.abs(m_ext[1:-2] - m_ext[:-3])  # |m_{i-1} - m_{i-2}|
    denom = w1 + w2
    slopes = np.empty(xs.size)
    tie = denom < 1e-12 * np.maximum(np.abs(m_ext[3:]) + np.abs(m_ext[:-3]), 1.0)
    safe = np.where(tie, 1.0, denom)
    slopes = (w1 * m_ext[1:-2] + w2 * m_ext[2:-1]) / safe
    # Tie-break: both weights vanish -> mean of the adjacent secant slopes.
    slopes[tie] = 0.5 * (m_ext[1:-2][tie] + m_ext[2:-1][tie])
    return slopes


def _fd_slopes(xs, ys):
    """Three-point finite-difference slopes, one-sided at the ends."""
    slopes = np.empty(xs.size)
    slopes[1:-1] = (ys[2:] - ys[:-2]) / (xs[2:] - xs[:-2])
    slopes[0] = (ys[1] - ys[0]) / (xs[1] - xs[0])
    slopes[-1] = (ys[-1] - ys[-2]) / (xs[-1] - xs[-2])
    return slopes


def _hermite_eval(xs, ys, slopes, q):
    i = np.clip(np.searchsorted(xs, q, side="right") - 1, 0, xs.size - 2)
    h = xs[i + 1] - xs[i]
    s = (q - xs[i]) / h
    h00 = (1 + 2 * s) * (1 - s) ** 2
    h10 = s * (1 - s) ** 2
    h01 = s * s * (3 - 2 * s)
    h11 = s * s * (s - 1)
    return h00 * ys[i] + h10 * h * slopes[i] + h01 * ys[i + 1] + h11 * h * slopes[i + 1]


def akima_eval(xs, ys, q):
    """Akima interpolation of (xs, ys) at q (scalar or array).

    Uses Akima's original slope rule for 5+ nodes. Smaller node counts degrade
    to the exact linear / quadratic interpolant and to cubic Hermite with
    finite-difference slopes at 4 nodes. C1 continuous, exact at the nodes.
    """
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if xs.ndim != 1 or xs.size < 2 or ys.shape != xs.shape:
        raise NonMonotonicNodes("xs and ys must be equal-length 1D arrays, size >= 2")
    if np.any(np.diff(xs) <= 0):
        raise NonMonotonicNodes("xs must be strictly increasing")
    q = np.asarray(q, dtype=float)
    scalar = q.ndim == 0
    q = np.atleast_1d(q)
    if np.any(q < xs[0]) or np.any(q > xs[-1]):
        raise OutOfDomain(f"query outside [{xs[0]}, {xs[-1]}]")

    n = xs.size
    if n == 2:
        out = ys[0] + (ys[1] - ys[0]) * (q - xs[0]) / (xs[1] - xs[0])
    elif n == 3:
        # Unique parabola through the three nodes (Lagrange form).
        l0 = (q - xs[1]) * (q - xs[2]) / ((xs[0] - xs[1]) * (xs[0] - xs[2]))
        l1 = (q - xs[0]) * (q - xs[2]) / ((xs[1] - xs[0]) * (xs[1] - xs[2]))
        l2 = (q - xs[0]) * (q - xs[1]) / ((xs[2] - xs[0]) * (xs[2] - xs[1]))
        out = ys[0] * l0 + ys[1] * l1 + ys[2] * l2
    else:
        slopes = _fd_slopes(xs, ys) if n == 4 else _akima_slopes(xs, ys)
        out = _hermite_eval(xs, ys, slopes, q)
    return float(out[0]) if scalar else out


def uniform_nodes(n_nodes, n_projections):
    """Uniform node positions over [0, N-1], endpoints included."""
    if n_nodes < 2 or n_projections < 2:
        raise ValueError("need at least 2 nodes and 2 projections")
    return np.linspace(0.0, n_projections - 1.0, n_nodes)


def expand_at(spline, indices):
    """Evaluate all six parameter splines at the given projection indices.

    Returns a (len(indices), 6) array in RigidParams column order.
    """
    q = np.asarray(indices, dtype=float)
    out = np.empty((q.size, N_PARAMS))
    for k in range(N_PARAMS):
        out[:, k] = akima_eval(spline.node_indices, spline.node_values[k], q)
    return out


def expand(spline, n_projections):
    """Evaluate all six parameter splines at every projection index.

    Returns an (N, 6) array in RigidParams column order.
    """
    if spline.node_indices[0] != 0.0 or spline.node_indices[-1] != n_projections - 1.0:
        raise OutOfDomain(
            f"spline spans [{spline.node_indices[0]}, {spline.node_indices[-1]}], "
            f"expected [0, {n_projections - 1}]"
        )
    return expand_at(spline, np.arange(n_projections, dtype=float))


def pack(mask, spline):
    """Flatten the active rows of a spline into the optimizer vector."""
    rows = [spline.node_values[k] for k in range(N_PARAMS) if mask.active[k]]
    return np.concatenate(rows)


def unpack(mask, spline, x):
    """Rebuild a spline from an optimizer vector; inactive rows are untouched."""
    x = np.asarray(x, dtype=float)
    m = spline.n_nodes
    if x.size != mask.n_active * m:
        raise LengthMismatch(f"vector length {x.size} != {mask.n_active} * {m}")
    values = spline.node_values.copy()
    pos = 0
    for k in range(N_PARAMS):
        if mask.active[k]:
            values[k] = x[pos : pos + m]
            pos += m
    return MotionSpline(node_indices=spline.node_indices.copy(), node_values=values)
