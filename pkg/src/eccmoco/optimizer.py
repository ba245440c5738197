"""Bounded Nelder-Mead simplex minimization with dimension-adaptive coefficients.

Candidate points are clipped to the bound box before evaluation, keeping the
objective total. One iteration is one reflect/expand/contract/shrink cycle.
"""

from dataclasses import dataclass, field

import numpy as np

from .errors import DimensionMismatch


def adaptive_coefficients(n):
    """Reflection, expansion, contraction and shrink factors for dimension n.

    For n = 2 these reduce to the classic (1, 2, 0.5, 0.5).
    """
    if n < 1:
        raise DimensionMismatch("dimension must be >= 1")
    return 1.0, 1.0 + 2.0 / n, 0.75 - 0.5 / n, 1.0 - 1.0 / n


@dataclass(frozen=True)
class OptimizerConfig:
    max_iter: int
    bounds: np.ndarray  # (n, 2) rows of (lo, hi)
    initial_step: np.ndarray  # (n,)
    x_tol: float = 1e-6
    f_tol: float = 1e-10

    def __post_init__(self):
        bounds = np.atleast_2d(np.asarray(self.bounds, dtype=float))
        step = np.asarray(self.initial_step, dtype=float)
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")
        if bounds.shape[1] != 2 or np.any(bounds[:, 0] >= bounds[:, 1]):
            raise ValueError("bounds must be (n, 2) with lo < hi")
        if step.shape != (bounds.shape[0],):
            raise DimensionMismatch("initial_step length must match bounds")
        object.__setattr__(self, "bounds", bounds)
        object.__setattr__(self, "initial_step", step)

    @classmethod
    def for_box(cls, max_iter, lo, hi, step_fraction=0.1, **kw):
        """Config from per-coordinate bounds with steps at a fraction of the half-width."""
        lo = np.asarray(lo, dtype=float)
        hi = np.asarray(hi, dtype=float)
        bounds = np.stack([lo, hi], axis=1)
        return cls(max_iter=max_iter, bounds=bounds,
                   initial_step=step_fraction * 0.5 * (hi - lo), **kw)


@dataclass
class OptimizerResult:
    x_best: np.ndarray
    f_best: float
    iterations: int
    history: list = field(default_factory=list)  # (iteration, best f) pairs


def nelder_mead_adaptive(f, x0, cfg, callback=None):
    """Minimize f over the bound box starting from x0.

    Deterministic: no randomized restarts, stable ordering of equal function
    values. Terminates on the iteration budget, on the simplex collapsing
    below x_tol, or on the relative f spread dropping below f_tol. The
    returned best never exceeds f(x0). ``callback(iteration, f_best)`` fires
    once per history entry, starting at iteration 0 with f(x0).
    """
    x0 = np.asarray(x0, dtype=float)
    n = x0.size
    if cfg.bounds.shape[0] != n:
        raise DimensionMismatch(f"bounds for {cfg.bounds.shape[0]} coords, x0 has {n}")
    lo = cfg.bounds[:, 0]
    hi = cfg.bounds[:, 1]

    def clip(x):
        return np.minimum(np.maximum(x, lo), hi)

    alpha, beta, gamma, delta = adaptive_coefficients(n)

    simplex = [clip(x0)]
    for i in range(n):
        v = x0.copy()
        v[i] += cfg.initial_step[i]
        v = clip(v)
        if np.array_equal(v, simplex[0]):
            v = x0.copy()
            v[i] -= cfg.initial_step[i]
            v = clip(v)
        simplex.append(v)
    simplex = np.asarray(simplex)
    fvals = np.array([f(x) for x in simplex])
    f_start = float(fvals[0])

    def order():
        idx = np.argsort(fvals, kind="stable")
        return simplex[idx], fvals[idx]

    simplex, fvals = order()
    history = [(0, f_start)]
    if callback is not None:
        callback(0, f_start)
    iterations = 0
    for iteration in range(1, cfg.max_iter + 1):
        iterations = iteration
        centroid = simplex[:-1].mean(axis=0)
        worst = simplex[-1]
        xr = clip(centroid + alpha * (centroid - worst))
        fr = f(xr)
        if fr < fvals[0]:
            xe = clip(centroid + beta * (xr - centroid))
            fe = f(xe)
            if fe < fr:
                simplex[-1], fvals[-1] = xe, fe
            else:
                simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-2]:
            simplex[-1], fvals[-1] = xr, fr
        elif fr < fvals[-1]:
            xc = clip(centroid + gamma * (xr - centroid))
            fc = f(xc)
            if fc <= fr:
                simplex[-1], fvals[-1] = xc, fc
            else:
                simplex, fvals = _shrink(f, simplex, fvals, delta)
        else:
            xc = clip(centroid - gamma * (centroid - worst))
            fc = f(xc)
            if fc < fvals[-1]:
                simplex[-1], fvals[-1] = xc, fc
            else:
                simplex, fvals = _shrink(f, simplex, fvals, delta)
        simplex, fvals = order()
        history.append((iteration, float(fvals[0])))
        if callback is not None:
            callback(iteration, float(fvals[0]))
        x_spread = np.max(np.abs(simplex[1:] - simplex[0]))
        f_scale = max(abs(float(fvals[0])), abs(float(fvals[-1])))
        f_spread = float(fvals[-1]) - float(fvals[0])
        if x_spread < cfg.x_tol or f_spread <= cfg.f_tol * f_scale:
            break
    return OptimizerResult(
        x_best=simplex[0].copy(),
        f_best=float(fvals[0]),
        iterations=iterations,
        history=history,
    )


def _shrink(f, simplex, fvals, delta):
    best = simplex[0]
    for i in range(1, len(simplex)):
        simplex[i] = best + delta * (simplex[i] - best)
        fvals[i] = f(simplex[i])
    return simplex, fvals
