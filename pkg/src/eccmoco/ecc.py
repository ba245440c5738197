"""Pairwise epipolar inconsistency and the global motion-compensation cost.

For every projection pair, planes through both source positions are swept
about the baseline; each plane maps to one epipolar line per view, and the
derivative-Radon values sampled along the two lines must agree for consistent
data. The cost is the sum of squared differences over all plane samples and
all pairs.

Line signs matter: both lines of a pair are derived from the same homogeneous
plane vector, and the fold rule in `radon.sample` carries the orientation
into the table lookup, so the difference is invariant to the plane's own
sign.
"""

import math
from dataclasses import dataclass

import numpy as np

from . import geometry
from .errors import DegenerateBaseline, DegenerateMatrix, LengthMismatch

try:
    from numba import config as _numba_config
    from numba import njit, prange

    _numba_config.THREADING_LAYER = "workqueue"
    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a hard dependency, but the
    _HAVE_NUMBA = False  # numpy path keeps the module usable without it

_Z_AXIS = np.array([0.0, 0.0, 1.0])
_X_AXIS = np.array([1.0, 0.0, 0.0])


@dataclass(frozen=True)
class EccConfig:
    """Sampling of the epipolar plane pencil.

    kappa_max = None derives the sweep limit per pair from the detector
    corners (the largest symmetric angle at which both lines still meet both
    detectors). pair_stride keeps only pairs whose index difference is a
    multiple of the stride.
    """

    kappa_step: float = math.radians(0.1)
    kappa_max: float | None = None
    pair_stride: int = 1

    def __post_init__(self):
        if not self.kappa_step > 0:
            raise ValueError("kappa_step must be positive")
        if self.kappa_max is not None and self.kappa_max < self.kappa_step:
            raise ValueError("kappa_max must be >= kappa_step")
        if self.pair_stride < 1:
            raise ValueError("pair_stride must be >= 1")


def _decompose(matrices):
    """Batched SVD factors: sources (dehomogenized) and transposed pseudoinverses."""
    u, s, vt = np.linalg.svd(matrices)
    if np.any(s[:, 2] <= 1e-10 * s[:, 0]):
        raise DegenerateMatrix("projection matrix has rank < 3")
    pinv_t = (u / s[:, None, :]) @ vt[:, :3, :]
    c = vt[:, 3, :]
    w = c[:, 3]
    if np.any(np.abs(w) <= 1e-12 * np.linalg.norm(c, axis=1)):
        raise DegenerateBaseline("source at infinity is not supported")
    return c[:, :3] / w[:, None], pinv_t


def _pencil_axes(src0, src1):
    """Per-pair baseline direction and the two pencil normals (vectorized)."""
    b = src1 - src0
    nb = np.linalg.norm(b, axis=1)
    if np.any(nb < 1e-9):
        raise DegenerateBaseline("source positions coincide for at least one pair")
    b_hat = b / nb[:, None]
    n0 = _Z_AXIS - (b_hat @ _Z_AXIS)[:, None] * b_hat
    small = np.linalg.norm(n0, axis=1) < 1e-9
    if np.any(small):
        alt = _X_AXIS - (b_hat[small] @ _X_AXIS)[:, None] * b_hat[small]
        n0[small] = alt
    n0 /= np.linalg.norm(n0, axis=1)[:, None]
    return b_hat, n0, np.cross(b_hat, n0)


def _corner_dirs(matrices, width, height):
    """World directions of the rays through the four detector corners, per view."""
    corners = np.array(
        [[0.0, 0.0, 1.0], [width - 1.0, 0.0, 1.0], [0.0, height - 1.0, 1.0],
         [width - 1.0, height - 1.0, 1.0]]
    )
    return np.linalg.solve(matrices[:, :, :3], np.broadcast_to(corners.T, (len(matrices), 3, 4)))


def _pair_kappa_max(dirs, ii, jj, n0, nq):
    """Largest symmetric sweep angle keeping the lines on both detectors.

    The pencil plane at angle kappa contains a corner ray direction d when
    cos(k)*(n0.d) + sin(k)*(nq.d) = 0; the detector subtends the interval
    hull of its four corner angles.
    """
    kmax = np.full(ii.shape, np.inf)
    for vv in (ii, jj):
        d = dirs[vv]  # (P, 3, 4)
        a = -np.einsum("pk,pkc->pc", n0, d)
        b = np.einsum("pk,pkc->pc", nq, d)
        kc = np.arctan2(a, b)
        kc = np.mod(kc + 0.5 * math.pi, math.pi) - 0.5 * math.pi
        lo = kc.min(axis=1)
        hi = kc.max(axis=1)
        kmax = np.minimum(kmax, np.minimum(-lo, hi))
    return np.maximum(kmax, 0.0)


def _stack_tables(tables):
    t0 = tables[0]
    for t in tables[1:]:
        if (
            t.data.shape != t0.data.shape
            or t.alpha_spacing != t0.alpha_spacing
            or t.t_spacing != t0.t_spacing
            or t.width != t0.width
            or t.height != t0.height
        ):
            raise LengthMismatch("all Radon tables must share one grid")
    return np.stack([t._ext for t in tables])


def _sample_stacked(ext, view_idx, alpha, t, alpha_spacing, t_spacing, t_max):
    """Folded bilinear lookup in a stack of extended tables (one per view)."""
    n_alpha = ext.shape[1] - 1
    n_t = ext.shape[2]
    k = np.floor(alpha * (1.0 / math.pi))
    af = alpha - k * math.pi
    sign = 1.0 - 2.0 * (k.astype(np.int64) & 1)
    tf = sign * t
    r = af * (1.0 / alpha_spacing)
    c = (tf + t_max) * (1.0 / t_spacing)
    r0 = np.floor(r).astype(np.int64)
    np.clip(r0, 0, n_alpha - 1, out=r0)
    fr = r - r0
    cf = np.floor(c)
    c0 = cf.astype(np.int64)
    fc = c - cf
    in0 = (c0 >= 0) & (c0 < n_t)
    in1 = (c0 >= -1) & (c0 < n_t - 1)
    flat = ext.reshape(-1)
    base = (view_idx * (n_alpha + 1) + r0) * n_t + np.clip(c0, 0, n_t - 1)
    base1 = (view_idx * (n_alpha + 1) + r0) * n_t + np.clip(c0 + 1, 0, n_t - 1)
    w0 = (1.0 - fc) * in0
    w1 = fc * in1
    out = (1.0 - fr) * (w0 * flat.take(base) + w1 * flat.take(base1))
    out += fr * (w0 * flat.take(base + n_t) + w1 * flat.take(base1 + n_t))
    out *= np.abs(tf) <= t_max
    return sign * out


if _HAVE_NUMBA:

    @njit(cache=True, inline="always")
    def _sample_one(ext, view, lx, ly, lz, cx, cy, inv_da, inv_dt, t_max):
        """Scalar twin of _sample_stacked for the compiled kernel."""
        n_alpha = ext.shape[1] - 1
        n_t = ext.shape[2]
        lzc = lz + lx * cx + ly * cy
        norm = math.hypot(lx, ly)
        alpha = math.atan2(ly, lx)
        tv = -lzc / norm
        k = math.floor(alpha * (1.0 / math.pi))
        af = alpha - k * math.pi
        sign = 1.0 if (int(k) & 1) == 0 else -1.0
        tf = sign * tv
        if abs(tf) > t_max:
            return 0.0
        r = af * inv_da
        c = (tf + t_max) * inv_dt
        r0 = int(math.floor(r))
        if r0 < 0:
            r0 = 0
        elif r0 > n_alpha - 1:
            r0 = n_alpha - 1
        fr = r - r0
        cf = math.floor(c)
        c0 = int(cf)
        fc = c - cf
        v = 0.0
        if 0 <= c0 < n_t:
            v += (1.0 - fc) * ((1.0 - fr) * ext[view, r0, c0] + fr * ext[view, r0 + 1, c0])
        if 0 <= c0 + 1 < n_t:
            v += fc * ((1.0 - fr) * ext[view, r0, c0 + 1] + fr * ext[view, r0 + 1, c0 + 1])
        return sign * v

    @njit(cache=True, parallel=True)
    def _cost_kernel(ext, a0, b0, a1, b1, v0, v1, counts, step, cx, cy,
                     inv_da, inv_dt, t_max, partial):
        for p in prange(counts.shape[0]):
            acc = 0.0
            for m in range(-counts[p], counts[p] + 1):
                kap = m * step
                ck = math.cos(kap)
                sk = math.sin(kap)
                s0 = _sample_one(
                    ext, v0[p],
                    ck * a0[p, 0] + sk * b0[p, 0],
                    ck * a0[p, 1] + sk * b0[p, 1],
                    ck * a0[p, 2] + sk * b0[p, 2],
                    cx, cy, inv_da, inv_dt, t_max,
                )
                s1 = _sample_one(
                    ext, v1[p],
                    ck * a1[p, 0] + sk * b1[p, 0],
                    ck * a1[p, 1] + sk * b1[p, 1],
                    ck * a1[p, 2] + sk * b1[p, 2],
                    cx, cy, inv_da, inv_dt, t_max,
                )
                d = s0 - s1
                acc += d * d
            partial[p] = acc


class CostEvaluator:
    """Repeated ECC cost evaluation over one set of projections.

    The pair list and per-pair kappa grids are frozen from the matrices given
    at construction; `evaluate` recomputes sources and line mappings for the
    current rigid parameters. Evaluation order is deterministic: pairs ascend
    in (i, j), kappa ascends within each pair, and partial sums are reduced
    in that order.

    engine "numba" runs a fused compiled kernel (per-pair partials, bitwise
    reproducible); "numpy" is the vectorized reference path; "auto" prefers
    numba when importable.
    """

    def __init__(self, matrices, tables, config=None, threads=1, engine="auto"):
        config = config or EccConfig()
        matrices = np.asarray(matrices, dtype=float)
        if matrices.ndim != 3 or matrices.shape[1:] != (3, 4):
            raise LengthMismatch(f"expected (N, 3, 4) matrices, got {matrices.shape}")
        n = matrices.shape[0]
        if len(tables) != n:
            raise LengthMismatch(f"{n} matrices vs {len(tables)} tables")
        if n < 2:
            raise LengthMismatch("need at least two projections")
        self.matrices = matrices
        self.config = config
        self.threads = max(1, int(threads))
        if engine == "auto":
            engine = "numba" if _HAVE_NUMBA else "numpy"
        if engine == "numba" and not _HAVE_NUMBA:
            raise ValueError("numba engine requested but numba is not importable")
        if engine not in ("numba", "numpy"):
            raise ValueError(f"unknown engine {engine!r}")
        self.engine = engine
        self._ext = _stack_tables(tables)
        self._alpha_spacing = tables[0].alpha_spacing
        self._t_spacing = tables[0].t_spacing
        self._t_max = tables[0].t_max
        self._cx = 0.5 * (tables[0].width - 1)
        self._cy = 0.5 * (tables[0].height - 1)
        ii, jj = np.triu_indices(n, k=1)
        keep = (jj - ii) % config.pair_stride == 0
        self._ii = ii[keep]
        self._jj = jj[keep]
        self._freeze_kappa_grid(tables[0])

    def _freeze_kappa_grid(self, table):
        cfg = self.config
        src, _ = _decompose(self.matrices)
        _, n0, nq = _pencil_axes(src[self._ii], src[self._jj])
        if cfg.kappa_max is None:
            dirs = _corner_dirs(self.matrices, table.width, table.height)
            kappa_max = _pair_kappa_max(dirs, self._ii, self._jj, n0, nq)
        else:
            kappa_max = np.full(self._ii.shape, cfg.kappa_max)
        counts = np.floor(kappa_max / cfg.kappa_step + 1e-12).astype(np.int64)
        n_samples = 2 * counts + 1
        total = int(n_samples.sum())
        pair_of = np.repeat(np.arange(self._ii.size), n_samples)
        starts = np.concatenate(([0], np.cumsum(n_samples)[:-1]))
        offsets = np.arange(total) - np.repeat(starts, n_samples)
        self._kappa = (offsets - np.repeat(counts, n_samples)) * cfg.kappa_step
        self._cos_k = np.cos(self._kappa)
        self._sin_k = np.sin(self._kappa)
        self._pair_of = pair_of
        self._starts = starts
        self._counts = counts

    @property
    def n_pairs(self):
        return self._ii.size

    def evaluate(self, params=None, per_pair=False):
        """ECC cost of the frozen projections under optional rigid parameters.

        params is an (N, 6) array (or list of RigidParams) applied by
        right-multiplication before evaluation; None means unmodified.
        """
        mats = self.matrices
        if params is not None:
            params = _params_matrix(params, mats.shape[0])
            t = np.stack([geometry.compose_rigid(p) for p in params])
            mats = mats @ t
        src, pinv_t = _decompose(mats)
        ii, jj = self._ii, self._jj
        _, n0, nq = _pencil_axes(src[ii], src[jj])
        d0 = -np.einsum("pk,pk->p", n0, src[ii])
        dq = -np.einsum("pk,pk->p", nq, src[ii])

        side_vecs = []
        for vv in (ii, jj):
            pt = pinv_t[vv]  # (P, 3, 4)
            a_vec = np.einsum("pkj,pj->pk", pt[:, :, :3], n0) + pt[:, :, 3] * d0[:, None]
            b_vec = np.einsum("pkj,pj->pk", pt[:, :, :3], nq) + pt[:, :, 3] * dq[:, None]
            side_vecs.append((np.ascontiguousarray(a_vec), np.ascontiguousarray(b_vec)))

        if self.engine == "numba":
            partial = np.zeros(ii.size)
            if ii.size:
                _cost_kernel(
                    self._ext, side_vecs[0][0], side_vecs[0][1],
                    side_vecs[1][0], side_vecs[1][1], ii, jj, self._counts,
                    self.config.kappa_step, self._cx, self._cy,
                    1.0 / self._alpha_spacing, 1.0 / self._t_spacing, self._t_max,
                    partial,
                )
        else:
            dm = None
            for side, vv in ((0, ii), (1, jj)):
                s = self._sample_side(*side_vecs[side], vv)
                dm = s if side == 0 else dm - s
            dm *= dm
            partial = np.add.reduceat(dm, self._starts) if dm.size else np.zeros(0)
        if per_pair:
            return partial
        total = 0.0
        for v in partial:
            total += float(v)
        return total

    def _sample_side(self, a_vec, b_vec, vv):
        """Derivative-Radon samples along the mapped lines of one pair side."""
        pair_of = self._pair_of
        cos_k, sin_k = self._cos_k, self._sin_k

        def run(sl):
            po = pair_of[sl]
            ck = cos_k[sl]
            sk = sin_k[sl]
            lx = ck * a_vec[po, 0] + sk * b_vec[po, 0]
            ly = ck * a_vec[po, 1] + sk * b_vec[po, 1]
            lz = ck * a_vec[po, 2] + sk * b_vec[po, 2]
            # Shift to image-center origin before the Hessian conversion.
            lz += lx * self._cx + ly * self._cy
            norm = np.hypot(lx, ly)
            alpha = np.arctan2(ly, lx)
            t_val = -lz / norm
            return _sample_stacked(
                self._ext, vv[po], alpha, t_val,
                self._alpha_spacing, self._t_spacing, self._t_max,
            )

        n = pair_of.size
        if self.threads <= 1 or n < 1 << 16:
            return run(slice(None))
        # run() is purely elementwise, so any chunking reproduces the serial
        # result bit for bit once the parts are concatenated in order.
        bounds = np.linspace(0, n, self.threads + 1).astype(np.int64)
        slices = [slice(int(a), int(b)) for a, b in zip(bounds[:-1], bounds[1:])]
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=self.threads) as pool:
            parts = list(pool.map(run, slices))
        return np.concatenate(parts)


def _params_matrix(params, n):
    if isinstance(params, np.ndarray) and params.shape == (n, 6):
        return np.asarray(params, dtype=float)
    rows = []
    for p in params:
        rows.append(p.as_array() if isinstance(p, geometry.RigidParams) else np.asarray(p, float))
    arr = np.asarray(rows, dtype=float)
    if arr.shape != (n, 6):
        raise LengthMismatch(f"expected {n} parameter sets of 6 values, got {arr.shape}")
    return arr


def pair_inconsistency(p0, p1, table0, table1, config=None):
    """Summed squared epipolar inconsistency for one projection pair."""
    ev = CostEvaluator(np.stack([np.asarray(p0, float), np.asarray(p1, float)]),
                       [table0, table1], config)
    return ev.evaluate()


def total_cost(matrices, tables, params, config=None):
    """Global ECC cost: rigid params applied per view, summed over all pairs.

    The reduction runs in ascending (i, j) pair order with ascending kappa,
    so results are bit-reproducible for identical inputs.
    """
    matrices = np.asarray(matrices, dtype=float)
    n = matrices.shape[0] if matrices.ndim == 3 else len(matrices)
    if len(tables) != n:
        raise LengthMismatch(f"{n} matrices vs {len(tables)} tables")
    arr = _params_matrix(params, n)
    t = np.stack([geometry.compose_rigid(p) for p in arr])
    moved = matrices @ t
    return CostEvaluator(moved, tables, config).evaluate()
