"""Command-line pipeline driver.

Subcommands cover the full workflow: `simulate` renders a motion-corrupted
dataset, `compensate` recovers the motion by minimizing epipolar
inconsistency, `reconstruct` runs FDK with any of the geometry variants,
`evaluate` reports image and parameter errors, `cost` evaluates the ECC cost
standalone, and `render-slice` writes volume slices as 16-bit PNGs.

Exit codes: 0 success, 1 validation/config error, 2 runtime error.
"""

import argparse
import json
import math
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, dataio, ecc, geometry as geo
from . import motion_model as mm
from . import radon, reconstruction, simulation
from .errors import ConfigError, ToolkitError
from .metrics import mse, param_l1, ssim
from .optimizer import OptimizerConfig, nelder_mead_adaptive

GEOMETRY_FILES = {
    "original": "geometry.json",
    "motion": "geometry_motion.json",
    "recovered": "geometry_recovered.json",
}

MAX_ITER_DEFAULTS = {"oop": 1000, "ip": 1000, "full": 2000}

_CONFIG_SCHEMA = {
    "n_projections": (int, 60),
    "angular_range_deg": (float, 210.0),
    "start_angle_deg": (float, 0.0),
    "sid_mm": (float, 60.0),
    "sdd_mm": (float, 100.0),
    "det_rows": (int, 64),
    "det_cols": (int, 96),
    "pixel_pitch_mm": (float, 0.5),
    "phantom": (str, "tibia-like"),
    "n_nodes": (int, 9),
    "seed": (int, 7),
    "amp_translation_um": (float, 50.0),
    "amp_rotation_deg": (float, 1.0),
    "scenario": (str, "oop"),
    "center_motion": (bool, True),
}


def _parse_bool(text):
    low = text.lower()
    if low in ("true", "1", "yes", "on"):
        return True
    if low in ("false", "0", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def parse_config(path):
    """Parse a key = value config file with line-precise error reporting."""
    values = {key: default for key, (_, default) in _CONFIG_SCHEMA.items()}
    path = Path(path)
    if not path.exists():
        raise ConfigError("config file not found", path=str(path))
    for lineno, raw in enumerate(path.read_text().splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError("expected 'key = value'", path=str(path), line=lineno)
        key, _, text = line.partition("=")
        key = key.strip()
        text = text.strip()
        if key not in _CONFIG_SCHEMA:
            raise ConfigError(f"unknown key {key!r}", path=str(path), line=lineno)
        typ, _ = _CONFIG_SCHEMA[key]
        try:
            values[key] = _parse_bool(text) if typ is bool else typ(text)
        except ValueError as exc:
            raise ConfigError(str(exc), path=str(path), line=lineno) from None
    if values["scenario"] not in mm.SCENARIOS:
        raise ConfigError(
            f"scenario must be one of {sorted(mm.SCENARIOS)}, got {values['scenario']!r}",
            path=str(path),
        )
    return values


def _render_config(values):
    return "".join(f"{k} = {values[k]}\n" for k in _CONFIG_SCHEMA)


def _scan_geometry(cfg):
    return simulation.ScanGeometry(
        n_projections=cfg["n_projections"],
        angular_range_deg=cfg["angular_range_deg"],
        start_angle_deg=cfg["start_angle_deg"],
        sid_mm=cfg["sid_mm"],
        sdd_mm=cfg["sdd_mm"],
        det_rows=cfg["det_rows"],
        det_cols=cfg["det_cols"],
        pixel_pitch_mm=cfg["pixel_pitch_mm"],
    )


def cmd_simulate(args):
    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg["seed"] = args.seed
    out = Path(args.output)
    g = _scan_geometry(cfg)
    phantom = simulation.make_phantom(cfg["phantom"])
    matrices = simulation.short_scan_trajectory(g)
    images = simulation.render_scan(phantom, matrices, g)
    mask = mm.SCENARIOS[cfg["scenario"]]
    spline = simulation.random_motion_spline(
        g.n_projections,
        cfg["n_nodes"],
        cfg["amp_translation_um"] / 1000.0,
        cfg["amp_rotation_deg"],
        mask,
        cfg["seed"],
        center=cfg["center_motion"],
    )
    moved = simulation.inject_motion(matrices, spline)

    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(_render_config(cfg))
    dataio.write_meta(
        out / "meta.json",
        g,
        extra={
            "phantom": cfg["phantom"],
            "seed": cfg["seed"],
            "n_nodes": cfg["n_nodes"],
            "amp_translation_um": cfg["amp_translation_um"],
            "amp_rotation_deg": cfg["amp_rotation_deg"],
            "scenario": cfg["scenario"],
            "center_motion": cfg["center_motion"],
        },
    )
    dataio.write_matrices(out / "geometry.json", matrices)
    dataio.write_matrices(out / "geometry_motion.json", moved)
    dataio.write_spline(out / "spline_gt.json", spline, g.n_projections)
    dataio.write_projections(out / "proj", images)
    print(f"wrote dataset with {g.n_projections} views to {out}")
    return 0


def _downsample(g, matrices, images, view_stride, binning):
    """Apply view striding and pixel binning; returns adjusted (g, matrices, images, kept)."""
    kept = np.arange(g.n_projections)
    if view_stride > 1:
        kept = kept[::view_stride]
        step = g.angular_range_deg / g.n_projections
        matrices = matrices[kept]
        images = [images[i] for i in kept]
        g = replace(
            g,
            n_projections=kept.size,
            angular_range_deg=step * view_stride * kept.size,
        )
    if binning > 1:
        if g.det_rows % binning or g.det_cols % binning:
            raise ConfigError(f"detector {g.det_rows}x{g.det_cols} not divisible by bin {binning}")
        rows = g.det_rows // binning
        cols = g.det_cols // binning
        binned = []
        for img in images:
            d = img.data.reshape(rows, binning, cols, binning).mean(axis=(1, 3))
            binned.append(
                radon.ProjectionImage(
                    width=cols, height=rows, spacing=g.pixel_pitch_mm * binning, data=d
                )
            )
        images = binned
        # Pixel centers of the binned grid sit at (b*j + (b-1)/2) original pixels.
        shift = 0.5 * (binning - 1)
        s = np.array(
            [[1.0 / binning, 0.0, -shift / binning],
             [0.0, 1.0 / binning, -shift / binning],
             [0.0, 0.0, 1.0]]
        )
        matrices = np.einsum("ij,njk->nik", s, matrices)
        g = replace(g, det_rows=rows, det_cols=cols, pixel_pitch_mm=g.pixel_pitch_mm * binning)
    return g, matrices, images, kept


def _quantize_table(table):
    """Round table data to float32 so cached and fresh tables are bit-identical."""
    return radon.RadonDerivativeTable(
        data=table.data.astype("<f4").astype(float),
        alpha_spacing=table.alpha_spacing,
        t_spacing=table.t_spacing,
        width=table.width,
        height=table.height,
    )


def _build_tables(images, n_alpha, threads, cache_dir=None):
    n_t = radon.default_n_t(images[0].width, images[0].height)
    if cache_dir is not None:
        cache_dir = Path(cache_dir)
        stems = [cache_dir / f"table_{i:04d}" for i in range(len(images))]
        if all(s.with_suffix(".json").exists() for s in stems):
            tables = [radon.load_table(s) for s in stems]
            if tables[0].n_alpha == n_alpha and tables[0].n_t == n_t:
                return tables

    def build(img):
        return radon.radon_derivative(img, n_alpha=n_alpha, n_t=n_t)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            tables = list(pool.map(build, images))
    else:
        tables = [build(img) for img in images]
    tables = [_quantize_table(t) for t in tables]
    if cache_dir is not None:
        cache_dir.mkdir(parents=True, exist_ok=True)
        for i, t in enumerate(tables):
            radon.save_table(t, cache_dir / f"table_{i:04d}")
    return tables


def _load_dataset(dataset, which):
    dataset = Path(dataset)
    g, meta = dataio.read_meta(dataset / "meta.json")
    path = dataset / GEOMETRY_FILES[which]
    if not path.exists():
        hint = " (run `eccmoco compensate` first)" if which == "recovered" else ""
        raise ConfigError(f"missing {path}{hint}")
    matrices = dataio.read_matrices(path)
    images = dataio.read_projections(
        dataset / "proj", g.n_projections, g.det_rows, g.det_cols, g.pixel_pitch_mm
    )
    return dataset, g, meta, matrices, images


def _ecc_config(args):
    return ecc.EccConfig(
        kappa_step=math.radians(args.kappa_step_deg),
        kappa_max=math.radians(args.kappa_max_deg) if args.kappa_max_deg else None,
        pair_stride=args.pair_stride,
    )


def cmd_compensate(args):
    dataset, g, meta, matrices, images = _load_dataset(args.dataset, "motion")
    scenario = args.scenario or meta.get("scenario", "full")
    if scenario not in mm.SCENARIOS:
        raise ConfigError(f"scenario must be one of {sorted(mm.SCENARIOS)}, got {scenario!r}")
    mask = mm.SCENARIOS[scenario]
    n_total = g.n_projections
    g, matrices, images, kept = _downsample(g, matrices, images, args.view_stride, args.bin)

    cache = None
    if not args.no_cache and args.view_stride == 1 and args.bin == 1:
        cache = dataset / "radon"
    tables = _build_tables(images, args.n_alpha, args.threads, cache)
    evaluator = ecc.CostEvaluator(matrices, tables, _ecc_config(args))

    n_nodes = args.nodes or meta.get("n_nodes", 9)
    nodes = mm.uniform_nodes(n_nodes, n_total)
    base = mm.MotionSpline(node_indices=nodes, node_values=np.zeros((6, n_nodes)))
    amp_t = meta.get("amp_translation_um", 50.0) / 1000.0
    amp_r = meta.get("amp_rotation_deg", 1.0)
    amps = np.array([amp_t] * 3 + [amp_r] * 3)
    per_coord = np.concatenate([np.full(n_nodes, amps[k]) for k in range(6) if mask.active[k]])
    cfg = OptimizerConfig(
        max_iter=args.max_iter or MAX_ITER_DEFAULTS[scenario],
        bounds=np.stack([-per_coord, per_coord], axis=1),
        initial_step=args.initial_step * per_coord,
        x_tol=args.x_tol,
        f_tol=args.f_tol,
    )
    kept_idx = kept.astype(float)

    def objective(x):
        spline = mm.unpack(mask, base, x)
        params = mm.expand_at(spline, kept_idx)
        inv = np.stack([geo.inverse_params(p).as_array() for p in params])
        return evaluator.evaluate(inv)

    dim = mask.n_active * n_nodes
    print(f"scenario {scenario}: optimizing {dim} parameters over {evaluator.n_pairs} pairs")
    log_path = dataset / "cost_log.csv"
    t0 = time.perf_counter()
    with open(log_path, "w") as log:
        log.write("iteration,cost,elapsed_ms\n")

        def on_iteration(it, f_best):
            ms = (time.perf_counter() - t0) * 1000.0
            log.write(f"{it},{f_best!r},{ms:.1f}\n")

        result = nelder_mead_adaptive(objective, np.zeros(dim), cfg, callback=on_iteration)

    est = mm.unpack(mask, base, result.x_best)
    dataio.write_spline(dataset / "spline_est.json", est, n_total)
    all_params = mm.expand(est, n_total)
    motion_full = dataio.read_matrices(dataset / GEOMETRY_FILES["motion"])
    recovered = np.stack(
        [geo.apply_motion(p, geo.inverse_params(q)) for p, q in zip(motion_full, all_params)]
    )
    dataio.write_matrices(dataset / "geometry_recovered.json", recovered)
    print(
        f"iterations {result.iterations}, cost {result.history[0][1]:.6e} -> {result.f_best:.6e}"
    )
    return 0


def _grid_from_args(args):
    if args.voxel_mm is None and args.grid_size == 64:
        return simulation.default_grid()
    voxel = args.voxel_mm or 0.22
    return simulation.GridSpec(nx=args.grid_size, ny=args.grid_size, nz=args.grid_size,
                               spacing=voxel)


def cmd_reconstruct(args):
    dataset, g, meta, matrices, images = _load_dataset(args.dataset, args.which)
    g, matrices, images, _ = _downsample(g, matrices, images, args.view_stride, args.bin)
    grid = _grid_from_args(args)
    vol = reconstruction.fdk(images, matrices, grid, g, window=args.filter)
    stem = dataset / f"volume_{args.which}"
    dataio.write_volume(stem, vol)
    print(f"wrote {stem}.raw ({grid.nx}x{grid.ny}x{grid.nz} @ {grid.spacing} mm)")
    if args.slice_png:
        sl, idx = reconstruction.extract_slice(vol, axis=args.axis, offset_frac=args.offset_frac)
        reconstruction.slice_to_png(sl, args.slice_png, window=args.window, level=args.level)
        print(f"wrote slice {args.axis}={idx} to {args.slice_png}")
    return 0


def cmd_render_slice(args):
    vol = dataio.read_volume(Path(args.volume).with_suffix(""))
    sl, idx = reconstruction.extract_slice(vol, axis=args.axis, offset_frac=args.offset_frac)
    reconstruction.slice_to_png(sl, args.output, window=args.window, level=args.level)
    print(f"wrote slice {args.axis}={idx} to {args.output}")
    return 0


def cmd_evaluate(args):
    dataset = Path(args.dataset)
    g, meta = dataio.read_meta(dataset / "meta.json")
    mask = mm.SCENARIOS[meta.get("scenario", "full")]
    vols = {}
    for which in GEOMETRY_FILES:
        stem = dataset / f"volume_{which}"
        if not stem.with_suffix(".raw").exists():
            raise ConfigError(f"missing {stem}.raw (run `eccmoco reconstruct --which {which}`)")
        vols[which] = dataio.read_volume(stem)
    gt_spline, n = dataio.read_spline(dataset / "spline_gt.json")
    est_path = dataset / "spline_est.json"
    if not est_path.exists():
        raise ConfigError(f"missing {est_path} (run `eccmoco compensate` first)")
    est_spline, _ = dataio.read_spline(est_path)
    zero = mm.MotionSpline(
        node_indices=gt_spline.node_indices.copy(),
        node_values=np.zeros_like(gt_spline.node_values),
    )

    ref = vols["original"]
    rng = float(ref.data.max() - ref.data.min())
    rows = [
        ("mse", mse(vols["motion"], ref), mse(vols["recovered"], ref)),
        ("ssim", ssim(vols["motion"].data, ref.data, data_range=rng),
         ssim(vols["recovered"].data, ref.data, data_range=rng)),
    ]
    before = param_l1(gt_spline, zero, n, mask)
    after = param_l1(gt_spline, est_spline, n, mask)
    for name in geo.PARAM_NAMES:
        rows.append((f"l1_{name}", before[name], after[name]))

    with open(dataset / "report.csv", "w") as fh:
        fh.write("metric,before,after\n")
        for name, b, a in rows:
            bs = "x" if b is None else repr(b)
            as_ = "x" if a is None else repr(a)
            fh.write(f"{name},{bs},{as_}\n")
    print(f"{'metric':<8} {'before':>12} {'after':>12}")
    for name, b, a in rows:
        bs = "x" if b is None else f"{b:.6g}"
        as_ = "x" if a is None else f"{a:.6g}"
        print(f"{name:<8} {bs:>12} {as_:>12}")
    return 0


def cmd_cost(args):
    if args.dataset:
        dataset, g, meta, matrices, images = _load_dataset(args.dataset, args.which)
        cache = None
        if not args.no_cache and args.view_stride == 1 and args.bin == 1:
            cache = dataset / "radon"
        g, matrices, images, kept = _downsample(g, matrices, images, args.view_stride, args.bin)
    else:
        if not (args.geometry and args.proj and args.rows and args.cols):
            raise ConfigError("need --dataset or all of --geometry/--proj/--rows/--cols")
        matrices = dataio.read_matrices(args.geometry)
        images = dataio.read_projections(
            args.proj, len(matrices), args.rows, args.cols, args.pitch
        )
        kept = np.arange(len(matrices))
        cache = None
    n = len(matrices)
    if args.spline:
        spline, _ = dataio.read_spline(args.spline)
        params = mm.expand_at(spline, kept.astype(float))
    elif args.params:
        params = np.asarray(json.loads(Path(args.params).read_text()), dtype=float)
        if params.ndim != 2 or params.shape[1] != 6:
            raise ConfigError(f"--params must hold Nx6 values, got {params.shape}")
        if params.shape[0] == kept.max() + 1 and params.shape[0] != n:
            params = params[kept]  # per original view index, select strided views
        elif params.shape[0] != n:
            raise ConfigError(f"--params needs {n} rows, got {params.shape[0]}")
    else:
        params = np.zeros((n, 6))
    tables = _build_tables(images, args.n_alpha, args.threads, cache)
    value = ecc.total_cost(matrices, tables, params, _ecc_config(args))
    print(f'{{"cost": {value!r}, "n_projections": {n}}}')
    return 0


def _add_ecc_flags(p):
    p.add_argument("--kappa-step-deg", type=float, default=0.1)
    p.add_argument("--kappa-max-deg", type=float, default=None,
                   help="fixed sweep limit; default derives it per pair from the detectors")
    p.add_argument("--pair-stride", type=int, default=1)
    p.add_argument("--n-alpha", type=int, default=radon.DEFAULT_N_ALPHA)
    p.add_argument("--threads", type=int, default=1, help="workers for Radon table building")
    p.add_argument("--no-cache", action="store_true", help="do not cache Radon tables on disk")
    p.add_argument("--view-stride", type=int, default=1)
    p.add_argument("--bin", type=int, default=1, help="detector pixel binning factor")


def build_parser():
    parser = argparse.ArgumentParser(prog="eccmoco", description=__doc__)
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="render a motion-corrupted dataset")
    p.add_argument("config", help="key = value config file")
    p.add_argument("-o", "--output", required=True, help="dataset directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("compensate", help="recover motion by minimizing ECC inconsistency")
    p.add_argument("dataset")
    p.add_argument("--scenario", choices=sorted(mm.SCENARIOS), default=None,
                   help="default: the scenario recorded in meta.json")
    p.add_argument("--max-iter", type=int, default=None,
                   help="default 1000 (oop, ip) or 2000 (full)")
    p.add_argument("--x-tol", type=float, default=1e-6)
    p.add_argument("--f-tol", type=float, default=1e-10)
    p.add_argument("--initial-step", type=float, default=0.1,
                   help="initial simplex step as a fraction of each bound half-width")
    p.add_argument("--nodes", type=int, default=None, help="spline nodes; default from meta")
    _add_ecc_flags(p)
    p.set_defaults(func=cmd_compensate)

    p = sub.add_parser("reconstruct", help="FDK reconstruction")
    p.add_argument("dataset")
    p.add_argument("--which", choices=sorted(GEOMETRY_FILES), default="original")
    p.add_argument("--grid-size", type=int, default=64)
    p.add_argument("--voxel-mm", type=float, default=None)
    p.add_argument("--filter", choices=("ramlak", "hann"), default="ramlak")
    p.add_argument("--view-stride", type=int, default=1)
    p.add_argument("--bin", type=int, default=1)
    p.add_argument("--slice-png", default=None)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--offset-frac", type=float, default=0.25)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--level", type=float, default=None)
    p.set_defaults(func=cmd_reconstruct)

    p = sub.add_parser("evaluate", help="write report.csv with before/after metrics")
    p.add_argument("dataset")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("cost", help="evaluate the ECC cost of a geometry")
    p.add_argument("--dataset", default=None)
    p.add_argument("--which", choices=sorted(GEOMETRY_FILES), default="motion")
    p.add_argument("--geometry", default=None, help="explicit geometry.json path")
    p.add_argument("--proj", default=None, help="directory of raw projections")
    p.add_argument("--rows", type=int, default=None)
    p.add_argument("--cols", type=int, default=None)
    p.add_argument("--pitch", type=float, default=1.0)
    p.add_argument("--spline", default=None, help="motion spline file (um/deg units)")
    p.add_argument("--params", default=None, help="JSON file with N x 6 params (mm/deg)")
    _add_ecc_flags(p)
    p.set_defaults(func=cmd_cost)

    p = sub.add_parser("render-slice", help="write a 16-bit PNG slice of a volume")
    p.add_argument("volume", help="volume stem or .raw path")
    p.add_argument("-o", "--output", required=True)
    p.add_argument("--axis", choices=("x", "y", "z"), default="z")
    p.add_argument("--offset-frac", type=float, default=0.25)
    p.add_argument("--window", type=float, default=None)
    p.add_argument("--level", type=float, default=None)
    p.set_defaults(func=cmd_render_slice)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ToolkitError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - runtime failures exit with 2
        print(f"runtime error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
