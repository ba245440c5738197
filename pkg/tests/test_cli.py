"""End-to-end CLI tests on a compact dataset (small N, reduced iterations)."""

import json
import shutil
from pathlib import Path

import numpy as np
import pytest

from eccmoco import cli, dataio
from eccmoco.errors import ConfigError

COMPACT_CONFIG = """
# compact pipeline smoke configuration
n_projections = 14
det_rows = 32
det_cols = 48
pixel_pitch_mm = 1.0
phantom = two-spheres
n_nodes = 4
seed = 3
scenario = oop
"""


def write_config(tmp_path, text=COMPACT_CONFIG):
    path = tmp_path / "config.txt"
    path.write_text(text)
    return path


def simulate(tmp_path, out_name="ds", seed=None):
    cfg = write_config(tmp_path)
    out = tmp_path / out_name
    args = ["simulate", str(cfg), "-o", str(out)]
    if seed is not None:
        args += ["--seed", str(seed)]
    assert cli.main(args) == 0
    return out


@pytest.fixture(scope="module")
def pipeline_dataset(tmp_path_factory):
    """simulate -> compensate -> reconstruct x3 -> evaluate, shared by tests."""
    tmp = tmp_path_factory.mktemp("pipeline")
    ds = simulate(tmp)
    assert cli.main(["compensate", str(ds), "--max-iter", "60",
                     "--kappa-step-deg", "0.4", "--n-alpha", "90"]) == 0
    for which in ("original", "motion", "recovered"):
        assert cli.main(["reconstruct", str(ds), "--which", which,
                         "--grid-size", "32", "--voxel-mm", "0.3"]) == 0
    assert cli.main(["evaluate", str(ds)]) == 0
    return ds


class TestConfigParsing:
    def test_unknown_key_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("n_projections = 14\nbogus_key = 1\n")
        with pytest.raises(ConfigError) as err:
            cli.parse_config(path)
        assert "bad.txt:2" in str(err.value)

    def test_bad_value_reports_line(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("\n\nn_projections = soon\n")
        with pytest.raises(ConfigError) as err:
            cli.parse_config(path)
        assert ":3" in str(err.value)

    def test_invalid_scenario_rejected(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("scenario = sideways\n")
        with pytest.raises(ConfigError):
            cli.parse_config(path)

    def test_defaults_applied(self, tmp_path):
        path = tmp_path / "ok.txt"
        path.write_text("seed = 12\n")
        cfg = cli.parse_config(path)
        assert cfg["n_projections"] == 60
        assert cfg["seed"] == 12
        assert cfg["center_motion"] is True


class TestSimulate:
    def test_layout_and_view_count(self, tmp_path):
        ds = simulate(tmp_path)
        assert (ds / "meta.json").exists()
        assert (ds / "geometry.json").exists()
        assert (ds / "geometry_motion.json").exists()
        assert (ds / "spline_gt.json").exists()
        assert (ds / "config.txt").exists()
        raws = sorted((ds / "proj").glob("view_*.raw"))
        assert len(raws) == 14

    def test_repeat_runs_byte_identical(self, tmp_path):
        ds1 = simulate(tmp_path, "d1")
        ds2 = simulate(tmp_path, "d2")
        for rel in ("meta.json", "geometry.json", "geometry_motion.json",
                    "spline_gt.json", "config.txt", "proj/view_0005.raw"):
            assert (ds1 / rel).read_bytes() == (ds2 / rel).read_bytes()

    def test_zero_amplitude_keeps_geometry(self, tmp_path):
        cfg = tmp_path / "zero.txt"
        cfg.write_text(COMPACT_CONFIG + "amp_translation_um = 0\namp_rotation_deg = 0\n")
        out = tmp_path / "zds"
        assert cli.main(["simulate", str(cfg), "-o", str(out)]) == 0
        a = dataio.read_matrices(out / "geometry.json")
        b = dataio.read_matrices(out / "geometry_motion.json")
        assert np.array_equal(a, b)

    def test_seed_flag_overrides(self, tmp_path):
        d1 = simulate(tmp_path, "s1", seed=1)
        d2 = simulate(tmp_path, "s2", seed=2)
        assert (d1 / "spline_gt.json").read_bytes() != (d2 / "spline_gt.json").read_bytes()

    def test_default_config_writes_60_views(self, tmp_path):
        cfg = tmp_path / "default.txt"
        cfg.write_text("# all defaults\n")
        out = tmp_path / "full"
        assert cli.main(["simulate", str(cfg), "-o", str(out)]) == 0
        assert len(list((out / "proj").glob("view_*.raw"))) == 60


class TestCompensate:
    def test_outputs_and_monotone_cost(self, pipeline_dataset):
        ds = pipeline_dataset
        assert (ds / "spline_est.json").exists()
        assert (ds / "geometry_recovered.json").exists()
        rows = (ds / "cost_log.csv").read_text().strip().splitlines()
        assert rows[0] == "iteration,cost,elapsed_ms"
        iters = [int(r.split(",")[0]) for r in rows[1:]]
        costs = [float(r.split(",")[1]) for r in rows[1:]]
        assert iters == list(range(len(iters)))
        assert costs[-1] <= costs[0]
        assert min(costs) == costs[-1]

    def test_estimated_spline_matches_scenario_mask(self, pipeline_dataset):
        est, n = dataio.read_spline(pipeline_dataset / "spline_est.json")
        assert n == 14
        assert np.all(est.node_values[[0, 1, 5]] == 0.0)  # oop: tx, ty, rz inactive

    def test_missing_dataset_is_validation_error(self, tmp_path):
        assert cli.main(["compensate", str(tmp_path / "nope")]) == 1


class TestReconstructAndEvaluate:
    def test_volumes_written(self, pipeline_dataset):
        for which in ("original", "motion", "recovered"):
            assert (pipeline_dataset / f"volume_{which}.raw").exists()

    def test_report_schema(self, pipeline_dataset):
        rows = (pipeline_dataset / "report.csv").read_text().strip().splitlines()
        assert rows[0] == "metric,before,after"
        names = [r.split(",")[0] for r in rows[1:]]
        assert names == ["mse", "ssim", "l1_tx", "l1_ty", "l1_tz", "l1_rx", "l1_ry", "l1_rz"]
        by_name = {r.split(",")[0]: r.split(",")[1:] for r in rows[1:]}
        assert by_name["l1_tx"] == ["x", "x"]  # inactive in oop
        assert float(by_name["l1_tz"][0]) > 0.0

    def test_recovered_requires_compensate(self, tmp_path):
        ds = simulate(tmp_path)
        assert cli.main(["reconstruct", str(ds), "--which", "recovered"]) == 1

    def test_render_slice(self, pipeline_dataset, tmp_path):
        out = tmp_path / "slice.png"
        assert cli.main(["render-slice", str(pipeline_dataset / "volume_original"),
                         "-o", str(out)]) == 0
        assert out.exists()

    def test_reconstruct_slice_flag(self, pipeline_dataset, tmp_path):
        out = tmp_path / "direct.png"
        assert cli.main(["reconstruct", str(pipeline_dataset), "--which", "original",
                         "--grid-size", "32", "--voxel-mm", "0.3",
                         "--slice-png", str(out)]) == 0
        assert out.exists()


class TestCost:
    def test_zero_params_match_compensate_initial_cost(self, pipeline_dataset, capsys):
        ds = pipeline_dataset
        assert cli.main(["cost", "--dataset", str(ds), "--which", "motion",
                         "--kappa-step-deg", "0.4", "--n-alpha", "90"]) == 0
        out = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        first = (ds / "cost_log.csv").read_text().strip().splitlines()[1]
        logged = float(first.split(",")[1])
        assert out["cost"] == logged
        assert out["n_projections"] == 14

    def test_explicit_files_mode(self, pipeline_dataset, tmp_path, capsys):
        ds = pipeline_dataset
        assert cli.main(["cost", "--geometry", str(ds / "geometry_motion.json"),
                         "--proj", str(ds / "proj"), "--rows", "32", "--cols", "48",
                         "--kappa-step-deg", "0.4", "--n-alpha", "90"]) == 0
        a = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert cli.main(["cost", "--dataset", str(ds), "--which", "motion", "--no-cache",
                         "--kappa-step-deg", "0.4", "--n-alpha", "90"]) == 0
        b = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert a["cost"] == b["cost"]

    def test_spline_params_lower_cost_on_gt(self, pipeline_dataset, capsys):
        # applying the inverse of ground truth equals recovering the motion
        ds = pipeline_dataset
        gt, n = dataio.read_spline(ds / "spline_gt.json")
        from eccmoco import geometry as geo, motion_model as mm

        params = mm.expand(gt, n)
        inv = [geo.inverse_params(p).as_array().tolist() for p in params]
        pfile = ds / "inv_params.json"
        pfile.write_text(json.dumps(inv))
        assert cli.main(["cost", "--dataset", str(ds), "--which", "motion",
                         "--params", str(pfile),
                         "--kappa-step-deg", "0.4", "--n-alpha", "90"]) == 0
        rec = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert cli.main(["cost", "--dataset", str(ds), "--which", "motion",
                         "--kappa-step-deg", "0.4", "--n-alpha", "90"]) == 0
        corrupted = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert rec["cost"] < corrupted["cost"]


class TestExitCodes:
    def test_validation_error_is_1(self, tmp_path):
        bad = tmp_path / "bad.txt"
        bad.write_text("angular_range_deg = 120\n")
        assert cli.main(["simulate", str(bad), "-o", str(tmp_path / "x")]) == 1

    def test_missing_config_is_1(self, tmp_path):
        assert cli.main(["simulate", str(tmp_path / "none.txt"),
                         "-o", str(tmp_path / "x")]) == 1
