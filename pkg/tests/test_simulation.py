import math

import numpy as np
import pytest

from eccmoco import geometry as geo, motion_model as mm, simulation as sim
from eccmoco.errors import InvalidGeometry, UnknownPreset


class TestPhantoms:
    def test_single_sphere(self):
        ph = sim.make_phantom("single-sphere")
        assert len(ph.ellipsoids) == 1
        assert ph.ellipsoids[0].density == 1.0
        assert ph.ellipsoids[0].semi_axes[0] == ph.ellipsoids[0].semi_axes[2]

    def test_tibia_like_composition(self):
        ph = sim.make_phantom("tibia-like")
        densities = [e.density for e in ph.ellipsoids]
        assert densities[0] == 1.0
        assert densities[1] == -0.7
        assert densities[2:] == [0.5] * 8

    def test_two_spheres(self):
        assert len(sim.make_phantom("two-spheres").ellipsoids) == 2

    def test_unknown_preset(self):
        with pytest.raises(UnknownPreset):
            sim.make_phantom("cube")


class TestTrajectory:
    def test_isocenter_projects_to_detector_center(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        iso = np.array([0.0, 0.0, 0.0, 1.0])
        for p in mats:
            h = p @ iso
            assert h[:2] / h[2] == pytest.approx([(g.det_cols - 1) / 2, (g.det_rows - 1) / 2],
                                                 abs=1e-9)

    def test_sources_on_configured_circle(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        c = geo.source_positions(mats)
        assert np.allclose(np.linalg.norm(c[:, :3], axis=1), g.sid_mm, atol=1e-9)
        assert np.allclose(c[:, 2], 0.0, atol=1e-9)

    def test_z_axis_maps_to_detector_column(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        for p in mats:
            h = p @ np.array([0.0, 0.0, 1.0, 1.0])
            assert h[0] / h[2] == pytest.approx((g.det_cols - 1) / 2, abs=1e-9)

    def test_short_scan_condition_enforced(self):
        with pytest.raises(InvalidGeometry):
            sim.ScanGeometry(angular_range_deg=170.0)
        with pytest.raises(InvalidGeometry):
            # fan angle of the default detector is ~2*13.5 deg; 185 < 180 + fan
            sim.ScanGeometry(angular_range_deg=185.0)
        with pytest.raises(InvalidGeometry):
            sim.ScanGeometry(sid_mm=120.0)


class TestForwardProject:
    def test_central_chord_through_sphere(self):
        # Odd detector so one pixel center rides the central ray exactly.
        g = sim.ScanGeometry(det_rows=65, det_cols=97)
        mats = sim.short_scan_trajectory(g)
        ph = sim.make_phantom("single-sphere")
        r = ph.ellipsoids[0].semi_axes[0]
        img = sim.forward_project(ph, mats[0], g.det_rows, g.det_cols, g.pixel_pitch_mm)
        assert img.data[32, 48] == pytest.approx(2.0 * r, abs=1e-9)

    def test_miss_gives_zero(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        ph = sim.make_phantom("single-sphere")
        img = sim.forward_project(ph, mats[0], g.det_rows, g.det_cols, g.pixel_pitch_mm)
        assert img.data[0, 0] == 0.0

    def test_linearity_is_exact(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        a = sim.make_phantom("single-sphere")
        b = sim.make_phantom("two-spheres")
        combined = sim.Phantom(a.ellipsoids + b.ellipsoids)
        pa = sim.forward_project(a, mats[7], g.det_rows, g.det_cols, g.pixel_pitch_mm)
        pb = sim.forward_project(b, mats[7], g.det_rows, g.det_cols, g.pixel_pitch_mm)
        pc = sim.forward_project(combined, mats[7], g.det_rows, g.det_cols, g.pixel_pitch_mm)
        assert np.array_equal(pc.data, pa.data + pb.data)

    def test_against_quadrature_oracle(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        rng = np.random.default_rng(5)
        for preset, n_rays in (("tibia-like", 6), ("two-spheres", 4)):
            ph = sim.make_phantom(preset)
            p = mats[9]
            img = sim.forward_project(ph, p, g.det_rows, g.det_cols, g.pixel_pitch_mm)
            src = geo.source_position(p)[:3]
            for _ in range(n_rays):
                row = rng.integers(20, 44)
                col = rng.integers(30, 66)
                val = img.data[row, col]
                if val < 1e-3:
                    continue
                d = np.linalg.solve(p[:, :3], [col, row, 1.0])
                d /= np.linalg.norm(d)
                # Fine midpoint quadrature across the source-detector span.
                span = 2.0 * g.sdd_mm
                n = 2_000_000
                step = span / n
                lam = (np.arange(n) + 0.5) * step
                pts = src[None, :] + lam[:, None] * d[None, :]
                dens = np.zeros(n)
                for e in ph.ellipsoids:
                    scale = e.rotation.T / np.asarray(e.semi_axes)[:, None]
                    q = (pts - np.asarray(e.center)[None, :]) @ scale.T
                    dens += e.density * ((q * q).sum(axis=1) <= 1.0)
                oracle = dens.sum() * step
                assert val == pytest.approx(oracle, rel=1e-4)


class TestInjectMotion:
    def test_zero_spline_is_identity(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        spline = mm.MotionSpline(mm.uniform_nodes(9, g.n_projections), np.zeros((6, 9)))
        assert np.array_equal(sim.inject_motion(mats, spline), mats)

    def test_amplitude_bound_with_overshoot_margin(self):
        for seed in range(10):
            spline = sim.random_motion_spline(60, 9, 0.05, 1.0, mm.SCENARIOS["full"],
                                              seed=seed)
            params = mm.expand(spline, 60)
            assert np.max(np.abs(params[:, :3])) <= 0.05 * 1.15
            assert np.max(np.abs(params[:, 3:])) <= 1.0 * 1.15

    def test_roundtrip_with_exact_inverse(self, desk_geometry):
        g = desk_geometry
        mats = sim.short_scan_trajectory(g)
        spline = sim.random_motion_spline(g.n_projections, 9, 0.05, 1.0,
                                          mm.SCENARIOS["full"], seed=2)
        moved = sim.inject_motion(mats, spline)
        params = mm.expand(spline, g.n_projections)
        back = np.stack([geo.apply_motion(p, geo.inverse_params(q))
                         for p, q in zip(moved, params)])
        assert np.allclose(back, mats, rtol=1e-12, atol=1e-9)

    def test_mask_restricts_axes(self):
        spline = sim.random_motion_spline(60, 9, 0.05, 1.0, mm.SCENARIOS["oop"], seed=3)
        assert np.all(spline.node_values[[0, 1, 5]] == 0.0)
        assert np.any(spline.node_values[2] != 0.0)


class TestRasterize:
    def test_sphere_volume_fraction(self):
        ph = sim.make_phantom("single-sphere")
        grid = sim.GridSpec(nx=48, ny=48, nz=48, spacing=0.25)
        vol = sim.rasterize(ph, grid)
        measured = vol.data.sum() * grid.spacing**3
        r = ph.ellipsoids[0].semi_axes[0]
        assert measured == pytest.approx(4.0 / 3.0 * math.pi * r**3, rel=0.02)
