import numpy as np
import pytest

from eccmoco import radon, simulation as sim


@pytest.fixture(scope="session")
def desk_geometry():
    return sim.ScanGeometry()


@pytest.fixture(scope="session")
def small_geometry():
    """Reduced scan for fast module tests: 16 views on a 48x32 detector."""
    return sim.ScanGeometry(
        n_projections=16, det_rows=32, det_cols=48, pixel_pitch_mm=1.0
    )


@pytest.fixture(scope="session")
def small_tibia_bundle(small_geometry):
    g = small_geometry
    phantom = sim.make_phantom("tibia-like")
    mats = sim.short_scan_trajectory(g)
    imgs = sim.render_scan(phantom, mats, g)
    tables = [radon.radon_derivative(im, n_alpha=120) for im in imgs]
    return g, mats, imgs, tables


@pytest.fixture(scope="session")
def sphere_pair(desk_geometry):
    """Two desk-scale views of the centered sphere plus their Radon tables."""
    g = desk_geometry
    phantom = sim.make_phantom("single-sphere")
    mats = sim.short_scan_trajectory(g)
    pair = np.stack([mats[0], mats[20]])
    imgs = [sim.forward_project(phantom, p, g.det_rows, g.det_cols, g.pixel_pitch_mm)
            for p in pair]
    tables = [radon.radon_derivative(im) for im in imgs]
    return pair, imgs, tables
