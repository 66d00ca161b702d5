import numpy as np
import pytest

from spdekit.darcy import (boundary_fluxes, divergence, reconstruct_velocity, solve_pressure,
                           streak_permeability, uniform_permeability, write_darcy_csv)
from spdekit.mesh import build_fv_grid


def solve(mesh, perm):
    p = solve_pressure(mesh, perm)
    return p, reconstruct_velocity(mesh, perm, p)


def test_homogeneous_linear_profile_and_uniform_velocity():
    g = build_fv_grid(2.0, 1.0, 16, 1)
    p, v = solve(g, uniform_permeability(g, 3.0))
    np.testing.assert_allclose(p, 1 - g.cell_centers[:, 0] / 2.0, atol=1e-12)
    horizontal = np.abs(g.face_normals[:, 0]) == 1
    # Darcy velocity k / L1 along +x; normals on the left side point outward
    np.testing.assert_allclose(v.face_velocity[horizontal] * g.face_normals[horizontal, 0], 1.5, rtol=1e-11)


def test_two_resistors_in_series():
    g = build_fv_grid(1.0, 1.0, 2, 1)
    k = np.array([1.0, 100.0])
    perm = uniform_permeability(g)
    perm = type(perm)(k, np.array([False, True]), 1.0, 100.0)
    p, v = solve(g, perm)
    # half-cell resistances: left boundary 0.25/1, interface 0.25/1 + 0.25/100, right boundary 0.25/100
    r = np.array([0.25 / 1, 0.25 / 1, 0.25 / 100, 0.25 / 100])
    flux = 1.0 / r.sum()
    np.testing.assert_allclose(p, [1 - flux * r[0], flux * r[3]], rtol=1e-12)
    np.testing.assert_allclose(boundary_fluxes(g, v)["right"], flux, rtol=1e-12)


def test_streak_geometry():
    g = build_fv_grid(1.0, 1.0, 50, 50)
    perm = streak_permeability(g)
    rows = perm.streak_mask.reshape(50, 50)
    assert np.all(rows == rows[:, :1])  # bands span the full x range
    in_rows = np.flatnonzero(rows[:, 0])
    y = g.cell_centers[in_rows * 50, 1]
    for c in (0.25, 0.5, 0.75):
        band = y[np.abs(y - c) < 0.05]
        assert len(band) == 5
    np.testing.assert_allclose(perm.values[perm.streak_mask], 100.0)
    np.testing.assert_allclose(perm.values[~perm.streak_mask], 1.0)
    assert np.all(perm.values > 0)


@pytest.fixture(scope="module")
def streak_flow():
    g = build_fv_grid(1.0, 1.0, 50, 50)
    perm = streak_permeability(g)
    p, v = solve(g, perm)
    return g, perm, p, v


def test_divergence_free_and_conservative(streak_flow):
    g, perm, p, v = streak_flow
    div = divergence(g, v)
    assert np.abs(div).max() <= 1e-10 * np.abs(v.face_flux).max()
    b = boundary_fluxes(g, v)
    assert b["top"] == 0.0 and b["bottom"] == 0.0
    assert abs(b["left"] + b["right"]) <= 1e-10 * abs(b["right"])
    assert sum(b.values()) == pytest.approx(0.0, abs=1e-10 * abs(b["right"]))


def test_maximum_principle(streak_flow):
    _, _, p, _ = streak_flow
    assert p.max() <= 1.0 and p.min() >= 0.0


def test_streak_flux_ratio_matches_layered_flow(streak_flow):
    g, perm, p, v = streak_flow
    # x-faces in the middle column; infinite parallel layers carry flux proportional to k
    mid = (np.abs(g.face_normals[:, 0]) == 1) & np.isclose(g.face_centers[:, 0], 0.5)
    c = g.face_cells[mid, 0]
    fast = v.face_flux[mid][perm.streak_mask[c]].mean()
    slow = v.face_flux[mid][~perm.streak_mask[c]]
    far = np.min(np.abs(g.cell_centers[c][~perm.streak_mask[c], 1][:, None] - np.array([0.25, 0.5, 0.75])), axis=1)
    ratio = fast / slow[far > 0.1].mean()
    assert ratio == pytest.approx(100.0, rel=0.2)


def test_rejects_non_positive_permeability():
    g = build_fv_grid(1, 1, 2, 2)
    perm = uniform_permeability(g)
    bad = type(perm)(np.array([1.0, 0.0, 1.0, 1.0]), perm.streak_mask, 1.0, 1.0)
    with pytest.raises(ValueError):
        solve_pressure(g, bad)
    with pytest.raises(ValueError):
        streak_permeability(g, contrast=-1)


def test_darcy_csv(tmp_path, streak_flow):
    g, perm, p, v = streak_flow
    paths = write_darcy_csv(g, perm, p, v, tmp_path)
    assert [x.name for x in paths] == ["darcy_cells.csv", "darcy_faces.csv"]
    assert len(paths[0].read_text().splitlines()) == 1 + 2500
