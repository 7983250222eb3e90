import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from dglti.mesh import (FineRule, MeshError, build_interval_mesh, build_tensor_mesh, classify,
                        cutoff_mask, graded_axis, mesh_from_config, stabilization_interval_mesh)

from conftest import graded_te_mesh, uniform_te_mesh


def brute_force_m_set(mesh, fine):
    out = fine.copy()
    for c in range(mesh.ncells):
        for d in range(mesh.ncells):
            if fine[d] and _share_face(mesh, c, d):
                out[c] = True
    return out


def _share_face(mesh, a, b):
    lo_a, hi_a = mesh.lower[a], mesh.lower[a] + mesh.widths[a]
    lo_b, hi_b = mesh.lower[b], mesh.lower[b] + mesh.widths[b]
    touching = 0
    overlapping = 0
    for d in range(mesh.dim):
        if np.isclose(hi_a[d], lo_b[d]) or np.isclose(hi_b[d], lo_a[d]):
            touching += 1
        elif min(hi_a[d], hi_b[d]) > max(lo_a[d], lo_b[d]) + 1e-14:
            overlapping += 1
    return touching == 1 and overlapping == mesh.dim - 1


def test_stabilization_mesh_sizes():
    m = stabilization_interval_mesh()
    assert m.ncells == 101
    assert m.h_max == pytest.approx(0.009975, rel=1e-14)
    assert m.h_min == pytest.approx(0.0025, rel=1e-14)
    assert m.axes[0][-1] == 1.0
    # the fine cell sits in the middle
    assert np.argmin(m.diameter) == 50


def test_single_cell_interval():
    m = build_interval_mesh((0, 1), [1.0])
    assert m.h_max == m.h_min == 1.0
    assert len(m.boundary_faces) == 2 and len(m.interior_faces) == 0


def test_equal_widths():
    m = build_interval_mesh((0, 2), [0.5] * 4)
    np.testing.assert_allclose(m.diameter, 0.5)


@pytest.mark.parametrize("widths", [[0.5, 0.0, 0.5], [0.6, 0.6], [-0.5, 1.5]])
def test_interval_rejects_bad_widths(widths):
    with pytest.raises(MeshError):
        build_interval_mesh((0, 1), widths)


def test_uniform_tensor_mesh():
    m = uniform_te_mesh(4)
    assert m.ncells == 16
    np.testing.assert_allclose(m.diameter, np.sqrt(2) / 4, rtol=1e-14)
    assert len(m.interior_faces) == 2 * 4 * 3
    assert len(m.boundary_faces) == 16


def test_graded_mesh_threefold_refinement():
    ax = graded_axis(0, 1, 8, (0.375, 0.625), 3)
    m = build_tensor_mesh(((0, 1), (0, 1)), ax, ax)
    assert m.h_min == pytest.approx(m.h_max / 8, rel=1e-12)


def test_large_square_cell_count():
    h = 0.022
    n = int(np.ceil(4 / h))
    ax = np.linspace(0, 4, n + 1)
    m = build_tensor_mesh(((0, 4), (0, 4)), ax, ax)
    assert m.ncells == n * n


def test_tensor_rejects_non_monotone():
    with pytest.raises(MeshError):
        build_tensor_mesh(((0, 1), (0, 1)), [0, 0.6, 0.5, 1], [0, 1])
    with pytest.raises(MeshError):
        build_tensor_mesh(((0, 1), (0, 1)), [0, 0.5, 0.9], [0, 1])


def test_diameter_is_diagonal():
    m = graded_te_mesh(8, 2)
    diag = np.hypot(m.widths[:, 0], m.widths[:, 1])
    np.testing.assert_allclose(m.diameter, diag, rtol=1e-14)


def test_stabilization_partition():
    m = stabilization_interval_mesh()
    part = classify(m, FineRule.below(0.005))
    assert np.flatnonzero(part.fine).tolist() == [50]
    assert np.flatnonzero(part.m_set).tolist() == [49, 50, 51]
    np.testing.assert_array_equal(part.m_set, brute_force_m_set(m, part.fine))
    assert cutoff_mask(part, "M").sum() == 3
    assert part.h_f == pytest.approx(0.0025)
    assert part.h_c == pytest.approx(0.009975)


def test_threshold_below_all_gives_empty_fine():
    m = uniform_te_mesh(4)
    part = classify(m, FineRule.below(0.01))
    assert not part.fine.any() and not part.m_set.any() and part.lf_set.all()


def test_all_fine_rejected():
    with pytest.raises(MeshError):
        classify(uniform_te_mesh(3), FineRule.below(10.0))


def test_rule_errors():
    m = uniform_te_mesh(2)
    with pytest.raises(MeshError):
        classify(m, FineRule.indices([7]))
    with pytest.raises(MeshError):
        classify(m, FineRule.below(0.1, "volume"))


def test_ball_rule_refined_fraction_scale():
    # Omega = (0,4)^2, fine = centres in the ball |x| <= 0.1, k = 2: a handful of corner cells
    n = 182
    ax = np.linspace(0, 4, n + 1)
    m = build_tensor_mesh(((0, 4), (0, 4)), ax, ax)
    part = classify(m, FineRule.region(lambda c: np.linalg.norm(c, axis=1) <= 0.1))
    assert 0 < part.fine.sum() < 0.01 * m.ncells


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(0.05, 1.0), min_size=2, max_size=12),
       st.lists(st.floats(0.05, 1.0), min_size=2, max_size=12),
       st.integers(0, 2 ** 31 - 1))
def test_partition_invariants(wx, wy, seed):
    xb = np.concatenate([[0], np.cumsum(wx)])
    yb = np.concatenate([[0], np.cumsum(wy)])
    m = build_tensor_mesh(((0, xb[-1]), (0, yb[-1])), xb, yb)
    rng = np.random.default_rng(seed)
    fine = rng.random(m.ncells) < 0.3
    fine[rng.integers(m.ncells)] = False
    part = classify(m, FineRule.indices(np.flatnonzero(fine)))
    chi_m, chi_lf = cutoff_mask(part, "M"), cutoff_mask(part, "LF")
    assert np.all(chi_m[part.fine])
    assert np.all(chi_m ^ chi_lf)  # complementary and disjoint
    np.testing.assert_array_equal(part.m_set, brute_force_m_set(m, part.fine))
    # no LF cell touches a fine cell across a face
    for a, b, _ in m.interior_faces:
        assert not (chi_lf[a] and part.fine[b]) and not (chi_lf[b] and part.fine[a])


def test_masks_on_fields(rng):
    m = stabilization_interval_mesh()
    part = classify(m, FineRule.below(0.005))
    x = rng.standard_normal(m.ncells * 3)
    cm = np.repeat(cutoff_mask(part, "M"), 3)
    cl = np.repeat(cutoff_mask(part, "LF"), 3)
    assert np.all((x * cm) * cl == 0)
    np.testing.assert_array_equal((x * cm) * cm, x * cm)
    np.testing.assert_array_equal(x * cm + x * cl, x)


def test_find_cells():
    m = graded_te_mesh(4, 1)
    c = m.find_cells(m.centers)
    np.testing.assert_array_equal(c, np.arange(m.ncells))
    with pytest.raises(MeshError):
        m.find_cells([[1.5, 0.5]])


def test_materials_must_be_positive():
    with pytest.raises(MeshError):
        build_interval_mesh((0, 1), [0.5, 0.5], eps=[1.0, 0.0])


def test_mesh_from_config_variants():
    m, rule = mesh_from_config({"mesh": {"preset": "stabilization-1d"}, "fine": {"threshold": 0.005}})
    assert classify(m, rule).fine.sum() == 1
    m, rule = mesh_from_config({"mesh": {"domain": [[0, 1], [0, 1]], "n": 8,
                                         "refine_box": [[0.375, 0.625], [0.375, 0.625]], "levels": 2},
                                "fine": {"threshold": 0.05, "measure": "min_edge"}})
    assert m.h_min == pytest.approx(m.h_max / 4)
    part = classify(m, rule)
    assert part.fine.any() and part.coarse.any()
    m, rule = mesh_from_config({"mesh": {"domain": [0, 1], "widths": [0.25] * 4},
                                "fine": {"cells": [1]}})
    assert classify(m, rule).m_set.sum() == 3
    m, rule = mesh_from_config({"mesh": {"domain": [[0, 1], [0, 1]], "n": 4},
                                "fine": {"ball": {"center": [0, 0], "radius": 0.2}}})
    assert classify(m, rule).fine.sum() == 1
