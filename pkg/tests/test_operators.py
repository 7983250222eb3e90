import numpy as np
import pytest

from dglti.dgspace import DgSpace, project_l2
from dglti.mesh import FineRule, build_interval_mesh, classify, stabilization_interval_mesh
from dglti.operators import (MaskedSecondOrder, NormEstimateError, apply_masked, assemble_dense,
                             assemble_pair, masked_operator, spectral_norm, write_matrix_csv)
from dglti.problems import te_cavity, wave1d_standing

from conftest import graded_te_mesh, uniform_interval, uniform_te_mesh


def _pair(problem, mesh, k):
    return assemble_pair(problem.space(mesh, k), problem)


def _adjoint_defect(pair, rng, trials=100):
    ip = pair.ip
    worst = 0.0
    for _ in range(trials):
        u = rng.standard_normal(pair.space.n_u)
        w = rng.standard_normal(pair.space.n_v)
        lhs = ip.dot_v(pair.apply_l1(u), w) + ip.dot_u(u, pair.apply_l2(w))
        scale = np.sqrt(ip.dot_u(u, u) * ip.dot_v(w, w))
        worst = max(worst, abs(lhs) / scale)
    return worst


@pytest.mark.parametrize("k", [1, 2, 3])
def test_adjointness_1d(k, rng):
    pair = _pair(wave1d_standing(), uniform_interval(8, eps=np.linspace(1, 3, 8)), k)
    assert _adjoint_defect(pair, rng) <= 1e-12


@pytest.mark.parametrize("k", [0, 1, 2])
@pytest.mark.parametrize("mesh", ["uniform4", "graded8"])
def test_adjointness_te(k, mesh, rng):
    m = uniform_te_mesh(4) if mesh == "uniform4" else graded_te_mesh(
        8, 1, eps=lambda c: 1 + c[:, 0], mu=lambda c: 2 - c[:, 1])
    pair = _pair(te_cavity(), m, k)
    assert _adjoint_defect(pair, rng) <= 1e-12


def test_dense_transpose_relation():
    pair = _pair(te_cavity(), uniform_te_mesh(4), 1)
    d = assemble_dense(pair)
    np.testing.assert_allclose(d.M_mu @ d.L1, -(d.M_eps @ d.L2).T, atol=1e-13)


def test_block_operator_skew(rng):
    pair = _pair(te_cavity(), graded_te_mesh(4, 1, eps=2.0, mu=0.5), 1)
    B = pair.block_operator().toarray()
    W = np.diag(np.concatenate([pair.ip.w_u, pair.ip.w_v]))
    np.testing.assert_allclose(W @ B, -(W @ B).T, atol=1e-12)


def test_two_cell_hand_oracle():
    # k = 0, h = 1/2: central flux with u-negating / v-copying ghost states
    pair = _pair(wave1d_standing(), uniform_interval(2), 0)
    h = 0.5
    np.testing.assert_allclose(pair.L1.toarray(), np.array([[-1, -1], [1, 1]]) / (2 * h), atol=1e-14)
    np.testing.assert_allclose(pair.L2.toarray(), np.array([[1, -1], [1, -1]]) / (2 * h), atol=1e-14)


def test_constant_u_boundary_support():
    prob = wave1d_standing()
    sp = prob.space(uniform_interval(8), 2)
    pair = assemble_pair(sp, prob)
    u = project_l2(sp, lambda x: np.ones((len(x), 1)), "u")
    out = sp.cell_view(pair.apply_l1(u), "v")
    norms = np.abs(out).sum(axis=(1, 2))
    assert norms[0] > 0 and norms[-1] > 0
    np.testing.assert_allclose(norms[1:-1], 0.0, atol=1e-12)


def _te_consistency(k, u_fn, v_fn, lt_fn, l_fn, interior_only):
    prob = te_cavity()
    mesh = graded_te_mesh(4, 1)
    sp = prob.space(mesh, k)
    pair = assemble_pair(sp, prob)
    u = project_l2(sp, u_fn, "u")
    v = project_l2(sp, v_fn, "v")
    l1u = sp.cell_view(pair.apply_l1(u) - project_l2(sp, lt_fn, "v"), "v")
    l2v = sp.cell_view(pair.apply_l2(v) - project_l2(sp, l_fn, "u"), "u")
    np.testing.assert_allclose(l2v, 0.0, atol=1e-12)
    hi = mesh.lower + mesh.widths
    keep = np.ones(mesh.ncells, bool) if not interior_only else ~np.any(np.isclose(hi, 1.0), axis=1)
    np.testing.assert_allclose(l1u[keep], 0.0, atol=1e-12)


def test_consistency_linear_fields():
    # u = (y, -x), v = xy: curl u = 2, (d_y v, -d_x v) = (x, -y); u breaks E x n = 0 on x = 1, y = 1
    _te_consistency(
        1,
        lambda x: np.stack([x[:, 1], -x[:, 0]], axis=1),
        lambda x: (x[:, 0] * x[:, 1])[:, None],
        lambda x: np.full((len(x), 1), 2.0),
        lambda x: np.stack([x[:, 0], -x[:, 1]], axis=1),
        interior_only=True)


def test_consistency_boundary_compatible():
    # E = (y(1-y), x(1-x)) has zero tangential trace on every wall
    _te_consistency(
        2,
        lambda x: np.stack([x[:, 1] * (1 - x[:, 1]), x[:, 0] * (1 - x[:, 0])], axis=1),
        lambda x: (x[:, 0] ** 2 * x[:, 1])[:, None],
        lambda x: (2 * x[:, 0] - 2 * x[:, 1])[:, None],
        lambda x: np.stack([x[:, 0] ** 2, -2 * x[:, 0] * x[:, 1]], axis=1),
        interior_only=False)


def test_dense_action_matches(rng):
    pair = _pair(wave1d_standing(), uniform_interval(4), 1)
    d = assemble_dense(pair)
    assert d.L1.shape == (8, 8)
    for _ in range(20):
        u, v = rng.standard_normal(8), rng.standard_normal(8)
        np.testing.assert_allclose(d.L1 @ u, pair.apply_l1(u), atol=1e-12)
        np.testing.assert_allclose(d.L2 @ v, pair.apply_l2(v), atol=1e-12)


def test_dense_shapes_te():
    pair = _pair(te_cavity(), uniform_te_mesh(2), 0)
    d = assemble_dense(pair)
    assert d.L1.shape == (4, 8) and d.L2.shape == (8, 4)
    np.testing.assert_allclose(d.L1, -d.L2.T, atol=1e-14)


def test_dense_guard():
    pair = _pair(wave1d_standing(), uniform_interval(8), 1)
    with pytest.raises(ValueError):
        assemble_dense(pair, limit=10)


def test_space_problem_mismatch():
    with pytest.raises(ValueError):
        assemble_pair(DgSpace(uniform_interval(2), 1, 1, 1), te_cavity())


@pytest.fixture
def stab_setup():
    prob = wave1d_standing()
    mesh = stabilization_interval_mesh()
    part = classify(mesh, FineRule.below(0.005))
    return _pair(prob, mesh, 2), part


def test_masked_split(stab_setup, rng):
    pair, part = stab_setup
    for _ in range(100):
        u = rng.standard_normal(pair.space.n_u)
        total = apply_masked(pair, part, "M", u) + apply_masked(pair, part, "LF", u)
        np.testing.assert_allclose(total, apply_masked(pair, part, "ALL", u), atol=1e-12 * np.abs(total).max())


def test_masked_psd(stab_setup, rng):
    pair, part = stab_setup
    op = masked_operator(pair, part, "M")
    for _ in range(100):
        u = rng.standard_normal(pair.space.n_u)
        q = pair.ip.dot_u(op(u), u)
        chi_l1u = pair.apply_l1(u) * op.v_mask
        assert q >= -1e-12 * abs(q)
        assert q == pytest.approx(pair.ip.dot_v(chi_l1u, chi_l1u), rel=1e-10)


def test_masked_dense_equals_apply(stab_setup, rng):
    pair, part = stab_setup
    d = assemble_dense(pair)
    op = masked_operator(pair, part, "M")
    S = -(d.L2 * op.v_mask[None, :]) @ d.L1
    u = rng.standard_normal(pair.space.n_u)
    np.testing.assert_allclose(S @ u, op(u), atol=1e-10)


def test_masked_locality(rng):
    prob = te_cavity()
    mesh = graded_te_mesh(8, 1)
    part = classify(mesh, FineRule.below(0.05, "min_edge"))
    pair = _pair(prob, mesh, 1)
    op = masked_operator(pair, part, "M")
    nbrs = mesh.neighbors()
    near = part.m_set.copy()
    for c in np.flatnonzero(part.m_set):
        near[nbrs[c]] = True
    u = rng.standard_normal(pair.space.n_u)
    out = pair.space.cell_view(op(u), "u")
    assert np.all(out[~near] == 0.0)
    idx, _ = op.local
    assert set(pair.space.dof_cells("u")[idx]) <= set(np.flatnonzero(near))


def test_empty_fine_gives_zero():
    pair = _pair(wave1d_standing(), uniform_interval(4), 1)
    part = classify(pair.space.mesh, FineRule.below(0.01))
    op = masked_operator(pair, part, "M")
    assert op.is_zero
    np.testing.assert_array_equal(op(np.ones(pair.space.n_u)), 0.0)
    assert spectral_norm(op) == 0.0


def test_norm_scaling_h():
    prob = wave1d_standing()
    n1 = spectral_norm(masked_operator(_pair(prob, uniform_interval(16), 0), None, "ALL"))
    n2 = spectral_norm(masked_operator(_pair(prob, uniform_interval(32), 0), None, "ALL"))
    assert 3.5 <= n2 / n1 <= 4.5


def test_norm_matches_dense(stab_setup):
    pair, part = stab_setup
    d = assemble_dense(pair)
    for which in ("M", "LF", "ALL"):
        op = masked_operator(pair, part, which)
        S = -(d.L2 * op.v_mask[None, :]) @ d.L1
        s = np.sqrt(pair.ip.w_u)
        lam = np.linalg.eigvalsh(0.5 * ((s[:, None] * S / s[None, :]) + (s[:, None] * S / s[None, :]).T))
        est = spectral_norm(op, tol=1e-9) / 1.01
        assert est == pytest.approx(lam.max(), rel=1e-5)


def test_norm_monotone(stab_setup):
    pair, part = stab_setup
    n = {w: spectral_norm(masked_operator(pair, part, w)) for w in ("M", "LF", "ALL")}
    assert n["M"] <= n["ALL"] * (1 + 1e-5)
    assert n["LF"] <= n["ALL"] * (1 + 1e-5)


def test_norm_nonconvergence_carries_estimate(stab_setup):
    pair, part = stab_setup
    with pytest.raises(NormEstimateError) as exc:
        spectral_norm(masked_operator(pair, part, "ALL"), tol=1e-15, max_iter=3)
    assert exc.value.estimate > 0
    with pytest.raises(ValueError):
        spectral_norm(masked_operator(pair, part, "ALL"), tol=2.0)


def test_norm_is_deterministic(stab_setup):
    pair, part = stab_setup
    op = masked_operator(pair, part, "LF")
    assert spectral_norm(op) == spectral_norm(op)


def test_matrix_csv(tmp_path):
    pair = _pair(wave1d_standing(), uniform_interval(2), 0)
    path = tmp_path / "l1.csv"
    write_matrix_csv(pair.L1, path)
    lines = path.read_text().splitlines()
    assert lines[0] == "row,col,value" and len(lines) == 1 + pair.L1.nnz
