import numpy as np
import pytest
import scipy.sparse.linalg as spla

from riskquad.errors import NumericalError
from riskquad.fem import (
    SpdSolver,
    assemble_mass,
    assemble_weighted_stiffness,
    build_mesh,
    mass_cholesky,
    mass_matrix_1d,
    solve_spd,
    stiffness_matrix_1d,
)


def test_canonical_mesh_counts():
    mesh = build_mesh(79, 39, 2.0, 1.0)
    assert mesh.n_elems == 3081
    assert mesh.n_nodes == 3200


def test_smallest_mesh():
    mesh = build_mesh(1, 1, 1.0, 1.0)
    assert mesh.n_nodes == 4
    assert mesh.n_elems == 1
    assert len(mesh.dirichlet_nodes) == 4


def test_4x2_boundary_tags_by_hand():
    mesh = build_mesh(4, 2, 2.0, 1.0)
    assert mesh.n_nodes == 15
    assert mesh.n_elems == 8
    # hand enumeration of the 4x2 grid: node (i, j) has index 5j + i
    assert sorted(mesh.dirichlet_nodes) == [0, 4, 5, 9, 10, 14]
    bottom = [(0, 1), (1, 2), (2, 3), (3, 4)]
    top = [(10, 11), (11, 12), (12, 13), (13, 14)]
    assert [tuple(e) for e in mesh.neumann_edges] == bottom + top
    # every boundary node carries exactly one tag
    boundary = {0, 1, 2, 3, 4, 5, 9, 10, 11, 12, 13, 14}
    neumann_nodes = {n for e in mesh.neumann_edges for n in e} - set(
        mesh.dirichlet_nodes
    )
    assert neumann_nodes | set(mesh.dirichlet_nodes) == boundary
    assert neumann_nodes & set(mesh.dirichlet_nodes) == set()


def test_zero_element_count_rejected():
    with pytest.raises(ValueError):
        build_mesh(0, 3, 1.0, 1.0)
    with pytest.raises(ValueError):
        build_mesh(3, 3, 0.0, 1.0)


@pytest.mark.parametrize("nx,ny,lx,ly,area", [(5, 7, 1.0, 1.0, 1.0), (8, 4, 2.0, 1.0, 2.0)])
def test_mass_integrates_constants(nx, ny, lx, ly, area):
    mesh = build_mesh(nx, ny, lx, ly)
    M = assemble_mass(mesh)
    ones = np.ones(mesh.n_nodes)
    assert ones @ (M @ ones) == pytest.approx(area, rel=1e-13)


def test_mass_integrates_linear_field_exactly():
    mesh = build_mesh(6, 5, 1.0, 1.0)
    M = assemble_mass(mesh)
    f = mesh.node_x
    assert f @ (M @ np.ones(mesh.n_nodes)) == pytest.approx(0.5, rel=1e-13)


def test_stiffness_constants_in_kernel():
    mesh = build_mesh(5, 4, 2.0, 1.0)
    rng = np.random.default_rng(0)
    K = assemble_weighted_stiffness(mesh, rng.standard_normal(mesh.n_nodes))
    assert np.abs(K @ np.ones(mesh.n_nodes)).max() < 1e-12 * np.abs(K.data).max()


def test_stiffness_dirichlet_energy_of_x():
    mesh = build_mesh(4, 4, 1.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    u = mesh.node_x
    assert u @ (K @ u) == pytest.approx(1.0, rel=1e-13)


def test_constant_coefficient_factors_out():
    mesh = build_mesh(3, 3, 1.0, 1.0)
    K0 = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    K2 = assemble_weighted_stiffness(mesh, np.full(mesh.n_nodes, np.log(2.0)))
    assert abs(K2 - 2.0 * K0).max() < 1e-12 * abs(K0).max()


def test_stiffness_symmetry():
    mesh = build_mesh(9, 6, 2.0, 1.0)
    rng = np.random.default_rng(1)
    K = assemble_weighted_stiffness(mesh, 0.5 * rng.standard_normal(mesh.n_nodes))
    asym = abs(K - K.T).max()
    assert asym <= 1e-12 * abs(K).max()


def test_nonfinite_coefficient_rejected():
    mesh = build_mesh(2, 2, 1.0, 1.0)
    m = np.zeros(mesh.n_nodes)
    m[3] = np.nan
    with pytest.raises(ValueError):
        assemble_weighted_stiffness(mesh, m)


def test_constrained_operator_positive_definite():
    mesh = build_mesh(6, 4, 2.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    solver = SpdSolver(K, mesh.dirichlet_nodes)
    Kc = solver.constrained
    assert abs(Kc - Kc.T).max() <= 1e-12 * abs(Kc).max()
    smallest = spla.eigsh(Kc, k=1, which="SA", return_eigenvectors=False)[0]
    assert smallest > 0


def test_harmonic_profile_exact():
    mesh = build_mesh(8, 5, 2.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    bc = np.where(np.isclose(mesh.node_x[mesh.dirichlet_nodes], 0.0), 1.0, 0.0)
    u = solve_spd(K, np.zeros(mesh.n_nodes), mesh.dirichlet_nodes, bc)
    assert np.abs(u - (1.0 - mesh.node_x / 2.0)).max() < 1e-10


def test_zero_rhs_homogeneous_bc():
    mesh = build_mesh(4, 4, 1.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    u = solve_spd(K, np.zeros(mesh.n_nodes), mesh.dirichlet_nodes, 0.0)
    assert np.abs(u).max() == 0.0


def _manufactured_l2_error(n):
    # u* = sin(pi x) cos(pi y): zero on left/right, natural on top/bottom
    mesh = build_mesh(n, n, 1.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    M = assemble_mass(mesh)
    exact = np.sin(np.pi * mesh.node_x) * np.cos(np.pi * mesh.node_y)
    rhs = M @ (2.0 * np.pi**2 * exact)
    u = solve_spd(K, rhs, mesh.dirichlet_nodes, 0.0)
    e = u - exact
    return float(np.sqrt(e @ (M @ e)))


def test_manufactured_solution_second_order():
    errors = [_manufactured_l2_error(n) for n in (8, 16, 32)]
    assert errors[0] / errors[1] >= 3.5
    assert errors[1] / errors[2] >= 3.5


def test_dirichlet_lift_residual_contract():
    mesh = build_mesh(7, 3, 2.0, 1.0)
    rng = np.random.default_rng(5)
    m = 0.3 * rng.standard_normal(mesh.n_nodes)
    K = assemble_weighted_stiffness(mesh, m)
    solver = SpdSolver(K, mesh.dirichlet_nodes, rtol=1e-10)
    bc = rng.standard_normal(len(mesh.dirichlet_nodes))
    rhs = rng.standard_normal(mesh.n_nodes)
    u = solver.solve(rhs, bc)
    assert np.allclose(u[mesh.dirichlet_nodes], bc)
    free = np.setdiff1d(np.arange(mesh.n_nodes), mesh.dirichlet_nodes)
    res = (K @ u - rhs)[free]
    assert np.linalg.norm(res) <= 1e-8 * np.linalg.norm(rhs)


def test_cg_fallback_matches_direct():
    mesh = build_mesh(6, 6, 1.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    rng = np.random.default_rng(2)
    rhs = rng.standard_normal(mesh.n_nodes)
    direct = SpdSolver(K, mesh.dirichlet_nodes).solve(rhs)
    iterative = SpdSolver(K, mesh.dirichlet_nodes, direct_limit=0).solve(rhs)
    assert np.allclose(direct, iterative, atol=1e-8)


def test_cg_nonconvergence_raises():
    mesh = build_mesh(4, 4, 1.0, 1.0)
    K = assemble_weighted_stiffness(mesh, np.zeros(mesh.n_nodes))
    # an unreachable tolerance exhausts the iteration budget
    solver = SpdSolver(K, mesh.dirichlet_nodes, rtol=1e-30, direct_limit=0)
    rng = np.random.default_rng(3)
    with pytest.raises(NumericalError) as exc:
        solver.solve(rng.standard_normal(mesh.n_nodes))
    assert exc.value.residual is not None


def test_one_dimensional_operators():
    n, h = 7, 0.25
    M = mass_matrix_1d(n, h)
    K = stiffness_matrix_1d(n, h)
    ones = np.ones(n + 1)
    x = h * np.arange(n + 1)
    assert ones @ (M @ ones) == pytest.approx(n * h, rel=1e-13)
    assert x @ (M @ ones) == pytest.approx((n * h) ** 2 / 2.0, rel=1e-13)
    assert np.abs(K @ ones).max() < 1e-14
    assert x @ (K @ x) == pytest.approx(n * h, rel=1e-13)


def test_mass_cholesky_exact():
    mesh = build_mesh(11, 7, 2.0, 1.0)
    M = assemble_mass(mesh)
    L = mass_cholesky(mesh)
    assert abs(L @ L.T - M).max() < 1e-15
