import numpy as np
import pytest
from hypothesis import given, strategies as st

from socfrac.lattice import (
    DIAGONAL, HORIZONTAL, VERTICAL, LatticeError, LatticeGrid, MaterialParams, assemble_coupling,
    assemble_global, assemble_mass, assemble_permeability, assemble_stiffness, build_cell_topology,
    cell_coupling_matrix, cell_mass_matrix, cell_permeability_matrix, mixture_density,
    recover_truss_stresses, truss_element_stiffness,
)


# --- cell topology ----------------------------------------------------------------

def test_cell_has_twenty_bars_by_kind():
    top = build_cell_topology(1.0)
    kinds = list(top.kinds)
    assert len(top.trusses) == 20
    assert kinds.count(HORIZONTAL) == 6 and kinds.count(VERTICAL) == 6 and kinds.count(DIAGONAL) == 8


def test_bar_lengths():
    top = build_cell_topology(1.0)
    L = top.lengths
    straight = np.array([k != DIAGONAL for k in top.kinds])
    np.testing.assert_allclose(L[straight], 0.5, rtol=0, atol=1e-15)
    np.testing.assert_allclose(L[~straight], np.sqrt(2) / 2, rtol=1e-15)


def test_every_node_touches_two_bars():
    top = build_cell_topology(1.0)
    deg = np.bincount(np.ravel(top.trusses), minlength=9)
    assert deg.min() >= 2


def test_topology_scales_with_cell_size():
    a1, a2 = build_cell_topology(1.0), build_cell_topology(2.0)
    np.testing.assert_allclose(a2.node_coords, 2 * a1.node_coords)
    assert a1.trusses == a2.trusses and a1.kinds == a2.kinds


@pytest.mark.parametrize("a", [0.0, -1.0])
def test_non_positive_cell_size_rejected(a):
    with pytest.raises(LatticeError):
        build_cell_topology(a)


# --- bar stiffness ----------------------------------------------------------------

def test_horizontal_bar_stiffness():
    k = truss_element_stiffness([0, 0], [0.5, 0], 100.0, 1.0)
    expected = np.zeros((4, 4))
    expected[np.ix_([0, 2], [0, 2])] = 200.0 * np.array([[1, -1], [-1, 1]])
    np.testing.assert_allclose(k, expected, atol=1e-12)


def test_broken_bar_has_zero_stiffness():
    assert not truss_element_stiffness([0, 0], [0.5, 0], 0.0, 1.0).any()


def test_diagonal_bar_entries():
    L = np.sqrt(2) / 2
    k = truss_element_stiffness([0, 0], [0.5, 0.5], 100.0, 1.0)
    np.testing.assert_allclose(np.abs(k), 100.0 / L / 2, rtol=1e-14)


def test_zero_length_bar_rejected():
    with pytest.raises(LatticeError):
        truss_element_stiffness([1, 1], [1, 1], 100.0, 1.0)


@given(st.floats(0, 2 * np.pi), st.floats(0.1, 5), st.floats(0, 1e3))
def test_bar_stiffness_symmetric_rank_one(theta, L, E):
    x2 = L * np.array([np.cos(theta), np.sin(theta)])
    k = truss_element_stiffness([0, 0], x2, E, 1.0)
    np.testing.assert_allclose(k, k.T, atol=1e-12 * max(E, 1))
    ev = np.linalg.eigvalsh(k)
    assert ev.min() > -1e-9 * max(E, 1)
    assert np.sum(ev > 1e-9 * max(E / L, 1e-12)) <= 1


# --- coupling matrix ----------------------------------------------------------------

def _lagrange(nodes, x):
    out = []
    for i, xi in enumerate(nodes):
        others = [xj for j, xj in enumerate(nodes) if j != i]
        out.append(np.prod([(x - xj) / (xi - xj) for xj in others], axis=0))
    return np.array(out)


def _shape9(x, y, a):
    nodes = [0.0, a / 2, a]
    return np.outer(_lagrange(nodes, y), _lagrange(nodes, x)).ravel()   # k = 3*row + col


def _shape4(x, y, a):
    s, t = x / a, y / a
    return np.array([(1 - s) * (1 - t), s * (1 - t), s * t, (1 - s) * t])


def _grad4(x, y, a):
    s, t = x / a, y / a
    return (np.array([-(1 - t), 1 - t, t, -t]) / a, np.array([-(1 - s), -s, s, 1 - s]) / a)


def test_coupling_divergence_theorem(rng):
    """u^T Q e_j = boundary integral of N_j u.n minus area integral of u . grad N_j,
    evaluated with an independent 6-point rule and independent shape functions."""
    a = 1.3
    top = build_cell_topology(a)
    Q = cell_coupling_matrix(top)
    u = rng.normal(size=18)
    g, w = np.polynomial.legendre.leggauss(6)
    g, w = 0.5 * a * (g + 1), 0.5 * a * w

    def field(x, y):
        N = _shape9(x, y, a)
        return np.array([N @ u[0::2], N @ u[1::2]])

    expected = np.zeros(4)
    edges = [(lambda s: (s, 0.0), (0, -1)), (lambda s: (a, s), (1, 0)),
             (lambda s: (s, a), (0, 1)), (lambda s: (0.0, s), (-1, 0))]
    for pt, n in edges:
        for s, ws in zip(g, w):
            x, y = pt(s)
            expected += ws * _shape4(x, y, a) * (field(x, y) @ n)
    for x, wx in zip(g, w):
        for y, wy in zip(g, w):
            gx, gy = _grad4(x, y, a)
            ux, uy = field(x, y)
            expected -= wx * wy * (ux * gx + uy * gy)
    np.testing.assert_allclose(u @ Q, expected, rtol=1e-12, atol=1e-13)


def test_coupling_translation_is_divergence_free():
    Q = cell_coupling_matrix(build_cell_topology(1.0))
    for d in (0, 1):
        u = np.zeros(18)
        u[d::2] = 1.0
        np.testing.assert_allclose(u @ Q, 0.0, atol=1e-14)


def test_coupling_unit_dilation():
    top = build_cell_topology(1.0)
    u = (0.5 * top.node_coords).ravel()        # eps_v = 1
    np.testing.assert_allclose(u @ cell_coupling_matrix(top), 0.25, rtol=1e-13)


# --- permeability and mass ----------------------------------------------------------

def test_permeability_unit_square_entries():
    H = cell_permeability_matrix(1.0, 1.0)
    np.testing.assert_allclose(np.diag(H), 2 / 3)
    assert H[0, 1] == pytest.approx(-1 / 6) and H[0, 3] == pytest.approx(-1 / 6)
    assert H[0, 2] == pytest.approx(-1 / 3)


@given(st.floats(1e-6, 1e3), st.floats(0.1, 10))
def test_permeability_null_mode_and_linearity(k, a):
    H = cell_permeability_matrix(k, a)
    np.testing.assert_allclose(H @ np.ones(4), 0.0, atol=1e-14 * k)
    np.testing.assert_allclose(cell_permeability_matrix(2 * k, a), 2 * H)
    assert np.linalg.eigvalsh(H).min() > -1e-14 * k


def test_mass_conserves_total():
    M = np.diag(cell_mass_matrix(1.0, 1.0))
    assert M[0::2].sum() == pytest.approx(1.0, abs=1e-15)
    assert not cell_mass_matrix(0.0, 1.0).any()


def test_mixture_density():
    assert mixture_density(2.0, 1.0, 0.3) == pytest.approx(1.7)


# --- assembly -----------------------------------------------------------------------

def test_grid_counts():
    g = LatticeGrid(3, 2)
    assert g.n_u_nodes == 7 * 5 and g.n_p_nodes == 4 * 3
    assert g.n_dofs == 2 * 35 + 12 and g.n_trusses == 20 * 6


def test_single_cell_stiffness_rigid_modes():
    g = LatticeGrid(1, 1)
    K = assemble_stiffness(g, np.full(g.n_trusses, 100.0)).toarray()
    assert K.shape == (18, 18)
    np.testing.assert_allclose(K, K.T, atol=1e-12)
    ev = np.linalg.eigvalsh(K)
    assert np.sum(np.abs(ev) < 1e-9 * ev.max()) == 3


def test_all_broken_gives_zero_stiffness():
    g = LatticeGrid(2, 2)
    assert assemble_stiffness(g, np.zeros(g.n_trusses)).nnz == 0


def test_shared_edge_receives_both_cells():
    g = LatticeGrid(2, 1)
    E = np.full(g.n_trusses, 100.0)
    K = assemble_stiffness(g, E).toarray()
    top = build_cell_topology(1.0)
    cell = np.zeros((18, 18))
    for (i, j) in top.trusses:
        k = truss_element_stiffness(top.node_coords[i], top.node_coords[j], 100.0, 1.0)
        d = [2 * i, 2 * i + 1, 2 * j, 2 * j + 1]
        cell[np.ix_(d, d)] += k
    # middle node of the shared edge: local node 5 of cell 0 and local node 3 of cell 1
    n = g.u_node(2, 1)
    np.testing.assert_allclose(K[2 * n, 2 * n], cell[10, 10] + cell[6, 6], rtol=1e-14)


def _brute_force_K(grid, E):
    K = np.zeros((grid.n_u_dofs, grid.n_u_dofs))
    xy = grid.node_coords
    for t in range(grid.n_trusses):
        i, j = grid.truss_nodes[t]
        k = truss_element_stiffness(xy[i], xy[j], E[t], 1.0)
        d = [2 * i, 2 * i + 1, 2 * j, 2 * j + 1]
        for r in range(4):
            for c in range(4):
                K[d[r], d[c]] += k[r, c]
    return K


@given(st.integers(1, 3), st.integers(1, 3), st.integers(0, 2 ** 32 - 1))
def test_stiffness_matches_brute_force(nx, ny, seed):
    g = LatticeGrid(nx, ny)
    E = np.random.default_rng(seed).uniform(0, 100, g.n_trusses)
    E[E < 10] = 0.0
    K = assemble_stiffness(g, E).toarray()
    Kb = _brute_force_K(g, E)
    assert np.abs(K - Kb).max() <= 1e-12 * max(np.abs(Kb).max(), 1.0)


@given(st.integers(1, 3), st.integers(1, 3))
def test_assembled_blocks_symmetric_psd(nx, ny):
    g = LatticeGrid(nx, ny)
    mats = assemble_global(g, np.full(g.n_trusses, 100.0), MaterialParams(rho_s=2.0, rho_w=1.0))
    for name in ("K", "M", "H"):
        A = getattr(mats, name).toarray()
        scale = np.abs(A).max()
        assert np.abs(A - A.T).max() < 1e-12 * scale, name
        assert np.linalg.eigvalsh(A).min() > -1e-10 * scale, name
    assert (mats.M.diagonal() > 0).all()
    np.testing.assert_allclose(mats.H.toarray().sum(axis=1), 0.0, atol=1e-12 * mats.H.max())


def test_stiffness_annihilates_translation():
    g = LatticeGrid(3, 3)
    K = assemble_stiffness(g, np.full(g.n_trusses, 100.0))
    for d in (0, 1):
        u = np.zeros(g.n_u_dofs)
        u[d::2] = 1.0
        assert np.abs(K @ u).max() < 1e-10 * abs(K).max()


def test_global_coupling_constant_dilation():
    a = 0.7
    g = LatticeGrid(3, 2, a)
    eps = 0.3
    u = (0.5 * eps * g.node_coords).ravel()
    # integral of each pressure shape over the grid: a^2/4 per adjacent cell
    cells = np.zeros(g.n_p_nodes)
    np.add.at(cells, g.cell_p_nodes.ravel(), 1.0)
    np.testing.assert_allclose(u @ assemble_coupling(g), eps * cells * a * a / 4, rtol=1e-12)


def test_mass_total_per_direction():
    g = LatticeGrid(4, 3, 2.0)
    M = assemble_mass(g, 1.5).diagonal()
    assert M[0::2].sum() == pytest.approx(1.5 * 8 * 6, rel=1e-14)


def test_permeability_null_space_is_constant():
    g = LatticeGrid(3, 3)
    H = assemble_permeability(g, 1e-3).toarray()
    ev, vec = np.linalg.eigh(H)
    assert np.sum(ev < 1e-12) == 1
    v = vec[:, 0]
    np.testing.assert_allclose(v / v[0], 1.0, atol=1e-10)


# --- stresses -----------------------------------------------------------------------

def test_stress_zero_for_translation():
    g = LatticeGrid(2, 2)
    u = np.tile([0.3, -0.2], g.n_u_nodes)
    np.testing.assert_allclose(recover_truss_stresses(g, u, np.full(g.n_trusses, 100.0)), 0.0, atol=1e-12)


def test_horizontal_bar_stress():
    g = LatticeGrid(1, 1)
    u = np.zeros(g.n_u_dofs)
    u[2 * g.u_node(1, 0)] = 0.001           # node 1 pulled along the first horizontal bar
    s = recover_truss_stresses(g, u, np.full(g.n_trusses, 100.0))
    assert s[0] == pytest.approx(0.2)


def test_broken_bar_carries_no_stress(rng):
    g = LatticeGrid(2, 2)
    E = np.full(g.n_trusses, 100.0)
    E[5] = 0.0
    s = recover_truss_stresses(g, rng.normal(size=g.n_u_dofs), E)
    assert s[5] == 0.0
