"""Three-layer lattice cell and global assembly.

Each square cell of side ``a`` carries

* a truss lattice on a 3x3 node sub-grid (20 bars) giving the skeleton stiffness,
* a 9-node biquadratic element giving the solid/fluid coupling block ``Q``,
* a 4-node bilinear element giving the permeability block ``H``.

Units are mm, N, MPa, s. Mass density must be given in the mass unit consistent
with N, mm and s (N s^2/mm, i.e. tonnes); ``rho_s = 2.7e-9`` is a typical rock.
"""
from dataclasses import dataclass, field

import numpy as np
from scipy import sparse

HORIZONTAL, VERTICAL, DIAGONAL = "horizontal", "vertical", "diagonal"

# 1D Gauss-Legendre points and weights on [0, 1]
_G3_X = 0.5 + 0.5 * np.array([-np.sqrt(0.6), 0.0, np.sqrt(0.6)])
_G3_W = 0.5 * np.array([5.0, 8.0, 5.0]) / 9.0

# local pressure nodes (corners, counter-clockwise) as indices into the 3x3 sub-grid
CORNER_LOCAL = (0, 2, 8, 6)


class LatticeError(ValueError):
    pass


@dataclass(frozen=True)
class CellTopology:
    a: float
    node_coords: np.ndarray          # (9, 2), node k at (k % 3, k // 3) * a/2
    trusses: tuple                   # 20 (i, j) local node pairs
    kinds: tuple                     # direction tag per truss
    p_nodes: tuple = CORNER_LOCAL

    @property
    def lengths(self):
        d = self.node_coords[[j for _, j in self.trusses]] - self.node_coords[[i for i, _ in self.trusses]]
        return np.hypot(d[:, 0], d[:, 1])


def build_cell_topology(a=1.0):
    """Nine nodes and twenty bars: 6 horizontal, 6 vertical and both diagonals of the 4 sub-squares."""
    if not a > 0:
        raise LatticeError(f"cell size must be positive, got {a}")
    h = a / 2.0
    coords = np.array([(k % 3 * h, k // 3 * h) for k in range(9)])
    trusses, kinds = [], []
    for r in range(3):
        for c in range(2):
            trusses.append((3 * r + c, 3 * r + c + 1))
            kinds.append(HORIZONTAL)
    for c in range(3):
        for r in range(2):
            trusses.append((3 * r + c, 3 * (r + 1) + c))
            kinds.append(VERTICAL)
    for r in range(2):
        for c in range(2):
            ll = 3 * r + c
            trusses.append((ll, ll + 4))       # lower-left to upper-right
            kinds.append(DIAGONAL)
            trusses.append((ll + 1, ll + 3))   # lower-right to upper-left
            kinds.append(DIAGONAL)
    return CellTopology(a=float(a), node_coords=coords, trusses=tuple(trusses), kinds=tuple(kinds))


def truss_element_stiffness(x1, x2, E, A):
    """4x4 axial bar stiffness on DOFs (u1x, u1y, u2x, u2y)."""
    d = np.asarray(x2, float) - np.asarray(x1, float)
    L = np.hypot(*d)
    if L <= 0:
        raise LatticeError("zero-length truss")
    c, s = d / L
    g = np.array([-c, -s, c, s])
    return (E * A / L) * np.outer(g, g)


# --- shape functions on the unit square (xi, eta in [0, 1]) ----------------

def _quad1d(x):
    return np.array([2 * (x - 0.5) * (x - 1.0), -4 * x * (x - 1.0), 2 * x * (x - 0.5)])


def _dquad1d(x):
    return np.array([4 * x - 3.0, 4 - 8 * x, 4 * x - 1.0])


def biquadratic_grad(xi, eta):
    """Derivatives (d/dxi, d/deta) of the 9 biquadratic shapes, node k = 3*row + col."""
    nx, ny = _quad1d(xi), _quad1d(eta)
    dx, dy = _dquad1d(xi), _dquad1d(eta)
    return np.outer(ny, dx).ravel(), np.outer(dy, nx).ravel()


def bilinear(xi, eta):
    return np.array([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta])


def bilinear_grad(xi, eta):
    return (np.array([-(1 - eta), 1 - eta, eta, -eta]),
            np.array([-(1 - xi), -xi, xi, 1 - xi]))


def cell_coupling_matrix(topology):
    """Q_cell (18x4): volumetric strain of the 9-node field tested with bilinear pressure shapes.

    Row 2k is the x-DOF of local node k, row 2k+1 the y-DOF. Integrated with 3x3 Gauss.
    """
    a = topology.a
    Q = np.zeros((18, 4))
    for xi, wx in zip(_G3_X, _G3_W):
        for eta, wy in zip(_G3_X, _G3_W):
            gx, gy = biquadratic_grad(xi, eta)
            Np = bilinear(xi, eta)
            w = wx * wy * a * a
            # physical derivative = d/dxi / a
            Q[0::2] += w * np.outer(gx / a, Np)
            Q[1::2] += w * np.outer(gy / a, Np)
    return Q


def cell_permeability_matrix(k_over_mu, a=1.0):
    """H_cell = (k/mu) * int grad(Np)^T grad(Np); closed form for a square bilinear element."""
    if not (k_over_mu > 0 and a > 0):
        raise LatticeError("permeability and cell size must be positive")
    base = np.array([[4, -1, -2, -1],
                     [-1, 4, -1, -2],
                     [-2, -1, 4, -1],
                     [-1, -2, -1, 4]]) / 6.0
    return k_over_mu * base


def cell_mass_matrix(rho, a=1.0):
    """Row-sum lumped 9-node mass, returned as the 18x18 diagonal."""
    w1 = np.array([1.0, 4.0, 1.0]) / 6.0
    nodal = rho * a * a * np.outer(w1, w1).ravel()
    return np.diag(np.repeat(nodal, 2))


def mixture_density(rho_s, rho_w, porosity):
    return (1.0 - porosity) * rho_s + porosity * rho_w


@dataclass
class MaterialParams:
    E0: float = 100.0          # MPa
    A: float = 1.0             # mm^2, truss cross-section
    k_over_mu: float = 1e-3    # mm^2/(MPa s), intrinsic permeability over viscosity
    rho_s: float = 2.7e-9      # N s^2/mm^4
    rho_w: float = 1.0e-9
    porosity: float = 0.3
    gravity: tuple = (0.0, 0.0)

    def __post_init__(self):
        if not (self.E0 > 0 and self.A > 0 and self.k_over_mu > 0):
            raise LatticeError("E0, A and k/mu must be positive")
        if not 0 < self.porosity < 1:
            raise LatticeError("porosity must lie in (0, 1)")

    @property
    def rho(self):
        return mixture_density(self.rho_s, self.rho_w, self.porosity)


@dataclass
class LatticeGrid:
    """Rectangular grid of ``nx`` x ``ny`` cells.

    Displacement nodes sit on the shared (2nx+1) x (2ny+1) sub-grid, pressure nodes on
    the (nx+1) x (ny+1) corner grid. Every cell owns its own 20 trusses, so a bar on an
    edge shared by two cells appears twice (once per cell), like any element assembly.
    Truss id = 20 * cell + local index, cell = iy * nx + ix.
    """
    nx: int
    ny: int
    a: float = 1.0
    topology: CellTopology = field(init=False, repr=False)

    def __post_init__(self):
        if self.nx < 1 or self.ny < 1:
            raise LatticeError("grid needs at least one cell in each direction")
        self.topology = build_cell_topology(self.a)
        self._build_maps()

    @property
    def n_u_nodes(self):
        return (2 * self.nx + 1) * (2 * self.ny + 1)

    @property
    def n_p_nodes(self):
        return (self.nx + 1) * (self.ny + 1)

    @property
    def n_u_dofs(self):
        return 2 * self.n_u_nodes

    @property
    def n_dofs(self):
        return self.n_u_dofs + self.n_p_nodes

    @property
    def n_cells(self):
        return self.nx * self.ny

    @property
    def n_trusses(self):
        return 20 * self.n_cells

    def u_node(self, i, j):
        """Global displacement node on the half-cell sub-grid, 0 <= i <= 2nx."""
        return j * (2 * self.nx + 1) + i

    def p_node(self, i, j):
        return j * (self.nx + 1) + i

    def p_dof(self, i, j):
        return self.n_u_dofs + self.p_node(i, j)

    def _build_maps(self):
        nx = self.nx
        cells = np.arange(self.n_cells)
        cx, cy = cells % nx, cells // nx
        loc = np.arange(9)
        # (n_cells, 9) global displacement node of each local node
        self.cell_u_nodes = (2 * cy[:, None] + loc[None, :] // 3) * (2 * nx + 1) + 2 * cx[:, None] + loc[None, :] % 3
        corner_off = np.array([(0, 0), (1, 0), (1, 1), (0, 1)])
        self.cell_p_nodes = (cy[:, None] + corner_off[None, :, 1]) * (nx + 1) + cx[:, None] + corner_off[None, :, 0]
        self.cell_u_dofs = np.empty((self.n_cells, 18), dtype=np.int64)
        self.cell_u_dofs[:, 0::2] = 2 * self.cell_u_nodes
        self.cell_u_dofs[:, 1::2] = 2 * self.cell_u_nodes + 1

        pairs = np.array(self.topology.trusses)
        ni = self.cell_u_nodes[:, pairs[:, 0]].ravel()
        nj = self.cell_u_nodes[:, pairs[:, 1]].ravel()
        self.truss_nodes = np.stack([ni, nj], axis=1)
        self.truss_dofs = np.stack([2 * ni, 2 * ni + 1, 2 * nj, 2 * nj + 1], axis=1)
        xy = self.node_coords
        d = xy[nj] - xy[ni]
        self.truss_length = np.hypot(d[:, 0], d[:, 1])
        self.truss_dir = d / self.truss_length[:, None]
        self.truss_kind = np.tile(np.array(self.topology.kinds), self.n_cells)
        if self.cell_u_dofs.max() >= self.n_u_dofs or self.cell_p_nodes.max() >= self.n_p_nodes:
            raise LatticeError("inconsistent DOF maps")

    @property
    def node_coords(self):
        h = self.a / 2.0
        k = np.arange(self.n_u_nodes)
        return np.stack([k % (2 * self.nx + 1) * h, k // (2 * self.nx + 1) * h], axis=1)

    @property
    def p_coords(self):
        k = np.arange(self.n_p_nodes)
        return np.stack([k % (self.nx + 1) * self.a, k // (self.nx + 1) * self.a], axis=1)

    def truss_midpoints(self):
        xy = self.node_coords
        return 0.5 * (xy[self.truss_nodes[:, 0]] + xy[self.truss_nodes[:, 1]])


@dataclass
class SystemMatrices:
    K: sparse.csr_matrix
    M: sparse.csr_matrix
    Q: sparse.csr_matrix
    H: sparse.csr_matrix


def assemble_stiffness(grid, E, A=1.0):
    """Global truss stiffness for per-truss moduli ``E``; E == 0 bars are skipped."""
    E = np.asarray(E, float)
    if E.shape != (grid.n_trusses,):
        raise LatticeError(f"need {grid.n_trusses} moduli, got {E.shape}")
    live = E > 0
    g = np.concatenate([-grid.truss_dir, grid.truss_dir], axis=1)[live]
    kax = (E[live] * A / grid.truss_length[live])
    vals = kax[:, None, None] * g[:, :, None] * g[:, None, :]
    dofs = grid.truss_dofs[live]
    rows = np.repeat(dofs, 4, axis=1).ravel()
    cols = np.tile(dofs, (1, 4)).ravel()
    n = grid.n_u_dofs
    return sparse.csr_matrix((vals.ravel(), (rows, cols)), shape=(n, n))


def _assemble_cells(grid, cell_mat, row_dofs, col_dofs, shape):
    nc = grid.n_cells
    rows = np.repeat(row_dofs, col_dofs.shape[1], axis=1).ravel()
    cols = np.tile(col_dofs, (1, row_dofs.shape[1])).ravel()
    vals = np.broadcast_to(cell_mat.ravel(), (nc, cell_mat.size)).ravel()
    return sparse.csr_matrix((vals, (rows, cols)), shape=shape)


def assemble_coupling(grid):
    Qc = cell_coupling_matrix(grid.topology)
    return _assemble_cells(grid, Qc, grid.cell_u_dofs, grid.cell_p_nodes, (grid.n_u_dofs, grid.n_p_nodes))


def assemble_permeability(grid, k_over_mu):
    Hc = cell_permeability_matrix(k_over_mu, grid.a)
    return _assemble_cells(grid, Hc, grid.cell_p_nodes, grid.cell_p_nodes, (grid.n_p_nodes, grid.n_p_nodes))


def assemble_mass(grid, rho):
    diag = np.zeros(grid.n_u_dofs)
    Mc = np.diag(cell_mass_matrix(rho, grid.a))
    np.add.at(diag, grid.cell_u_dofs.ravel(), np.tile(Mc, grid.n_cells))
    return sparse.diags(diag, format="csr")


def assemble_global(grid, E, params):
    """Assemble K, M, Q, H for current per-truss moduli ``E`` (broken bars carry E = 0)."""
    return SystemMatrices(
        K=assemble_stiffness(grid, E, params.A),
        M=assemble_mass(grid, params.rho),
        Q=assemble_coupling(grid),
        H=assemble_permeability(grid, params.k_over_mu),
    )


def recover_truss_stresses(grid, u, E):
    """Axial stress per truss, tension positive: E * elongation / L."""
    u = np.asarray(u, float)[: grid.n_u_dofs]
    du = u[grid.truss_dofs[:, 2:]] - u[grid.truss_dofs[:, :2]]
    elong = np.einsum("ij,ij->i", du, grid.truss_dir)
    return np.asarray(E, float) * elong / grid.truss_length


class LatticeModel:
    """Grid + material with the damage-independent blocks cached.

    ``regularization`` adds a soft ground spring (relative to the stiffest intact bar)
    on every displacement DOF so that regions isolated by broken bars stay solvable.
    """

    def __init__(self, grid, params, regularization=1e-9):
        self.grid, self.params = grid, params
        self.M = assemble_mass(grid, params.rho)
        self.Q = assemble_coupling(grid).tocsr()
        self.H = assemble_permeability(grid, params.k_over_mu).tocsr()
        k_ref = params.E0 * params.A / grid.truss_length.min()
        self.eta = regularization * k_ref
        nu, n_p = self.Q.shape
        self._zero_pp = sparse.csr_matrix((n_p, n_p))
        self.Mh = sparse.bmat([[self.M, None], [None, self._zero_pp]], format="csr")
        self.Ch = sparse.bmat([[sparse.csr_matrix((nu, nu)), None], [self.Q.T, self._zero_pp]], format="csr")

    def matrices(self, E):
        return SystemMatrices(K=assemble_stiffness(self.grid, E, self.params.A), M=self.M, Q=self.Q, H=self.H)

    def block_K(self, E):
        K = assemble_stiffness(self.grid, E, self.params.A)
        if self.eta > 0:
            K = K + self.eta * sparse.identity(K.shape[0], format="csr")
        return sparse.bmat([[K, -self.Q], [None, self.H]], format="csr")

    def stresses(self, a, E):
        return recover_truss_stresses(self.grid, a, E)
