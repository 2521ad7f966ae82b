"""Time integration of the coupled skeleton/pore-fluid system.

The discrete Biot equations

    K u - Q p + M u'' = f_u
    H p + Q^T u'      = f_p

are written as one second-order system  M^ a'' + C^ a' + K^ a = f  in the unknowns
a = [u, p]. Dynamics use the GN22 collocation scheme; quasi-statics drop M and use a
backward difference for the Q^T u' term.

Sign convention: the residual form M^ a'' + C^ a' + K^ a = f is integrated, so

    A a_{n+1} = f_{n+1} - C^ ahat'_{n+1} - M^ ahat''_{n+1}

with the predictors ahat', ahat'' built from history only. This is the form that
reproduces an undamped oscillator and drained consolidation.
"""
import logging
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import linalg as spla

log = logging.getLogger(__name__)


class SolverError(RuntimeError):
    pass


class StructuralSingularityError(SolverError):
    pass


class NumericalSingularityError(SolverError):
    pass


@dataclass
class SimState:
    a: np.ndarray
    v: np.ndarray
    acc: np.ndarray
    t: float = 0.0

    @classmethod
    def zeros(cls, n, t=0.0):
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), t)

    def copy(self):
        return SimState(self.a.copy(), self.v.copy(), self.acc.copy(), self.t)


@dataclass(frozen=True)
class Gn22Params:
    dt: float
    beta1: float = 0.6
    beta2: float = 0.65

    def __post_init__(self):
        if not self.dt > 0:
            raise ValueError("dt must be positive")
        if not self.beta2 >= self.beta1 >= 0.5:
            raise ValueError("GN22 requires beta2 >= beta1 >= 0.5")


@dataclass
class Constraints:
    """Prescribed DOF values, enforced by elimination."""
    dofs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.dofs = np.asarray(self.dofs, dtype=np.int64)
        self.values = np.broadcast_to(np.asarray(self.values, float), self.dofs.shape).copy()

    @classmethod
    def none(cls):
        return cls(np.zeros(0, dtype=np.int64), np.zeros(0))


def _sp(x):
    return x if sparse.issparse(x) else sparse.csr_matrix(np.atleast_2d(np.asarray(x, float)))


def build_block_system(mats):
    """(M^, C^, K^) from the skeleton/fluid blocks; K^ = [[K, -Q], [0, H]] is unsymmetric."""
    K, M, Q, H = _sp(mats.K), _sp(mats.M), _sp(mats.Q), _sp(mats.H)
    nu, n_p = Q.shape
    if K.shape != (nu, nu) or M.shape != (nu, nu) or H.shape != (n_p, n_p):
        raise SolverError(f"block size mismatch: K{K.shape} M{M.shape} Q{Q.shape} H{H.shape}")
    Mh = sparse.bmat([[M, None], [None, sparse.csr_matrix((n_p, n_p))]], format="csr")
    Ch = sparse.bmat([[sparse.csr_matrix((nu, nu)), None], [Q.T, sparse.csr_matrix((n_p, n_p))]], format="csr")
    Kh = sparse.bmat([[K, -Q], [None, H]], format="csr")
    return Mh, Ch, Kh


def gn22_coefficients(params):
    b1, b2, dt = params.beta1, params.beta2, params.dt
    return 2.0 / (b2 * dt * dt), 2.0 * b1 / (b2 * dt)


def gn22_predictors(state, params):
    """History-only parts of the velocity and acceleration at t_{n+1}."""
    b1, b2, dt = params.beta1, params.beta2, params.dt
    a, v, acc = state.a, state.v, state.acc
    vhat = -2 * b1 / (b2 * dt) * a + (1 - 2 * b1 / b2) * v + (1 - b1 / b2) * dt * acc
    ahat = -2 / (b2 * dt * dt) * a - 2 / (b2 * dt) * v - (1 - b2) / b2 * acc
    return vhat, ahat


def effective_matrix(Mh, Ch, Kh, params):
    c_m, c_c = gn22_coefficients(params)
    return (c_m * _sp(Mh) + c_c * _sp(Ch) + _sp(Kh)).tocsr()


def solve_linear(A, b, rtol=1e-10, refine=3):
    """Direct sparse LU solve (SuperLU) with iterative refinement.

    If refinement does not reach ``rtol`` a GMRES pass preconditioned by the LU factors is
    tried; remaining residual excess is reported as a warning, not an error.
    """
    A = _sp(A).tocsc()
    b = np.asarray(b, float)
    n = A.shape[0]
    if A.shape[0] != A.shape[1]:
        raise SolverError(f"matrix is not square: {A.shape}")
    if n == 0:
        return np.zeros(0)
    Ar = A.tocsr()
    empty_rows = np.flatnonzero(np.diff(Ar.indptr) == 0)
    empty_cols = np.flatnonzero(np.diff(A.indptr) == 0)
    if empty_rows.size or empty_cols.size:
        raise StructuralSingularityError(
            f"{empty_rows.size} empty rows / {empty_cols.size} empty columns (first row {empty_rows[:5]})")
    try:
        lu = spla.splu(A)
    except RuntimeError as exc:
        raise NumericalSingularityError(f"LU factorization failed: {exc}") from exc
    x = lu.solve(b)
    if not np.all(np.isfinite(x)):
        raise NumericalSingularityError(_cond_message(lu, A))
    bn = np.linalg.norm(b)
    for _ in range(refine):
        r = b - A @ x
        if np.linalg.norm(r) <= rtol * bn:
            return x
        x = x + lu.solve(r)
    if np.linalg.norm(b - A @ x) > rtol * bn:
        prec = spla.LinearOperator(A.shape, lu.solve)
        x2, info = spla.gmres(A, b, x0=x, M=prec, rtol=rtol, atol=0.0, maxiter=50)
        if info == 0 or np.linalg.norm(b - A @ x2) < np.linalg.norm(b - A @ x):
            x = x2
        res = np.linalg.norm(b - A @ x) / max(bn, 1e-300)
        if res > rtol:
            warnings.warn(f"linear solve residual {res:.2e} above {rtol:.0e}; {_cond_message(lu, A)}",
                          RuntimeWarning, stacklevel=2)
    return x


def _cond_message(lu, A):
    d = np.abs(lu.U.diagonal())
    ratio = d.max() / max(d.min(), 1e-300) if d.size else np.inf
    return f"pivot ratio {ratio:.2e} (n={A.shape[0]})"


def solve_constrained(A, b, cons):
    """Solve A x = b with x[cons.dofs] = cons.values by row/column elimination."""
    A = _sp(A).tocsr()
    n = A.shape[0]
    x = np.zeros(n)
    if cons.dofs.size == 0:
        return solve_linear(A, b)
    fixed = np.zeros(n, bool)
    fixed[cons.dofs] = True
    free = np.flatnonzero(~fixed)
    x[cons.dofs] = cons.values
    Afc = A[free][:, cons.dofs]
    rhs = b[free] - Afc @ cons.values
    x[free] = solve_linear(A[free][:, free], rhs)
    return x


def initial_acceleration(Mh, Kh, state, f, Ch=None):
    """Acceleration from the equation of motion on rows with positive lumped mass."""
    Mh = _sp(Mh)
    r = np.asarray(f, float) - _sp(Kh) @ state.a
    if Ch is not None:
        r = r - _sp(Ch) @ state.v
    m = Mh.diagonal()
    acc = np.zeros_like(state.a)
    has = m > 0
    acc[has] = r[has] / m[has]
    return acc


class Gn22Step:
    """One GN22 station with frozen history and load.

    ``solve`` may be called repeatedly with different K^ (damage sweeps); ``finish``
    turns the last solution into the new state.
    """

    def __init__(self, Mh, Ch, state, f, params, cons=None):
        self.Mh, self.Ch = _sp(Mh), _sp(Ch)
        self.state, self.params = state, params
        self.cons = cons if cons is not None else Constraints.none()
        self.vhat, self.ahat = gn22_predictors(state, params)
        self.f = np.asarray(f, float).copy()
        self.rhs = self.f - self.Ch @ self.vhat - self.Mh @ self.ahat
        self.c_m, self.c_c = gn22_coefficients(params)

    @property
    def A_const(self):
        return self.c_m * self.Mh + self.c_c * self.Ch

    def solve(self, Kh):
        return solve_constrained((self.A_const + _sp(Kh)).tocsr(), self.rhs, self.cons)

    def finish(self, a_new):
        return SimState(a_new, self.c_c * a_new + self.vhat, self.c_m * a_new + self.ahat,
                        self.state.t + self.params.dt)


class BackwardStep:
    """Quasi-static station: (C^/dt + K^) a_{n+1} = f + C^ a_n / dt, with M^ dropped."""

    def __init__(self, Ch, state, f, dt, cons=None):
        if not dt > 0:
            raise ValueError("dt must be positive")
        self.Ch, self.state, self.dt = _sp(Ch), state, dt
        self.cons = cons if cons is not None else Constraints.none()
        self.f = np.asarray(f, float).copy()
        self.rhs = self.f + self.Ch @ state.a / dt

    @property
    def A_const(self):
        return self.Ch / self.dt

    def solve(self, Kh):
        return solve_constrained((self.A_const + _sp(Kh)).tocsr(), self.rhs, self.cons)

    def finish(self, a_new):
        return SimState(a_new, (a_new - self.state.a) / self.dt, np.zeros_like(a_new), self.state.t + self.dt)


def gn22_step(Mh, Ch, Kh, state, f, params, cons=None):
    st = Gn22Step(Mh, Ch, state, f, params, cons)
    return st.finish(st.solve(Kh))


def dynamic_step(mats, state, f, params, cons=None):
    Mh, Ch, Kh = build_block_system(mats)
    return gn22_step(Mh, Ch, Kh, state, f, params, cons)


def quasi_static_step(mats, state, f, dt, cons=None):
    _, Ch, Kh = build_block_system(mats)
    st = BackwardStep(Ch, state, f, dt, cons)
    return st.finish(st.solve(Kh))


class LatticeSolver:
    """Repeated solves of  (A_const + K^(E)) a = rhs  for a lattice whose bar moduli change.

    A_const is the damage-independent part of the station matrix (C^/dt in quasi-statics,
    c_m M^ + c_c C^ in GN22). The factorization of the matrix at a base modulus vector is
    kept; bars whose modulus differs from the base enter as a rank-r correction through the
    Woodbury identity. The base is refactored when r exceeds ``max_rank`` or the corrected
    solution misses ``rtol``.
    """

    def __init__(self, model, A_const, cons_dofs, max_rank=96, rtol=1e-9):
        self.model, self.max_rank, self.rtol = model, max_rank, rtol
        self.A_const = _sp(A_const).tocsr()
        n = self.A_const.shape[0]
        self.cons_dofs = np.asarray(cons_dofs, dtype=np.int64)
        fixed = np.zeros(n, bool)
        fixed[self.cons_dofs] = True
        self.free = np.flatnonzero(~fixed)
        self._pos = np.full(n, -1)
        self._pos[self.free] = np.arange(self.free.size)
        g = model.grid
        self._g = np.concatenate([-g.truss_dir, g.truss_dir], axis=1)
        self._ea_l = model.params.A / g.truss_length
        self.E_base = None
        self.n_factorizations = 0

    def _factor(self, E):
        A = (self.A_const + self.model.block_K(E)).tocsr()
        self.A_full = A
        self.A_ff = A[self.free][:, self.free].tocsc()
        try:
            self.lu = spla.splu(self.A_ff)
        except RuntimeError as exc:
            raise NumericalSingularityError(f"LU factorization failed: {exc}") from exc
        self.E_base = np.array(E, float)
        self._Z = {}
        self.n_factorizations += 1

    def _column(self, t):
        """Free-DOF coordinates of bar t's direction vector (sparse, 4 entries)."""
        dofs = self.model.grid.truss_dofs[t]
        pos = self._pos[dofs]
        keep = pos >= 0
        return pos[keep], self._g[t][keep]

    def _full_apply(self, changed, dE, x):
        """(A_base + G D G^T) x in full DOF space."""
        y = self.A_full @ x
        if changed.size:
            dofs = self.model.grid.truss_dofs[changed]
            gx = np.einsum("ij,ij->i", self._g[changed], x[dofs])
            np.add.at(y, dofs.ravel(), ((dE * self._ea_l[changed] * gx)[:, None] * self._g[changed]).ravel())
        return y

    def solve(self, E, rhs, cons_values=0.0):
        E = np.asarray(E, float)
        if self.E_base is None:
            self._factor(E)
        changed = np.flatnonzero(E != self.E_base)
        if changed.size > self.max_rank:
            self._factor(E)
            changed = changed[:0]
        x = self._woodbury(E, changed, rhs, cons_values)
        if changed.size:
            r = self._full_apply(changed, E[changed] - self.E_base[changed], x) - rhs
            r[self.cons_dofs] = 0.0
            if not np.isfinite(r).all() or np.linalg.norm(r) > self.rtol * max(np.linalg.norm(rhs), 1e-300):
                log.debug("low-rank update lost accuracy, refactoring")
                self._factor(E)
                x = self._woodbury(E, changed[:0], rhs, cons_values)
        return x

    def _woodbury(self, E, changed, rhs, cons_values):
        n = self.A_const.shape[0]
        x = np.zeros(n)
        x[self.cons_dofs] = cons_values
        dE = E[changed] - self.E_base[changed]
        b = rhs - self._full_apply(changed, dE, x)
        y = self.lu.solve(b[self.free])
        if changed.size:
            m = self.free.size
            U = np.zeros((m, changed.size))
            for k, t in enumerate(changed):
                pos, val = self._column(t)
                U[pos, k] = val
            missing = [k for k, t in enumerate(changed) if t not in self._Z]
            if missing:
                Zm = self.lu.solve(U[:, missing])
                for j, k in enumerate(missing):
                    self._Z[changed[k]] = Zm[:, j]
            Z = np.stack([self._Z[t] for t in changed], axis=1)
            d = dE * self._ea_l[changed]
            cap = np.diag(1.0 / d) + U.T @ Z
            y = y - Z @ np.linalg.solve(cap, U.T @ y)
        x[self.free] = y
        return x


class LatticeStation:
    """Binds a frozen step to a lattice: ``solve(E)`` gives a_{n+1} for bar moduli E.

    With ``solver=None`` every call assembles and factorizes from scratch (reference path).
    """

    def __init__(self, step, model, solver=None):
        self.step, self.model, self.solver = step, model, solver

    def solve(self, E):
        if self.solver is None:
            return self.step.solve(self.model.block_K(E))
        return self.solver.solve(E, self.step.rhs, self.step.cons.values)

    def finish(self, a_new):
        return self.step.finish(a_new)
