"""Debonding of a beam from a brittle elastic foundation.

rhoA v_tt + EJ v_xxxx + bond * f(v) = q(t) on a uniform grid of N nodes over [0, L], both ends
free. Nodes left of the debonding front carry no cohesive force; the front only advances.
Time integration is implicit Newmark with the trapezoidal (average acceleration) rule.
Units: mm, N, s; mass per length in N s^2/mm^2.
"""
import csv
import dataclasses
import math
import os
from dataclasses import dataclass, field

import numpy as np
from scipy import linalg, signal

LAWS = ("linear-brittle", "constant-traction")
THRESHOLD_SWEEP = (0.17, 0.20, 0.23)   # breaking openings compared in the baseline, mm
MIN_NODES = 50


class BeamError(ValueError):
    pass


class TimeStepError(RuntimeError):
    pass


@dataclass(frozen=True)
class CohesiveLaw:
    """Foundation force per length as a function of the opening v.

    linear-brittle: k_f v up to v_c, zero beyond. constant-traction: a constant traction
    ``traction`` for 0 < v <= v_c, zero beyond. Closing (v < 0) is resisted elastically by
    k_f in both variants, a contact-like penalty.
    """
    k_f: float = 10.0
    v_c: float = 0.2
    variant: str = "linear-brittle"
    traction: float = None        # constant-traction level; default k_f * v_c / 2

    def __post_init__(self):
        if not (self.k_f > 0 and self.v_c > 0):
            raise BeamError("k_f and v_c must be positive")
        if self.variant not in LAWS:
            raise BeamError(f"unknown cohesive law {self.variant!r}")

    @property
    def level(self):
        return self.traction if self.traction is not None else 0.5 * self.k_f * self.v_c


def cohesive_force(v, law, bonded=True):
    v = np.asarray(v, float)
    bonded = np.broadcast_to(np.asarray(bonded, bool), v.shape)
    if law.variant == "linear-brittle":
        f = np.where(v <= law.v_c, law.k_f * v, 0.0)
    else:
        f = np.where(v <= 0, law.k_f * v, np.where(v <= law.v_c, law.level, 0.0))
    f = np.where(bonded, f, 0.0)
    return f if f.ndim else float(f)


@dataclass
class BeamConfig:
    EJ: float = 1e5              # N mm^2
    rhoA: float = 1e-6           # N s^2 / mm^2
    L: float = 200.0             # mm
    L_o: float = 10.0            # mm, initial crack
    N: int = 201
    law: CohesiveLaw = field(default_factory=CohesiveLaw)
    q_max: float = 1.0           # N/mm
    ramp_time: float = 1e-3      # s
    dt: float = None             # default 0.1 * 2 / omega_max
    t_end: float = 0.02          # s
    damping: float = 0.0         # mass-proportional, 1/s
    profile_stride: int = 0

    def __post_init__(self):
        if self.N < MIN_NODES:
            raise BeamError(f"need at least {MIN_NODES} grid nodes")
        if not (0 < self.L_o < self.L):
            raise BeamError("initial crack must satisfy 0 < L_o < L")
        if not (self.EJ > 0 and self.rhoA > 0):
            raise BeamError("EJ and rhoA must be positive")
        if self.dt is not None and not self.dt > 0:
            raise BeamError("dt must be positive")

    @property
    def h(self):
        return self.L / (self.N - 1)

    @property
    def x(self):
        return np.linspace(0.0, self.L, self.N)

    @property
    def omega_max(self):
        """Gershgorin bound on the discrete frequencies (interior rows have absolute row sum 16)."""
        return math.sqrt((16.0 * self.EJ / self.h ** 4 + self.law.k_f) / self.rhoA)

    @property
    def time_step(self):
        return self.dt if self.dt is not None else 0.1 * 2.0 / self.omega_max

    def load(self, t):
        if self.ramp_time <= 0:
            return self.q_max
        return self.q_max * min(t / self.ramp_time, 1.0)

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


@dataclass
class BeamState:
    v: np.ndarray
    vd: np.ndarray
    vdd: np.ndarray
    bond: np.ndarray
    t: float = 0.0
    front_times: list = field(default_factory=list)   # (node, time) of every break, in order

    @property
    def front_index(self):
        idx = np.flatnonzero(self.bond)
        return int(idx[0]) if idx.size else self.bond.size

    @classmethod
    def initial(cls, cfg):
        n = cfg.N
        bond = cfg.x >= cfg.L_o - 1e-9 * cfg.h
        return cls(np.zeros(n), np.zeros(n), np.zeros(n), bond)

    def copy(self):
        return BeamState(self.v.copy(), self.vd.copy(), self.vdd.copy(), self.bond.copy(), self.t,
                         list(self.front_times))


# --- spatial operator -------------------------------------------------------------

def fourth_difference_bands(N):
    """Banded (2 sub, 2 super) form of the ghost-node free-free fourth difference, times h^4.

    Ghosts: v[-1] = 2 v[0] - v[1] and v[-2] = v[2] - 4 v[1] + 4 v[0] (v'' = v''' = 0), mirrored
    at the right end.
    """
    if N < 5:
        raise BeamError("need at least 5 grid nodes")
    D = np.zeros((N, N))
    stencil = (1.0, -4.0, 6.0, -4.0, 1.0)
    ghost = {-1: {0: 2.0, 1: -1.0}, -2: {0: 4.0, 1: -4.0, 2: 1.0}}
    for i in range(N):
        for off, c in zip(range(-2, 3), stencil):
            j = i + off
            if 0 <= j < N:
                D[i, j] += c
            elif j < 0:
                for k, w in ghost[j].items():
                    D[i, k] += c * w
            else:
                for k, w in ghost[-(j - (N - 1))].items():
                    D[i, N - 1 - k] += c * w
    return D


def _banded(D):
    N = D.shape[0]
    ab = np.zeros((5, N))
    for off in range(-2, 3):
        d = np.diagonal(D, off)
        if off >= 0:
            ab[2 - off, off:] = d
        else:
            ab[2 - off, :N + off] = d
    return ab


def spatial_operator(v, cfg):
    """EJ v'''' at every node with the free-end closures."""
    v = np.asarray(v, float)
    if v.size < 5:
        raise BeamError("need at least 5 grid nodes")
    D = _operator_cache(v.size)
    return cfg.EJ * (D @ v) / cfg.h ** 4


_D_CACHE = {}


def _operator_cache(N):
    if N not in _D_CACHE:
        _D_CACHE[N] = fourth_difference_bands(N)
    return _D_CACHE[N]


def end_derivatives(v, h):
    """Second-order one-sided v'' and v''' at x = 0 and x = L."""
    v = np.asarray(v, float)

    def d2(a):
        return (2 * a[0] - 5 * a[1] + 4 * a[2] - a[3]) / h ** 2

    def d3(a):
        return (-2.5 * a[0] + 9 * a[1] - 12 * a[2] + 7 * a[3] - 1.5 * a[4]) / h ** 3

    r = v[::-1]
    return {"d2_left": d2(v), "d3_left": d3(v), "d2_right": d2(r), "d3_right": -d3(r)}


def bending_energy(v, cfg):
    """0.5 v^T W EJ D4 v with trapezoid weights W (W D4 is symmetric)."""
    w = _weights(v.size) * cfg.h
    return 0.5 * float(np.dot(w * v, spatial_operator(v, cfg)))


def kinetic_energy(vd, cfg):
    w = _weights(vd.size) * cfg.h
    return 0.5 * cfg.rhoA * float(np.dot(w * vd, vd))


def _weights(N):
    w = np.ones(N)
    w[0] = w[-1] = 0.5
    return w


# --- time stepping ----------------------------------------------------------------

NEWMARK_BETA, NEWMARK_GAMMA = 0.25, 0.5
MAX_ACTIVE_SET_ITERS = 50


class BeamIntegrator:
    """Implicit Newmark steps; the system matrix is rebuilt only when the bond pattern changes."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.dt = cfg.time_step
        self.D = _operator_cache(cfg.N) * (cfg.EJ / cfg.h ** 4)
        self.c0 = cfg.rhoA / (NEWMARK_BETA * self.dt ** 2)
        self.c1 = NEWMARK_GAMMA / (NEWMARK_BETA * self.dt)
        self._cache_key, self._ab = None, None

    def _matrix(self, stiff):
        key = stiff.tobytes()
        if key != self._cache_key:
            cfg = self.cfg
            A = self.D.copy()
            A[np.diag_indices_from(A)] += self.c0 + cfg.damping * cfg.rhoA * self.c1 + stiff
            self._ab, self._cache_key = _banded(A), key
        return self._ab

    def _solve(self, state, q, stiff, force):
        cfg, dt, b = self.cfg, self.dt, NEWMARK_BETA
        pred = state.v / (b * dt ** 2) + state.vd / (b * dt) + (0.5 / b - 1.0) * state.vdd
        rhs = q - force + cfg.rhoA * pred
        if cfg.damping:
            vpred = state.vd + dt * (1 - NEWMARK_GAMMA) * state.vdd
            pv = (state.v + dt * state.vd + dt * dt * (0.5 - b) * state.vdd) / (b * dt ** 2)
            # c * rhoA * vd_new with vd_new = vpred + gamma dt (v_new/(b dt^2) - pv)
            rhs -= cfg.damping * cfg.rhoA * (vpred - NEWMARK_GAMMA * dt * pv)
        if not np.all(np.isfinite(rhs)):
            raise TimeStepError(f"non-finite load or state at t={state.t:.3g} s")
        return linalg.solve_banded((2, 2), self._matrix(stiff), rhs)

    def _foundation(self, v_guess, bond):
        """Linearized foundation: (diagonal stiffness, constant force) for the current active set."""
        law = self.cfg.law
        stiff = np.zeros(v_guess.size)
        force = np.zeros(v_guess.size)
        if law.variant == "linear-brittle":
            stiff[bond] = law.k_f
        else:
            closing = bond & (v_guess <= 0)
            stiff[closing] = law.k_f
            force[bond & ~closing] = law.level
        return stiff, force

    def _trial(self, state, q, bond):
        v = state.v.copy()
        for _ in range(MAX_ACTIVE_SET_ITERS):
            stiff, force = self._foundation(v, bond)
            v_new = self._solve(state, q, stiff, force)
            if self.cfg.law.variant == "linear-brittle" or np.array_equal(
                    self._foundation(v_new, bond)[0], stiff):
                return v_new
            v = v_new
        return v_new

    def step(self, state):
        cfg, dt, b, g = self.cfg, self.dt, NEWMARK_BETA, NEWMARK_GAMMA
        t1 = state.t + dt
        q = cfg.load(t1)
        bond = state.bond.copy()
        broken = []
        while True:
            v = self._trial(state, q, bond)
            k = int(np.argmax(bond)) if bond.any() else bond.size
            newly = []
            while k < bond.size and v[k] >= cfg.law.v_c:
                newly.append(k)
                k += 1
            if not newly:
                break
            bond[newly] = False
            broken.extend(newly)
        vdd = (v - state.v - dt * state.vd) / (b * dt * dt) - (0.5 / b - 1.0) * state.vdd
        vd = state.vd + dt * ((1 - g) * state.vdd + g * vdd)
        scale = max(np.abs(state.v).max(), cfg.q_max / cfg.law.k_f, 1e-30)
        if not np.all(np.isfinite(v)) or np.abs(v).max() > 1e6 * scale:
            raise TimeStepError(f"deflection blew up at t={t1:.3g} s; reduce dt")
        out = BeamState(v, vd, vdd, bond, t1, state.front_times)
        out.front_times.extend((n, t1) for n in broken)
        return out


def beam_step(state, cfg, integrator=None):
    """One trapezoidal Newmark step followed by front breaking (re-solved until no node breaks)."""
    return (integrator or BeamIntegrator(cfg)).step(state)


# --- runs and post-processing -----------------------------------------------------

@dataclass
class BeamRun:
    config: BeamConfig
    t: np.ndarray
    front: np.ndarray           # front index after each step (index 0 is the initial state)
    crack_length: np.ndarray    # mm
    break_times: list           # (node, t)
    profiles: list              # (step, v, bond)
    final: BeamState = None
    bulk_opening: float = 0.0   # largest opening of bonded nodes ahead of the front node


def run_beam(cfg, stop_when_debonded=True):
    integ = BeamIntegrator(cfg)
    state = BeamState.initial(cfg)
    n_steps = int(math.ceil(cfg.t_end / integ.dt))
    t, front = [0.0], [state.front_index]
    profiles = [(0, state.v.copy(), state.bond.copy())] if cfg.profile_stride else []
    bulk = 0.0
    for n in range(1, n_steps + 1):
        state = integ.step(state)
        k = state.front_index
        if k + 1 < cfg.N:
            bulk = max(bulk, float(state.v[k + 1:].max()))
        t.append(state.t)
        front.append(state.front_index)
        if cfg.profile_stride and n % cfg.profile_stride == 0:
            profiles.append((n, state.v.copy(), state.bond.copy()))
        if stop_when_debonded and state.front_index >= cfg.N:
            break
    front = np.asarray(front)
    length = np.minimum(front, cfg.N - 1) * cfg.h
    return BeamRun(cfg, np.asarray(t), front, length, list(state.front_times), profiles, state, bulk)


def front_trajectory(run):
    """Arrival time of the front at each crack length: (t, L) through the break events.

    The step-wise length series only moves in whole cells, so the front trajectory is taken
    as the piecewise-linear curve through the break events, starting at the initial crack.
    """
    h = run.config.h
    times, lengths = [0.0], [float(run.crack_length[0])]
    for node, tb in run.break_times:
        L = min(node + 1, run.config.N - 1) * h
        if tb == times[-1]:
            lengths[-1] = max(lengths[-1], L)
        else:
            times.append(tb)
            lengths.append(L)
    return np.asarray(times), np.asarray(lengths)


def crack_length_series(run):
    """(t, crack length, tip velocity) on the step times.

    Velocity is the central difference of the front trajectory through the break events,
    so it is zero before the first break and after the last one.
    """
    tt, LL = front_trajectory(run)
    t = run.t
    if tt.size < 2:
        return t, run.crack_length.astype(float), np.zeros(t.size)
    Lc = np.interp(t, tt, LL)
    v = np.gradient(Lc, t)
    v[t > tt[-1]] = 0.0
    return t, run.crack_length.astype(float), v


def break_velocities(run, smooth=5):
    """Tip speed per break interval (h / waiting time), moving-averaged over ``smooth`` breaks."""
    tt, LL = front_trajectory(run)
    if tt.size < 3:
        return np.zeros(0), np.zeros(0)
    tt, LL = tt[1:], LL[1:]           # propagation phase starts at the first break
    speed = np.diff(LL) / np.diff(tt)
    mid = 0.5 * (tt[1:] + tt[:-1])
    if smooth > 1 and speed.size >= smooth:
        k = np.ones(smooth) / smooth
        speed = np.convolve(speed, k, mode="valid")
        mid = np.convolve(mid, k, mode="valid")
    return mid, speed


@dataclass
class VelocityStats:
    cv: float
    n_maxima: int
    n_minima: int
    alternating: bool


def velocity_statistics(run, smooth=5, prominence=0.1):
    """Coefficient of variation of the propagation speed and its fast/slow alternations.

    Extrema count only when their prominence exceeds ``prominence`` times the mean speed.
    """
    _, speed = break_velocities(run, smooth)
    if speed.size < 3:
        return VelocityStats(0.0, 0, 0, False)
    mean = speed.mean()
    cv = float(speed.std() / mean) if mean > 0 else 0.0
    pk, _ = signal.find_peaks(speed, prominence=prominence * mean)
    tr, _ = signal.find_peaks(-speed, prominence=prominence * mean)
    # at least two maxima with a minimum between each consecutive pair, and two minima overall
    alt = pk.size >= 2 and tr.size >= 2 and all(((tr > a) & (tr < b)).any() for a, b in zip(pk[:-1], pk[1:]))
    return VelocityStats(cv, int(pk.size), int(tr.size), bool(alt))


def time_to_length(run, length):
    """First time the crack length reaches ``length`` (inf if never)."""
    tt, LL = front_trajectory(run)
    hit = np.flatnonzero(LL >= length - 1e-9)
    return float(tt[hit[0]]) if hit.size else math.inf


# --- I/O --------------------------------------------------------------------------

def write_beam_outputs(run, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    t, L, v = crack_length_series(run)
    with open(os.path.join(out_dir, "crack_length.csv"), "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["t_s", "l_mm", "v_mm_s"])
        for row in zip(t, L, v):
            w.writerow([repr(float(x)) for x in row])
    x = run.config.x
    for step, vv, bond in run.profiles:
        with open(os.path.join(out_dir, f"profile_{step}.csv"), "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["x_mm", "v_mm", "bonded"])
            for xi, vi, bi in zip(x, vv, bond):
                w.writerow([repr(float(xi)), repr(float(vi)), int(bi)])


_LAW_KEYS = {"k_f": float, "v_c": float, "variant": str, "traction": float}


def parse_beam_config(text):
    """Flat ``key = value`` text; cohesive-law keys are k_f, v_c, variant, traction."""
    from .scenario import ConfigError, _convert
    fields = {f.name: f for f in dataclasses.fields(BeamConfig)}
    kw, law = {}, {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key in _LAW_KEYS:
            try:
                law[key] = None if val.lower() == "none" else _LAW_KEYS[key](val)
            except ValueError as exc:
                raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
        elif key in fields and key != "law":
            kw[key] = _convert(fields[key].type, val)
        else:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
    try:
        return BeamConfig(law=CohesiveLaw(**law), **kw)
    except (BeamError, TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc
