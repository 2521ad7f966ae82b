"""Annealed continuous damage of lattice bars.

A bar whose stress exceeds its threshold loses 10% of its modulus and draws a fresh
threshold from U(0, 1) MPa. After 30 damage events it is removed from the lattice.
"""
import functools
from dataclasses import dataclass, field

import numpy as np

DAMAGE_FACTOR = 0.9
MAX_DAMAGE = 30


class DamageError(RuntimeError):
    pass


class SeededRng:
    """Threshold generator.

    Wraps numpy's PCG64 bit generator; doubles come from ``Generator.random`` (53-bit
    mantissa, [0, 1)) with exact zeros rejected so every draw lies in the open interval.
    The same seed gives the same sequence on any platform for a given numpy release.
    """

    def __init__(self, seed=0):
        self.seed = int(seed)
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def uniform_open(self, size=None):
        x = self._gen.random(size)
        if size is None:
            while x == 0.0:
                x = self._gen.random()
            return float(x)
        zero = x == 0.0
        while zero.any():
            x[zero] = self._gen.random(int(zero.sum()))
            zero = x == 0.0
        return x


def draw_threshold(rng, size=None):
    return rng.uniform_open(size)


@dataclass
class TrussState:
    """Damage state of every bar in the lattice, stored as parallel arrays."""
    E0: float
    threshold: np.ndarray
    count: np.ndarray = None

    def __post_init__(self):
        self.threshold = np.asarray(self.threshold, float)
        if self.count is None:
            self.count = np.zeros(self.threshold.shape, dtype=np.int64)

    @classmethod
    def fresh(cls, n, E0, rng):
        return cls(E0=E0, threshold=draw_threshold(rng, n))

    def __len__(self):
        return self.threshold.size

    @property
    def broken(self):
        return self.count >= MAX_DAMAGE

    @property
    def modulus(self):
        """Current modulus; 0 for removed bars. Looked up from repeated products so the value
        after n events is bit-identical to multiplying E0 by 0.9 n times."""
        return np.where(self.broken, 0.0, _moduli(self.E0)[np.minimum(self.count, MAX_DAMAGE)])

    @property
    def nominal_modulus(self):
        """E0 * 0.9**count (by repeated products) ignoring removal; equals ``modulus`` until a bar breaks."""
        return _moduli(self.E0)[np.minimum(self.count, MAX_DAMAGE)]

    def copy(self):
        return TrussState(self.E0, self.threshold.copy(), self.count.copy())


@functools.lru_cache(maxsize=16)
def _moduli(E0):
    """E0, E0*0.9, (E0*0.9)*0.9, ...: the value a bar reaches by scaling its modulus once per event."""
    p = np.empty(MAX_DAMAGE + 1)
    p[0] = E0
    for n in range(1, MAX_DAMAGE + 1):
        p[n] = p[n - 1] * DAMAGE_FACTOR
    p.setflags(write=False)
    return p


def apply_damage(state, ids, rng):
    """Damage the listed bars once each; thresholds are redrawn in id order."""
    ids = np.asarray(ids, dtype=np.int64)
    if ids.size == 0:
        return state
    if state.broken[ids].any():
        raise DamageError("cannot damage a broken truss")
    state.count[ids] += 1
    state.threshold[ids] = draw_threshold(rng, ids.size)
    return state


def damage_sweep(stress, state, mode="tension"):
    """Ids of all live bars whose stress exceeds their threshold.

    ``mode='tension'`` compares signed stress (tension positive); ``'abs'`` uses |stress|.
    """
    s = np.asarray(stress, float)
    if mode == "abs":
        s = np.abs(s)
    elif mode != "tension":
        raise ValueError(f"unknown damage mode {mode!r}")
    return np.flatnonzero((s > state.threshold) & ~state.broken)


@dataclass
class AvalancheRecord:
    station: int
    t: float
    sweeps: list = field(default_factory=list)
    drive: list = field(default_factory=list)   # drive magnitude seen by every solve of the station

    @property
    def size(self):
        return sum(len(s) for s in self.sweeps)

    def to_json(self):
        return {"station": self.station, "t": self.t,
                "sweeps": [[int(i) for i in s] for s in self.sweeps],
                "s": self.size, "drive": list(self.drive)}

    @classmethod
    def from_json(cls, d):
        return cls(station=int(d.get("station", 0)), t=float(d["t"]),
                   sweeps=[list(s) for s in d["sweeps"]], drive=list(d.get("drive", [])))


class RunawayAvalancheError(DamageError):
    def __init__(self, msg, record):
        super().__init__(msg)
        self.record = record


def avalanche_inner_loop(model, station_solver, trusses, rng, station, t, drive=0.0,
                         max_sweeps=None, mode="tension", enabled=True):
    """Solve / sweep / damage at one frozen time station until no bar exceeds its threshold.

    ``station_solver`` holds the frozen history and load and exposes ``solve(E)`` and
    ``finish(a)`` (see ``solver.LatticeStation``); only the bar moduli change between
    sweeps. Returns the finished state, the record and the stresses of the final solve.
    """
    record = AvalancheRecord(station=station, t=t)
    cap = max_sweeps if max_sweeps is not None else 10 * len(trusses)
    while True:
        E = trusses.modulus
        a = station_solver.solve(E)
        record.drive.append(drive)
        stress = model.stresses(a, E)
        if not enabled:
            break
        ids = damage_sweep(stress, trusses, mode)
        if ids.size == 0:
            break
        apply_damage(trusses, ids, rng)
        record.sweeps.append(ids.tolist())
        if len(record.sweeps) > cap:
            raise RunawayAvalancheError(
                f"station {station}: {len(record.sweeps)} sweeps, {record.size} events, "
                f"{int(trusses.broken.sum())} broken bars, max stress {stress.max():.3g} MPa", record)
    return station_solver.finish(a), record, stress
