"""Injection scenarios on the damaging lattice.

A run advances time station by time station. At each station the drive is evaluated once,
then the avalanche loop re-solves at that frozen load until no bar exceeds its threshold;
only then does the clock move on.
"""
import csv
import dataclasses
import json
import logging
import math
import os
from dataclasses import dataclass, field

import numpy as np

from .damage import SeededRng, TrussState, avalanche_inner_loop
from .lattice import LatticeGrid, LatticeModel, MaterialParams
from .solver import (BackwardStep, Constraints, Gn22Params, Gn22Step, LatticeSolver,
                     LatticeStation, SimState, initial_acceleration)

log = logging.getLogger(__name__)

DRIVES = ("pressure", "flux", "flux_ramp")


class ConfigError(ValueError):
    pass


@dataclass
class ScenarioConfig:
    grid_nx: int = 16
    grid_ny: int = 16
    cell_size: float = 1.0
    mode: str = "quasi-static"          # or "dynamic"
    drive_type: str = "flux"            # pressure [MPa] | flux [mm^3/s] | flux_ramp [mm^3/s per station]
    drive_value: float = 3e-2
    ramp_time: float = None             # default: 1% of the run for pressure, none for flux
    dt: float = None                    # default: 1 s quasi-static, 0.2 x CFL estimate dynamic
    steps: int = 100
    seed: int = 0
    e0_mpa: float = 100.0
    area_mm2: float = 1.0
    k_over_mu: float = 1e-3
    rho_s: float = 2.7e-9
    rho_w: float = 1.0e-9
    porosity: float = 0.3
    beta1: float = 0.6
    beta2: float = 0.65
    monitors: str = ""                  # "name@i,j;name@i,j" on the pressure grid; default set if empty
    snapshot_stride: int = 0
    outer_bc: str = "drained"           # drained (p = 0 on the rim) | impervious
    solid_bc: str = "rollers"           # rollers (left/bottom) | fixed (whole rim)
    damage: bool = True
    damage_mode: str = "tension"
    regularization: float = 1e-9
    max_sweeps: int = None

    def __post_init__(self):
        self.validate()

    def validate(self):
        if self.grid_nx < 1 or self.grid_ny < 1:
            raise ConfigError("grid must have at least one cell per direction")
        if self.mode not in ("quasi-static", "dynamic"):
            raise ConfigError(f"unknown mode {self.mode!r}")
        if self.drive_type not in DRIVES:
            raise ConfigError(f"unknown drive type {self.drive_type!r}")
        if self.dt is not None and not self.dt > 0:
            raise ConfigError("dt must be positive")
        if self.steps < 1:
            raise ConfigError("steps must be >= 1")
        if self.outer_bc not in ("drained", "impervious"):
            raise ConfigError(f"unknown outer_bc {self.outer_bc!r}")
        if self.solid_bc not in ("rollers", "fixed"):
            raise ConfigError(f"unknown solid_bc {self.solid_bc!r}")
        if self.damage_mode not in ("tension", "abs"):
            raise ConfigError(f"unknown damage_mode {self.damage_mode!r}")
        if self.mode == "dynamic" and not self.beta2 >= self.beta1 >= 0.5:
            raise ConfigError("GN22 requires beta2 >= beta1 >= 0.5")
        for name, (i, j) in parse_monitors(self.monitors):
            if not (0 <= i <= self.grid_nx and 0 <= j <= self.grid_ny):
                raise ConfigError(f"monitor {name} at ({i},{j}) is outside the pressure grid")
        self.material

    @property
    def material(self):
        try:
            return MaterialParams(E0=self.e0_mpa, A=self.area_mm2, k_over_mu=self.k_over_mu,
                                  rho_s=self.rho_s, rho_w=self.rho_w, porosity=self.porosity)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc

    @property
    def time_step(self):
        if self.dt is not None:
            return self.dt
        if self.mode == "quasi-static":
            return 1.0
        rho = self.material.rho
        wave_speed = math.sqrt(self.e0_mpa / rho)
        return 0.2 * (self.cell_size / 2) / wave_speed

    @property
    def ramp(self):
        if self.ramp_time is not None:
            return self.ramp_time
        return 0.01 * self.steps * self.time_step if self.drive_type == "pressure" else 0.0

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


def _convert(tp, raw):
    raw = raw.strip()
    if raw.lower() in ("none", ""):
        return None
    if tp in (bool, "bool"):
        if raw.lower() in ("1", "true", "yes", "on"):
            return True
        if raw.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(raw)
    if tp in (int, "int"):
        return int(float(raw)) if float(raw).is_integer() else int(raw)
    if tp in (float, "float"):
        return float(raw)
    return raw


def parse_config_text(text):
    """Flat ``key = value`` lines; '#' starts a comment."""
    types = {f.name: f.type for f in dataclasses.fields(ScenarioConfig)}
    kw = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if key not in types:
            raise ConfigError(f"line {lineno}: unknown key {key!r}")
        try:
            kw[key] = _convert(types[key], val)
        except ValueError as exc:
            raise ConfigError(f"line {lineno}: bad value for {key}: {val!r}") from exc
    try:
        return ScenarioConfig(**kw)
    except TypeError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(path):
    with open(path) as fh:
        return parse_config_text(fh.read())


def config_text(cfg):
    return "".join(f"{f.name} = {getattr(cfg, f.name)}\n" for f in dataclasses.fields(cfg))


def parse_monitors(spec):
    out = []
    for item in filter(None, (s.strip() for s in (spec or "").split(";"))):
        try:
            name, ij = item.split("@")
            i, j = (int(v) for v in ij.split(","))
        except ValueError as exc:
            raise ConfigError(f"bad monitor spec {item!r}, expected name@i,j") from exc
        out.append((name.strip(), (i, j)))
    return out


def center_nodes(nx, ny):
    """Pressure-grid node(s) closest to the domain centre: one node when both cell counts
    are even, otherwise the 2 or 4 nodes around the centre."""
    xs = [nx // 2] if nx % 2 == 0 else [nx // 2, nx // 2 + 1]
    ys = [ny // 2] if ny % 2 == 0 else [ny // 2, ny // 2 + 1]
    return [(i, j) for j in ys for i in xs]


def default_monitors(cfg):
    ci, cj = center_nodes(cfg.grid_nx, cfg.grid_ny)[0]
    cand = [("inj", (min(ci + 1, cfg.grid_nx), cj)),
            ("mid", (min(ci + cfg.grid_nx // 4, cfg.grid_nx), cj)),
            ("diag", (min(ci + cfg.grid_nx // 4, cfg.grid_nx), min(cj + cfg.grid_ny // 4, cfg.grid_ny))),
            ("far", (ci, min(cj + (3 * cfg.grid_ny) // 8, cfg.grid_ny)))]
    return cand


@dataclass
class MonitorSeries:
    name: str
    node: tuple
    times: list = field(default_factory=list)
    pressures: list = field(default_factory=list)
    ux: list = field(default_factory=list)
    uy: list = field(default_factory=list)


@dataclass
class FieldSnapshot:
    step: int
    modulus: np.ndarray
    abs_stress: np.ndarray
    broken: np.ndarray


@dataclass
class ScenarioResult:
    config: ScenarioConfig
    monitors: dict
    snapshots: list
    records: list
    drive_log: list           # (station, drive magnitude) as applied when the station opened
    final_state: SimState = None
    trusses: TrussState = None
    n_factorizations: int = 0


class Scenario:
    """Static set-up shared by every station: grid, constant blocks and fixed DOFs."""

    def __init__(self, cfg):
        self.cfg = cfg
        self.grid = LatticeGrid(cfg.grid_nx, cfg.grid_ny, cfg.cell_size)
        self.params = cfg.material
        self.model = LatticeModel(self.grid, self.params, regularization=cfg.regularization)
        g = self.grid
        self.center = [g.p_dof(i, j) for i, j in center_nodes(cfg.grid_nx, cfg.grid_ny)]
        xy, pc = g.node_coords, g.p_coords
        X, Y = cfg.grid_nx * cfg.cell_size, cfg.grid_ny * cfg.cell_size
        tol = 1e-9 * cfg.cell_size
        left, right = np.abs(xy[:, 0]) < tol, np.abs(xy[:, 0] - X) < tol
        bottom, top = np.abs(xy[:, 1]) < tol, np.abs(xy[:, 1] - Y) < tol
        if cfg.solid_bc == "rollers":
            fixed_u = np.concatenate([2 * np.flatnonzero(left), 2 * np.flatnonzero(bottom) + 1])
        else:
            rim = np.flatnonzero(left | right | bottom | top)
            fixed_u = np.concatenate([2 * rim, 2 * rim + 1])
        if cfg.outer_bc == "drained":
            on_rim = ((np.abs(pc[:, 0]) < tol) | (np.abs(pc[:, 0] - X) < tol)
                      | (np.abs(pc[:, 1]) < tol) | (np.abs(pc[:, 1] - Y) < tol))
            fixed_p = g.n_u_dofs + np.flatnonzero(on_rim)
        else:
            fixed_p = np.zeros(0, dtype=np.int64)
        base = np.unique(np.concatenate([fixed_u, fixed_p]))
        if cfg.drive_type == "pressure":
            if np.isin(self.center, base).any():
                raise ConfigError("pressure drive node lies on a constrained boundary")
            self.cons_dofs = np.concatenate([base, self.center])
        else:
            self.cons_dofs = base
        self.n_base = base.size
        if cfg.mode == "quasi-static":
            spread = cfg.k_over_mu * cfg.e0_mpa * cfg.time_step / cfg.cell_size ** 2
            if spread < 0.05:
                log.warning("diffusion per step (k/mu E0 dt / a^2 = %.3g) is far below one cell; "
                            "expect spurious pressure oscillations near the source", spread)
        self.monitors = parse_monitors(cfg.monitors) or default_monitors(cfg)

    def drive_magnitude(self, t, station):
        cfg = self.cfg
        if cfg.drive_type == "flux_ramp":
            return cfg.drive_value * station
        ramp = cfg.ramp
        return cfg.drive_value * (min(t / ramp, 1.0) if ramp > 0 else 1.0)

    def apply_drive(self, t, station):
        """Constraints and load vector at time t (station index used by ramped flux)."""
        mag = self.drive_magnitude(t, station)
        values = np.zeros(self.cons_dofs.size)
        f = np.zeros(self.grid.n_dofs)
        if self.cfg.drive_type == "pressure":
            values[self.n_base:] = mag
        else:
            f[self.center] = mag / len(self.center)
        return Constraints(self.cons_dofs, values), f, mag


def apply_drive(cfg, t, station=None):
    """Standalone form: (constraints, f_u, f_p) for config ``cfg`` at time ``t``."""
    sc = Scenario(cfg)
    if station is None:
        station = int(round(t / cfg.time_step))
    cons, f, _ = sc.apply_drive(t, station)
    nu = sc.grid.n_u_dofs
    return cons, f[:nu], f[nu:]


def run_scenario(cfg, progress=False):
    sc = Scenario(cfg)
    g, model = sc.grid, sc.model
    rng = SeededRng(cfg.seed)
    trusses = TrussState.fresh(g.n_trusses, cfg.e0_mpa, rng)
    dt = cfg.time_step
    state = SimState.zeros(g.n_dofs)
    series = {name: MonitorSeries(name, ij) for name, ij in sc.monitors}
    mon_dofs = {name: (g.p_dof(*ij), 2 * g.u_node(2 * ij[0], 2 * ij[1])) for name, ij in sc.monitors}
    if cfg.mode == "dynamic":
        gp = Gn22Params(dt=dt, beta1=cfg.beta1, beta2=cfg.beta2)
        cons0, f0, _ = sc.apply_drive(0.0, 0)
        state.a[cons0.dofs] = cons0.values
        state.acc = initial_acceleration(model.Mh, model.block_K(trusses.modulus), state, f0, model.Ch)
        const = Gn22Step(model.Mh, model.Ch, state, f0, gp).A_const
    else:
        const = model.Ch / dt
    solver = LatticeSolver(model, const, sc.cons_dofs)

    records, snapshots, drive_log = [], [], []
    for n in range(1, cfg.steps + 1):
        t = n * dt
        cons, f, mag = sc.apply_drive(t, n)
        drive_log.append((n, mag))
        if cfg.mode == "dynamic":
            step = Gn22Step(model.Mh, model.Ch, state, f, gp, cons)
        else:
            step = BackwardStep(model.Ch, state, f, dt, cons)
        state, rec, stress = avalanche_inner_loop(
            model, LatticeStation(step, model, solver), trusses, rng, station=n, t=t, drive=mag,
            max_sweeps=cfg.max_sweeps, mode=cfg.damage_mode, enabled=cfg.damage)
        records.append(rec)
        for name, (pd, ud) in mon_dofs.items():
            s = series[name]
            s.times.append(t)
            s.pressures.append(float(state.a[pd]))
            s.ux.append(float(state.a[ud]))
            s.uy.append(float(state.a[ud + 1]))
        if cfg.snapshot_stride and n % cfg.snapshot_stride == 0:
            snapshots.append(FieldSnapshot(n, trusses.modulus, np.abs(stress), trusses.broken.copy()))
        if progress and n % max(1, cfg.steps // 20) == 0:
            log.info("station %d/%d  s=%d  broken=%d", n, cfg.steps, rec.size, int(trusses.broken.sum()))
    return ScenarioResult(cfg, series, snapshots, records, drive_log, state, trusses,
                          solver.n_factorizations)


# --- output -------------------------------------------------------------------

def _fmt(x):
    return repr(float(x))


def write_series(series, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["t_s", "p_mpa", "ux_mm", "uy_mm"])
        for row in zip(series.times, series.pressures, series.ux, series.uy):
            w.writerow([_fmt(v) for v in row])


def read_series(path, name=None):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    s = MonitorSeries(name or os.path.basename(path), None)
    for r in rows:
        s.times.append(float(r["t_s"]))
        s.pressures.append(float(r["p_mpa"]))
        s.ux.append(float(r.get("ux_mm", "nan")))
        s.uy.append(float(r.get("uy_mm", "nan")))
    return s


def write_snapshot(snap, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["truss_id", "e_mpa", "abs_sigma_mpa", "broken"])
        for i, (e, s, b) in enumerate(zip(snap.modulus, snap.abs_stress, snap.broken)):
            w.writerow([i, _fmt(e), _fmt(s), int(bool(b))])


def read_snapshot(path, step=0):
    with open(path) as fh:
        rows = list(csv.DictReader(fh))
    return FieldSnapshot(step, np.array([float(r["e_mpa"]) for r in rows]),
                         np.array([float(r["abs_sigma_mpa"]) for r in rows]),
                         np.array([r["broken"] == "1" for r in rows]))


def write_records(records, path):
    with open(path, "w") as fh:
        for rec in records:
            fh.write(json.dumps(rec.to_json()) + "\n")


def read_records(path):
    from .damage import AvalancheRecord
    with open(path) as fh:
        return [AvalancheRecord.from_json(json.loads(line)) for line in fh if line.strip()]


def write_outputs(result, out_dir):
    os.makedirs(out_dir, exist_ok=True)
    for name, s in result.monitors.items():
        write_series(s, os.path.join(out_dir, f"monitor_{name}.csv"))
    for snap in result.snapshots:
        write_snapshot(snap, os.path.join(out_dir, f"snapshot_{snap.step}.csv"))
    write_records(result.records, os.path.join(out_dir, "avalanches.ndjson"))


# --- analysis -----------------------------------------------------------------

@dataclass(frozen=True)
class Jump:
    index: int
    t: float
    dp: float

    @property
    def sign(self):
        return 1 if self.dp > 0 else -1


def detect_pressure_jumps(series, window=10, theta=10.0, atol=1e-10):
    """One-step pressure changes larger than ``theta`` times the median |change| over the
    preceding ``window`` steps (and larger than ``atol``).

    ``series`` is a MonitorSeries or a plain sequence of pressures.
    """
    if isinstance(series, MonitorSeries):
        p, t = np.asarray(series.pressures, float), np.asarray(series.times, float)
    else:
        p = np.asarray(series, float)
        t = np.arange(p.size, dtype=float)
    if p.size <= window + 1:
        raise ValueError(f"series of length {p.size} too short for window {window}")
    dp = np.diff(p)
    out = []
    for k in range(window, dp.size):
        scale = np.median(np.abs(dp[k - window:k]))
        if abs(dp[k]) > atol and abs(dp[k]) > theta * scale:
            out.append(Jump(k + 1, float(t[k + 1]), float(dp[k])))
    return out


def drive_changes_inside_avalanches(records):
    """Number of stations whose solves saw more than one drive value (must be 0)."""
    return sum(1 for r in records if len(set(r.drive)) > 1)
