"""Time stepping of one furnace configuration and the per-configuration CSV table."""

from __future__ import annotations

import re
from dataclasses import dataclass, field, replace

import numpy as np

from .balance import (SolverError, ZoneConstants, convection_operator, convection_terms, solve_gas_temperatures,
                      surface_flux)
from .conduction import NodeTemperatures, Slab2D, Wall1D
from .control import PidGains, PidState, WalkSchedule, pid_update, walk_step, zone_measurement
from .exchange import ExchangeAreaSet
from .flow import FlowParams, enthalpy_operator, flow_pattern
from .geometry import Enclosure
from .wsgg import WsggCoefficients, assemble_dfas

C_TO_K = 273.15


@dataclass(frozen=True)
class PlantParams:
    burner_power_max: float = 5.4e5  # W per burner at full firing
    air_heat_fraction: float = 0.1  # Q_a as a fraction of the fuel heat
    h_conv: float = 15.0  # W/m^2/K, gas to surface
    h_out: float = 10.0  # W/m^2/K, wall back face to ambient
    t_amb: float = 298.15
    charge_temperature: float = 298.15
    f_init: float = 0.3
    n1: int = 11
    n2: int = 11
    gains: PidGains = PidGains()
    flow: FlowParams = FlowParams()
    solver_rtol: float = 1e-8
    solver_max_iter: int = 50
    coupling_tol: float = 1e-9  # K, surface/conduction fixed point
    coupling_max_iter: int = 100


@dataclass(frozen=True)
class FurnaceConfig:
    setpoints_c: tuple[float, float, float]
    walk_interval: float  # s
    t_steps: int = 1500
    dt: float = 15.0

    def __post_init__(self):
        if any(s <= 0 for s in self.setpoints_c):
            raise ValueError("set points must be positive")
        if self.walk_interval <= 0 or self.dt <= 0 or self.t_steps < 1:
            raise ValueError("walk interval, dt and step count must be positive")

    @property
    def setpoints(self) -> np.ndarray:
        return np.asarray(self.setpoints_c, dtype=float) + C_TO_K

    @property
    def name(self) -> str:
        return "_".join(_fmt(v) for v in (*self.setpoints_c, self.walk_interval))

    @classmethod
    def from_name(cls, name: str, **kw) -> "FurnaceConfig":
        parts = name.removesuffix(".csv").split("_")
        if len(parts) != 4:
            raise ValueError(f"configuration name {name!r} is not SP1_SP2_SP3_WI")
        vals = [float(p) for p in parts]
        return cls(tuple(vals[:3]), vals[3], **kw)


def _fmt(v: float) -> str:
    return str(int(v)) if float(v).is_integer() else repr(float(v))


class Simulation:
    """Stepwise simulator. ``step()`` runs one full time step; it is split into
    ``next_firing_rates()`` (controller) and ``advance(f)`` (plant) so that a
    caller can supply the firing rates itself.
    """

    def __init__(self, config: FurnaceConfig, enclosure: Enclosure, teas: ExchangeAreaSet,
                 coeffs: WsggCoefficients, plant: PlantParams = PlantParams()):
        self.config = config
        self.enc = enclosure
        self.teas = teas
        self.coeffs = coeffs
        self.plant = plant
        spec = enclosure.spec
        self.wall = Wall1D(spec.wall, plant.n1, plant.h_out, plant.t_amb)
        self.slab = Slab2D(spec.slab, spec.slab_size, plant.n2) if enclosure.n_slabs else None
        self.schedule = WalkSchedule(config.walk_interval, config.dt, plant.charge_temperature)
        self.n_control = spec.n_control
        self._burner_zones = np.array([g for _, g in spec.burners], dtype=np.int64)
        self._burner_ctrl = np.array([c for c, _ in spec.burners], dtype=np.int64)
        self.reset()

    def reset(self) -> None:
        p, enc = self.plant, self.enc
        self.tG = np.full(enc.n_gas, p.t_amb)
        self.nodes = NodeTemperatures(
            walls=np.full((enc.n_furnace, p.n1), p.t_amb),
            slabs=np.full((enc.n_slabs, p.n2, p.n2), p.t_amb),
            slab_model=self.slab,
        )
        self.tS = self.nodes.surface_temperatures()
        self.pid = PidState.start(np.full(self.n_control, p.f_init), p.gains)
        self.step_index = 0
        self._pending = None
        self.last_diagnostics = {}

    def clone(self) -> "Simulation":
        """Independent copy of the current state sharing the immutable model data."""
        other = object.__new__(Simulation)
        other.__dict__.update(self.__dict__)
        other.tG, other.tS = self.tG.copy(), self.tS.copy()
        other.nodes = self.nodes.copy()
        other.pid = self.pid.copy()
        other._pending = None if self._pending is None else (self._pending[0].copy(), self._pending[1].copy())
        other.last_diagnostics = dict(self.last_diagnostics)
        return other

    def fuel_heat(self, f) -> tuple[np.ndarray, np.ndarray]:
        """(Q_fuel, Q_a) per gas zone."""
        qf = np.bincount(self._burner_zones, weights=np.asarray(f)[self._burner_ctrl] * self.plant.burner_power_max,
                         minlength=self.enc.n_gas)
        return qf, self.plant.air_heat_fraction * qf

    def next_firing_rates(self) -> np.ndarray:
        measured = zone_measurement(self.tG, self.enc.spec.burners, self.n_control)
        f, state = pid_update(self.pid, self.config.setpoints, measured, self.config.dt)
        self._pending = (f.copy(), state)
        return f

    def advance(self, f) -> dict:
        f = np.asarray(f, dtype=float)
        if self._pending is not None and np.array_equal(self._pending[0], f):
            self.pid = self._pending[1]
        self._pending = None
        enc, p = self.enc, self.plant
        tG_prev, tS_prev = self.tG, self.tS

        fp = flow_pattern(f, enc, p.flow)
        q_op = enthalpy_operator(fp, enc, p.flow)
        Qfuel, Qa = self.fuel_heat(f)
        # transport and gas-side convection are implicit in the gas temperatures
        src = q_op + convection_operator(tS_prev, enc, p.h_conv)
        zero = np.zeros(enc.n_gas)
        diag = {}
        try:
            tG = solve_gas_temperatures(tS_prev, self.teas, src, ZoneConstants(zero, Qfuel, Qa, np.zeros(enc.n_surf)), self.coeffs, enc, tG_prev,
                                        rtol=p.solver_rtol, max_iter=p.solver_max_iter, diagnostics=diag)
        except SolverError as err:
            raise SolverError(f"step {self.step_index}: {err}", err.residual, err.iterations) from err
        q = q_op(tG)
        Qconv, qconv = convection_terms(tG, tS_prev, enc, p.h_conv)
        consts = ZoneConstants(Qconv=Qconv, Qfuel=Qfuel, Qa=Qa, qconv=qconv)

        # surface fluxes and conduction, iterated to a common surface temperature so
        # that the recorded state closes the surface balance with Q_s = w
        nf = enc.n_furnace
        area = enc.surf_area[:nf]
        tS = tS_prev
        for it in range(p.coupling_max_iter):
            w = surface_flux(tG, tS, assemble_dfas(self.teas, tG, tS, self.coeffs), consts, enc)
            walls = self.wall.step(self.nodes.walls, w[:nf] / area, self.config.dt)
            slabs = self.slab.step(self.nodes.slabs, w[nf:].reshape(-1, 6), self.config.dt) if self.slab else self.nodes.slabs
            trial = NodeTemperatures(walls, slabs, self.slab, self.nodes.t + self.config.dt)
            tS_new = trial.surface_temperatures()
            change = float(np.max(np.abs(tS_new - tS)))
            tS = tS_new
            if change <= p.coupling_tol:
                break
        else:
            raise SolverError(f"step {self.step_index}: surface coupling did not converge ({change:.3e} K)", change)
        if not (np.all(np.isfinite(tS)) and np.all(tS > 0)):
            raise SolverError(f"step {self.step_index}: non-physical surface temperature")
        diag["coupling_iterations"] = it + 1

        self.step_index += 1
        slabs, events = walk_step(self.schedule, trial.slabs, self.step_index)
        if events:
            trial = NodeTemperatures(trial.walls, slabs, self.slab, trial.t)
            tS = trial.surface_temperatures()
        self.nodes = trial
        self.tG, self.tS = tG, tS
        self.last_diagnostics = diag
        return self._record(f, fp, q, consts, w)

    def step(self) -> dict:
        return self.advance(self.next_firing_rates())

    def _record(self, f, fp, q, consts, w) -> dict:
        enc, nf = self.enc, self.enc.n_furnace
        return {
            "timestep": np.array([self.step_index - 1], dtype=float),
            "firing_rates": f.copy(),
            "walk_interval": np.array([self.config.walk_interval]),
            "setpoints": self.config.setpoints.copy(),
            "flowpattern": fp.flat().copy(),
            "q_enthalpy": q,
            "tG_gaszone": self.tG.copy(),
            "tS_furnace": self.tS[:nf].copy(),
            "tS_obstacle": self.tS[nf:].copy(),
            "w_flux_furnace": w[:nf].copy(),
            "w_flux_obstacle": w[nf:].copy(),
            "nodetmp_1d_furnace": self.nodes.walls.ravel().copy(),
            "nodetmp_2d_obstacle": self.nodes.slabs.ravel().copy(),
            "corrcoeff_b": self.coeffs.b.ravel().copy(),
            "Qconvi": consts.Qconv,
            "extinctioncoeff_k": self.coeffs.k.copy(),
            "gasvolumes_Vi": enc.gas_volumes.copy(),
            "QfuelQa_sum": consts.Qfuel + consts.Qa,
            "surfareas_Ai": enc.surf_area.copy(),
            "emissivity_epsi": enc.surf_emissivity.copy(),
            "convection_flux_qconvi": consts.qconv,
        }


ENTITIES = (
    "timestep", "firing_rates", "walk_interval", "setpoints", "flowpattern", "q_enthalpy", "tG_gaszone",
    "tS_furnace", "tS_obstacle", "w_flux_furnace", "w_flux_obstacle", "nodetmp_1d_furnace",
    "nodetmp_2d_obstacle", "corrcoeff_b", "Qconvi", "extinctioncoeff_k", "gasvolumes_Vi", "QfuelQa_sum",
    "surfareas_Ai", "emissivity_epsi", "convection_flux_qconvi",
)
SCALARS = ("timestep", "walk_interval")


class TableSchemaError(ValueError):
    pass


@dataclass(eq=False)
class SimTable:
    """Columnar time series: entity name -> (T, width) array."""

    columns: dict = field(default_factory=dict)
    name: str = ""

    def __len__(self) -> int:
        return len(self.columns["timestep"]) if self.columns else 0

    def __getitem__(self, key) -> np.ndarray:
        return self.columns[key]

    def row(self, t: int) -> dict:
        return {k: v[t] for k, v in self.columns.items()}

    @classmethod
    def from_records(cls, records: list, name: str = "") -> "SimTable":
        if not records:
            raise TableSchemaError("no records")
        return cls({k: np.vstack([r[k] for r in records]) for k in ENTITIES}, name)

    def equals(self, other: "SimTable") -> bool:
        return self.columns.keys() == other.columns.keys() and all(
            np.array_equal(self.columns[k], other.columns[k]) for k in self.columns)


def run_configuration(config: FurnaceConfig, enclosure: Enclosure, teas: ExchangeAreaSet, coeffs: WsggCoefficients,
                      plant: PlantParams = PlantParams(), log=None) -> SimTable:
    sim = Simulation(config, enclosure, teas, coeffs, plant)
    records = []
    for _ in range(config.t_steps):
        records.append(sim.step())
        if log is not None:
            log({"step": sim.step_index - 1, **sim.last_diagnostics})
    return SimTable.from_records(records, config.name)


def header(table: SimTable) -> list[str]:
    names = []
    for k in ENTITIES:
        if k in SCALARS:
            names.append(k)
        else:
            names.extend(f"{k}_{i}" for i in range(table.columns[k].shape[1]))
    return names


def write_table(table: SimTable, path) -> None:
    data = np.hstack([table.columns[k] for k in ENTITIES])
    np.savetxt(path, data, fmt="%.17g", delimiter=",", header=",".join(header(table)), comments="",
               encoding="utf-8")


_SUFFIX = re.compile(r"^(.*)_(\d+)$")


def read_table(path) -> SimTable:
    with open(path, encoding="utf-8") as fh:
        head = fh.readline().strip()
    if not head:
        raise TableSchemaError(f"{path}: empty file")
    names = head.split(",")
    layout: dict[str, list[int]] = {}
    order = []
    for col, n in enumerate(names):
        if n in SCALARS:
            ent, idx = n, 0
        else:
            m = _SUFFIX.match(n)
            if not m:
                raise TableSchemaError(f"{path}: malformed column name {n!r}")
            ent, idx = m.group(1), int(m.group(2))
        if ent not in layout:
            layout[ent] = []
            order.append(ent)
        if idx != len(layout[ent]):
            raise TableSchemaError(f"{path}: column {n!r} out of order")
        layout[ent].append(col)
    missing = [e for e in ENTITIES if e not in layout]
    if missing:
        raise TableSchemaError(f"{path}: missing columns for {missing}")
    extra = [e for e in layout if e not in ENTITIES]
    if extra:
        raise TableSchemaError(f"{path}: unknown columns {extra}")
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2, encoding="utf-8")
    except ValueError as err:
        raise TableSchemaError(f"{path}: {err}") from err
    if data.shape[1] != len(names):
        raise TableSchemaError(f"{path}: rows have {data.shape[1]} fields, header has {len(names)}")
    cols = {e: data[:, layout[e]] for e in ENTITIES}
    _check_widths(path, cols)
    name = str(path).rsplit("/", 1)[-1].removesuffix(".csv")
    return SimTable(cols, name)


def _check_widths(path, cols: dict) -> None:
    """Entity widths must agree with each other: one per gas zone, surface or control zone."""
    w = {k: v.shape[1] for k, v in cols.items()}
    G, S = w["tG_gaszone"], w["tS_furnace"] + w["tS_obstacle"]
    expected = {
        "setpoints": w["firing_rates"], "flowpattern": 12 * G, "q_enthalpy": G, "Qconvi": G, "gasvolumes_Vi": G,
        "QfuelQa_sum": G, "w_flux_furnace": w["tS_furnace"], "w_flux_obstacle": w["tS_obstacle"],
        "surfareas_Ai": S, "emissivity_epsi": S, "convection_flux_qconvi": S,
    }
    bad = [k for k, n in expected.items() if w[k] != n]
    if w["corrcoeff_b"] % max(w["extinctioncoeff_k"], 1):
        bad.append("corrcoeff_b")
    if bad:
        raise TableSchemaError(f"{path}: inconsistent column counts for {bad}")


def with_steps(config: FurnaceConfig, t_steps: int) -> FurnaceConfig:
    return replace(config, t_steps=t_steps)
