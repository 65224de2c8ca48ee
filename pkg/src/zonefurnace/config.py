"""Run configuration: one TOML file holding every numeric parameter of a pipeline."""

from __future__ import annotations

import hashlib
import json
import sys
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path

from .control import PidGains
from .dataset import packaged_manifest
from .flow import FlowParams
from .geometry import EnclosureSpec, default_spec, desk_scale_spec
from .pinn import PinnHyper
from .simulate import PlantParams

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib


class ConfigError(ValueError):
    pass


PRESETS = {"desk": desk_scale_spec, "default": default_spec}


@dataclass(frozen=True)
class ExchangeSection:
    archive: str = ""  # empty: <run dir>/teas.ztea
    rays: int = 50_000
    seed: int = 7
    n_gases: int = 6
    wsgg_table: str = ""  # empty: built-in coefficients


@dataclass(frozen=True)
class SimulationSection:
    manifest: str = ""  # empty: packaged manifest of the preset
    t_steps: int = 1500
    dt: float = 15.0


@dataclass(frozen=True)
class BaselineSection:
    max_depth: int = 12
    min_leaf: int = 5
    n_trees: int = 20
    feature_frac: float = 1.0 / 3.0


@dataclass(frozen=True)
class RunConfig:
    output_dir: str
    preset: str = "desk"
    enclosure_file: str = ""  # JSON or TOML enclosure spec; overrides the preset geometry
    exchange: ExchangeSection = ExchangeSection()
    simulation: SimulationSection = SimulationSection()
    plant: PlantParams = PlantParams()
    training: PinnHyper = PinnHyper()
    baselines: BaselineSection = BaselineSection()
    source: str = ""  # path of the file this was read from
    raw: dict = field(default_factory=dict, compare=False)

    @property
    def base(self) -> Path:
        return Path(self.source).parent if self.source else Path.cwd()

    def path(self, p: str) -> Path:
        q = Path(p)
        return q if q.is_absolute() else self.base / q

    def enclosure_spec(self) -> EnclosureSpec:
        if self.enclosure_file:
            p = self.path(self.enclosure_file)
            text = p.read_text(encoding="utf-8")
            d = json.loads(text) if p.suffix == ".json" else tomllib.loads(text)
            return EnclosureSpec.from_dict(d)
        return PRESETS[self.preset]()

    def manifest_path(self) -> Path:
        if self.simulation.manifest:
            return self.path(self.simulation.manifest)
        return packaged_manifest("desk" if self.preset == "desk" else "full")

    def run_dir(self) -> Path:
        return self.path(self.output_dir) / f"run-{self.digest()[:12]}"

    def archive_path(self) -> Path:
        return self.path(self.exchange.archive) if self.exchange.archive else self.run_dir() / "teas.ztea"

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.raw, sort_keys=True).encode()).hexdigest()


def _section(cls, d: dict, where: str):
    if not isinstance(d, dict):
        raise ConfigError(f"[{where}] must be a table")
    names = {f.name: f for f in fields(cls)}
    unknown = sorted(set(d) - set(names))
    if unknown:
        raise ConfigError(f"unknown keys in [{where}]: {unknown}")
    kw = {}
    for k, v in d.items():
        if isinstance(v, list):
            v = tuple(v)
        kw[k] = v
    try:
        return cls(**kw)
    except (TypeError, ValueError) as err:
        raise ConfigError(f"[{where}]: {err}") from err


def _plant(d: dict) -> PlantParams:
    d = dict(d)
    gains = _section(PidGains, d.pop("gains", {}), "plant.gains")
    flow = _section(FlowParams, d.pop("flow", {}), "plant.flow")
    return replace(_section(PlantParams, d, "plant"), gains=gains, flow=flow)


def parse_config(d: dict, source: str = "") -> RunConfig:
    d = dict(d)
    top = {"run", "exchange", "simulation", "plant", "training", "baselines"}
    unknown = sorted(set(d) - top)
    if unknown:
        raise ConfigError(f"unknown sections: {unknown}")
    run = dict(d.get("run", {}))
    run_keys = {"output_dir", "preset", "enclosure_file"}
    if set(run) - run_keys:
        raise ConfigError(f"unknown keys in [run]: {sorted(set(run) - run_keys)}")
    if "output_dir" not in run:
        raise ConfigError("[run] output_dir is required")
    if run.get("preset", "desk") not in PRESETS:
        raise ConfigError(f"[run] preset must be one of {sorted(PRESETS)}")
    cfg = RunConfig(
        output_dir=str(run["output_dir"]), preset=run.get("preset", "desk"),
        enclosure_file=str(run.get("enclosure_file", "")),
        exchange=_section(ExchangeSection, d.get("exchange", {}), "exchange"),
        simulation=_section(SimulationSection, d.get("simulation", {}), "simulation"),
        plant=_plant(d.get("plant", {})),
        training=_section(PinnHyper, d.get("training", {}), "training"),
        baselines=_section(BaselineSection, d.get("baselines", {}), "baselines"),
        source=source, raw=d,
    )
    for label, p in (("enclosure_file", cfg.enclosure_file), ("wsgg_table", cfg.exchange.wsgg_table),
                     ("manifest", cfg.simulation.manifest)):
        if p and not cfg.path(p).is_file():
            raise ConfigError(f"{label} {p!r} does not exist")
    if cfg.exchange.rays < 10_000:
        raise ConfigError("[exchange] rays must be at least 10000")
    if cfg.simulation.t_steps < 3 or cfg.simulation.dt <= 0:
        raise ConfigError("[simulation] needs t_steps >= 3 and dt > 0")
    return cfg


def load_config(path) -> RunConfig:
    p = Path(path)
    try:
        text = p.read_text(encoding="utf-8")
    except FileNotFoundError as err:
        raise ConfigError(f"config file {path} not found") from err
    try:
        d = tomllib.loads(text)
    except tomllib.TOMLDecodeError as err:
        raise ConfigError(f"{path}: {err}") from err
    return parse_config(d, str(p.resolve()))


def config_dict(cfg: RunConfig) -> dict:
    """Fully resolved parameters, for run metadata."""
    return {"output_dir": cfg.output_dir, "preset": cfg.preset, "enclosure": cfg.enclosure_spec().to_dict(),
            "exchange": asdict(cfg.exchange), "simulation": asdict(cfg.simulation), "plant": asdict(cfg.plant),
            "training": cfg.training.to_dict(), "baselines": asdict(cfg.baselines)}
