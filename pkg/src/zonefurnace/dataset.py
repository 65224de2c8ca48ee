"""One-step recasting of simulator tables into IID regression records, splits and scaling."""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .simulate import SimTable

SPLITS = ("train", "val", "test")
# Table sizes of the full roster: (train, val, test) configurations.
FULL_ROSTER_COUNTS = (20, 12, 18)


class DatasetError(ValueError):
    pass


@dataclass(eq=False)
class IidTable:
    """Columnar IID records. Row t comes from raw row t+1 of its source table."""

    fr: np.ndarray  # (N, B) firing rates applied at this step
    wi: np.ndarray  # (N, 1)
    sp: np.ndarray  # (N, B) set points, K
    tG_prev: np.ndarray
    tSf_prev: np.ndarray
    tSo_prev: np.ndarray
    tG: np.ndarray
    tSf: np.ndarray
    tSo: np.ndarray
    fr_next: np.ndarray
    # auxiliary physics terms of the step
    q: np.ndarray  # (N, G) enthalpy transport, W
    Qconv: np.ndarray  # (N, G) W
    QfuelQa: np.ndarray  # (N, G) W
    qconv: np.ndarray  # (N, S) W/m^2
    w: np.ndarray  # (N, S) W, surface heat flow handed to conduction
    config: np.ndarray = field(default=None)  # (N,) config index
    timestep: np.ndarray = field(default=None)  # (N,) raw timestep
    names: list = field(default_factory=list)

    FIELDS = ("fr", "wi", "sp", "tG_prev", "tSf_prev", "tSo_prev", "tG", "tSf", "tSo", "fr_next",
              "q", "Qconv", "QfuelQa", "qconv", "w", "config", "timestep")

    def __len__(self) -> int:
        return self.fr.shape[0]

    @property
    def dims(self) -> tuple[int, int, int, int]:
        """(B, G, S_furnace, S_obstacle)."""
        return self.fr.shape[1], self.tG.shape[1], self.tSf.shape[1], self.tSo.shape[1]

    def subset(self, idx) -> "IidTable":
        out = {k: getattr(self, k)[idx] for k in self.FIELDS}
        return IidTable(**out, names=list(self.names))

    def for_config(self, name: str) -> "IidTable":
        c = self.names.index(name)
        return self.subset(np.flatnonzero(self.config == c))


def recast_iid(table: SimTable, config_index: int = 0) -> IidTable:
    """Shift firing rates one step back and temperatures one step forward, dropping both ends."""
    n = len(table)
    if n < 3:
        raise DatasetError(f"table has {n} rows; at least 3 are needed")
    mid = slice(1, n - 1)
    prev = slice(0, n - 2)
    nxt = slice(2, n)
    c = table.columns
    w = np.hstack([c["w_flux_furnace"], c["w_flux_obstacle"]])
    return IidTable(
        fr=c["firing_rates"][mid], wi=c["walk_interval"][mid], sp=c["setpoints"][mid],
        tG_prev=c["tG_gaszone"][prev], tSf_prev=c["tS_furnace"][prev], tSo_prev=c["tS_obstacle"][prev],
        tG=c["tG_gaszone"][mid], tSf=c["tS_furnace"][mid], tSo=c["tS_obstacle"][mid],
        fr_next=c["firing_rates"][nxt],
        q=c["q_enthalpy"][mid], Qconv=c["Qconvi"][mid], QfuelQa=c["QfuelQa_sum"][mid],
        qconv=c["convection_flux_qconvi"][mid], w=w[mid],
        config=np.full(n - 2, config_index, dtype=np.int64), timestep=c["timestep"][mid, 0].astype(np.int64),
        names=[table.name],
    )


def concat(tables: list[IidTable]) -> IidTable:
    if not tables:
        raise DatasetError("nothing to concatenate")
    dims = {t.dims for t in tables}
    if len(dims) > 1:
        raise DatasetError(f"records from different enclosures: {sorted(dims)}")
    names, parts = [], {k: [] for k in IidTable.FIELDS}
    for t in tables:
        offset = len(names)
        names.extend(t.names)
        for k in IidTable.FIELDS:
            v = getattr(t, k)
            parts[k].append(v + offset if k == "config" else v)
    return IidTable(**{k: np.concatenate(v) for k, v in parts.items()}, names=names)


@dataclass(frozen=True)
class Layout:
    """Column slices of X and Y for one (enclosure, setting)."""

    setting: int
    B: int
    G: int
    Sf: int
    So: int

    @property
    def x_width(self) -> int:
        base = 2 * self.B + 1
        return base + (self.G + self.Sf + self.So if self.setting == 2 else 0)

    @property
    def y_width(self) -> int:
        return self.G + self.Sf + self.So + self.B

    def x_slices(self) -> dict:
        B, G, Sf, So = self.B, self.G, self.Sf, self.So
        s = {"fr": slice(0, B), "wi": slice(B, B + 1), "sp": slice(B + 1, 2 * B + 1)}
        if self.setting == 2:
            o = 2 * B + 1
            s.update(tG_prev=slice(o, o + G), tSf_prev=slice(o + G, o + G + Sf),
                     tSo_prev=slice(o + G + Sf, o + G + Sf + So))
        return s

    def y_slices(self) -> dict:
        G, Sf, So, B = self.G, self.Sf, self.So, self.B
        return {"tG": slice(0, G), "tSf": slice(G, G + Sf), "tSo": slice(G + Sf, G + Sf + So),
                "fr_next": slice(G + Sf + So, G + Sf + So + B)}

    @classmethod
    def of(cls, table: IidTable, setting: int) -> "Layout":
        if setting not in (1, 2):
            raise DatasetError("input setting must be 1 or 2")
        return cls(setting, *table.dims)

    def to_dict(self) -> dict:
        return {"setting": self.setting, "B": self.B, "G": self.G, "Sf": self.Sf, "So": self.So}


def build_xy(table: IidTable, setting: int) -> tuple[np.ndarray, np.ndarray]:
    """X = [fr, wi, sp(, tG_prev, tS_fur_prev, tS_obs_prev)], Y = [tG, tS_fur, tS_obs, fr_next]."""
    Layout.of(table, setting)
    xs = [table.fr, table.wi, table.sp]
    if setting == 2:
        xs += [table.tG_prev, table.tSf_prev, table.tSo_prev]
    X = np.hstack(xs)
    Y = np.hstack([table.tG, table.tSf, table.tSo, table.fr_next])
    return X, Y


@dataclass(frozen=True)
class ManifestEntry:
    name: str
    split: str
    group: str = ""


def read_manifest(path) -> list[ManifestEntry]:
    out = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.reader(fh):
            if not row or row[0].startswith("#") or row[0] == "name":
                continue
            if len(row) < 2 or row[1] not in SPLITS:
                raise DatasetError(f"{path}: bad manifest row {row}")
            out.append(ManifestEntry(row[0].strip(), row[1].strip(), row[2].strip() if len(row) > 2 else ""))
    return out


def packaged_manifest(kind: str = "full") -> Path:
    return Path(resources.files("zonefurnace") / "data" / f"manifest_{kind}.csv")


def split(manifest: list[ManifestEntry], reference: list[ManifestEntry] | None = None) -> dict[str, list[str]]:
    """Group configuration names by split; with ``reference`` the assignment must match it exactly."""
    names = [e.name for e in manifest]
    if len(set(names)) != len(names):
        raise DatasetError("configuration listed more than once")
    if reference is not None:
        ref = {e.name: e.split for e in reference}
        got = {e.name: e.split for e in manifest}
        if ref != got:
            diff = sorted(set(ref.items()) ^ set(got.items()))
            raise DatasetError(f"manifest differs from the reference roster: {diff[:6]}")
    return {s: [e.name for e in manifest if e.split == s] for s in SPLITS}


@dataclass
class Normalizer:
    """Per-column min-max scaling to [0, 1] fitted on training data."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def fit(cls, A) -> "Normalizer":
        A = np.asarray(A, dtype=float)
        return cls(A.min(axis=0), A.max(axis=0))

    @property
    def span(self) -> np.ndarray:
        s = self.hi - self.lo
        return np.where(s > 0, s, 1.0)

    def transform(self, A) -> np.ndarray:
        return (np.asarray(A, dtype=float) - self.lo) / self.span

    def inverse(self, Z) -> np.ndarray:
        return np.asarray(Z, dtype=float) * self.span + self.lo

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d) -> "Normalizer":
        return cls(np.asarray(d["lo"], dtype=float), np.asarray(d["hi"], dtype=float))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "Normalizer":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass
class SplitData:
    """IID tables per split plus the per-config source tables used for rollouts."""

    tables: dict  # split -> IidTable
    sources: dict  # config name -> SimTable


def load_split(data_dir, manifest: list[ManifestEntry]) -> SplitData:
    from .simulate import read_table

    groups = split(manifest)
    tables, sources = {}, {}
    for s in SPLITS:
        parts = []
        for name in groups[s]:
            t = read_table(Path(data_dir) / f"{name}.csv")
            sources[name] = t
            parts.append(recast_iid(t))
        if parts:
            tables[s] = concat(parts)
    return SplitData(tables, sources)
