"""Zoned box enclosure: gas zones, furnace-wall surfaces and slab surfaces.

Axes: x runs along the furnace length (charge end at x=0, discharge end at
x=length), y across the width, z up. Gas zones are the cells of an
n_l x n_w x n_h grid; the flat gas index is ``(iw * n_h + ih) * n_l + il``
so that consecutive indices walk along the length.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass, field
from functools import cached_property

import numpy as np

# Face order used for gas-zone flow faces and slab surfaces.
FACE_NAMES = ("-x", "+x", "-y", "+y", "-z", "+z")
# Furnace walls: (name, axis, side, inward normal sign).
WALLS = (
    ("floor", 2, 0),
    ("roof", 2, 1),
    ("side_y0", 1, 0),
    ("side_y1", 1, 1),
    ("charge_end", 0, 0),
    ("discharge_end", 0, 1),
)


class GeometryError(ValueError):
    pass


@dataclass(frozen=True)
class Material:
    conductivity: float  # W/m/K
    density: float  # kg/m^3
    specific_heat: float  # J/kg/K
    emissivity: float
    thickness: float = 0.0  # m, walls only

    def __post_init__(self):
        if not 0.0 < self.emissivity <= 1.0:
            raise GeometryError(f"emissivity must lie in (0, 1], got {self.emissivity}")
        if min(self.conductivity, self.density, self.specific_heat) <= 0:
            raise GeometryError("material properties must be positive")
        if self.thickness < 0:
            raise GeometryError("thickness must be non-negative")

    @property
    def diffusivity(self) -> float:
        return self.conductivity / (self.density * self.specific_heat)


REFRACTORY = Material(conductivity=1.2, density=2100.0, specific_heat=1000.0, emissivity=0.8, thickness=0.3)
STEEL = Material(conductivity=30.0, density=7850.0, specific_heat=650.0, emissivity=0.85)


@dataclass(frozen=True)
class EnclosureSpec:
    """Dimensions and discretisation of a box furnace with box slabs.

    ``slab_size`` is (along length, across width, height). Slabs sit on the
    walking beams at ``slab_elevation`` above the hearth and are spaced
    evenly along the length, one per pitch cell of length ``length / n_slabs``.
    ``burners`` lists (control zone, gas zone) for every burner; two burners
    of the same control zone share one firing rate.
    """

    length: float
    width: float
    height: float
    n_w: int
    n_h: int
    n_l: int
    n_slabs: int = 0
    slab_size: tuple[float, float, float] = (0.4, 1.6, 0.2)
    slab_elevation: float = 0.3
    burners: tuple[tuple[int, int], ...] = ()
    wall: Material = REFRACTORY
    slab: Material = STEEL

    @property
    def n_gas(self) -> int:
        return self.n_w * self.n_h * self.n_l

    @property
    def n_control(self) -> int:
        return 1 + max((c for c, _ in self.burners), default=-1)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["slab_size"] = list(self.slab_size)
        d["burners"] = [list(b) for b in self.burners]
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnclosureSpec":
        d = dict(d)
        known = {f for f in cls.__dataclass_fields__}
        unknown = set(d) - known
        if unknown:
            raise GeometryError(f"unknown enclosure keys: {sorted(unknown)}")
        if "slab_size" in d:
            d["slab_size"] = tuple(float(v) for v in d["slab_size"])
        if "burners" in d:
            d["burners"] = tuple((int(c), int(g)) for c, g in d["burners"])
        for key in ("wall", "slab"):
            if key in d and isinstance(d[key], dict):
                d[key] = Material(**d[key])
        return cls(**d)


def default_spec() -> EnclosureSpec:
    """Full-size furnace: 1 x 2 x 12 sections, 17 slabs, three control zones."""
    upper = 12  # first gas index of the upper layer
    burners = ((0, upper + 5), (0, upper + 5), (1, upper + 8), (1, upper + 8), (2, upper + 11), (2, upper + 11))
    return EnclosureSpec(
        length=12.0, width=2.4, height=2.0, n_w=1, n_h=2, n_l=12,
        n_slabs=17, slab_size=(0.4, 2.0, 0.2), slab_elevation=0.3, burners=burners,
    )


def desk_scale_spec() -> EnclosureSpec:
    """Reduced furnace used by the fast tests: 1 x 2 x 3 sections, 2 slabs."""
    burners = ((0, 3), (0, 3), (1, 4), (1, 4), (2, 5), (2, 5))
    return EnclosureSpec(
        length=6.0, width=2.0, height=2.0, n_w=1, n_h=2, n_l=3,
        n_slabs=2, slab_size=(0.4, 1.6, 0.2), slab_elevation=0.3, burners=burners,
    )


@dataclass(frozen=True, eq=False)
class Enclosure:
    spec: EnclosureSpec
    x_edges: np.ndarray
    y_edges: np.ndarray
    z_edges: np.ndarray
    gas_bounds: np.ndarray  # (G, 2, 3) min / max corners
    gas_volumes: np.ndarray  # (G,)
    # surfaces: furnace walls first, then obstacles
    surf_axis: np.ndarray  # (S,) axis of the surface normal
    surf_coord: np.ndarray  # (S,) coordinate of the plane along surf_axis
    surf_lo: np.ndarray  # (S, 3) rectangle min corner
    surf_hi: np.ndarray  # (S, 3) rectangle max corner
    surf_normal: np.ndarray  # (S, 3) unit normal pointing into the gas
    surf_area: np.ndarray
    surf_emissivity: np.ndarray
    surf_parent: np.ndarray  # wall id (0..5) or slab id
    surf_gas_zone: np.ndarray  # gas zone adjacent to each surface
    n_furnace: int
    slab_bounds: np.ndarray  # (n_slabs, 2, 3)
    neighbors: np.ndarray  # (G, 6) neighbouring gas zone per face, -1 on the boundary
    face_areas: np.ndarray  # (G, 6)
    wall_face_lookup: np.ndarray = field(repr=False)  # (6, a, b) -> surface index

    @property
    def n_gas(self) -> int:
        return len(self.gas_volumes)

    @property
    def n_surf(self) -> int:
        return len(self.surf_area)

    @property
    def n_obstacle(self) -> int:
        return self.n_surf - self.n_furnace

    @property
    def n_slabs(self) -> int:
        return len(self.slab_bounds)

    @cached_property
    def boundary_faces(self) -> np.ndarray:
        return self.neighbors < 0

    @cached_property
    def gas_centers(self) -> np.ndarray:
        return self.gas_bounds.mean(axis=1)

    @cached_property
    def emission_areas(self) -> np.ndarray:
        """A_i * eps_i per surface."""
        return self.surf_area * self.surf_emissivity

    def gas_index(self, il: int, iw: int, ih: int) -> int:
        s = self.spec
        return (iw * s.n_h + ih) * s.n_l + il

    def locate(self, point) -> int:
        """Gas zone containing ``point`` (points on a shared face go to the upper cell)."""
        s = self.spec
        il = _cell(self.x_edges, point[0], s.n_l)
        iw = _cell(self.y_edges, point[1], s.n_w)
        ih = _cell(self.z_edges, point[2], s.n_h)
        return self.gas_index(il, iw, ih)

    def summary(self) -> dict:
        return {
            "n_gas": self.n_gas,
            "n_surf": self.n_surf,
            "n_furnace": self.n_furnace,
            "n_obstacle": self.n_obstacle,
            "n_slabs": self.n_slabs,
            "gas_volumes": self.gas_volumes.tolist(),
            "surf_areas": self.surf_area.tolist(),
            "surf_emissivity": self.surf_emissivity.tolist(),
            "surf_gas_zone": self.surf_gas_zone.tolist(),
            "spec": self.spec.to_dict(),
        }

    def to_json(self, path) -> None:
        with open(path, "w") as fh:
            json.dump(self.summary(), fh, indent=2)


def _cell(edges, v, n):
    i = int(np.searchsorted(edges, v, side="right")) - 1
    return min(max(i, 0), n - 1)


def _box_overlap(a_lo, a_hi, b_lo, b_hi) -> float:
    d = np.minimum(a_hi, b_hi) - np.maximum(a_lo, b_lo)
    return float(np.prod(np.clip(d, 0.0, None)))


def _validate(spec: EnclosureSpec) -> None:
    if min(spec.length, spec.width, spec.height) <= 0:
        raise GeometryError("enclosure dimensions must be positive")
    if min(spec.n_w, spec.n_h, spec.n_l) < 1:
        raise GeometryError("section counts must be >= 1")
    if spec.n_slabs < 0:
        raise GeometryError("slab count must be non-negative")
    for c, g in spec.burners:
        if not 0 <= g < spec.n_gas:
            raise GeometryError(f"burner gas zone {g} outside 0..{spec.n_gas - 1}")
        if c < 0:
            raise GeometryError("control zone index must be non-negative")
    if spec.n_slabs:
        lx, ly, lz = spec.slab_size
        if min(lx, ly, lz) <= 0:
            raise GeometryError("slab dimensions must be positive")
        pitch = spec.length / spec.n_slabs
        if lx >= pitch or ly >= spec.width:
            raise GeometryError("slab footprint exceeds the enclosure footprint")
        if spec.slab_elevation <= 0 or spec.slab_elevation + lz >= spec.height:
            raise GeometryError("slab does not fit between hearth and roof")


def build_enclosure(spec: EnclosureSpec) -> Enclosure:
    _validate(spec)
    n_l, n_w, n_h = spec.n_l, spec.n_w, spec.n_h
    xe = np.linspace(0.0, spec.length, n_l + 1)
    ye = np.linspace(0.0, spec.width, n_w + 1)
    ze = np.linspace(0.0, spec.height, n_h + 1)
    G = spec.n_gas

    # slabs, centred in their pitch cell and across the width
    slab_bounds = np.zeros((spec.n_slabs, 2, 3))
    if spec.n_slabs:
        lx, ly, lz = spec.slab_size
        pitch = spec.length / spec.n_slabs
        for k in range(spec.n_slabs):
            cx = (k + 0.5) * pitch
            lo = np.array([cx - lx / 2, (spec.width - ly) / 2, spec.slab_elevation])
            slab_bounds[k] = (lo, lo + np.array([lx, ly, lz]))

    gas_bounds = np.zeros((G, 2, 3))
    neighbors = -np.ones((G, 6), dtype=np.int64)
    face_areas = np.zeros((G, 6))
    for iw in range(n_w):
        for ih in range(n_h):
            for il in range(n_l):
                g = (iw * n_h + ih) * n_l + il
                lo = np.array([xe[il], ye[iw], ze[ih]])
                hi = np.array([xe[il + 1], ye[iw + 1], ze[ih + 1]])
                gas_bounds[g] = (lo, hi)
                dx, dy, dz = hi - lo
                face_areas[g] = (dy * dz, dy * dz, dx * dz, dx * dz, dx * dy, dx * dy)
                idx = (il, iw, ih)
                for f in range(6):
                    axis, step = f // 2, (-1 if f % 2 == 0 else 1)
                    nb = list(idx)
                    nb[axis] += step
                    lim = (n_l, n_w, n_h)[axis]
                    if 0 <= nb[axis] < lim:
                        neighbors[g, f] = (nb[1] * n_h + nb[2]) * n_l + nb[0]

    volumes = np.array([np.prod(hi - lo) for lo, hi in gas_bounds])
    for lo_s, hi_s in slab_bounds:
        for g in range(G):
            volumes[g] -= _box_overlap(gas_bounds[g, 0], gas_bounds[g, 1], lo_s, hi_s)

    axis_l, coord_l, lo_l, hi_l, normal_l, parent_l, zone_l = [], [], [], [], [], [], []
    # wall_face_lookup[wall, a, b]: (a, b) are the cell indices of the two
    # in-plane axes in increasing axis order
    lookup = -np.ones((6, max(n_l, n_w), max(n_w, n_h)), dtype=np.int64)
    counts = (n_l, n_w, n_h)
    edges = (xe, ye, ze)
    top = (spec.length, spec.width, spec.height)
    for wall_id, (_, axis, side) in enumerate(WALLS):
        ax_a, ax_b = [a for a in range(3) if a != axis]
        cells = []
        for iw in range(n_w):
            for ih in range(n_h):
                for il in range(n_l):
                    idx = (il, iw, ih)
                    if idx[axis] == (0 if side == 0 else counts[axis] - 1):
                        cells.append(idx)
        for idx in cells:  # already in gas-index order
            lo = np.array([edges[a][idx[a]] for a in range(3)])
            hi = np.array([edges[a][idx[a] + 1] for a in range(3)])
            c = 0.0 if side == 0 else top[axis]
            lo[axis] = hi[axis] = c
            n = np.zeros(3)
            n[axis] = 1.0 if side == 0 else -1.0
            lookup[wall_id, idx[ax_a], idx[ax_b]] = len(axis_l)
            axis_l.append(axis)
            coord_l.append(c)
            lo_l.append(lo)
            hi_l.append(hi)
            normal_l.append(n)
            parent_l.append(wall_id)
            zone_l.append((idx[1] * n_h + idx[2]) * n_l + idx[0])
    n_furnace = len(axis_l)

    for k, (lo_s, hi_s) in enumerate(slab_bounds):
        for f in range(6):
            axis, side = f // 2, f % 2
            lo, hi = lo_s.copy(), hi_s.copy()
            c = lo_s[axis] if side == 0 else hi_s[axis]
            lo[axis] = hi[axis] = c
            n = np.zeros(3)
            n[axis] = -1.0 if side == 0 else 1.0
            centre = (lo + hi) / 2 + 1e-6 * n
            axis_l.append(axis)
            coord_l.append(c)
            lo_l.append(lo)
            hi_l.append(hi)
            normal_l.append(n)
            parent_l.append(k)
            zone_l.append(
                (_cell(ye, centre[1], n_w) * n_h + _cell(ze, centre[2], n_h)) * n_l + _cell(xe, centre[0], n_l)
            )

    lo_a, hi_a = np.array(lo_l), np.array(hi_l)
    span = hi_a - lo_a
    axis_a = np.array(axis_l, dtype=np.int64)
    area = np.array([np.prod(np.delete(span[i], axis_a[i])) for i in range(len(axis_a))])
    eps = np.concatenate([
        np.full(n_furnace, spec.wall.emissivity),
        np.full(len(axis_a) - n_furnace, spec.slab.emissivity),
    ])
    enc = Enclosure(
        spec=spec, x_edges=xe, y_edges=ye, z_edges=ze,
        gas_bounds=gas_bounds, gas_volumes=volumes,
        surf_axis=axis_a, surf_coord=np.array(coord_l), surf_lo=lo_a, surf_hi=hi_a,
        surf_normal=np.array(normal_l), surf_area=area, surf_emissivity=eps,
        surf_parent=np.array(parent_l, dtype=np.int64), surf_gas_zone=np.array(zone_l, dtype=np.int64),
        n_furnace=n_furnace, slab_bounds=slab_bounds, neighbors=neighbors, face_areas=face_areas,
        wall_face_lookup=lookup,
    )
    if np.any(enc.gas_volumes <= 0) or np.any(enc.surf_area <= 0):
        raise GeometryError("degenerate zone (non-positive volume or area)")
    for a in (enc.gas_volumes, enc.surf_area, enc.surf_normal):
        a.setflags(write=False)
    return enc
