"""Mass-flow pattern and enthalpy transport between gas zones.

Each gas zone has six faces (order ``-x, +x, -y, +y, -z, +z``) and two flow
slots per face, an inflow and an outflow, giving 12 directed flows. Column
``2*f`` of ``F`` holds the inflow through face ``f`` (>= 0) and column
``2*f + 1`` the outflow (<= 0).

The model is plug flow along each length-wise lane towards the flue at the
charge end (x = 0), with a recirculation fraction ``rho`` that pushes part
of the stream back one zone. Burners inject through the boundary side faces
of their zone, and the lane leaves through the ``-x`` boundary face of its
first zone. Optionally a fixed fraction of each burner's flow leaves straight
through the roof face of its own zone (when that face is a boundary).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Enclosure


@dataclass(frozen=True)
class FlowParams:
    m_dot_max: float = 0.2  # kg/s per burner at full firing
    recirculation: float = 0.1
    cp: float = 1200.0  # J/kg/K
    t_in: float = 298.15  # K, temperature of injected reactants
    local_exhaust: float = 0.7  # fraction of each burner's flow leaving through its own roof face

    def __post_init__(self):
        if self.m_dot_max < 0 or self.cp <= 0 or self.t_in <= 0:
            raise ValueError("flow parameters must be positive")
        if not 0.0 <= self.local_exhaust <= 1.0:
            raise ValueError("local exhaust fraction must lie in [0, 1]")
        if not 0.0 <= self.recirculation < 1.0:
            raise ValueError("recirculation fraction must lie in [0, 1)")


@dataclass(frozen=True, eq=False)
class FlowPattern:
    F: np.ndarray  # (G, 12)
    injection: np.ndarray  # (G,) burner mass inflow, kg/s
    extraction: np.ndarray  # (G,) flue mass outflow, kg/s

    @property
    def inflow(self) -> np.ndarray:
        return self.F[:, 0::2]

    @property
    def outflow(self) -> np.ndarray:
        return -self.F[:, 1::2]

    def flat(self) -> np.ndarray:
        return self.F.ravel()


def burner_mass_flows(f, enclosure: Enclosure, params: FlowParams) -> np.ndarray:
    """Injected mass per gas zone for firing rates ``f`` (one per control zone)."""
    f = np.asarray(f, dtype=float)
    if np.any(f < 0) or np.any(f > 1):
        raise ValueError("firing rates must lie in [0, 1]")
    m = np.zeros(enclosure.n_gas)
    for c, g in enclosure.spec.burners:
        m[g] += f[c] * params.m_dot_max
    return m


def _injection_faces(enclosure: Enclosure, g: int) -> list[int]:
    bnd = enclosure.boundary_faces[g]
    for group in ((2, 3), (4, 5), (1,)):
        faces = [f for f in group if bnd[f]]
        if faces:
            return faces
    return [0]


def flow_pattern(f, enclosure: Enclosure, params: FlowParams) -> FlowPattern:
    G = enclosure.n_gas
    n_l = enclosure.spec.n_l
    inj = burner_mass_flows(f, enclosure, params)
    F = np.zeros((G, 12))
    ext = np.zeros(G)
    rho = params.recirculation
    for lane_start in range(0, G, n_l):
        lane = np.arange(lane_start, lane_start + n_l)
        roof = np.zeros(n_l)
        for il, g in enumerate(lane):
            if inj[g] > 0 and enclosure.boundary_faces[g, 5]:
                roof[il] = params.local_exhaust * inj[g]
        # net forward flow crossing the -x face of each zone = lane injection at or downstream of it
        carried = np.cumsum((inj[lane] - roof)[::-1])[::-1]
        for il, g in enumerate(lane):
            if inj[g] > 0:
                faces = _injection_faces(enclosure, g)
                for face in faces:
                    F[g, 2 * face] += inj[g] / len(faces)
            if roof[il] > 0:
                F[g, 11] -= roof[il]
                ext[g] += roof[il]
            m = carried[il]
            if m == 0:
                continue
            if il == 0:
                F[g, 1] -= m
                ext[g] += m
            else:
                up = lane[il - 1]
                fwd, back = (1.0 + rho) * m, rho * m
                F[g, 1] -= fwd  # out through -x
                F[up, 2] += fwd  # in through +x of the upstream zone
                F[up, 3] -= back  # recirculation out through +x
                F[g, 0] += back  # and back in through -x
    return FlowPattern(F=F, injection=inj, extraction=ext)


@dataclass(frozen=True, eq=False)
class EnthalpyOperator:
    """Upwind enthalpy transport as an affine map q = M @ T_g + q0 (W)."""

    M: np.ndarray  # (G, G) W/K
    q0: np.ndarray  # (G,) W, boundary inflow at the inlet temperature

    def __call__(self, tG) -> np.ndarray:
        return self.M @ tG + self.q0

    def magnitude(self, tG) -> np.ndarray:
        """Sum of absolute transported enthalpy per zone, for tolerances."""
        return np.abs(self.M) @ np.abs(tG) + np.abs(self.q0)

    def __add__(self, other: "EnthalpyOperator") -> "EnthalpyOperator":
        return EnthalpyOperator(self.M + other.M, self.q0 + other.q0)


def enthalpy_operator(fp: FlowPattern, enclosure: Enclosure, params: FlowParams) -> EnthalpyOperator:
    G = enclosure.n_gas
    nb = enclosure.neighbors
    inflow = fp.inflow
    M = np.zeros((G, G))
    q0 = np.zeros(G)
    for i in range(G):
        for f in range(6):
            m = inflow[i, f]
            if m == 0:
                continue
            if nb[i, f] >= 0:
                M[i, nb[i, f]] += m
            else:
                q0[i] += m * params.t_in
    M[np.diag_indices(G)] -= fp.outflow.sum(axis=1)
    return EnthalpyOperator(params.cp * M, params.cp * q0)


def enthalpy(fp: FlowPattern, tG, enclosure: Enclosure, params: FlowParams) -> np.ndarray:
    """q_i = sum of inflow * cp * T_donor - outflow * cp * T_i, in W.

    Boundary inflow arrives at ``params.t_in``.
    """
    tG = np.asarray(tG, dtype=float)
    if tG.shape != (enclosure.n_gas,):
        raise ValueError("tG length differs from the gas-zone count")
    if not np.all(np.isfinite(tG)):
        raise ValueError("non-finite gas temperature")
    return enthalpy_operator(fp, enclosure, params)(tG)
