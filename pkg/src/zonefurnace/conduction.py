"""Transient conduction: 1D through the furnace walls, 2D across each slab.

Both grids are vertex-centred finite volumes with half cells on the
boundaries, so that a boundary node temperature is the surface temperature.
The default time integrator is backward Euler; an explicit (FTCS) step is
available for small time steps and is rejected when it would lose positivity.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_banded
from scipy.sparse import csc_matrix, diags, lil_matrix
from scipy.sparse.linalg import splu

from .geometry import Material


class StabilityError(ValueError):
    pass


def _half_cell_widths(length: float, n: int) -> np.ndarray:
    dx = length / (n - 1)
    w = np.full(n, dx)
    w[0] = w[-1] = dx / 2
    return w


class Wall1D:
    """Homogeneous wall layer of thickness L. Node 0 is the exposed (furnace-side) face.

    Per unit area: capacity C_i = rho c w_i, conductance k/dx between
    neighbours, and convection ``h_out`` to ``t_amb`` at the back node.
    """

    def __init__(self, material: Material, n_nodes: int = 11, h_out: float = 10.0, t_amb: float = 298.15):
        if n_nodes < 2:
            raise ValueError("need at least two nodes")
        if material.thickness <= 0:
            raise ValueError("wall thickness must be positive")
        self.material = material
        self.n = n_nodes
        self.h_out = h_out
        self.t_amb = t_amb
        self.dx = material.thickness / (n_nodes - 1)
        self.cap = material.density * material.specific_heat * _half_cell_widths(material.thickness, n_nodes)
        g = material.conductivity / self.dx
        main = np.full(n_nodes, 2 * g)
        main[0] = g
        main[-1] = g + h_out
        self.k_main = main
        self.k_off = np.full(n_nodes - 1, -g)
        self._banded = {}

    def _ab(self, dt):
        ab = self._banded.get(dt)
        if ab is None:
            ab = np.zeros((3, self.n))
            ab[0, 1:] = self.k_off
            ab[1] = self.cap / dt + self.k_main
            ab[2, :-1] = self.k_off
            self._banded[dt] = ab
        return ab

    def stable_dt(self) -> float:
        return float(np.min(self.cap / self.k_main))

    def step(self, T, flux, dt: float, implicit: bool = True) -> np.ndarray:
        """Advance wall grids ``T`` (n_walls, n) under exposed-face fluxes ``flux`` (W/m^2)."""
        T = np.asarray(T, dtype=float)
        flux = np.asarray(flux, dtype=float)
        if not np.all(np.isfinite(flux)):
            raise ValueError("non-finite flux")
        b = np.zeros_like(T)
        b[:, 0] = flux
        b[:, -1] += self.h_out * self.t_amb
        if implicit:
            rhs = (self.cap / dt) * T + b
            return solve_banded((1, 1), self._ab(dt), rhs.T, check_finite=False).T
        if dt > self.stable_dt():
            raise StabilityError(f"explicit step dt={dt} exceeds the stability bound {self.stable_dt():.4g}")
        KT = self.k_main * T
        KT[:, 1:] += self.k_off * T[:, :-1]
        KT[:, :-1] += self.k_off * T[:, 1:]
        return T + dt * (b - KT) / self.cap


def step_conduction_1d(grid, flux, dt, material: Material, h_out: float = 0.0, t_amb: float = 298.15,
                       implicit: bool = True) -> np.ndarray:
    """One step for a single wall grid; ``flux`` is the exposed-face heat flux in W/m^2."""
    grid = np.asarray(grid, dtype=float)
    wall = Wall1D(material, grid.size, h_out, t_amb)
    return wall.step(grid[None, :], np.atleast_1d(flux), dt, implicit)[0]


class Slab2D:
    """Slab cross-section in the (length, height) plane, n x n nodes indexed [ix, iz].

    Face fluxes (W) arrive in surface order ``-x, +x, -y, +y, -z, +z``. The four
    in-plane faces are distributed over their boundary nodes by edge length; the
    two ``y`` end faces act as a uniform volumetric source.
    """

    def __init__(self, material: Material, size, n_nodes: int = 11):
        lx, ly, lz = (float(s) for s in size)
        self.material = material
        self.n = n_nodes
        self.size = (lx, ly, lz)
        wx = _half_cell_widths(lx, n_nodes)
        wz = _half_cell_widths(lz, n_nodes)
        self.wx, self.wz = wx, wz
        self.vol = np.outer(wx, wz) * ly  # node volumes
        rc = material.density * material.specific_heat
        self.cap = (rc * self.vol).ravel()
        kx = material.conductivity * ly / (lx / (n_nodes - 1))
        kz = material.conductivity * ly / (lz / (n_nodes - 1))
        n = n_nodes
        K = lil_matrix((n * n, n * n))
        for i in range(n):
            for j in range(n):
                p = i * n + j
                if i + 1 < n:
                    g = kx * wz[j]
                    q = (i + 1) * n + j
                    K[p, p] += g
                    K[q, q] += g
                    K[p, q] -= g
                    K[q, p] -= g
                if j + 1 < n:
                    g = kz * wx[i]
                    q = i * n + j + 1
                    K[p, p] += g
                    K[q, q] += g
                    K[p, q] -= g
                    K[q, p] -= g
        self.K = csc_matrix(K)
        # distribution of each in-plane face flux onto nodes (fractions sum to 1)
        dist = np.zeros((4, n, n))
        dist[0, 0, :] = wz / lz
        dist[1, -1, :] = wz / lz
        dist[2, :, 0] = wx / lx
        dist[3, :, -1] = wx / lx
        self.dist = dist.reshape(4, -1)
        self.vol_frac = (self.vol / self.vol.sum()).ravel()
        self._lu = {}

    def _factor(self, dt):
        lu = self._lu.get(dt)
        if lu is None:
            lu = splu(csc_matrix(diags(self.cap / dt) + self.K))
            self._lu[dt] = lu
        return lu

    def stable_dt(self) -> float:
        return float(np.min(self.cap / self.K.diagonal()))

    def sources(self, fluxes) -> np.ndarray:
        fluxes = np.asarray(fluxes, dtype=float)
        if not np.all(np.isfinite(fluxes)):
            raise ValueError("non-finite flux")
        inplane = fluxes[:, [0, 1, 4, 5]] @ self.dist
        ends = (fluxes[:, 2] + fluxes[:, 3])[:, None] * self.vol_frac[None, :]
        return inplane + ends

    def step(self, T, fluxes, dt: float, implicit: bool = True) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        m = T.shape[0]
        flat = T.reshape(m, -1)
        b = self.sources(fluxes)
        if implicit:
            rhs = (self.cap / dt) * flat + b
            out = self._factor(dt).solve(np.ascontiguousarray(rhs.T)).T
        else:
            if dt > self.stable_dt():
                raise StabilityError(f"explicit step dt={dt} exceeds the stability bound {self.stable_dt():.4g}")
            out = flat + dt * (b - (self.K @ flat.T).T) / self.cap
        return out.reshape(T.shape)

    def face_temperatures(self, T) -> np.ndarray:
        """(m, 6) face temperatures: in-plane faces by edge-weighted mean, end faces by volume mean."""
        T = np.asarray(T, dtype=float)
        m = T.shape[0]
        flat = T.reshape(m, -1)
        inplane = flat @ self.dist.T  # (m, 4)
        mean = flat @ self.vol_frac
        return np.column_stack([inplane[:, 0], inplane[:, 1], mean, mean, inplane[:, 2], inplane[:, 3]])


def step_conduction_2d(grid, fluxes, dt, material: Material, size, implicit: bool = True) -> np.ndarray:
    grid = np.asarray(grid, dtype=float)
    slab = Slab2D(material, size, grid.shape[0])
    return slab.step(grid[None], np.atleast_2d(fluxes), dt, implicit)[0]


@dataclass
class NodeTemperatures:
    walls: np.ndarray  # (n_furnace, N1), node 0 exposed
    slabs: np.ndarray  # (n_slabs, N2, N2)
    slab_model: Slab2D | None = field(default=None, repr=False)
    t: float = 0.0

    def surface_temperatures(self) -> np.ndarray:
        parts = [self.walls[:, 0]]
        if self.slabs.shape[0]:
            parts.append(self.slab_model.face_temperatures(self.slabs).ravel())
        return np.concatenate(parts)

    def copy(self) -> "NodeTemperatures":
        return NodeTemperatures(self.walls.copy(), self.slabs.copy(), self.slab_model, self.t)
