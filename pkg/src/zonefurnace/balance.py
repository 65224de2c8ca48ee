"""Zone energy balances: gas (EBV) and surface (EBS) residuals and the gas-temperature solve."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .geometry import Enclosure
from .wsgg import DfaSet, WsggCoefficients, assemble_dfas

SIGMA = 5.6687e-08  # W/m^2/K^4


class SolverError(RuntimeError):
    def __init__(self, msg, residual=np.nan, iterations=0):
        super().__init__(msg)
        self.residual = residual
        self.iterations = iterations


@dataclass(frozen=True, eq=False)
class ZoneConstants:
    Qconv: np.ndarray  # (G,) W, convective loss of each gas zone
    Qfuel: np.ndarray  # (G,) W, net fuel heat release
    Qa: np.ndarray  # (G,) W, sensible heat of preheated air
    qconv: np.ndarray  # (S,) W/m^2, convective flux into each surface

    def source(self, q) -> np.ndarray:
        """h_g = -Qconv + Qfuel + Qa + q."""
        return -self.Qconv + self.Qfuel + self.Qa + np.asarray(q, dtype=float)

    @classmethod
    def zeros(cls, enclosure: Enclosure) -> "ZoneConstants":
        G, S = enclosure.n_gas, enclosure.n_surf
        return cls(np.zeros(G), np.zeros(G), np.zeros(G), np.zeros(S))


def convection_terms(tG, tS, enclosure: Enclosure, h: float) -> tuple[np.ndarray, np.ndarray]:
    """Constant-coefficient convection between each surface and its adjacent gas zone.

    Returns (Qconv per gas zone in W, qconv per surface in W/m^2); the gas loss
    equals the summed surface gain exactly.
    """
    tG = np.asarray(tG, dtype=float)
    tS = np.asarray(tS, dtype=float)
    qconv = h * (tG[enclosure.surf_gas_zone] - tS)
    Qconv = np.bincount(enclosure.surf_gas_zone, weights=enclosure.surf_area * qconv, minlength=enclosure.n_gas)
    return Qconv, qconv


def convection_operator(tS, enclosure: Enclosure, h: float):
    """-Qconv(T_g) as an affine map in the gas temperatures at fixed surface temperatures."""
    from .flow import EnthalpyOperator

    tS = np.asarray(tS, dtype=float)
    G = enclosure.n_gas
    zone = enclosure.surf_gas_zone
    hA = h * enclosure.surf_area
    M = -np.diag(np.bincount(zone, weights=hA, minlength=G))
    q0 = np.bincount(zone, weights=hA * tS, minlength=G)
    return EnthalpyOperator(M, q0)


def _check(tG, tS, dfa: DfaSet):
    tG = np.asarray(tG, dtype=float)
    tS = np.asarray(tS, dtype=float)
    if dfa.dGG.shape != (tG.size, tG.size) or dfa.dSS.shape != (tS.size, tS.size):
        raise ValueError("temperature vectors do not match the DFA dimensions")
    return tG, tS


def gas_absorptivity(tG, coeffs: WsggCoefficients) -> np.ndarray:
    """Sum_n a_n(T) k_n, the weighted absorption coefficient (1/m)."""
    return coeffs.weights(tG) @ coeffs.k


def ebv_residual(tG, tS, dfa: DfaSet, q, consts: ZoneConstants, coeffs: WsggCoefficients,
                 enclosure: Enclosure) -> np.ndarray:
    tG, tS = _check(tG, tS, dfa)
    eg = SIGMA * tG**4
    es = SIGMA * tS**4
    leave = 4.0 * gas_absorptivity(tG, coeffs) * enclosure.gas_volumes * eg
    return dfa.dGG @ eg + dfa.dGS @ es - leave + consts.source(q)


def ebv_scale(tG, tS, dfa: DfaSet, q, consts: ZoneConstants, coeffs: WsggCoefficients,
              enclosure: Enclosure) -> np.ndarray:
    """Per-zone magnitude of the balance terms, used for relative tolerances."""
    eg = SIGMA * np.asarray(tG, dtype=float) ** 4
    es = SIGMA * np.asarray(tS, dtype=float) ** 4
    leave = 4.0 * gas_absorptivity(tG, coeffs) * enclosure.gas_volumes * eg
    src = np.abs(consts.Qconv) + np.abs(consts.Qfuel) + np.abs(consts.Qa) + np.abs(q)
    return dfa.dGG @ eg + dfa.dGS @ es + leave + src


def ebv_jacobian_u(tG, tS, teas, coeffs: WsggCoefficients, enclosure: Enclosure) -> np.ndarray:
    """d v_g / d u with u = T_g^4, DFAs refreshed at ``tG`` (gas emitters) and ``tS``."""
    tG = np.asarray(tG, dtype=float)
    return ebv_jacobian(tG, tS, teas, coeffs, enclosure) / (4.0 * tG**3)[None, :]


def ebv_jacobian(tG, tS, teas, coeffs: WsggCoefficients, enclosure: Enclosure) -> np.ndarray:
    """d v_g / d T_g of ``ebv_residual(tG, tS, assemble_dfas(teas, tG, tS), ...)``.

    Includes the temperature derivative of the WSGG weights both in the gas
    emission columns of dGG and in the leaving term.
    """
    tG = np.asarray(tG, dtype=float)
    a = coeffs.weights(tG)  # (G, Ng)
    da = coeffs.weights_derivative(tG)
    de = SIGMA * (da * tG[:, None] ** 4 + 4.0 * a * tG[:, None] ** 3)  # d(a_n sigma T^4)/dT
    J = np.einsum("ijn,jn->ij", teas.GG, de)
    A = a @ coeffs.k
    dA = da @ coeffs.k
    J[np.diag_indices_from(J)] -= 4.0 * SIGMA * enclosure.gas_volumes * (dA * tG**4 + 4.0 * A * tG**3)
    return J


def solve_gas_temperatures(tS, teas, q, consts: ZoneConstants, coeffs: WsggCoefficients, enclosure: Enclosure,
                           tG0, rtol: float = 1e-8, max_iter: int = 50,
                           diagnostics: dict | None = None) -> np.ndarray:
    """Damped Newton on u = T_g^4 for v_g = 0 at fixed surface temperatures.

    ``q`` is either a fixed enthalpy vector or an affine operator in T_g (see
    ``flow.EnthalpyOperator``); an operator lets transport and convection
    follow the unknown gas temperatures.

    The DFAs are reassembled at every iterate (gas-emitter weights follow the
    current gas temperatures, surface-emitter weights stay at ``tS``), and the
    Jacobian includes the weight derivatives, so convergence is quadratic.
    Returns a state with ``|v_g| <= rtol * ebv_scale`` in every zone.
    """
    tS = np.asarray(tS, dtype=float)
    T = np.asarray(tG0, dtype=float).copy()
    if np.any(T <= 0):
        raise ValueError("initial gas temperatures must be positive")
    clipped = False
    u_floor = 1.0  # (1 K)^4

    implicit_q = callable(q)

    def resid(T):
        dfa = assemble_dfas(teas, T, tS, coeffs)
        qT = q(T) if implicit_q else q
        v = ebv_residual(T, tS, dfa, qT, consts, coeffs, enclosure)
        # the net source alone sets the scale, so the bound also holds when the
        # source is later split into its separate terms
        return v, ebv_scale(T, tS, dfa, qT, consts, coeffs, enclosure)

    v, scale = resid(T)
    it = 0
    while True:
        ratio = float(np.max(np.abs(v) / scale))
        if ratio <= rtol:
            break
        if it >= max_iter:
            raise SolverError(f"gas solve did not converge: residual ratio {ratio:.3e}", ratio, it)
        it += 1
        u = T**4
        J = ebv_jacobian_u(T, tS, teas, coeffs, enclosure)
        if implicit_q:
            J = J + q.M / (4.0 * T**3)[None, :]
        du = np.linalg.solve(J, -v)
        step = 1.0
        while True:
            un = u + step * du
            if np.any(un < u_floor):
                clipped = True
                un = np.maximum(un, u_floor)
            Tn = un**0.25
            vn, sn = resid(Tn)
            if np.max(np.abs(vn) / sn) < ratio or step < 1e-4:
                break
            step *= 0.5
        T, v, scale = Tn, vn, sn
    if diagnostics is not None:
        diagnostics.update(iterations=it, residual=ratio, clipped=clipped)
    return T


def surface_flux(tG, tS, dfa: DfaSet, consts: ZoneConstants, enclosure: Enclosure) -> np.ndarray:
    """Net heat flow into each surface (W): incoming radiation minus emission plus convection."""
    tG, tS = _check(tG, tS, dfa)
    es = SIGMA * tS**4
    return (dfa.dSS @ es + dfa.dSG @ (SIGMA * tG**4) - enclosure.emission_areas * es
            + enclosure.surf_area * consts.qconv)


def ebs_residual(tG, tS, dfa: DfaSet, consts: ZoneConstants, enclosure: Enclosure, Q_s) -> np.ndarray:
    return surface_flux(tG, tS, dfa, consts, enclosure) - np.asarray(Q_s, dtype=float)


def update_surface_temperatures(nodes) -> np.ndarray:
    """Surface temperatures read from the exposed faces of the conduction grids."""
    return nodes.surface_temperatures()
