"""Weighted-sum-of-gray-gases weights and directed flux area assembly."""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True, eq=False)
class WsggCoefficients:
    """Polynomial weights a_n(T) = sum_i b[i, n] * T**i and gray-gas coefficients k_n.

    ``b`` has shape (L + 1, N_g); row i carries units of K^-i.
    """

    b: np.ndarray
    k: np.ndarray

    def __post_init__(self):
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        k = np.asarray(self.k, dtype=float).ravel()
        if b.shape[1] != k.size:
            raise ValueError(f"b has {b.shape[1]} gas columns but k has {k.size} entries")
        if b.shape[0] - 1 > k.size:
            raise ValueError("polynomial degree L must not exceed N_g")
        if np.any(k < 0):
            raise ValueError("absorption coefficients must be non-negative")
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "k", k)

    @property
    def n_gases(self) -> int:
        return self.k.size

    @property
    def degree(self) -> int:
        return self.b.shape[0] - 1

    def weights(self, T) -> np.ndarray:
        """a_n(T) for every gas; returns shape T.shape + (N_g,)."""
        T = np.asarray(T, dtype=float)
        out = np.zeros(T.shape + (self.n_gases,))
        for row in self.b[::-1]:  # Horner
            out = out * T[..., None] + row
        return out

    def weights_derivative(self, T) -> np.ndarray:
        T = np.asarray(T, dtype=float)
        out = np.zeros(T.shape + (self.n_gases,))
        L = self.degree
        for i in range(L, 0, -1):
            out = out * T[..., None] + i * self.b[i]
        return out

    def check(self, t_min=300.0, t_max=2200.0, delta=0.05, n=200) -> bool:
        """Warn when weights go negative or stop summing to ~1 on [t_min, t_max]."""
        a = self.weights(np.linspace(t_min, t_max, n))
        ok = True
        if np.any(a < 0):
            warnings.warn("WSGG weights negative on the validation range", stacklevel=2)
            ok = False
        s = a.sum(axis=1)
        if np.any(np.abs(s - 1.0) > delta):
            warnings.warn(f"WSGG weights sum outside 1 +/- {delta}", stacklevel=2)
            ok = False
        return ok

    def save(self, path) -> None:
        table = np.vstack([self.k, self.b])
        header = "WSGG coefficients: one column per gas; row 0 = k_n [1/m], rows 1..L+1 = b_{i+1,n} [K^-i]"
        np.savetxt(path, table, fmt="%.17g", header=header)

    @classmethod
    def load(cls, path) -> "WsggCoefficients":
        table = np.loadtxt(path, ndmin=2)
        if table.shape[0] < 2:
            raise ValueError(f"{path}: need a k row and at least one b row")
        return cls(b=table[1:], k=table[0])


def weight_coeff(T: float, coeffs: WsggCoefficients, n: int) -> float:
    if T <= 0:
        raise ValueError("temperature must be positive")
    if not 0 <= n < coeffs.n_gases:
        raise IndexError(n)
    acc = 0.0
    for bi in coeffs.b[::-1, n]:
        acc = acc * T + bi
    return float(acc)


def default_coefficients(n_gases: int = 6) -> WsggCoefficients:
    """Clear gas plus ``n_gases - 1`` gray gases; weights sum to one identically.

    Gray-gas weights share the shape w_n * (1 - 0.25 t + 0.025 t^2), t = T/1000 K,
    so the gray total falls from ~0.83 at 300 K to ~0.51 at 2200 K. These are
    documented defaults, not fitted to a particular fuel.
    """
    if n_gases < 2:
        raise ValueError("need at least one gray gas and the clear gas")
    n_gray = n_gases - 1
    k = np.concatenate([[0.0], np.geomspace(0.1, 10.0, n_gray)])
    w = np.linspace(1.5, 0.5, n_gray)
    w = 0.9 * w / w.sum()
    shape = np.array([1.0, -0.25e-3, 0.025e-6])
    b = np.zeros((3, n_gases))
    b[:, 1:] = shape[:, None] * w[None, :]
    b[:, 0] = -b[:, 1:].sum(axis=1)
    b[0, 0] += 1.0
    return WsggCoefficients(b=b, k=k)


@dataclass(frozen=True, eq=False)
class DfaSet:
    dGG: np.ndarray
    dGS: np.ndarray
    dSG: np.ndarray
    dSS: np.ndarray


def assemble_dfas(teas, tG, tS, coeffs: WsggCoefficients) -> DfaSet:
    """Weight each TEA slice by a_n at the emitter (column) temperature and sum over gases."""
    tG = np.asarray(tG, dtype=float)
    tS = np.asarray(tS, dtype=float)
    G, S = teas.GS.shape[:2]
    if tG.shape != (G,) or tS.shape != (S,):
        raise ValueError(f"temperature shapes {tG.shape}, {tS.shape} do not match TEAs ({G}, {S})")
    if teas.GG.shape[2] != coeffs.n_gases:
        raise ValueError("TEA gas count differs from WSGG gas count")
    if not (np.all(np.isfinite(tG)) and np.all(np.isfinite(tS))):
        raise ValueError("non-finite temperature")
    aG = coeffs.weights(tG)  # (G, Ng)
    aS = coeffs.weights(tS)
    return DfaSet(
        dGG=np.einsum("ijn,jn->ij", teas.GG, aG),
        dGS=np.einsum("ijn,jn->ij", teas.GS, aS),
        dSG=np.einsum("ijn,jn->ij", teas.SG, aG),
        dSS=np.einsum("ijn,jn->ij", teas.SS, aS),
    )


def assemble_dfas_batch(teas, tG, tS, coeffs: WsggCoefficients) -> DfaSet:
    """Per-sample DFAs for temperature batches of shape (B, G) and (B, S)."""
    aG = coeffs.weights(np.asarray(tG, dtype=float))  # (B, G, Ng)
    aS = coeffs.weights(np.asarray(tS, dtype=float))
    return DfaSet(
        dGG=np.einsum("ijn,bjn->bij", teas.GG, aG, optimize=True),
        dGS=np.einsum("ijn,bjn->bij", teas.GS, aS, optimize=True),
        dSG=np.einsum("ijn,bjn->bij", teas.SG, aG, optimize=True),
        dSS=np.einsum("ijn,bjn->bij", teas.SS, aS, optimize=True),
    )
