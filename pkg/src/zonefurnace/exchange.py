"""Total exchange areas by Monte-Carlo ray tracing, plus conservation enforcement and archive I/O."""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

import numpy as np
from numba import njit

from .geometry import Enclosure

MAGIC = b"ZTEA"
VERSION = 1
_HEADER = struct.Struct("<4sIIIIQQ32s")
MAX_BOUNCES = 1000


class ExchangeError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class ExchangeAreaSet:
    GG: np.ndarray  # (G, G, Ng)
    GS: np.ndarray  # (G, S, Ng)
    SG: np.ndarray  # (S, G, Ng)
    SS: np.ndarray  # (S, S, Ng)
    k: np.ndarray  # (Ng,)
    ray_count: int
    seed: int

    @property
    def n_gas(self) -> int:
        return self.GG.shape[0]

    @property
    def n_surf(self) -> int:
        return self.SS.shape[0]

    @property
    def n_gases(self) -> int:
        return self.k.size

    def full(self, n: int) -> np.ndarray:
        """Block matrix [[GG, GS], [SG, SS]] of gas slice ``n``."""
        return np.block([[self.GG[:, :, n], self.GS[:, :, n]], [self.SG[:, :, n], self.SS[:, :, n]]])


def emitted_power(enclosure: Enclosure, k) -> np.ndarray:
    """Row-sum targets per slice: 4 k_n V_i for gas zones, A_i eps_i for surfaces. Shape (G+S, Ng)."""
    k = np.asarray(k, dtype=float)
    gas = 4.0 * enclosure.gas_volumes[:, None] * k[None, :]
    surf = np.repeat(enclosure.emission_areas[:, None], k.size, axis=1)
    return np.vstack([gas, surf])


def conservation_residual(teas: ExchangeAreaSet, enclosure: Enclosure) -> float:
    """Largest relative row-sum error over all slices (rows with zero target skipped)."""
    target = emitted_power(enclosure, teas.k)
    worst = 0.0
    for n in range(teas.n_gases):
        rows = teas.full(n).sum(axis=1)
        mask = target[:, n] > 0
        if np.any(~mask) and np.any(rows[~mask] != 0):
            worst = max(worst, np.inf)
        if np.any(mask):
            worst = max(worst, float(np.max(np.abs(rows[mask] - target[mask, n]) / target[mask, n])))
    return worst


def reciprocity_residual(teas: ExchangeAreaSet) -> float:
    worst = 0.0
    for n in range(teas.n_gases):
        M = teas.full(n)
        scale = max(float(np.abs(M).max()), 1e-300)
        worst = max(worst, float(np.abs(M - M.T).max()) / scale)
    return worst


@njit(cache=True)
def _cell_of(v, edges, n):
    for i in range(n):
        if v < edges[i + 1]:
            return i
    return n - 1


@njit(cache=True)
def _trace_one(p, d, cell, k, xe, ye, ze, slabs, wall_lookup, n_furnace, surf_eps, max_bounces):
    """Follow one ray until absorption; returns absorber index (gas < G, surfaces offset by G)."""
    n_l = xe.size - 1
    n_w = ye.size - 1
    n_h = ze.size - 1
    G = n_l * n_w * n_h
    tau = -np.log(1.0 - np.random.random()) if k > 0 else np.inf
    n_slabs = slabs.shape[0]
    bounces = 0
    while True:
        # distance to the exit of the current cell
        t_cell = np.inf
        ax_cell = -1
        for a in range(3):
            if a == 0:
                lo, hi = xe[cell[0]], xe[cell[0] + 1]
            elif a == 1:
                lo, hi = ye[cell[1]], ye[cell[1] + 1]
            else:
                lo, hi = ze[cell[2]], ze[cell[2] + 1]
            if d[a] > 0:
                t = (hi - p[a]) / d[a]
            elif d[a] < 0:
                t = (lo - p[a]) / d[a]
            else:
                t = np.inf
            if t < t_cell:
                t_cell = t
                ax_cell = a
        if t_cell < 0:
            t_cell = 0.0
        # nearest slab entry
        t_slab = np.inf
        hit_slab = -1
        hit_face = -1
        for s in range(n_slabs):
            t0 = -np.inf
            t1 = np.inf
            ent = -1
            miss = False
            for a in range(3):
                lo = slabs[s, 0, a]
                hi = slabs[s, 1, a]
                if d[a] == 0.0:
                    if p[a] <= lo or p[a] >= hi:
                        miss = True
                        break
                    continue
                ta = (lo - p[a]) / d[a]
                tb = (hi - p[a]) / d[a]
                if ta > tb:
                    ta, tb = tb, ta
                if ta > t0:
                    t0 = ta
                    ent = a
                if tb < t1:
                    t1 = tb
            if miss or ent < 0 or t0 > t1 or t0 <= 1e-12:
                continue
            if t0 < t_slab:
                t_slab = t0
                hit_slab = s
                hit_face = 2 * ent + (0 if d[ent] > 0 else 1)
        t_step = min(t_cell, t_slab)
        g = (cell[1] * n_h + cell[2]) * n_l + cell[0]
        if k * t_step >= tau:
            return g
        tau -= k * t_step
        for a in range(3):
            p[a] += t_step * d[a]
        if t_slab <= t_cell:
            sidx = n_furnace + 6 * hit_slab + hit_face
            axis = hit_face // 2
            nsign = -1.0 if hit_face % 2 == 0 else 1.0
            p[axis] = slabs[hit_slab, hit_face % 2, axis]
        else:
            a = ax_cell
            step = 1 if d[a] > 0 else -1
            lim = n_l if a == 0 else (n_w if a == 1 else n_h)
            nxt = cell[a] + step
            edges = xe if a == 0 else (ye if a == 1 else ze)
            p[a] = edges[cell[a] + (1 if step > 0 else 0)]
            if 0 <= nxt < lim:
                cell[a] = nxt
                continue
            side = 1 if step > 0 else 0
            if a == 0:
                wall = 4 + side
                ia, ib = cell[1], cell[2]
            elif a == 1:
                wall = 2 + side
                ia, ib = cell[0], cell[2]
            else:
                wall = side
                ia, ib = cell[0], cell[1]
            sidx = wall_lookup[wall, ia, ib]
            axis = a
            nsign = -1.0 if side == 1 else 1.0
        # surface interaction
        bounces += 1
        if np.random.random() < surf_eps[sidx] or bounces >= max_bounces:
            return G + sidx
        _cosine_direction(d, axis, nsign)


@njit(cache=True)
def _cosine_direction(d, axis, nsign):
    u = np.random.random()
    phi = 2.0 * np.pi * np.random.random()
    r = np.sqrt(u)
    t1 = (axis + 1) % 3
    t2 = (axis + 2) % 3
    d[axis] = nsign * np.sqrt(max(1.0 - u, 0.0))
    d[t1] = r * np.cos(phi)
    d[t2] = r * np.sin(phi)


@njit(cache=True)
def _inside_slab(p, slabs):
    for s in range(slabs.shape[0]):
        inside = True
        for a in range(3):
            if p[a] <= slabs[s, 0, a] or p[a] >= slabs[s, 1, a]:
                inside = False
                break
        if inside:
            return True
    return False


@njit(cache=True)
def _trace_emitter(emitter, n_rays, seed, k, xe, ye, ze, gas_bounds, slabs, wall_lookup, n_furnace,
                   surf_lo, surf_hi, surf_axis, surf_normal, surf_eps, max_bounces):
    np.random.seed(seed)
    G = gas_bounds.shape[0]
    S = surf_lo.shape[0]
    n_l = xe.size - 1
    n_w = ye.size - 1
    n_h = ze.size - 1
    counts = np.zeros(G + S, dtype=np.int64)
    p = np.empty(3)
    d = np.empty(3)
    cell = np.empty(3, dtype=np.int64)
    for _ in range(n_rays):
        if emitter < G:
            while True:
                for a in range(3):
                    lo = gas_bounds[emitter, 0, a]
                    p[a] = lo + (gas_bounds[emitter, 1, a] - lo) * np.random.random()
                if not _inside_slab(p, slabs):
                    break
            mu = 2.0 * np.random.random() - 1.0
            phi = 2.0 * np.pi * np.random.random()
            s = np.sqrt(max(1.0 - mu * mu, 0.0))
            d[0] = s * np.cos(phi)
            d[1] = s * np.sin(phi)
            d[2] = mu
        else:
            j = emitter - G
            ax = surf_axis[j]
            for a in range(3):
                lo = surf_lo[j, a]
                p[a] = lo + (surf_hi[j, a] - lo) * np.random.random()
            p[ax] = surf_lo[j, ax]
            _cosine_direction(d, ax, surf_normal[j, ax])
        # cell containing the start point, biased into the gas side
        q0 = p[0] + 1e-9 * d[0]
        q1 = p[1] + 1e-9 * d[1]
        q2 = p[2] + 1e-9 * d[2]
        cell[0] = _cell_of(q0, xe, n_l)
        cell[1] = _cell_of(q1, ye, n_w)
        cell[2] = _cell_of(q2, ze, n_h)
        hit = _trace_one(p, d, cell, k, xe, ye, ze, slabs, wall_lookup, n_furnace, surf_eps, max_bounces)
        counts[hit] += 1
    return counts


def _emitter_seeds(seed: int, n_gases: int, n_emitters: int) -> np.ndarray:
    ss = np.random.SeedSequence(seed)
    state = ss.generate_state(n_gases * n_emitters, dtype=np.uint32)
    return state.reshape(n_gases, n_emitters).astype(np.int64)


def trace_raw(enclosure: Enclosure, k, ray_count: int, seed: int, emitters=None, jobs: int = 1) -> ExchangeAreaSet:
    """Raw (unenforced) TEAs. ``ray_count`` rays per emitter; ``emitters`` limits which rows are traced."""
    k = np.asarray(k, dtype=float).ravel()
    if np.any(k < 0) or not np.all(np.isfinite(k)):
        raise ExchangeError("absorption coefficients must be finite and non-negative")
    if ray_count < 1:
        raise ExchangeError("ray_count must be positive")
    if np.any(enclosure.surf_area <= 0):
        raise ExchangeError("zero-area surface")
    G, S = enclosure.n_gas, enclosure.n_surf
    power = emitted_power(enclosure, k)
    seeds = _emitter_seeds(seed, k.size, G + S)
    rows = range(G + S) if emitters is None else sorted(set(int(e) for e in emitters))
    slabs = np.ascontiguousarray(enclosure.slab_bounds).reshape(-1, 2, 3)
    args = (
        enclosure.x_edges, enclosure.y_edges, enclosure.z_edges, np.ascontiguousarray(enclosure.gas_bounds),
        slabs, enclosure.wall_face_lookup, enclosure.n_furnace, np.ascontiguousarray(enclosure.surf_lo),
        np.ascontiguousarray(enclosure.surf_hi), enclosure.surf_axis, np.ascontiguousarray(enclosure.surf_normal),
        np.ascontiguousarray(enclosure.surf_emissivity), MAX_BOUNCES,
    )
    tasks = [(n, e) for n in range(k.size) for e in rows if not (e < G and k[n] == 0.0)]

    def run(task):
        n, e = task
        return _trace_emitter(e, ray_count, int(seeds[n, e]), float(k[n]), *args)

    if jobs > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(jobs) as pool:
            results = list(pool.map(run, tasks))
    else:
        results = [run(t) for t in tasks]

    full = np.zeros((k.size, G + S, G + S))
    for (n, e), counts in zip(tasks, results):
        full[n, e] = power[e, n] * counts / ray_count
    if not np.all(np.isfinite(full)):
        raise ExchangeError("non-finite tally")
    return _from_full(full, k, ray_count, seed, G)


def _from_full(full, k, ray_count, seed, G) -> ExchangeAreaSet:
    f = np.moveaxis(full, 0, -1)  # (G+S, G+S, Ng)
    return ExchangeAreaSet(
        GG=np.ascontiguousarray(f[:G, :G]), GS=np.ascontiguousarray(f[:G, G:]),
        SG=np.ascontiguousarray(f[G:, :G]), SS=np.ascontiguousarray(f[G:, G:]),
        k=np.asarray(k, dtype=float).copy(), ray_count=int(ray_count), seed=int(seed),
    )


def enforce_conservation(raw: ExchangeAreaSet, enclosure: Enclosure, max_sweeps: int = 100,
                         tol: float = 1e-8) -> ExchangeAreaSet:
    """Symmetrise each slice, then scale it as D M D so that row sums hit the emitted-power targets.

    The scaling is the symmetric Sinkhorn iteration d <- sqrt(d * r / (M d)); rows whose
    target is zero (gas rows of the clear gas) are zeroed.
    """
    G = raw.n_gas
    target = emitted_power(enclosure, raw.k)
    out = np.zeros((raw.n_gases, G + raw.n_surf, G + raw.n_surf))
    for n in range(raw.n_gases):
        M = raw.full(n)
        if np.any(M < 0):
            raise ExchangeError("negative exchange area in raw input")
        r = target[:, n]
        live = r > 0
        M = 0.5 * (M + M.T)
        M[~live, :] = 0.0
        M[:, ~live] = 0.0
        Ml = M[np.ix_(live, live)]
        rl = r[live]
        if np.any(Ml.sum(axis=1) <= 0):
            raise ExchangeError("emitter with no recorded exchange; increase ray_count")
        dvec = np.ones(rl.size)
        res = np.inf
        for _ in range(max_sweeps):
            rows = dvec * (Ml @ dvec)
            res = float(np.max(np.abs(rows - rl) / rl))
            if res <= tol:
                break
            dvec = np.sqrt(dvec * rl / (Ml @ dvec))
        scaled = dvec[:, None] * Ml * dvec[None, :]
        scaled = 0.5 * (scaled + scaled.T)
        res = float(np.max(np.abs(scaled.sum(axis=1) - rl) / rl))
        if res > 1e-6:
            raise ExchangeError(f"conservation enforcement did not converge (slice {n}, residual {res:.3e})")
        out[n][np.ix_(live, live)] = scaled
    return _from_full(out, raw.k, raw.ray_count, raw.seed, G)


def trace_exchange_areas(enclosure: Enclosure, k, ray_count: int, seed: int, jobs: int = 1) -> ExchangeAreaSet:
    if ray_count < 10_000:
        raise ExchangeError("ray_count must be at least 1e4")
    return enforce_conservation(trace_raw(enclosure, k, ray_count, seed, jobs=jobs), enclosure)


def save_teas(teas: ExchangeAreaSet, path) -> None:
    payload = b"".join(
        np.ascontiguousarray(a, dtype="<f8").tobytes() for a in (teas.GG, teas.GS, teas.SG, teas.SS, teas.k)
    )
    header = _HEADER.pack(MAGIC, VERSION, teas.n_gas, teas.n_surf, teas.n_gases, teas.seed, teas.ray_count,
                          hashlib.sha256(payload).digest())
    with open(path, "wb") as fh:
        fh.write(header + payload)


def load_teas(path) -> ExchangeAreaSet:
    with open(path, "rb") as fh:
        blob = fh.read()
    if len(blob) < _HEADER.size:
        raise ExchangeError(f"{path}: truncated header")
    magic, version, G, S, Ng, seed, rays, digest = _HEADER.unpack_from(blob)
    if magic != MAGIC:
        raise ExchangeError(f"{path}: not a TEA archive")
    if version != VERSION:
        raise ExchangeError(f"{path}: archive version {version}, expected {VERSION}")
    payload = blob[_HEADER.size:]
    if hashlib.sha256(payload).digest() != digest:
        raise ExchangeError(f"{path}: checksum mismatch")
    shapes = [(G, G, Ng), (G, S, Ng), (S, G, Ng), (S, S, Ng), (Ng,)]
    arrays, off = [], 0
    for shp in shapes:
        size = int(np.prod(shp))
        arrays.append(np.frombuffer(payload, dtype="<f8", count=size, offset=off).reshape(shp).copy())
        off += 8 * size
    if off != len(payload):
        raise ExchangeError(f"{path}: payload size mismatch")
    return ExchangeAreaSet(*arrays, ray_count=int(rays), seed=int(seed))
