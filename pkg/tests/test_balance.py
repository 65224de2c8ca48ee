import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from zonefurnace.balance import (SIGMA, ZoneConstants, convection_operator, convection_terms, ebs_residual,
                                 ebv_jacobian, ebv_residual, solve_gas_temperatures, surface_flux,
                                 update_surface_temperatures)
from zonefurnace.conduction import NodeTemperatures, Slab2D
from zonefurnace.exchange import trace_exchange_areas
from zonefurnace.geometry import STEEL, EnclosureSpec, Material, build_enclosure
from zonefurnace.wsgg import WsggCoefficients, assemble_dfas

BLACK = Material(conductivity=1.2, density=2100.0, specific_heat=1000.0, emissivity=1.0, thickness=0.3)


@pytest.fixture(scope="module")
def box():
    enc = build_enclosure(EnclosureSpec(1.0, 1.0, 1.0, 1, 1, 1, wall=BLACK))
    coeffs = WsggCoefficients(b=np.array([[0.4, 0.6], [0.0, 0.0]]), k=np.array([0.0, 0.5]))
    teas = trace_exchange_areas(enc, coeffs.k, 20_000, 2)
    return enc, teas, coeffs


def sources(enc, Qfuel):
    G = enc.n_gas
    return ZoneConstants(np.zeros(G), np.asarray(Qfuel, float), np.zeros(G), np.zeros(enc.n_surf))


def test_sigma_value():
    assert SIGMA == 5.6687e-08


def test_isothermal_equilibrium(desk_enc, desk_teas, desk_coeffs):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    for T0 in (500.0, 1200.0, 1700.0):
        tG, tS = np.full(G, T0), np.full(S, T0)
        dfa = assemble_dfas(desk_teas, tG, tS, desk_coeffs)
        consts = ZoneConstants.zeros(desk_enc)
        vg = ebv_residual(tG, tS, dfa, np.zeros(G), consts, desk_coeffs, desk_enc)
        kbar = desk_coeffs.weights(T0) @ desk_coeffs.k
        assert np.max(np.abs(vg)) <= 1e-6 * 4 * kbar * desk_enc.gas_volumes.mean() * SIGMA * T0**4
        vs = ebs_residual(tG, tS, dfa, consts, desk_enc, np.zeros(S))
        assert np.max(np.abs(vs)) <= 1e-6 * desk_enc.emission_areas.mean() * SIGMA * T0**4


def test_single_zone_hand_balance(box):
    enc, teas, coeffs = box
    Tg, Ts = 1400.0, np.linspace(700, 1200, 6)
    h = 1234.5
    dfa = assemble_dfas(teas, np.array([Tg]), Ts, coeffs)
    v = ebv_residual(np.array([Tg]), Ts, dfa, np.zeros(1), sources(enc, [h]), coeffs, enc)
    a = [0.4, 0.6]
    hand = 0.0
    for n in range(2):
        hand += teas.GG[0, 0, n] * a[n] * SIGMA * Tg**4
        for j in range(6):
            hand += teas.GS[0, j, n] * a[n] * SIGMA * Ts[j] ** 4
    hand -= 4 * (a[1] * 0.5) * SIGMA * enc.gas_volumes[0] * Tg**4
    hand += h
    assert v[0] == pytest.approx(hand, rel=1e-12)


def test_cold_limit_gives_sources(desk_enc, desk_teas, desk_coeffs, rng):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    tG, tS = np.full(G, 1e-3), np.full(S, 1e-3)
    dfa = assemble_dfas(desk_teas, tG, tS, desk_coeffs)
    consts = ZoneConstants(rng.uniform(0, 10, G), rng.uniform(0, 1e5, G), rng.uniform(0, 1e4, G), np.zeros(S))
    q = rng.uniform(-1e4, 1e4, G)
    v = ebv_residual(tG, tS, dfa, q, consts, desk_coeffs, desk_enc)
    assert np.allclose(v, consts.source(q), rtol=1e-12, atol=1e-9)


def bisection(f, lo, hi, tol=1e-9):
    flo = f(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        fm = f(mid)
        if (fm > 0) == (flo > 0):
            lo, flo = mid, fm
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


def single_zone_residual(box, Ts, h):
    enc, teas, coeffs = box

    def f(T):
        tG = np.array([T])
        dfa = assemble_dfas(teas, tG, Ts, coeffs)
        return ebv_residual(tG, Ts, dfa, np.zeros(1), sources(enc, [h]), coeffs, enc)[0]

    return f


@pytest.mark.parametrize("h", [1e4, 2e5, 1e6])
def test_single_zone_matches_bisection(box, h):
    enc, teas, coeffs = box
    Ts = np.full(6, 900.0)
    T = solve_gas_temperatures(Ts, teas, np.zeros(1), sources(enc, [h]), coeffs, enc, np.array([1000.0]))
    ref = bisection(single_zone_residual(box, Ts, h), 1.0, 5000.0)
    assert abs(T[0] - ref) <= 0.01


def test_single_zone_monotone_in_heat_input(box):
    enc, teas, coeffs = box
    Ts = np.full(6, 900.0)
    temps = [solve_gas_temperatures(Ts, teas, np.zeros(1), sources(enc, [h]), coeffs, enc, np.array([1000.0]))[0]
             for h in (1e4, 5e4, 2e5, 8e5)]
    assert np.all(np.diff(temps) > 0)


def test_exact_guess_is_fixed_point(desk_enc, desk_teas, desk_coeffs, rng):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    tS = rng.uniform(800, 1200, S)
    consts = sources(desk_enc, rng.uniform(1e4, 2e5, G))
    T = solve_gas_temperatures(tS, desk_teas, np.zeros(G), consts, desk_coeffs, desk_enc, np.full(G, 1000.0))
    diag = {}
    again = solve_gas_temperatures(tS, desk_teas, np.zeros(G), consts, desk_coeffs, desk_enc, T, diagnostics=diag)
    assert diag["iterations"] == 0
    assert np.array_equal(again, T)


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_desk_residual_after_solve(seed):
    # hypothesis cannot reuse function-scoped fixtures, so the desk model comes from a module cache
    enc, teas, coeffs = _desk()
    rng = np.random.default_rng(seed)
    G, S = enc.n_gas, enc.n_surf
    tS = rng.uniform(400, 1300, S)
    consts = ZoneConstants(np.zeros(G), rng.uniform(0, 5e5, G), rng.uniform(0, 5e4, G), np.zeros(S))
    q = rng.uniform(-5e4, 5e4, G)
    T = solve_gas_temperatures(tS, teas, q, consts, coeffs, enc, np.full(G, 1000.0))
    dfa = assemble_dfas(teas, T, tS, coeffs)
    v = ebv_residual(T, tS, dfa, q, consts, coeffs, enc)
    scale = (dfa.dGG @ (SIGMA * T**4) + dfa.dGS @ (SIGMA * tS**4)
             + 4 * (coeffs.weights(T) @ coeffs.k) * enc.gas_volumes * SIGMA * T**4 + np.abs(consts.source(0)) + np.abs(q))
    assert np.all(np.abs(v) <= 1e-8 * scale)


_DESK_CACHE = {}


def _desk():
    if not _DESK_CACHE:
        from zonefurnace.geometry import desk_scale_spec
        from zonefurnace.wsgg import default_coefficients

        enc = build_enclosure(desk_scale_spec())
        coeffs = default_coefficients(4)
        _DESK_CACHE["v"] = (enc, trace_exchange_areas(enc, coeffs.k, 10_000, 3), coeffs)
    return _DESK_CACHE["v"]


def test_implicit_sources_solve(desk_enc, desk_teas, desk_coeffs, rng):
    """Transport and convection as operators in T_g are satisfied at the returned state."""
    from zonefurnace.flow import FlowParams, enthalpy_operator, flow_pattern

    G, S = desk_enc.n_gas, desk_enc.n_surf
    tS = rng.uniform(600, 1100, S)
    p = FlowParams()
    fp = flow_pattern(np.array([0.5, 0.7, 0.9]), desk_enc, p)
    op = enthalpy_operator(fp, desk_enc, p) + convection_operator(tS, desk_enc, 15.0)
    consts = sources(desk_enc, rng.uniform(1e5, 5e5, G))
    T = solve_gas_temperatures(tS, desk_teas, op, consts, desk_coeffs, desk_enc, np.full(G, 1000.0))
    dfa = assemble_dfas(desk_teas, T, tS, desk_coeffs)
    v = ebv_residual(T, tS, dfa, op(T), consts, desk_coeffs, desk_enc)
    assert np.max(np.abs(v) / (op.magnitude(T) + consts.Qfuel)) <= 1e-8


@given(st.integers(0, 10_000))
@settings(max_examples=15, deadline=None)
def test_jacobian_matches_differences(seed):
    enc, teas, coeffs = _desk()
    rng = np.random.default_rng(seed)
    G, S = enc.n_gas, enc.n_surf
    tG, tS = rng.uniform(600, 1800, G), rng.uniform(500, 1400, S)
    consts = sources(enc, rng.uniform(0, 1e5, G))

    def v(T):
        return ebv_residual(T, tS, assemble_dfas(teas, T, tS, coeffs), np.zeros(G), consts, coeffs, enc)

    J = ebv_jacobian(tG, tS, teas, coeffs, enc)
    Jfd = np.zeros_like(J)
    for j in range(G):
        h = 1e-4 * tG[j]
        e = np.zeros(G)
        e[j] = h
        Jfd[:, j] = (v(tG + e) - v(tG - e)) / (2 * h)
    assert np.max(np.abs(J - Jfd)) <= 1e-5 * np.max(np.abs(Jfd))


def test_surface_flux_directions(desk_enc, desk_teas, desk_coeffs):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    consts = ZoneConstants.zeros(desk_enc)
    iso = np.full(S, 1000.0)
    dfa = assemble_dfas(desk_teas, np.full(G, 1000.0), iso, desk_coeffs)
    w = surface_flux(np.full(G, 1000.0), iso, dfa, consts, desk_enc)
    assert np.max(np.abs(w)) <= 1e-6 * np.max(desk_enc.emission_areas * SIGMA * 1000.0**4)
    hot, cold = np.full(G, 1600.0), np.full(S, 400.0)
    dfa = assemble_dfas(desk_teas, hot, cold, desk_coeffs)
    assert np.all(surface_flux(hot, cold, dfa, consts, desk_enc) > 0)


def test_black_box_surface_flux_by_hand(box):
    enc, teas, coeffs = box
    Tg, Ts = np.array([1500.0]), np.linspace(600, 1100, 6)
    qconv = np.linspace(100, 600, 6)
    consts = ZoneConstants(np.zeros(1), np.zeros(1), np.zeros(1), qconv)
    dfa = assemble_dfas(teas, Tg, Ts, coeffs)
    w = surface_flux(Tg, Ts, dfa, consts, enc)
    a = [0.4, 0.6]
    for i in range(6):
        hand = sum(teas.SS[i, j, n] * a[n] * SIGMA * Ts[j] ** 4 for j in range(6) for n in range(2))
        hand += sum(teas.SG[i, 0, n] * a[n] * SIGMA * Tg[0] ** 4 for n in range(2))
        hand += -enc.surf_area[i] * SIGMA * Ts[i] ** 4 + enc.surf_area[i] * qconv[i]
        assert w[i] == pytest.approx(hand, rel=1e-12)


def test_ebs_residual_definitions(desk_enc, desk_teas, desk_coeffs, rng):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    tG, tS = rng.uniform(900, 1600, G), rng.uniform(500, 1200, S)
    consts = ZoneConstants(np.zeros(G), np.zeros(G), np.zeros(G), rng.uniform(-500, 500, S))
    dfa = assemble_dfas(desk_teas, tG, tS, desk_coeffs)
    w = surface_flux(tG, tS, dfa, consts, desk_enc)
    assert np.array_equal(ebs_residual(tG, tS, dfa, consts, desk_enc, w), np.zeros(S))
    assert np.array_equal(ebs_residual(tG, tS, dfa, consts, desk_enc, np.zeros(S)), w)
    Qs = rng.uniform(-1e4, 1e4, S)
    vs = ebs_residual(tG, tS, dfa, consts, desk_enc, Qs)
    ref = np.zeros(S)
    for i in range(S):
        acc = 0.0
        for j in range(S):
            acc += dfa.dSS[i, j] * SIGMA * tS[j] ** 4
        for j in range(G):
            acc += dfa.dSG[i, j] * SIGMA * tG[j] ** 4
        ref[i] = acc - desk_enc.emission_areas[i] * SIGMA * tS[i] ** 4 + desk_enc.surf_area[i] * consts.qconv[i] - Qs[i]
    assert np.allclose(vs, ref, rtol=1e-12, atol=1e-12 * np.max(np.abs(ref)))


def test_global_closure_isothermal(desk_enc, desk_teas, desk_coeffs, rng):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    T0 = 1250.0
    tG, tS = np.full(G, T0), np.full(S, T0)
    dfa = assemble_dfas(desk_teas, tG, tS, desk_coeffs)
    consts = ZoneConstants(rng.uniform(0, 1e3, G), rng.uniform(0, 1e5, G), rng.uniform(0, 1e4, G),
                           rng.uniform(-100, 100, S))
    q = rng.uniform(-1e3, 1e3, G)
    vg = ebv_residual(tG, tS, dfa, q, consts, desk_coeffs, desk_enc)
    w = surface_flux(tG, tS, dfa, consts, desk_enc)
    total = vg.sum() + w.sum()
    expected = consts.source(q).sum() + (desk_enc.surf_area * consts.qconv).sum()
    scale = (desk_enc.emission_areas.sum()) * SIGMA * T0**4
    assert abs(total - expected) <= 1e-6 * scale


def test_convection_closure(desk_enc, rng):
    tG, tS = rng.uniform(900, 1500, 6), rng.uniform(500, 1000, desk_enc.n_surf)
    Qconv, qconv = convection_terms(tG, tS, desk_enc, 15.0)
    assert Qconv.sum() == pytest.approx((desk_enc.surf_area * qconv).sum(), rel=1e-12)
    op = convection_operator(tS, desk_enc, 15.0)
    assert np.allclose(op(tG), -Qconv, rtol=1e-12)


def test_surface_temperatures_from_nodes():
    slab = Slab2D(STEEL, (0.4, 1.6, 0.2), 5)
    nodes = NodeTemperatures(np.full((4, 7), 700.0), np.full((2, 5, 5), 700.0), slab)
    assert np.allclose(update_surface_temperatures(nodes), 700.0)
    walls = np.tile(np.linspace(900, 300, 7), (4, 1))
    grid = np.add.outer(np.arange(5.0), 10 * np.arange(5.0)) + 500.0
    nodes = NodeTemperatures(walls, np.stack([grid, grid]), slab)
    tS = update_surface_temperatures(nodes)
    assert np.all(tS[:4] == 900.0)
    # exposed faces of the slab: edge-length weighted averages of the boundary nodes
    w = np.array([0.5, 1, 1, 1, 0.5]) / 4
    faces = tS[4:10]
    assert faces[0] == pytest.approx(grid[0] @ w)
    assert faces[1] == pytest.approx(grid[-1] @ w)
    assert faces[4] == pytest.approx(grid[:, 0] @ w)
    assert faces[5] == pytest.approx(grid[:, -1] @ w)
    vol = np.outer(w, w)
    assert faces[2] == pytest.approx((grid * vol).sum())


def test_dimension_mismatch(desk_enc, desk_teas, desk_coeffs):
    G, S = desk_enc.n_gas, desk_enc.n_surf
    dfa = assemble_dfas(desk_teas, np.full(G, 900.0), np.full(S, 900.0), desk_coeffs)
    with pytest.raises(ValueError):
        ebv_residual(np.full(G + 1, 900.0), np.full(S, 900.0), dfa, np.zeros(G), ZoneConstants.zeros(desk_enc),
                     desk_coeffs, desk_enc)
    with pytest.raises(ValueError):
        surface_flux(np.full(G, 900.0), np.full(S - 1, 900.0), dfa, ZoneConstants.zeros(desk_enc), desk_enc)
