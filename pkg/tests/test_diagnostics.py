from __future__ import annotations

import numpy as np
import pytest
from scipy import stats

from signedvoter.diagnostics import (
    ConfigurationError,
    OccupationMeasurePair,
    ShellMembershipError,
    ShellSystem,
    assign_site_signs,
    check_compatibility,
    classify_sign,
    estimate_mu_pm,
    estimate_parity,
    estimate_shell_statistics,
    occupation_csv,
    parity_csv,
    shell_csv,
    signed_harmonic_residual,
    tv_gap,
    wilson_halfwidth,
)
from signedvoter.exact_solver import parity_absorption, parity_occupation
from signedvoter.signed_graph import (
    SignedGraph,
    build_frustrated_cycle,
    build_lattice_window,
    gauge_partition,
)
from signedvoter.walkers import simulate_walk

from conftest import random_connected_signed


def test_wilson_matches_scipy():
    for k, n in [(0, 10), (3, 10), (50, 100), (99, 100), (7, 25)]:
        ci = stats.binomtest(k, n).proportion_ci(0.95, method="wilson")
        assert wilson_halfwidth(k, n) == pytest.approx((ci.high - ci.low) / 2, rel=1e-6)


# -- shells ------------------------------------------------------------------

def test_shells_match_definition():
    w = build_lattice_window(2, 13, "open")
    sh = ShellSystem.from_window(w)
    c = np.array(w.labels[sh.center])
    assert tuple(c) == (6, 6)
    for R, shell in zip(sh.radii, sh.shells):
        expect = []
        for v in range(w.n):
            d = np.linalg.norm(np.array(w.labels[v]) - c)
            if d > R and any(np.linalg.norm(np.array(w.labels[y]) - c) <= R for y in w.neighbors(v)):
                expect.append(v)
        assert shell.tolist() == expect
    assert sh.levels == [0, 1, 2]


def test_shell_validation():
    w = build_lattice_window(2, 9, "open")
    with pytest.raises(ConfigurationError):
        ShellSystem.from_window(w, radii=[2.0, 4.0])
    with pytest.raises(ConfigurationError):
        ShellSystem(w, 40, [1, 2], [1, 2], [[1, 2], [2, 3]])
    with pytest.raises(ConfigurationError):
        ShellSystem(w, 40, [1, 2], [1, 2], [[1, 2], []])


# -- parity ------------------------------------------------------------------

def test_positive_graph_never_odd():
    w = build_lattice_window(2, 9, "open")
    sh = ShellSystem.from_window(w, radii=[3.0])
    est = estimate_parity(w, sh.center, sh.shells[0], 2000, 1)
    assert est and all(e.p_odd == 0 and e.N == 0 for e in est.values())


def test_symmetric_cycle_half_half():
    g = build_frustrated_cycle(6, 1)
    assert parity_absorption(g, 0, [3])[3] == pytest.approx((0.5, 0.5))
    e = estimate_parity(g, 0, [3], 20_000, 4)[3]
    assert abs(e.p_even - 0.5) <= 3 * e.ci_halfwidth
    assert e.N <= 0.5 and abs(e.N - 0.5) <= 3 * e.ci_halfwidth


def test_parity_matches_absorbing_oracle_small_graphs():
    rng = np.random.default_rng(31)
    cells = bad = 0
    for trial in range(15):
        g = random_connected_signed(rng, 5, 0.5, 0.4)
        x, *stop = rng.choice(5, 3, replace=False).tolist()
        exact = parity_absorption(g, x, stop)
        est = estimate_parity(g, x, stop, 8000, trial)
        assert set(est) == set(exact)
        for y, (pe, po) in exact.items():
            e = est[y]
            cells += 1
            bad += abs(e.p_even - pe / (pe + po)) > 3 * e.ci_halfwidth
            assert e.hit_fraction == pytest.approx(pe + po, abs=0.03)
    assert bad <= max(1, cells // 100)


def test_parity_configuration_errors():
    g = build_frustrated_cycle(5, 1)
    with pytest.raises(ConfigurationError):
        estimate_parity(g, 0, [0], 10, 0)
    two = SignedGraph(4, [(0, 1, 1), (2, 3, 1)])
    with pytest.raises(ConfigurationError):
        estimate_parity(two, 0, [2], 10, 0)
    w = build_lattice_window(2, 7, "open")
    # stop set that does not enclose the start: walk can reach the window edge
    with pytest.raises(ConfigurationError):
        estimate_parity(w, w.vertex_at((3, 3)), [w.vertex_at((3, 4))], 10, 0)


def test_parity_worker_independent():
    g = build_frustrated_cycle(7, 2)
    a = estimate_parity(g, 0, [4], 10_000, 3, workers=1)
    b = estimate_parity(g, 0, [4], 10_000, 3, workers=2)
    assert parity_csv([(0, 0, y, e) for y, e in a.items()]) == parity_csv([(0, 0, y, e) for y, e in b.items()])


# -- shell statistics ---------------------------------------------------------

def test_shell_statistics_zero_on_positive_window():
    w = build_lattice_window(2, 11, "open")
    st = estimate_shell_statistics(ShellSystem.from_window(w), 1, 300, 2)
    assert st.I_trunc == 0.0 and st.H_trunc == 0.0


def _band_one_window():
    # radii 1, 2, 4 around (6, 6); the negative edge sits strictly between C_1 and C_2
    w = build_lattice_window(2, 13, "open")
    a, b = w.vertex_at((9, 7)), w.vertex_at((9, 8))
    return w.with_signs([(a, b)])


def test_shell_statistics_band_terms():
    w = _band_one_window()
    sh = ShellSystem.from_window(w)
    assert sh.level_of(w.vertex_at((9, 7))) is None
    assert sh.level_of(w.vertex_at((9, 8))) is None
    st = estimate_shell_statistics(sh, 1, 400, 5)
    assert st.I_terms[0] == 0.0 and st.H_terms[0] == 0.0
    assert st.I_terms[1] > 0


def test_shell_statistics_sample_doubling_consistent():
    w = _band_one_window()
    sh = ShellSystem.from_window(w)
    a = estimate_shell_statistics(sh, 1, 1500, 1, min_hits=1)
    b = estimate_shell_statistics(sh, 1, 3000, 2, min_hits=1)
    assert abs(a.I_trunc - b.I_trunc) <= 3 * (a.I_halfwidth + b.I_halfwidth)


def test_shell_statistics_errors_and_starvation():
    w = _band_one_window()
    sh = ShellSystem.from_window(w)
    with pytest.raises(ConfigurationError):
        estimate_shell_statistics(sh, 2, 10, 0)
    st = estimate_shell_statistics(sh, 1, 40, 0)
    assert st.starved
    assert all(not (n, x, y) in set(st.starved) or e.starved for n, x, y, e in st.pairs)
    text = shell_csv(st)
    assert text.splitlines()[0] == "n,term,I_contrib"


# -- sign classification --------------------------------------------------------

def _path_shells(sign):
    g = SignedGraph(4, [(0, 1, 1), (1, 2, sign), (2, 3, 1)])
    return ShellSystem(g, 0, [1, 2], [1.0, 2.0], [[1], [2]])


def test_classify_forced_crossing_and_cut_antisymmetry():
    assert classify_sign(1, 2, _path_shells(-1), 200, 0).value == -1
    assert classify_sign(1, 2, _path_shells(1), 200, 0).value == 1


def test_classify_positive_and_symmetric_and_starved():
    w = build_lattice_window(2, 9, "open")
    sh = ShellSystem.from_window(w, radii=[1.0, 2.0])
    x = int(sh.shells[0][0])
    for v in sh.shells[1].tolist():
        c = classify_sign(x, v, sh, 3000, 1)
        assert c.value == 1 or c.starved
    g = build_frustrated_cycle(6, 1)
    sym = ShellSystem(g, 1, [0, 1], [1.0, 2.0], [[0], [3]])
    c = classify_sign(0, 3, sym, 4000, 2)
    assert c.value == 0 and not c.starved
    c = classify_sign(0, 3, sym, 10, 2, min_hits=25)
    assert c.value == 0 and c.starved
    with pytest.raises(ShellMembershipError):
        classify_sign(3, 0, sym, 10, 0)


def _quad_cycle(neg):
    # 4-cycle x=0 - v=1 - y=2 - w=3 - x
    g = SignedGraph(4, [(0, 1, -1 if neg else 1), (1, 2, 1), (2, 3, 1), (0, 3, 1)])
    return ShellSystem(g, 0, [1, 2], [1.0, 2.0], [[0, 2], [1, 3]])


def test_compatibility_hand_built():
    sh = _quad_cycle(True)
    assert check_compatibility(1, [0, 2, 1, 3], sh, 200, 0) == "incompatible"
    # oracle: the odd leg is exactly x -> v
    g = sh.window
    assert parity_absorption(g, 0, [1, 3]) == {1: (0.0, 0.5), 3: (0.5, 0.0)}
    assert check_compatibility(1, [0, 2, 1, 3], _quad_cycle(False), 200, 0) == "compatible"
    assert check_compatibility(1, [0, 2, 1, 3], sh, 4, 0) == "undecided"
    with pytest.raises(ShellMembershipError):
        check_compatibility(1, [0, 1, 2, 3], sh, 10, 0)
    with pytest.raises(ShellMembershipError):
        check_compatibility(2, [0, 2, 1, 3], sh, 10, 0)


def test_compatibility_kind_two():
    # layered: x=0 | y=1, z=2 | w=3, plus back edges to keep degrees >= 1
    g = SignedGraph(4, [(0, 1, 1), (0, 2, 1), (1, 3, 1), (2, 3, 1)])
    sh = ShellSystem(g, 0, [0, 1, 2], [0.5, 1.0, 2.0], [[0], [1, 2], [3]])
    assert check_compatibility(2, [0, 1, 2, 3], sh, 300, 1) == "compatible"


def test_compatibility_positive_lattice():
    w = build_lattice_window(2, 9, "open")
    sh = ShellSystem.from_window(w, radii=[1.0, 2.0])
    x, y = sh.shells[0][:2].tolist()
    v, u = sh.shells[1][[0, 3]].tolist()
    assert check_compatibility(1, [x, y, v, u], sh, 4000, 1, min_hits=1) == "compatible"


# -- site signs ----------------------------------------------------------------

def _cut_window(cut: bool):
    w = build_lattice_window(2, 19, "open")
    c = np.array([9, 9])
    d = np.linalg.norm(np.array(w.labels) - c, axis=1)
    neg = [(u, v) for u, v, _ in w.edge_list() if (d[u] <= 3.5) != (d[v] <= 3.5)] if cut else []
    return w.with_signs(neg)


def _reference(sh):
    for seed in range(100):
        p = simulate_walk(sh.window, sh.center, 5000.0, seed)
        try:
            from signedvoter.walkers import hitting_time
            if all(hitting_time(p, s.tolist()) is not None for s in sh.shells):
                return p
        except ValueError:
            pass
    raise AssertionError("no reference path")


def test_site_signs_positive_and_cut():
    base = ShellSystem.from_window(_cut_window(False), radii=[2.0, 4.0, 8.0])
    ref = _reference(base)
    plain = assign_site_signs(base, ref, 300, 1)
    assert set(plain.signs.values()) == {1}
    cut = ShellSystem.from_window(_cut_window(True), radii=[2.0, 4.0, 8.0])
    out = assign_site_signs(cut, ref, 4000, 1)
    assert out.signs[out.reference_sites[0]] == 1
    skip = set(out.starved)
    assert len(skip) < 10
    lv = {lvl: {out.signs[v] for v in cut.shell(lvl).tolist() if v not in skip} for lvl in cut.levels}
    assert lv == {1: {1}, 2: {-1}, 3: {-1}}
    again = assign_site_signs(cut, ref, 4000, 1)
    assert again.signs == out.signs


def test_site_signs_missing_crossing():
    sh = ShellSystem.from_window(_cut_window(False), radii=[2.0, 4.0, 8.0])
    p = simulate_walk(sh.window, sh.center, 0.01, 0)
    with pytest.raises(ValueError):
        assign_site_signs(sh, p, 10, 0)


# -- occupation measures ----------------------------------------------------------

def test_mu_pm_small_t_and_positive_graph():
    g = build_frustrated_cycle(3, 1)
    pair = estimate_mu_pm(g, 0, 1e-6, 5000, 1)
    assert pair.mu_plus[0] == 1.0 and tv_gap(pair) == 1.0
    pos = build_lattice_window(2, 3)
    pair = estimate_mu_pm(pos, 0, 7.0, 5000, 2)
    assert np.all(pair.mu_minus == 0)
    assert pair.mu_plus.sum() == pytest.approx(1.0)
    with pytest.raises(ValueError):
        estimate_mu_pm(g, 0, 0.0, 10, 0)


def test_mu_pm_against_oracle(battery):
    for i, g in enumerate(battery):
        if g.n > 8:
            continue
        pair = estimate_mu_pm(g, 0, 2.5, 20_000, i)
        mp, mm = parity_occupation(g, 0, 2.5)
        assert np.abs(pair.mu_plus - mp).max() < 0.02
        assert np.abs(pair.mu_minus - mm).max() < 0.02
        assert pair.mu_plus.sum() + pair.mu_minus.sum() == pytest.approx(1.0)


def test_gap_trend_frustrated_triangle(triangle):
    grid = [1, 2, 5, 10, 20, 50]
    gaps = [tv_gap(estimate_mu_pm(triangle, 0, t, 20_000, 7)) for t in grid]
    exact = [np.abs(np.subtract(*parity_occupation(triangle, 0, t))).sum() for t in grid]
    for a, b in zip(gaps, exact):
        assert abs(a - b) < 0.03
    assert all(b <= a + 0.02 for a, b in zip(gaps, gaps[1:]))
    assert gaps[-1] < 0.05


def test_balanced_switched_mu_minus_zero():
    g = build_frustrated_cycle(6, 2)
    from signedvoter.signed_graph import switch

    h = switch(g, gauge_partition(g))
    pair = estimate_mu_pm(h, 0, 10.0, 3000, 1)
    assert np.all(pair.mu_minus == 0)


def test_mu_pm_worker_independent(triangle):
    a = estimate_mu_pm(triangle, 0, 3.0, 10_000, 5, workers=1)
    b = estimate_mu_pm(triangle, 0, 3.0, 10_000, 5, workers=2)
    assert occupation_csv(a) == occupation_csv(b)


def test_tv_gap_trivial():
    assert tv_gap(OccupationMeasurePair(np.array([1.0, 0]), np.zeros(2), 0.0, 1)) == 1.0
    assert tv_gap(OccupationMeasurePair(np.array([0.25, 0.25]), np.array([0.25, 0.25]), 1.0, 1)) == 0.0


def test_signed_harmonic_residual_cases(battery):
    for g in battery:
        assert signed_harmonic_residual(g, np.zeros(g.n)) == 0.0
        side = gauge_partition(g)
        if side is not None:
            assert signed_harmonic_residual(g, side) == pytest.approx(0.0, abs=1e-15)
    with pytest.raises(ValueError):
        signed_harmonic_residual(battery[0], np.zeros(5))
