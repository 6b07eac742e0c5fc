from __future__ import annotations

import itertools

import networkx as nx
import numpy as np
import pytest

from signedvoter.signed_graph import (
    IIDSigns,
    NotAdjacentError,
    SignedGraph,
    build_frustrated_cycle,
    build_lattice_window,
    build_paired_tree,
    build_z4_staircase,
    dumps,
    find_unsatisfied_cycle,
    gauge_partition,
    loads,
    path_sign,
    read_graph,
    staircase_scales,
    switch,
    write_graph,
)

from conftest import has_odd_cycle_bruteforce, random_connected_signed


# -- construction and invariants -------------------------------------------

def test_rejects_self_loop_parallel_and_isolated():
    with pytest.raises(ValueError):
        SignedGraph(2, [(0, 0, 1)])
    with pytest.raises(ValueError):
        SignedGraph(2, [(0, 1, 1), (1, 0, -1)])
    with pytest.raises(ValueError):
        SignedGraph(3, [(0, 1, 1)])
    with pytest.raises(ValueError):
        SignedGraph(2, [(0, 1, 2)])


def test_adjacency_symmetric_and_sorted(battery):
    for g in battery:
        for x in range(g.n):
            adj = g.adjacency(x)
            assert [y for y, _ in adj] == sorted(y for y, _ in adj)
            assert g.degree[x] == len(adj)
            for y, s in adj:
                assert (x, s) in g.adjacency(y)


def test_path_graph_from_open_1d_window():
    g = build_lattice_window(1, [3], "open")
    assert g.n == 3 and g.edge_count == 2
    assert g.negative_edges() == []
    assert g.labels == [(0,), (1,), (2,)]


def test_torus_degree_count():
    g = build_lattice_window(2, [3, 3], "periodic")
    assert g.n == 9 and g.edge_count == 18
    assert np.all(g.degree == 4)


def test_periodic_axis_of_length_two_has_no_duplicate_edges():
    g = build_lattice_window(2, [2, 3], "periodic")
    assert g.edge_count == len(set((u, v) for u, v, _ in g.edge_list()))


@pytest.mark.parametrize("extent", [0, 1, [3, 1]])
def test_bad_extent(extent):
    with pytest.raises(ValueError):
        build_lattice_window(2, extent)


def test_negative_list_must_reference_edges():
    with pytest.raises(NotAdjacentError):
        build_lattice_window(1, [4], "open", [(0, 2)])


def test_iid_signs_match_independent_rederivation():
    # reference stream: Philox keyed by (seed, namespace<<48 | u*n+v), first double
    g = build_lattice_window(2, [4, 4], "periodic", IIDSigns(0.5, 7))
    u, v, s = g.edges()
    expected = 0
    for a, b in zip(u.tolist(), v.tolist()):
        key = np.array([7, (1 << 48) | (a * g.n + b)], dtype=np.uint64)
        expected += np.random.Generator(np.random.Philox(key=key)).random() < 0.5
    assert len(g.negative_edges()) == expected
    assert g == build_lattice_window(2, [4, 4], "periodic", IIDSigns(0.5, 7))


def test_frustrated_cycle_parity():
    assert find_unsatisfied_cycle(build_frustrated_cycle(3, 0)) is None
    cyc = find_unsatisfied_cycle(build_frustrated_cycle(3, 1))
    assert cyc == [0, 1, 2, 0]
    assert path_sign(build_frustrated_cycle(3, 1), cyc) == -1
    assert gauge_partition(build_frustrated_cycle(4, 2)) is not None
    with pytest.raises(ValueError):
        build_frustrated_cycle(2, 0)


def test_paired_tree_counts():
    g = build_paired_tree([2, 2], [2], 2)
    assert g.n == 7 and len(g.negative_edges()) == 2
    g = build_paired_tree([4, 4, 4], [3], 3)
    assert g.n == 1 + 4 + 16 + 64
    assert len(g.negative_edges()) == 32
    with pytest.raises(ValueError):
        build_paired_tree([3, 3], [1], 2)


def test_paired_tree_sibling_triangles_unsatisfied():
    g = build_paired_tree([2, 4, 2], [1, 3], 3)
    parent = {}
    for u, v, s in g.edge_list():
        if s > 0:
            parent[v] = u
    for a, b in g.negative_edges():
        assert parent[a] == parent[b]
        assert path_sign(g, [parent[a], a, b, parent[a]]) == -1


def _slab(r):
    return {(r,) + c for c in itertools.product(range(-r, r + 1), repeat=3)}


@pytest.mark.parametrize("scales,w,count", [([1], 4, 27), ([1, 3], 8, 27 + 343)])
def test_z4_staircase_negative_slabs(scales, w, count):
    g = build_z4_staircase(scales, w)
    neg = g.negative_edges()
    assert len(neg) == count
    tails = set()
    for a, b in neg:
        la, lb = g.labels[a], g.labels[b]
        lo, hi = (la, lb) if la[0] < lb[0] else (lb, la)
        assert hi[0] - lo[0] == 1 and hi[1:] == lo[1:]
        tails.add(lo)
    assert tails == set().union(*(_slab(r) for r in scales))


def test_z4_builder_idempotent():
    g = build_z4_staircase([1], 4)
    plain = g.with_signs([])
    assert plain.negative_edges() == []
    assert plain.with_signs(g.negative_edges()) == g


def test_z4_rejects_bad_scales():
    with pytest.raises(ValueError):
        build_z4_staircase([3, 2], 8)
    with pytest.raises(ValueError):
        build_z4_staircase([4], 4)


def test_staircase_scales_recurrence():
    # 2*4*1/2 = 4, 2*9*4/2 = 36, 2*16*36/2 = 576
    assert staircase_scales(4, 2.0, 1) == [1, 4, 36, 576]
    big = staircase_scales(5, 1000.0, 1)
    assert all(b > a for a, b in zip(big, big[1:]))


# -- path signs --------------------------------------------------------------

def test_path_sign_basic():
    g = build_frustrated_cycle(5, 3)
    assert path_sign(g, [2]) == 1
    assert path_sign(g, [0, 1]) == -1
    assert path_sign(g, [0, 1, 2, 3, 4, 0]) == -1
    with pytest.raises(NotAdjacentError):
        path_sign(g, [0, 2])


def test_path_sign_multiplicative(battery):
    rng = np.random.default_rng(1)
    for g in battery:
        walk = [0]
        for _ in range(12):
            nb = g.neighbors(walk[-1])
            walk.append(int(nb[rng.integers(len(nb))]))
        k = int(rng.integers(1, 12))
        assert path_sign(g, walk) == path_sign(g, walk[:k + 1]) * path_sign(g, walk[k:])


# -- balance -----------------------------------------------------------------

def test_balance_certificates_agree_with_bruteforce_random():
    rng = np.random.default_rng(5)
    for _ in range(200):
        g = random_connected_signed(rng, int(rng.integers(3, 7)))
        cyc = find_unsatisfied_cycle(g)
        assert (cyc is not None) == has_odd_cycle_bruteforce(g)
        assert (gauge_partition(g) is None) == (cyc is not None)
        if cyc is not None:
            assert cyc[0] == cyc[-1] and len(cyc) >= 4
            assert len(set(cyc[:-1])) == len(cyc) - 1
            assert path_sign(g, cyc) == -1


def test_gauge_partition_small_cases():
    assert gauge_partition(SignedGraph(2, [(0, 1, 1)])).tolist() == [1, 1]
    assert gauge_partition(SignedGraph(2, [(0, 1, -1)])).tolist() == [1, -1]
    g = build_frustrated_cycle(4, 2)
    side = gauge_partition(g)
    for u, v, s in g.edge_list():
        assert side[u] * side[v] == s


def test_switch_properties(battery):
    rng = np.random.default_rng(9)
    for g in battery:
        ident = np.ones(g.n, dtype=int)
        assert switch(g, ident) == g
        side = rng.choice([-1, 1], g.n)
        h = switch(g, side)
        assert switch(h, side) == g
        # cycle signs are gauge invariant
        cyc = find_unsatisfied_cycle(g)
        assert (find_unsatisfied_cycle(h) is None) == (cyc is None)
        if cyc is not None:
            assert path_sign(h, cyc) == -1
        part = gauge_partition(g)
        if part is not None:
            assert switch(g, part).negative_edges() == []


# -- serialization -----------------------------------------------------------

def test_roundtrip_is_exact(tmp_path, battery):
    for g in battery + [build_paired_tree([2, 2], [1], 2), build_z4_staircase([1], 2)]:
        text = dumps(g)
        assert text.splitlines()[0] == f"svmgraph v1 {g.n}"
        h = loads(text)
        assert h == g and dumps(h) == text
    f = tmp_path / "g.txt"
    write_graph(battery[3], f)
    assert read_graph(f) == battery[3]
