from __future__ import annotations

import itertools

import networkx as nx
import numpy as np
import pytest

from signedvoter.signed_graph import SignedGraph


def random_connected_signed(rng: np.random.Generator, n: int, p_edge: float = 0.5,
                            p_neg: float = 0.5) -> SignedGraph:
    """Random connected signed graph: a random spanning tree plus extra edges."""
    order = rng.permutation(n)
    edges = {}
    for i in range(1, n):
        a, b = int(order[i]), int(order[rng.integers(i)])
        edges[(min(a, b), max(a, b))] = 1
    for a, b in itertools.combinations(range(n), 2):
        if (a, b) not in edges and rng.random() < p_edge:
            edges[(a, b)] = 1
    return SignedGraph(n, [(a, b, -1 if rng.random() < p_neg else 1) for (a, b) in edges])


def has_odd_cycle_bruteforce(graph: SignedGraph) -> bool:
    """Enumerate every simple cycle and look for a negative sign product."""
    G = nx.Graph()
    G.add_nodes_from(range(graph.n))
    for u, v, s in graph.edge_list():
        G.add_edge(u, v, s=s)
    for cyc in nx.simple_cycles(G):
        if len(cyc) < 3:
            continue
        prod = 1
        for a, b in zip(cyc, cyc[1:] + cyc[:1]):
            prod *= G[a][b]["s"]
        if prod < 0:
            return True
    return False


@pytest.fixture
def triangle():
    from signedvoter.signed_graph import build_frustrated_cycle

    return build_frustrated_cycle(3, 1)


@pytest.fixture
def battery():
    """Small connected test graphs, frustrated and balanced."""
    from signedvoter.signed_graph import (build_frustrated_cycle, build_lattice_window,
                                          build_paired_tree, IIDSigns)

    rng = np.random.default_rng(2024)
    gs = [
        SignedGraph(2, [(0, 1, 1)]),
        SignedGraph(2, [(0, 1, -1)]),
        build_frustrated_cycle(3, 0),
        build_frustrated_cycle(3, 1),
        build_frustrated_cycle(4, 2),
        build_frustrated_cycle(5, 3),
        build_paired_tree([2, 2], [2], 2),
        build_lattice_window(2, [2, 3], "open", IIDSigns(0.5, 3)),
        build_lattice_window(1, 4, "periodic", [(0, 1)]),
    ]
    gs += [random_connected_signed(rng, int(rng.integers(3, 8)), 0.4, 0.3) for _ in range(12)]
    return gs


ACCEPTANCE_LINES: list[str] = []


@pytest.fixture
def report(request):
    """Record one pass/fail line per acceptance criterion."""
    lines = []
    yield lines.append
    failed = getattr(request.node, "rep_call", None)
    ok = failed is not None and failed.passed
    detail = "; ".join(lines)
    ACCEPTANCE_LINES.append(f"{request.node.name}: {'PASS' if ok else 'FAIL'}  {detail}")


@pytest.hookimpl(hookwrapper=True)
def pytest_runtest_makereport(item, call):
    outcome = yield
    rep = outcome.get_result()
    if rep.when == "call":
        item.rep_call = rep


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
