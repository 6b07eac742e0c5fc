"""Finite signed graphs: builders, path signs, balance and switching.

A :class:`SignedGraph` stores an undirected simple graph in CSR form with a
``+1``/``-1`` sign on every edge.  Vertex ids are contiguous ``0..n-1`` and
each adjacency row is sorted, so the same edge list always produces the same
object.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass
from typing import Iterable, Sequence

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph

from .rng import EDGE_SIGNS, RawStreams

__all__ = [
    "SignedGraph",
    "IIDSigns",
    "NotAdjacentError",
    "build_lattice_window",
    "build_frustrated_cycle",
    "build_paired_tree",
    "build_z4_staircase",
    "staircase_scales",
    "path_sign",
    "find_unsatisfied_cycle",
    "gauge_partition",
    "switch",
    "dumps",
    "loads",
    "write_graph",
    "read_graph",
]

LATTICE_KINDS = ("lattice-open", "lattice-periodic")


class NotAdjacentError(ValueError):
    """Raised when a path steps between non-adjacent vertices."""


class SignedGraph:
    """Immutable finite signed graph.

    Parameters
    ----------
    n : int
        Number of vertices.
    edges : iterable of (u, v, s)
        Undirected edges with sign ``s`` in {+1, -1}.  Each unordered pair may
        appear once.
    labels : sequence of tuple of int, optional
        Per-vertex coordinate tag (lattice coordinates or tree address).
    kind : str
        Builder tag, e.g. ``"lattice-open"``; ``"custom"`` for hand-built graphs.
    """

    def __init__(self, n: int, edges, labels=None, kind: str = "custom"):
        n = int(n)
        if n < 1:
            raise ValueError("graph needs at least one vertex")
        arr = np.asarray(list(edges) if not isinstance(edges, np.ndarray) else edges, dtype=np.int64)
        if arr.size == 0:
            raise ValueError("graph has no edges; every vertex must have degree >= 1")
        arr = arr.reshape(-1, 3)
        u, v, s = arr[:, 0], arr[:, 1], arr[:, 2]
        if np.any((u < 0) | (u >= n) | (v < 0) | (v >= n)):
            raise ValueError("edge endpoint out of range")
        if np.any(u == v):
            raise ValueError("self-loops are not allowed")
        if np.any((s != 1) & (s != -1)):
            raise ValueError("edge signs must be +1 or -1")
        lo, hi = np.minimum(u, v), np.maximum(u, v)
        key = lo * n + hi
        order = np.argsort(key, kind="stable")
        if np.any(np.diff(key[order]) == 0):
            raise ValueError("parallel edges are not allowed")
        self.n = n
        self._edge_u = lo[order]
        self._edge_v = hi[order]
        self._edge_s = s[order].astype(np.int8)

        rows = np.concatenate([self._edge_u, self._edge_v])
        cols = np.concatenate([self._edge_v, self._edge_u])
        sg = np.concatenate([self._edge_s, self._edge_s])
        o = np.lexsort((cols, rows))
        rows, cols, sg = rows[o], cols[o], sg[o]
        self.indptr = np.searchsorted(rows, np.arange(n + 1)).astype(np.int64)
        self.indices = cols.astype(np.int64)
        self.signs = sg.astype(np.int8)
        self.degree = np.diff(self.indptr)
        if np.any(self.degree == 0):
            raise ValueError("every vertex must have degree >= 1")
        self._keys = rows * n + cols
        self.entry_src = rows.astype(np.int64)
        for a in (self.entry_src, self.indptr, self.indices, self.signs, self.degree, self._keys,
                  self._edge_u, self._edge_v, self._edge_s):
            a.flags.writeable = False

        if labels is not None:
            labels = [tuple(int(c) for c in lab) for lab in labels]
            if len(labels) != n:
                raise ValueError("labels must have one entry per vertex")
        self.labels = labels
        self.kind = kind
        self._tables = None
        self._coord_index = None

    # -- basic access ---------------------------------------------------
    @property
    def vertex_count(self) -> int:
        return self.n

    @property
    def edge_count(self) -> int:
        return len(self._edge_s)

    def neighbors(self, x: int) -> np.ndarray:
        return self.indices[self.indptr[x]:self.indptr[x + 1]]

    def neighbor_signs(self, x: int) -> np.ndarray:
        return self.signs[self.indptr[x]:self.indptr[x + 1]]

    def adjacency(self, x: int) -> list[tuple[int, int]]:
        """Sorted ``(neighbor, sign)`` list of vertex ``x``."""
        return [(int(y), int(s)) for y, s in zip(self.neighbors(x), self.neighbor_signs(x))]

    def edges(self) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Canonical edge arrays ``(u, v, s)`` with ``u < v``, sorted."""
        return self._edge_u, self._edge_v, self._edge_s

    def edge_list(self) -> list[tuple[int, int, int]]:
        return [(int(a), int(b), int(c)) for a, b, c in zip(*self.edges())]

    def negative_edges(self) -> list[tuple[int, int]]:
        u, v, s = self.edges()
        m = s < 0
        return [(int(a), int(b)) for a, b in zip(u[m], v[m])]

    def _entry(self, u, v):
        u = np.asarray(u, dtype=np.int64)
        v = np.asarray(v, dtype=np.int64)
        key = u * self.n + v
        pos = np.searchsorted(self._keys, key)
        pos = np.minimum(pos, len(self._keys) - 1)
        ok = (self._keys[pos] == key) & (u >= 0) & (u < self.n) & (v >= 0) & (v < self.n)
        return pos, ok

    def has_edge(self, u: int, v: int) -> bool:
        return bool(self._entry(u, v)[1])

    def sign(self, u, v):
        """Sign of edge ``{u, v}``; vectorised over array arguments."""
        pos, ok = self._entry(u, v)
        if not np.all(ok):
            raise NotAdjacentError(f"not an edge: ({u}, {v})")
        out = self.signs[pos]
        return int(out) if np.ndim(out) == 0 else out

    def is_frustrated(self) -> bool:
        return find_unsatisfied_cycle(self) is not None

    # -- derived graphs -------------------------------------------------
    def with_signs(self, negatives: Iterable[tuple[int, int]] = ()) -> "SignedGraph":
        """Same topology; exactly the listed edges negative."""
        u, v, _ = self.edges()
        s = np.ones(len(u), dtype=np.int64)
        neg = [(min(a, b), max(a, b)) for a, b in negatives]
        if neg:
            neg = np.asarray(neg, dtype=np.int64)
            pos, ok = self._entry(neg[:, 0], neg[:, 1])
            if not np.all(ok):
                raise NotAdjacentError("negative-edge list references a non-edge")
            edge_keys = u * self.n + v
            idx = np.searchsorted(edge_keys, neg[:, 0] * self.n + neg[:, 1])
            s[idx] = -1
        return SignedGraph(self.n, np.column_stack([u, v, s]), self.labels, self.kind)

    # -- lattice helpers ------------------------------------------------
    def vertex_at(self, coord: Sequence[int]) -> int:
        if self.labels is None:
            raise ValueError("graph has no coordinate labels")
        if self._coord_index is None:
            self._coord_index = {lab: i for i, lab in enumerate(self.labels)}
        return self._coord_index[tuple(int(c) for c in coord)]

    def window_boundary(self) -> np.ndarray:
        """Boolean mask of vertices on the geometric boundary of an open window.

        Only open lattice windows have a boundary; every other graph kind
        returns an all-False mask.
        """
        if self.kind != "lattice-open" or self.labels is None:
            return np.zeros(self.n, dtype=bool)
        dim = len(self.labels[0])
        return self.degree < 2 * dim

    def neighbor_table(self) -> tuple[np.ndarray, np.ndarray]:
        """Padded ``(n, max_degree)`` neighbor and sign tables for vectorised walks."""
        if self._tables is None:
            dmax = int(self.degree.max())
            nb = np.zeros((self.n, dmax), dtype=np.int64)
            sg = np.ones((self.n, dmax), dtype=np.int8)
            col = np.arange(len(self.indices)) - np.repeat(self.indptr[:-1], self.degree)
            row = np.repeat(np.arange(self.n), self.degree)
            nb[row, col] = self.indices
            sg[row, col] = self.signs
            self._tables = (nb, sg)
        return self._tables

    def csr_matrix(self) -> sparse.csr_matrix:
        """Signed adjacency matrix."""
        return sparse.csr_matrix(
            (self.signs.astype(np.float64), self.indices, self.indptr), shape=(self.n, self.n)
        )

    def digest(self) -> str:
        return hashlib.sha256(dumps(self).encode()).hexdigest()

    def __eq__(self, other):
        if not isinstance(other, SignedGraph):
            return NotImplemented
        return (
            self.n == other.n
            and np.array_equal(self._edge_u, other._edge_u)
            and np.array_equal(self._edge_v, other._edge_v)
            and np.array_equal(self._edge_s, other._edge_s)
            and self.labels == other.labels
            and self.kind == other.kind
        )

    def __hash__(self):
        return hash(self.digest())

    def __repr__(self):
        neg = int(np.sum(self._edge_s < 0))
        return f"SignedGraph(n={self.n}, edges={self.edge_count}, negative={neg}, kind={self.kind!r})"


# ---------------------------------------------------------------------------
# builders


@dataclass(frozen=True)
class IIDSigns:
    """Each edge independently negative with probability ``p``."""

    p: float
    seed: int


def iid_negative_mask(n: int, u: np.ndarray, v: np.ndarray, p: float, seed: int) -> np.ndarray:
    """Negative-edge indicator keyed by (seed, canonical edge id ``u*n+v``)."""
    streams = RawStreams(seed, EDGE_SIGNS)
    out = np.zeros(len(u), dtype=bool)
    for i, (a, b) in enumerate(zip(u, v)):
        streams.open(int(a) * n + int(b))
        out[i] = streams.uniforms(1)[0] < p
    return out


def _apply_signs(n, u, v, signs, labels, kind):
    s = np.ones(len(u), dtype=np.int64)
    base = SignedGraph(n, np.column_stack([u, v, s]), labels, kind)
    if isinstance(signs, str):
        if signs != "all-positive":
            raise ValueError(f"unknown sign rule {signs!r}")
        return base
    if isinstance(signs, IIDSigns):
        if not 0.0 <= signs.p <= 1.0:
            raise ValueError("p must lie in [0, 1]")
        eu, ev, _ = base.edges()
        mask = iid_negative_mask(n, eu, ev, signs.p, signs.seed)
        return base.with_signs(zip(eu[mask].tolist(), ev[mask].tolist()))
    return base.with_signs(signs)


def build_lattice_window(dimension: int, extent, boundary: str = "periodic", signs="all-positive") -> SignedGraph:
    """Finite window of Z^d.

    Parameters
    ----------
    dimension : int
        1 to 4.
    extent : int or sequence of int
        Number of sites per axis (each >= 2).
    boundary : {"periodic", "open"}
    signs : "all-positive", list of (u, v) negative edges, or IIDSigns

    Vertex ``i`` carries the coordinate ``np.unravel_index(i, extent)``.
    """
    if dimension not in (1, 2, 3, 4):
        raise ValueError("dimension must be 1, 2, 3 or 4")
    if np.ndim(extent) == 0:
        extent = [int(extent)] * dimension
    extent = [int(e) for e in extent]
    if len(extent) != dimension:
        raise ValueError("extent must give one size per axis")
    if any(e < 2 for e in extent):
        raise ValueError("extent must be >= 2 on every axis")
    if boundary not in ("periodic", "open"):
        raise ValueError("boundary must be 'periodic' or 'open'")
    shape = tuple(extent)
    n = int(np.prod(shape))
    coords = np.indices(shape).reshape(dimension, -1)
    us, vs = [], []
    ids = np.arange(n)
    for axis in range(dimension):
        nxt = coords.copy()
        nxt[axis] += 1
        if boundary == "periodic":
            nxt[axis] %= shape[axis]
            keep = np.ones(n, dtype=bool)
        else:
            keep = nxt[axis] < shape[axis]
        nb = np.ravel_multi_index(tuple(np.minimum(nxt[:, keep], np.array(shape)[:, None] - 1)), shape)
        us.append(ids[keep])
        vs.append(nb)
    u = np.concatenate(us)
    v = np.concatenate(vs)
    lo, hi = np.minimum(u, v), np.maximum(u, v)
    # periodic axes of length 2 produce each edge twice
    key = np.unique(lo * n + hi)
    u, v = key // n, key % n
    labels = [tuple(c) for c in coords.T.tolist()]
    return _apply_signs(n, u, v, signs, labels, f"lattice-{boundary}")


def build_frustrated_cycle(n: int, negative_count: int) -> SignedGraph:
    """Cycle C_n whose first ``negative_count`` edges ({0,1}, {1,2}, ...) are negative."""
    if n < 3:
        raise ValueError("a cycle needs n >= 3")
    if not 0 <= negative_count <= n:
        raise ValueError("negative_count must lie in [0, n]")
    edges = [(i, (i + 1) % n, -1 if i < negative_count else 1) for i in range(n)]
    return SignedGraph(n, edges, kind="cycle")


def build_paired_tree(children_per_generation: Sequence[int], pairing_generations: Sequence[int], depth: int) -> SignedGraph:
    """Rooted tree with negative sibling pairings at selected generations.

    Generation ``g`` (root = 0) gives every vertex ``children_per_generation[g]``
    children.  At each generation listed in ``pairing_generations`` siblings are
    paired in label order (1st with 2nd, 3rd with 4th, ...) by a negative edge.
    Tree edges are positive.  Labels are tree addresses (tuples of child ranks).
    """
    n_i = [int(c) for c in children_per_generation]
    if depth < 1 or depth > len(n_i):
        raise ValueError("depth must lie in [1, len(children_per_generation)]")
    if any(c < 1 for c in n_i[:depth]):
        raise ValueError("every generation needs at least one child")
    gens = [int(g) for g in pairing_generations]
    if any(b <= a for a, b in zip(gens, gens[1:])):
        raise ValueError("pairing generations must be strictly increasing")
    for g in gens:
        if not 1 <= g <= depth:
            raise ValueError(f"pairing generation {g} outside 1..depth")
        if n_i[g - 1] % 2:
            raise ValueError(f"odd number of children at pairing generation {g}")
    labels = [()]
    edges = []
    frontier = [0]
    for g in range(1, depth + 1):
        k = n_i[g - 1]
        nxt = []
        for parent in frontier:
            first = len(labels)
            for c in range(k):
                labels.append(labels[parent] + (c,))
                edges.append((parent, first + c, 1))
                nxt.append(first + c)
            if g in gens:
                for c in range(0, k, 2):
                    edges.append((first + c, first + c + 1, -1))
        frontier = nxt
    return SignedGraph(len(labels), edges, labels, kind="tree")


def staircase_scales(count: int, kappa: float, first: int = 1) -> list[int]:
    """Scales with R_j = ceil(2 j^2 R_{j-1} / kappa), starting from ``first``.

    Each scale is at least one more than the previous, so large ``kappa``
    still gives a strictly increasing list.
    """
    if count < 1 or kappa <= 0 or first < 1:
        raise ValueError("need count >= 1, kappa > 0, first >= 1")
    scales = [int(first)]
    for j in range(2, count + 1):
        scales.append(max(scales[-1] + 1, int(math.ceil(2 * j * j * scales[-1] / kappa))))
    return scales


def build_z4_staircase(scales: Sequence[int], window_extent: int) -> SignedGraph:
    """Open Z^4 window [-W, W]^4 with negative slabs at each scale.

    Edge (x, x + e1) is negative exactly when x lies in {R_j} x [-R_j, R_j]^3
    for a scale R_j whose slab (including the far endpoint R_j + 1) fits in
    the window.  All other edges are positive.
    """
    scales = [int(r) for r in scales]
    if not scales or any(r < 1 for r in scales):
        raise ValueError("scales must be positive integers")
    if any(b <= a for a, b in zip(scales, scales[1:])):
        raise ValueError("scales must be strictly increasing")
    w = int(window_extent)
    if scales[0] + 1 > w:
        raise ValueError("window too small to contain the first slab")
    side = 2 * w + 1
    g = build_lattice_window(4, side, "open")
    labels = [tuple(c - w for c in lab) for lab in g.labels]
    u, v, _ = g.edges()
    cu = np.asarray(labels)[u]
    cv = np.asarray(labels)[v]
    along_e1 = (cv[:, 0] - cu[:, 0] == 1) & np.all(cv[:, 1:] == cu[:, 1:], axis=1)
    neg = np.zeros(len(u), dtype=bool)
    for r in scales:
        if r + 1 > w:
            continue
        neg |= along_e1 & (cu[:, 0] == r) & np.all(np.abs(cu[:, 1:]) <= r, axis=1)
    s = np.where(neg, -1, 1)
    return SignedGraph(g.n, np.column_stack([u, v, s]), labels, "lattice-open")


# ---------------------------------------------------------------------------
# signs, balance, switching


def path_sign(graph: SignedGraph, path: Sequence[int]) -> int:
    """Product of edge signs along a vertex sequence (``+1`` for no jumps)."""
    p = np.asarray(path, dtype=np.int64)
    if len(p) < 2:
        return 1
    s = graph.sign(p[:-1], p[1:])
    return -1 if int(np.sum(s < 0)) % 2 else 1


def _spanning_potential(graph: SignedGraph):
    """BFS forest: multiplicative sign potential and predecessors."""
    n = graph.n
    adj = sparse.csr_matrix((np.ones(len(graph.indices)), graph.indices, graph.indptr), shape=(n, n))
    pot = np.zeros(n, dtype=np.int8)
    pred = np.full(n, -1, dtype=np.int64)
    depth = np.zeros(n, dtype=np.int64)
    for root in range(n):
        if pot[root]:
            continue
        order, p = csgraph.breadth_first_order(adj, root, directed=False, return_predecessors=True)
        pot[root] = 1
        rest = order[1:]
        par = p[rest]
        sg = graph.sign(par, rest)
        for v, a, s in zip(rest.tolist(), par.tolist(), sg.tolist()):
            pot[v] = pot[a] * s
            depth[v] = depth[a] + 1
        pred[rest] = par
    return pot, pred, depth


def _canonical_cycle(cycle: list[int]) -> list[int]:
    body = cycle[:-1]
    i = body.index(min(body))
    body = body[i:] + body[:i]
    if len(body) > 2 and body[-1] < body[1]:
        body = [body[0]] + body[1:][::-1]
    return body + [body[0]]


def find_unsatisfied_cycle(graph: SignedGraph) -> list[int] | None:
    """Some closed vertex sequence with negative sign, or None if balanced."""
    pot, pred, depth = _spanning_potential(graph)
    u, v, s = graph.edges()
    bad = np.flatnonzero(pot[u].astype(np.int64) * pot[v] * s == -1)
    if len(bad) == 0:
        return None
    x, y = int(u[bad[0]]), int(v[bad[0]])
    left, right = [x], [y]
    a, b = x, y
    while a != b:
        if depth[a] >= depth[b]:
            a = int(pred[a])
            left.append(a)
        else:
            b = int(pred[b])
            right.append(b)
    cycle = left + right[-2::-1] + [x]
    return _canonical_cycle(cycle)


def gauge_partition(graph: SignedGraph) -> np.ndarray | None:
    """Sides in {+1, -1} with side(x) side(y) = s(x, y) on every edge, or None.

    The BFS root of each component gets side +1.
    """
    pot, _, _ = _spanning_potential(graph)
    u, v, s = graph.edges()
    if np.any(pot[u].astype(np.int64) * pot[v] * s == -1):
        return None
    return pot.copy()


def switch(graph: SignedGraph, side) -> SignedGraph:
    """Gauge transform: s'(x, y) = side(x) s(x, y) side(y)."""
    side = np.asarray(side, dtype=np.int64)
    if side.shape != (graph.n,) or np.any(np.abs(side) != 1):
        raise ValueError("partition must give +1/-1 for every vertex")
    u, v, s = graph.edges()
    s2 = side[u] * s.astype(np.int64) * side[v]
    return SignedGraph(graph.n, np.column_stack([u, v, s2]), graph.labels, graph.kind)


# ---------------------------------------------------------------------------
# text format


def dumps(graph: SignedGraph) -> str:
    lines = [f"svmgraph v1 {graph.n}"]
    if graph.kind != "custom":
        lines.append(f"# kind {graph.kind}")
    if graph.labels is not None:
        for i, lab in enumerate(graph.labels):
            lines.append(" ".join(["# coord", str(i), *map(str, lab)]))
    for a, b, c in graph.edge_list():
        lines.append(f"{a} {b} {'+1' if c > 0 else '-1'}")
    return "\n".join(lines) + "\n"


def loads(text: str) -> SignedGraph:
    lines = text.splitlines()
    if not lines:
        raise ValueError("empty graph file")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "svmgraph" or head[1] != "v1":
        raise ValueError("missing 'svmgraph v1 <n>' header")
    n = int(head[2])
    kind = "custom"
    labels: dict[int, tuple] = {}
    edges = []
    for ln in lines[1:]:
        if not ln.strip():
            continue
        if ln.startswith("#"):
            parts = ln[1:].split()
            if parts and parts[0] == "kind":
                kind = parts[1]
            elif parts and parts[0] == "coord":
                labels[int(parts[1])] = tuple(int(c) for c in parts[2:])
            continue
        a, b, c = ln.split()
        if c not in ("+1", "-1"):
            raise ValueError(f"bad sign {c!r}")
        edges.append((int(a), int(b), int(c)))
    lab = None
    if labels:
        if sorted(labels) != list(range(n)):
            raise ValueError("coord block must label every vertex")
        lab = [labels[i] for i in range(n)]
    return SignedGraph(n, edges, lab, kind)


def write_graph(graph: SignedGraph, path) -> None:
    with open(path, "w", newline="\n") as fh:
        fh.write(dumps(graph))


def read_graph(path) -> SignedGraph:
    with open(path) as fh:
        return loads(fh.read())
