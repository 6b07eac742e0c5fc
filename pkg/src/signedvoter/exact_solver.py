"""Exact finite-state analysis of the signed voter model.

States are bitmasks over the vertices (bit x set iff the spin at x is +1).
The generator is sparse with at most |V| off-diagonal entries per row, so
graphs up to the default cap of 14 vertices solve in well under a second.

The module also carries the exact parity-augmented walk on
(vertex, parity) pairs, used as the oracle for the Monte Carlo parity and
occupation estimators.
"""
from __future__ import annotations

import csv
import io
import json
import warnings
from dataclasses import dataclass

import numpy as np
from scipy import sparse
from scipy.sparse import csgraph
from scipy.sparse.linalg import splu, spsolve
from scipy.stats import poisson

from .signed_graph import SignedGraph

__all__ = [
    "DEFAULT_CAP",
    "NumericalError",
    "GeneratorMatrix",
    "StationaryResult",
    "build_generator",
    "stationary_analysis",
    "transient_distribution",
    "one_point_function",
    "state_to_spins",
    "spins_to_state",
    "parity_walk_generator",
    "parity_occupation",
    "parity_absorption",
    "stationary_csv",
    "verdict_json",
]

DEFAULT_CAP = 14
TOL = 1e-10


class NumericalError(RuntimeError):
    """A linear solve missed its residual tolerance."""


@dataclass
class GeneratorMatrix:
    """Generator of the spin system on {-1, +1}^V in CSR form."""

    Q: sparse.csr_matrix
    n_vertices: int

    @property
    def n_states(self) -> int:
        return self.Q.shape[0]


@dataclass
class StationaryResult:
    recurrent_classes: list
    distributions: list
    ergodic: bool
    residual: float
    n_vertices: int

    @property
    def n_closed_classes(self) -> int:
        return len(self.recurrent_classes)


def state_to_spins(state: int, n: int) -> np.ndarray:
    return np.where((state >> np.arange(n)) & 1, 1, -1).astype(np.int8)


def spins_to_state(eta) -> int:
    eta = np.asarray(eta)
    return int(np.sum((eta > 0).astype(np.int64) << np.arange(len(eta))))


def build_generator(graph: SignedGraph, cap: int = DEFAULT_CAP) -> GeneratorMatrix:
    """Flip rates q(eta, eta^x) = #{y ~ x : eta(x) eta(y) != s(x,y)} / d(x)."""
    n = graph.n
    if n > cap:
        raise ValueError(f"|V|={n} exceeds the state cap {cap}")
    if cap > DEFAULT_CAP and n > DEFAULT_CAP:
        warnings.warn(f"building a {1 << n}-state generator", ResourceWarning)
    states = np.arange(1 << n, dtype=np.int64)
    spins = np.where((states[:, None] >> np.arange(n)) & 1, 1, -1).astype(np.int8)
    u, v, s = graph.edges()
    # disagree[e] for every state and edge
    disagree = (spins[:, u].astype(np.int8) * spins[:, v] != s).astype(np.float64)
    counts = np.zeros((len(states), n))
    np.add.at(counts.T, u, disagree.T)
    np.add.at(counts.T, v, disagree.T)
    rates = counts / graph.degree[None, :]
    rows, cols = np.nonzero(rates)
    vals = rates[rows, cols]
    target = rows ^ (1 << cols)
    off = sparse.csr_matrix((vals, (rows, target)), shape=(len(states), len(states)))
    diag = sparse.diags(-np.asarray(off.sum(axis=1)).ravel())
    return GeneratorMatrix((off + diag).tocsr(), n)


def stationary_analysis(gen: GeneratorMatrix) -> StationaryResult:
    """Closed communicating classes and one stationary law per class."""
    Q = gen.Q
    m = Q.shape[0]
    off = Q - sparse.diags(Q.diagonal())
    off.eliminate_zeros()
    pattern = (off > 0).astype(np.int8)
    k, labels = csgraph.connected_components(pattern, directed=True, connection="strong")
    # a class is closed when no edge leaves it
    r, c = pattern.nonzero()
    leaves = np.zeros(k, dtype=bool)
    leaves[labels[r][labels[r] != labels[c]]] = True
    closed = [int(j) for j in range(k) if not leaves[j]]
    classes, dists = [], []
    worst = 0.0
    for j in closed:
        idx = np.flatnonzero(labels == j)
        pi = np.zeros(m)
        if len(idx) == 1:
            pi[idx] = 1.0
        else:
            sub = Q[idx][:, idx].T.tolil()
            sub[0, :] = 1.0
            rhs = np.zeros(len(idx))
            rhs[0] = 1.0
            sol = spsolve(sub.tocsc(), rhs)
            pi[idx] = sol
        res = float(np.abs(Q.T @ pi).max()) if m else 0.0
        worst = max(worst, res, abs(pi.sum() - 1.0), float(max(0.0, -pi.min())))
        classes.append(idx)
        dists.append(np.clip(pi, 0.0, None))
    if worst > TOL:
        raise NumericalError(f"stationary solve residual {worst:.3e} exceeds {TOL}")
    # with one closed class every state reaches it on a finite chain
    ergodic = False
    if len(closed) == 1:
        reach = csgraph.breadth_first_order(pattern.T.tocsr(), int(classes[0][0]), directed=True,
                                            return_predecessors=False)
        ergodic = len(reach) == m
    return StationaryResult(classes, dists, ergodic, worst, gen.n_vertices)


def transient_distribution(gen: GeneratorMatrix, eta0, t: float, tol: float = 1e-12) -> np.ndarray:
    """Law of eta_t started from ``eta0`` by uniformization.

    Uses the rate max_i |q_ii| + 1 and truncates the Poisson series once the
    remaining tail mass is below ``tol``.
    """
    if t < 0:
        raise ValueError("t must be non-negative")
    start = np.zeros(gen.n_states)
    if np.ndim(eta0) == 0:
        start[int(eta0)] = 1.0
    else:
        start[spins_to_state(eta0)] = 1.0
    return _uniformize(gen.Q, start, t, tol)


def _uniformize(Q: sparse.spmatrix, p0: np.ndarray, t: float, tol: float = 1e-12) -> np.ndarray:
    if t == 0:
        return p0.copy()
    lam = float(np.abs(Q.diagonal()).max()) + 1.0
    P = (sparse.identity(Q.shape[0], format="csr") + Q / lam).T.tocsr()
    mu = lam * t
    kmax = int(poisson.isf(tol, mu)) + 1
    kmin = max(int(poisson.ppf(tol, mu)) - 1, 0)
    w = poisson.pmf(np.arange(kmin, kmax + 1), mu)
    v = p0.copy()
    for _ in range(kmin):
        v = P @ v
    out = w[0] * v
    for k in range(1, len(w)):
        v = P @ v
        out += w[k] * v
    return out


def one_point_function(result: StationaryResult) -> np.ndarray:
    """h(x) = E_pi[eta(x)], one row per stationary distribution."""
    n = result.n_vertices
    states = np.arange(1 << n)
    spins = np.where((states[:, None] >> np.arange(n)) & 1, 1.0, -1.0)
    return np.array([pi @ spins for pi in result.distributions])


# ---------------------------------------------------------------------------
# parity-augmented walk: state 2*v + p, p = 0 even / 1 odd


def parity_walk_generator(graph: SignedGraph) -> sparse.csr_matrix:
    """Generator of the rate-1 walk carrying the parity of its path."""
    n = graph.n
    src = graph.entry_src
    dst = graph.indices
    rate = 1.0 / graph.degree[src]
    flip = (graph.signs < 0).astype(np.int64)
    rows, cols, vals = [], [], []
    for p in (0, 1):
        rows.append(2 * src + p)
        cols.append(2 * dst + (p ^ flip))
        vals.append(rate)
    rows = np.concatenate(rows)
    cols = np.concatenate(cols)
    vals = np.concatenate(vals)
    off = sparse.csr_matrix((vals, (rows, cols)), shape=(2 * n, 2 * n))
    return (off - sparse.identity(2 * n)).tocsr()


def parity_occupation(graph: SignedGraph, x: int, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Exact (mu_plus, mu_minus) at time ``t`` for the walk started at ``x``."""
    p0 = np.zeros(2 * graph.n)
    p0[2 * int(x)] = 1.0
    dist = _uniformize(parity_walk_generator(graph), p0, t)
    return dist[0::2].copy(), dist[1::2].copy()


def parity_absorption(graph: SignedGraph, x: int, stop) -> dict[int, tuple[float, float]]:
    """Joint probabilities of (first stop vertex = y, path even / odd).

    Solves the absorbing jump chain on (vertex, parity) exactly.  Returns
    ``{y: (P(end=y, even), P(end=y, odd))}`` for every reachable stop vertex.
    """
    stop = sorted(set(int(v) for v in stop))
    n = graph.n
    if int(x) in stop:
        return {int(x): (1.0, 0.0)}
    is_stop = np.zeros(n, dtype=bool)
    is_stop[stop] = True
    trans = np.flatnonzero(~is_stop)
    pos = -np.ones(n, dtype=np.int64)
    pos[trans] = np.arange(len(trans))
    spos = -np.ones(n, dtype=np.int64)
    spos[stop] = np.arange(len(stop))
    src = graph.entry_src
    dst = graph.indices
    pr = 1.0 / graph.degree[src]
    flip = (graph.signs < 0).astype(np.int64)
    m = 2 * len(trans)
    qr, qc, qv, rr, rc, rv = [], [], [], [], [], []
    from_t = ~is_stop[src]
    for p in (0, 1):
        q = p ^ flip
        to_t = from_t & ~is_stop[dst]
        qr.append(2 * pos[src[to_t]] + p)
        qc.append(2 * pos[dst[to_t]] + q[to_t])
        qv.append(pr[to_t])
        to_s = from_t & is_stop[dst]
        rr.append(2 * pos[src[to_s]] + p)
        rc.append(2 * spos[dst[to_s]] + q[to_s])
        rv.append(pr[to_s])
    Qt = sparse.csr_matrix((np.concatenate(qv), (np.concatenate(qr), np.concatenate(qc))), shape=(m, m))
    R = sparse.csr_matrix((np.concatenate(rv), (np.concatenate(rr), np.concatenate(rc))),
                          shape=(m, 2 * len(stop)))
    A = (sparse.identity(m) - Qt).tocsc()
    lu = splu(A)
    rhs = np.zeros(m)
    rhs[2 * pos[int(x)]] = 1.0
    # row vector e_x (I - Q)^{-1} R
    green = lu.solve(rhs, trans="T")
    probs = R.T @ green
    out = {}
    for y in stop:
        pe, po = float(probs[2 * spos[y]]), float(probs[2 * spos[y] + 1])
        if pe + po > 0:
            out[y] = (pe, po)
    return out


# ---------------------------------------------------------------------------
# exports


def stationary_csv(result: StationaryResult, which: int = 0) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["state_bitmask", "probability"])
    pi = result.distributions[which]
    for s in np.flatnonzero(pi > 0).tolist():
        w.writerow([s, repr(float(pi[s]))])
    return buf.getvalue()


def verdict_json(result: StationaryResult) -> str:
    return json.dumps(
        {"ergodic": bool(result.ergodic), "n_closed_classes": result.n_closed_classes,
         "residual": float(result.residual)},
        sort_keys=True,
    )
