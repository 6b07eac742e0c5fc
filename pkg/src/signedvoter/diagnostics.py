"""Monte Carlo ergodicity diagnostics for signed random walks.

Walk ensembles are simulated in blocks.  Block ``b`` of an estimate with seed
``s`` always draws from the keyed stream ``(s, BATCH, b)``, so block results
do not depend on how blocks are spread over worker processes and aggregation
is a plain sum of counts.

Parity statistics only need the jump chain of the walk (the parity of the
path stopped at a hitting time does not depend on the holding times), so the
absorbing estimators never draw exponential clocks.
"""
from __future__ import annotations

import csv
import io
import math
from collections import deque
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .rng import BATCH, derive_seed, keyed_rng
from .signed_graph import SignedGraph
from .walkers import SignedWalkPath, hitting_time

__all__ = [
    "ConfigurationError",
    "ShellMembershipError",
    "ShellSystem",
    "ParityEstimate",
    "OccupationMeasurePair",
    "ShellStatistics",
    "SignClass",
    "SiteSigns",
    "MIN_HITS",
    "wilson_halfwidth",
    "estimate_parity",
    "estimate_shell_statistics",
    "classify_sign",
    "check_compatibility",
    "assign_site_signs",
    "estimate_mu_pm",
    "tv_gap",
    "signed_harmonic_residual",
    "parity_csv",
    "shell_csv",
    "occupation_csv",
]

MIN_HITS = 25
BLOCK = 4096
_Z95 = 1.959963984540054
_MAX_STEPS = 10_000_000


class ConfigurationError(ValueError):
    """The requested estimate is ill-posed on this graph/shell layout."""


class ShellMembershipError(ValueError):
    """Vertices do not sit on the shells an operation requires."""


# ---------------------------------------------------------------------------
# shells


@dataclass
class ShellSystem:
    """Nested shells around a center vertex of a host window.

    ``shells[i]`` is the vertex set of level ``levels[i]``.  Built from radii
    with :meth:`from_window`, or given explicitly for hand-made layouts.
    """

    window: SignedGraph
    center: int
    levels: list
    radii: list
    shells: list

    def __post_init__(self):
        self.shells = [np.unique(np.asarray(s, dtype=np.int64)) for s in self.shells]
        self.levels = [int(v) for v in self.levels]
        if not (len(self.shells) == len(self.levels) == len(self.radii)):
            raise ConfigurationError("levels, radii and shells must have equal length")
        if len(self.shells) == 0:
            raise ConfigurationError("no shells")
        if any(b <= a for a, b in zip(self.levels, self.levels[1:])):
            raise ConfigurationError("levels must be strictly increasing")
        seen = np.zeros(self.window.n, dtype=bool)
        for lvl, s in zip(self.levels, self.shells):
            if len(s) == 0:
                raise ConfigurationError(f"shell {lvl} is empty")
            if np.any(seen[s]):
                raise ConfigurationError("shells must be pairwise disjoint")
            seen[s] = True
        self._level_of = {int(v): lvl for lvl, s in zip(self.levels, self.shells) for v in s.tolist()}

    @classmethod
    def from_window(cls, window: SignedGraph, center=None, levels: Sequence[int] | None = None,
                    radii: Sequence[float] | None = None) -> "ShellSystem":
        """Shells C = {z : |z - c| > R, some neighbor y has |y - c| <= R}.

        Radii default to 2**level.  Every shell must lie wholly inside the
        window, at distance >= 1 from nothing outside it: a shell whose
        radius pokes past the window edge is rejected.
        """
        if window.labels is None:
            raise ConfigurationError("shells need a window with coordinate labels")
        coords = np.asarray(window.labels, dtype=np.float64)
        extent = coords.max(axis=0).astype(np.int64) + 1
        if center is None:
            c0 = tuple(int(e) // 2 for e in extent)
            center = window.vertex_at(c0)
        elif np.ndim(center) > 0:
            center = window.vertex_at(center)
        center = int(center)
        cc = coords[center]
        if radii is None:
            if levels is None:
                levels = []
                r = 0
                while np.all(cc - (2 ** r + 1) >= 0) and np.all(cc + 2 ** r + 1 <= extent - 1):
                    levels.append(r)
                    r += 1
                if not levels:
                    raise ConfigurationError("window too small for any shell")
            radii = [float(2 ** lv) for lv in levels]
        else:
            radii = [float(r) for r in radii]
            if levels is None:
                levels = list(range(1, len(radii) + 1))
        if any(b <= a for a, b in zip(radii, radii[1:])):
            raise ConfigurationError("radii must be increasing")
        d2 = ((coords - cc) ** 2).sum(axis=1)
        A = window.csr_matrix()
        A.data = np.abs(A.data)
        shells = []
        for R in radii:
            reach = math.floor(R) + 1
            if np.any(cc - reach < 0) or np.any(cc + reach > extent - 1):
                raise ConfigurationError(f"shell of radius {R} does not fit the window")
            inside = d2 <= R * R
            touches = (A @ inside.astype(np.float64)) > 0
            shells.append(np.flatnonzero(touches & ~inside))
        return cls(window, center, list(levels), radii, shells)

    def shell(self, level: int) -> np.ndarray:
        return self.shells[self.levels.index(int(level))]

    def level_of(self, vertex: int) -> int | None:
        return self._level_of.get(int(vertex))

    def next_level(self, level: int) -> int | None:
        i = self.levels.index(int(level))
        return self.levels[i + 1] if i + 1 < len(self.levels) else None


# ---------------------------------------------------------------------------
# result types


def wilson_halfwidth(k: int, n: int, z: float = _Z95) -> float:
    """Half-width of the Wilson score interval for k successes out of n."""
    if n == 0:
        return 0.5
    p = k / n
    z2 = z * z
    return float(z / (1 + z2 / n) * math.sqrt(p * (1 - p) / n + z2 / (4 * n * n)))


@dataclass
class ParityEstimate:
    """Parity of the stopped path, conditioned on the endpoint."""

    p_even: float
    p_odd: float
    n_samples: int
    ci_halfwidth: float
    conditioning: str
    hit_fraction: float = 0.0
    starved: bool = False

    @property
    def N(self) -> float:
        return min(self.p_even, self.p_odd)


@dataclass
class OccupationMeasurePair:
    mu_plus: np.ndarray
    mu_minus: np.ndarray
    t: float
    samples: int


@dataclass
class ShellStatistics:
    I_trunc: float
    H_trunc: float
    I_halfwidth: float
    I_terms: dict
    H_terms: dict
    pairs: list
    starved: list
    z: int


@dataclass(frozen=True)
class SignClass:
    value: int
    starved: bool
    p_even: float
    n_samples: int


@dataclass
class SiteSigns:
    signs: dict
    reference_sites: list
    starved: list = field(default_factory=list)


# ---------------------------------------------------------------------------
# batch walks


def _run_blocks(fn, jobs: list, workers: int):
    if workers <= 1 or len(jobs) <= 1:
        return [fn(j) for j in jobs]
    with ProcessPoolExecutor(max_workers=workers) as ex:
        return list(ex.map(fn, jobs))


def _absorb_block(args):
    graph, x, stop_mask, m, seed, b = args
    nb, sg = graph.neighbor_table()
    deg = graph.degree
    rng = keyed_rng(seed, BATCH, b)
    pos = np.full(m, x, dtype=np.int64)
    odd = np.zeros(m, dtype=bool)
    alive = np.arange(m)
    steps = 0
    while alive.size:
        p = pos[alive]
        j = (rng.random(alive.size) * deg[p]).astype(np.int64)
        q = nb[p, j]
        odd[alive] ^= sg[p, j] < 0
        pos[alive] = q
        alive = alive[~stop_mask[q]]
        steps += 1
        if steps > _MAX_STEPS:
            raise RuntimeError("walks failed to reach the stop set")
    return pos, odd


def _check_reachable(graph: SignedGraph, x: int, stop_mask: np.ndarray) -> None:
    """The walk from x must hit the stop set before the window boundary."""
    boundary = graph.window_boundary() & ~stop_mask
    seen = np.zeros(graph.n, dtype=bool)
    seen[x] = True
    queue = deque([x])
    hits_stop = False
    while queue:
        v = queue.popleft()
        if boundary[v]:
            raise ConfigurationError(
                f"walk from {x} can reach the window boundary at {v} before the stop set")
        for w in graph.neighbors(v).tolist():
            if stop_mask[w]:
                hits_stop = True
            elif not seen[w]:
                seen[w] = True
                queue.append(w)
    if not hits_stop:
        raise ConfigurationError(f"stop set unreachable from {x}")


def _absorb(graph, x, stop, samples, seed, workers=1):
    stop_mask = np.zeros(graph.n, dtype=bool)
    stop_mask[np.asarray(list(stop), dtype=np.int64)] = True
    x = int(x)
    if stop_mask[x]:
        raise ConfigurationError("start vertex lies in the stop set")
    _check_reachable(graph, x, stop_mask)
    jobs = [(graph, x, stop_mask, min(BLOCK, samples - lo), seed, b)
            for b, lo in enumerate(range(0, samples, BLOCK))]
    parts = _run_blocks(_absorb_block, jobs, workers)
    ends = np.concatenate([p[0] for p in parts])
    odd = np.concatenate([p[1] for p in parts])
    return ends, odd


def _tabulate(ends, odd, samples, label, min_hits):
    out = {}
    hits = np.bincount(ends)
    odds = np.bincount(ends, weights=odd)
    for y in np.flatnonzero(hits).tolist():
        n = int(hits[y])
        k_odd = int(round(odds[y]))
        p_odd = k_odd / n
        out[y] = ParityEstimate(
            p_even=1.0 - p_odd,
            p_odd=p_odd,
            n_samples=n,
            ci_halfwidth=wilson_halfwidth(k_odd, n),
            conditioning=f"{label}, first hit at {y}",
            hit_fraction=n / samples,
            starved=n < min_hits,
        )
    return out


def estimate_parity(graph: SignedGraph, x: int, stop_shell: Iterable[int], samples: int, seed: int,
                    workers: int = 1, min_hits: int = MIN_HITS) -> dict[int, ParityEstimate]:
    """Parity of the walk from ``x`` stopped on its first visit to ``stop_shell``.

    Returns one estimate per endpoint that was actually reached.  Endpoints
    with fewer than ``min_hits`` conditioned samples are marked ``starved``.

    Raises
    ------
    ConfigurationError
        If ``x`` is in the stop set, the stop set is unreachable, or the walk
        can reach the window boundary first.
    """
    if samples <= 0:
        raise ValueError("samples must be positive")
    ends, odd = _absorb(graph, x, stop_shell, int(samples), int(seed), workers)
    return _tabulate(ends, odd, int(samples), f"walk from {int(x)}", min_hits)


def _hit_kernel(graph, z, stop, samples, seed, workers=1) -> dict[int, float]:
    ends, _ = _absorb(graph, z, stop, samples, seed, workers)
    counts = np.bincount(ends)
    return {int(y): counts[y] / samples for y in np.flatnonzero(counts)}


def estimate_shell_statistics(shells: ShellSystem, n_max: int, samples: int, seed: int,
                              z: int | None = None, workers: int = 1,
                              min_hits: int = MIN_HITS) -> ShellStatistics:
    """Truncated I and H(z) over consecutive shell pairs with level <= n_max.

    Pairs (x, y) with fewer than ``min_hits`` conditioned samples are left
    out of both sums and listed in ``starved``.
    """
    if n_max not in shells.levels or shells.next_level(n_max) is None:
        raise ConfigurationError(f"n_max={n_max} needs shells at levels n_max and the next one")
    g = shells.window
    z = shells.center if z is None else int(z)
    I_terms, H_terms, pairs, starved = {}, {}, [], []
    var = 0.0
    for n in shells.levels:
        if n > n_max:
            break
        nxt = shells.next_level(n)
        inner, outer = shells.shell(n), shells.shell(nxt)
        w = 2.0 ** -(4 * n + 2)
        if shells.level_of(z) == n:
            kz = {z: 1.0}
        else:
            kz = _hit_kernel(g, z, inner, samples, derive_seed(seed, 0, n), workers)
        i_sum = h_sum = 0.0
        for x in inner.tolist():
            est = estimate_parity(g, x, outer, samples, derive_seed(seed, 1, n, x), workers, min_hits)
            for y in sorted(est):
                e = est[y]
                pairs.append((n, x, y, e))
                if e.starved:
                    starved.append((n, x, y))
                    continue
                i_sum += w * e.N
                var += (w * e.ci_halfwidth) ** 2
                h_sum += kz.get(x, 0.0) * e.hit_fraction * e.N
        I_terms[n] = i_sum
        H_terms[n] = h_sum
    return ShellStatistics(
        I_trunc=float(sum(I_terms.values())),
        H_trunc=float(sum(H_terms.values())),
        I_halfwidth=math.sqrt(var),
        I_terms=I_terms,
        H_terms=H_terms,
        pairs=pairs,
        starved=starved,
        z=z,
    )


# ---------------------------------------------------------------------------
# sign classification


def _classify(est: ParityEstimate | None, alpha: float) -> SignClass:
    if est is None:
        return SignClass(0, True, float("nan"), 0)
    if est.starved:
        return SignClass(0, True, est.p_even, est.n_samples)
    value = 1 if est.p_even > alpha else -1 if est.p_odd > alpha else 0
    return SignClass(value, False, est.p_even, est.n_samples)


def _table(shells: ShellSystem, x: int, samples: int, seed: int, workers: int, min_hits: int):
    """Parity table from ``x`` to the next shell out, plus that shell's level."""
    r = shells.level_of(x)
    if r is None:
        raise ShellMembershipError(f"{x} is on no shell")
    nxt = shells.next_level(r)
    if nxt is None:
        raise ShellMembershipError(f"{x} is on the outermost shell")
    est = estimate_parity(shells.window, x, shells.shell(nxt), samples,
                          derive_seed(seed, 1, r, x), workers, min_hits)
    return r, nxt, est


def classify_sign(x: int, v: int, shells: ShellSystem, samples: int, seed: int,
                  alpha: float = 0.75, workers: int = 1, min_hits: int = MIN_HITS) -> SignClass:
    """+1 if the x-to-v path is even with probability > alpha, -1 if odd, else 0.

    Starved pairs classify as 0 with ``starved=True``.
    """
    r, nxt, est = _table(shells, x, samples, seed, workers, min_hits)
    if shells.level_of(v) != nxt:
        raise ShellMembershipError(f"{v} is not on the shell after level {r}")
    return _classify(est.get(int(v)), alpha)


def check_compatibility(kind: int, quad: Sequence[int], shells: ShellSystem, samples: int, seed: int,
                        alpha: float = 0.75, workers: int = 1, min_hits: int = MIN_HITS) -> str:
    """Product test of four sign classifications.

    kind 1: quad = (x, y, v, w), x, y on level r and v, w on the next level;
    the product is sgn(x,v) sgn(x,w) sgn(y,v) sgn(y,w).
    kind 2: quad = (x, y, z, w) on levels r-1, r, r, r+1; the product is
    sgn(x,y) sgn(x,z) sgn(y,w) sgn(z,w).
    """
    if len(quad) != 4:
        raise ValueError("quad needs four vertices")
    a, b, c, d = (int(q) for q in quad)
    lv = [shells.level_of(q) for q in (a, b, c, d)]
    if None in lv:
        raise ShellMembershipError("every quad vertex must lie on a shell")
    if kind == 1:
        ok = lv[0] == lv[1] and lv[2] == lv[3] and shells.next_level(lv[0]) == lv[2]
        legs = [(a, c), (a, d), (b, c), (b, d)]
    elif kind == 2:
        ok = (lv[1] == lv[2] and shells.next_level(lv[0]) == lv[1]
              and shells.next_level(lv[1]) == lv[3])
        legs = [(a, b), (a, c), (b, d), (c, d)]
    else:
        raise ValueError("kind must be 1 or 2")
    if not ok:
        raise ShellMembershipError(f"quad levels {lv} do not fit kind {kind}")
    tables = {}
    prod = 1
    for src, dst in legs:
        if src not in tables:
            tables[src] = _table(shells, src, samples, seed, workers, min_hits)[2]
        prod *= _classify(tables[src].get(dst), alpha).value
    if prod == 0:
        return "undecided"
    return "compatible" if prod == 1 else "incompatible"


def assign_site_signs(shells: ShellSystem, reference_path: SignedWalkPath, samples: int, seed: int,
                      threshold: float = 0.01, workers: int = 1,
                      min_hits: int = MIN_HITS) -> SiteSigns:
    """Designate every shell vertex positive or negative along a reference path.

    The reference path's first site on the innermost shell is positive.  For
    each later level, with ``p`` the reference path's site on the previous
    level, a vertex y of the current level gets the sign of ``p`` when the
    walk from ``p`` stopped at this level ends at y with an odd path with
    conditional probability <= ``threshold``, and the opposite sign
    otherwise.  The reference site itself is covered by the same rule.  For
    the innermost level the path start plays the role of ``p``, after which
    the whole level is flipped if needed to make the reference site positive.
    Vertices never reached from ``p`` keep the sign of ``p`` and
    are listed in ``starved`` along with under-sampled ones.
    """
    g = shells.window
    sites = []
    last = -1.0
    for lvl in shells.levels:
        t = hitting_time(reference_path, shells.shell(lvl).tolist())
        if t is None:
            raise ValueError(f"reference path never reaches shell {lvl}")
        if t < last:
            raise ValueError("reference path crosses the shells out of order")
        last = t
        sites.append(reference_path.position_at(t))
    signs, starved = {}, []
    prev, prev_sign = int(reference_path.start), 1
    for i, lvl in enumerate(shells.levels):
        shell = shells.shell(lvl)
        est = estimate_parity(g, prev, shell, samples, derive_seed(seed, 2, lvl, prev), workers, min_hits)
        for y in shell.tolist():
            e = est.get(y)
            if e is None or e.starved:
                starved.append(y)
            flip = e is not None and e.p_odd > threshold
            signs[y] = -prev_sign if flip else prev_sign
        if i == 0:
            # the root reference site is positive by fiat
            if signs[sites[0]] != 1:
                for y in shell.tolist():
                    signs[y] = -signs[y]
        prev, prev_sign = sites[i], signs[sites[i]]
    return SiteSigns(signs, sites, starved)


# ---------------------------------------------------------------------------
# occupation measures


def _occupation_block(args):
    graph, x, t, m, seed, b = args
    nb, sg = graph.neighbor_table()
    deg = graph.degree
    rng = keyed_rng(seed, BATCH, b)
    k = rng.poisson(t, m)
    pos = np.full(m, x, dtype=np.int64)
    odd = np.zeros(m, dtype=bool)
    for step in range(int(k.max(initial=0))):
        alive = np.flatnonzero(k > step)
        p = pos[alive]
        j = (rng.random(alive.size) * deg[p]).astype(np.int64)
        odd[alive] ^= sg[p, j] < 0
        pos[alive] = nb[p, j]
    n = graph.n
    return (np.bincount(pos[~odd], minlength=n), np.bincount(pos[odd], minlength=n))


def estimate_mu_pm(graph: SignedGraph, x: int, t: float, samples: int, seed: int,
                   workers: int = 1) -> OccupationMeasurePair:
    """Empirical even/odd occupation measures of the walk from ``x`` at time ``t``."""
    if t <= 0:
        raise ValueError("t must be positive")
    if samples <= 0:
        raise ValueError("samples must be positive")
    jobs = [(graph, int(x), float(t), min(BLOCK, samples - lo), int(seed), b)
            for b, lo in enumerate(range(0, samples, BLOCK))]
    parts = _run_blocks(_occupation_block, jobs, workers)
    plus = sum(p[0] for p in parts)
    minus = sum(p[1] for p in parts)
    return OccupationMeasurePair(plus / samples, minus / samples, float(t), int(samples))


def tv_gap(pair: OccupationMeasurePair) -> float:
    """Unnormalized L1 distance between the even and odd occupation measures."""
    return float(np.abs(np.asarray(pair.mu_plus) - np.asarray(pair.mu_minus)).sum())


def signed_harmonic_residual(graph: SignedGraph, h) -> float:
    """max_x |h(x) - sum_{y ~ x} s(x,y) h(y) / d(x)|."""
    h = np.asarray(h, dtype=np.float64)
    if h.shape != (graph.n,):
        raise ValueError("h must give one value per vertex")
    return float(np.abs(h - (graph.csr_matrix() @ h) / graph.degree).max())


# ---------------------------------------------------------------------------
# exports


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    w.writerows(rows)
    return buf.getvalue()


def _f(v: float) -> str:
    return repr(float(v))


def parity_csv(rows: Iterable[tuple]) -> str:
    """Rows of (n, x, y, ParityEstimate)."""
    return _csv(
        ["n", "x", "y", "p_even", "p_odd", "N", "ci", "samples"],
        [[n, x, y, _f(e.p_even), _f(e.p_odd), _f(e.N), _f(e.ci_halfwidth), e.n_samples]
         for n, x, y, e in rows],
    )


def shell_csv(stats: ShellStatistics) -> str:
    rows = []
    skip = set(stats.starved)
    for n, x, y, e in stats.pairs:
        if (n, x, y) in skip:
            continue
        rows.append([n, f"{x}:{y}", _f(2.0 ** -(4 * n + 2) * e.N)])
    for n in sorted(stats.I_terms):
        rows.append([n, "total", _f(stats.I_terms[n])])
    return _csv(["n", "term", "I_contrib"], rows)


def occupation_csv(pair: OccupationMeasurePair) -> str:
    return _csv(
        ["y", "mu_plus", "mu_minus"],
        [[y, _f(a), _f(b)] for y, (a, b) in enumerate(zip(pair.mu_plus, pair.mu_minus))],
    )
