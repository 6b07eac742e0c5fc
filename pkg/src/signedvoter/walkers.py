"""Signed continuous-time random walks.

Every walk here jumps at total rate 1 to a uniformly chosen neighbor, which is
the law of the dual walk when each ordered pair (x, y) carries a Poisson
clock of rate 1/d(x).  A walk's running sign starts at +1 and is multiplied
by the sign of every edge it crosses.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np
from scipy import stats

from .rng import COALESCE, COUPLING, WALK, keyed_rng
from .signed_graph import SignedGraph

__all__ = [
    "SignedWalkPath",
    "LoopRecord",
    "CouplingResult",
    "CoalescenceResult",
    "simulate_walk",
    "segment_sign",
    "count_unsatisfied_loops",
    "hitting_time",
    "timeshift_couple",
    "check_coupling",
    "coalescing_walks",
    "walk_csv",
    "loops_csv",
]


@dataclass
class SignedWalkPath:
    """Piecewise-constant trajectory on [0, horizon].

    ``positions[k]`` and ``signs[k]`` hold the vertex and running sign right
    after the jump at ``jump_times[k]``.
    """

    start: int
    jump_times: np.ndarray
    positions: np.ndarray
    signs: np.ndarray
    horizon: float

    def __post_init__(self):
        self.jump_times = np.asarray(self.jump_times, dtype=np.float64)
        self.positions = np.asarray(self.positions, dtype=np.int64)
        self.signs = np.asarray(self.signs, dtype=np.int8)

    @property
    def n_jumps(self) -> int:
        return len(self.jump_times)

    def jumps_until(self, t: float) -> int:
        return int(np.searchsorted(self.jump_times, t, side="right"))

    def position_at(self, t: float) -> int:
        k = self.jumps_until(t)
        return self.start if k == 0 else int(self.positions[k - 1])

    def sign_at(self, t: float) -> int:
        k = self.jumps_until(t)
        return 1 if k == 0 else int(self.signs[k - 1])

    @property
    def end(self) -> int:
        return self.position_at(self.horizon)

    @property
    def sign(self) -> int:
        return self.sign_at(self.horizon)

    def vertices(self, t: float | None = None) -> list[int]:
        """Visited-site sequence up to time ``t`` (whole path by default)."""
        k = self.n_jumps if t is None else self.jumps_until(t)
        return [self.start] + self.positions[:k].tolist()


@dataclass
class LoopRecord:
    """Disjoint intervals (s_i, t_i] over which the walk closes an odd loop."""

    intervals: list = field(default_factory=list)

    def __len__(self):
        return len(self.intervals)


@dataclass
class CouplingResult:
    path: SignedWalkPath
    shifted_path: SignedWalkPath
    shift: float
    coupling_time: float | None
    visited_prefix_equal: bool
    coupling_index: int | None = None


@dataclass
class CoalescenceResult:
    starts: list
    meeting_times: np.ndarray
    paths: list


def _chain(graph: SignedGraph, x: int, n: int, rng: np.random.Generator):
    """First ``n`` steps of the discrete jump chain from ``x``."""
    nb, sg = graph.neighbor_table()
    u = rng.random(n)
    pos = np.empty(n, dtype=np.int64)
    sig = np.empty(n, dtype=np.int8)
    deg = graph.degree
    cur, c = int(x), 1
    for k in range(n):
        j = int(u[k] * deg[cur])
        c *= int(sg[cur, j])
        cur = int(nb[cur, j])
        pos[k] = cur
        sig[k] = c
    return pos, sig


def _poisson_times(rng: np.random.Generator, start: float, horizon: float) -> np.ndarray:
    """Arrival times of a rate-1 Poisson process on (start, horizon]."""
    out = []
    t = start
    span = max(horizon - start, 0.0)
    chunk = int(span + 4 * math.sqrt(span) + 8)
    while True:
        gaps = rng.exponential(1.0, chunk)
        times = t + np.cumsum(gaps)
        keep = times[times <= horizon]
        out.append(keep)
        if len(keep) < chunk:
            break
        t = float(times[-1])
    return np.concatenate(out) if out else np.empty(0)


def simulate_walk(graph: SignedGraph, x: int, horizon: float, seed: int) -> SignedWalkPath:
    """Rate-1 signed random walk from ``x`` on [0, horizon]."""
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = keyed_rng(seed, WALK, int(x))
    times = _poisson_times(rng, 0.0, horizon)
    pos, sig = _chain(graph, x, len(times), rng)
    return SignedWalkPath(int(x), times, pos, sig, float(horizon))


def segment_sign(path: SignedWalkPath, s1: float, t1: float) -> int:
    """Sign of the edges crossed during (s1, t1]."""
    if not 0 <= s1 <= t1 <= path.horizon:
        raise ValueError("need 0 <= s1 <= t1 <= horizon")
    return path.sign_at(t1) * path.sign_at(s1)


def count_unsatisfied_loops(path: SignedWalkPath) -> LoopRecord:
    """Greedy left-to-right extraction of disjoint odd closed segments.

    The scan remembers the running sign at the last visit of each vertex since
    the previous loop ended; revisiting a vertex with the opposite running
    sign closes a loop, after which the memory is cleared.
    """
    rec = LoopRecord()
    seen = {path.start: (0.0, 1)}
    for t, v, c in zip(path.jump_times.tolist(), path.positions.tolist(), path.signs.tolist()):
        prev = seen.get(v)
        if prev is not None and prev[1] != c:
            rec.intervals.append((prev[0], t))
            seen = {v: (t, c)}
        else:
            seen[v] = (t, c)
    return rec


def hitting_time(path: SignedWalkPath, target: Iterable[int]) -> float | None:
    """First time the path occupies a vertex of ``target`` (None if never)."""
    tgt = np.fromiter(target, dtype=np.int64)
    if len(tgt) == 0:
        raise ValueError("target set is empty")
    if path.start in set(tgt.tolist()):
        return 0.0
    hit = np.flatnonzero(np.isin(path.positions, tgt))
    return float(path.jump_times[hit[0]]) if len(hit) else None


# ---------------------------------------------------------------------------
# time-shift coupling


def _maximal_poisson_pair(mean_a: float, mean_b: float, rng: np.random.Generator):
    """Maximal coupling of Poisson(mean_a) and Poisson(mean_b)."""
    hi = int(stats.poisson.isf(1e-15, max(mean_a, mean_b))) + 2
    k = np.arange(hi + 1)
    p = stats.poisson.pmf(k, mean_a)
    q = stats.poisson.pmf(k, mean_b)
    p /= p.sum()
    q /= q.sum()
    common = np.minimum(p, q)
    overlap = common.sum()
    if rng.random() < overlap:
        m = int(rng.choice(k, p=common / overlap))
        return m, m
    ra = np.clip(p - common, 0, None)
    rb = np.clip(q - common, 0, None)
    return int(rng.choice(k, p=ra / ra.sum())), int(rng.choice(k, p=rb / rb.sum()))


def timeshift_couple(
    graph: SignedGraph,
    x: int,
    s: float,
    horizon: float,
    seed: int,
    window: float | None = None,
) -> CouplingResult:
    """Couple two walks from ``x`` so that eventually X(t) = X'(t + s).

    Both walks share one jump chain, so the visited-site sequences agree once
    the jump counts agree.  Holding times are coupled in two stages:

    1. Jump counts on [0, window] for X and [0, window + s] for X' are drawn
       from the maximal coupling of Poisson(window) and Poisson(window + s).
       On a match the arrival times are one set of sorted uniforms scaled to
       each interval, and from then on X' repeats X's arrivals shifted by s.
    2. Otherwise the lagging walk is topped up with fresh arrivals until the
       counts agree, and each subsequent pair of holding times is drawn from a
       maximal coupling that closes the remaining gap in one step (success
       probability exp(-|gap|)).

    Each stage leaves both marginals exactly those of :func:`simulate_walk`.
    """
    if s < 0:
        raise ValueError("shift must be non-negative")
    if horizon <= s:
        raise ValueError("horizon must exceed the shift")
    if window is None:
        window = (horizon - s) / 2.0
    if not 0 < window <= horizon - s:
        raise ValueError("window must lie in (0, horizon - s]")
    x = int(x)
    rng = keyed_rng(seed, COUPLING, 2 * x)
    chain_rng = keyed_rng(seed, COUPLING, 2 * x + 1)

    if s == 0:
        times = _poisson_times(rng, 0.0, horizon)
        pos, sig = _chain(graph, x, len(times), chain_rng)
        p = SignedWalkPath(x, times, pos, sig, float(horizon))
        q = SignedWalkPath(x, times.copy(), pos.copy(), sig.copy(), float(horizon))
        return CouplingResult(p, q, 0.0, 0.0, True, 0)

    m, m2 = _maximal_poisson_pair(window, window + s, rng)
    u = np.sort(rng.random(m))
    tx = list(u * window)
    coupled_at = None
    if m == m2:
        ty = list(u * (window + s))
        coupled_at = m
        a = window
    else:
        ty = list(np.sort(rng.random(m2)) * (window + s))
        a, b = window, window + s
        while len(tx) < len(ty):
            a += rng.exponential()
            tx.append(a)
        while len(ty) < len(tx):
            b += rng.exponential()
            ty.append(b)
        a = max(a, tx[-1]) if tx else a
        b = max(b, ty[-1]) if ty else b
        while a <= horizon:
            d = a + s - b
            e = rng.exponential()
            if d >= 0:
                if rng.random() < math.exp(-d):
                    ok, e2 = True, e + d
                else:
                    ok, e2 = False, -math.log1p(-rng.random() * -math.expm1(-d))
            else:
                ok = e + d >= 0
                e2 = e + d if ok else rng.exponential()
            a += e
            b += e2
            tx.append(a)
            ty.append(b)
            if ok:
                coupled_at = len(tx)
                ty[-1] = a + s
                break
        if coupled_at is None and b < horizon:
            # X' may still lag X when the loop stops
            ty.extend(_poisson_times(rng, b, horizon).tolist())

    future = _poisson_times(rng, a, horizon) if coupled_at is not None else np.empty(0)
    tx = np.concatenate([np.asarray(tx, dtype=np.float64), future])
    if coupled_at is not None:
        ty = np.concatenate([np.asarray(ty[:coupled_at], dtype=np.float64), tx[coupled_at:] + s])
    else:
        ty = np.asarray(ty, dtype=np.float64)
    tx = tx[tx <= horizon]
    ty = ty[ty <= horizon]
    pos, sig = _chain(graph, x, max(len(tx), len(ty)), chain_rng)
    path = SignedWalkPath(x, tx, pos[: len(tx)], sig[: len(tx)], float(horizon))
    shifted = SignedWalkPath(x, ty, pos[: len(ty)], sig[: len(ty)], float(horizon))

    t0 = None
    if coupled_at is not None:
        t0 = 0.0 if coupled_at == 0 else float(tx[coupled_at - 1]) if coupled_at <= len(tx) else None
    if t0 is not None and t0 + s > horizon:
        t0 = None
    prefix = t0 is not None and path.vertices(t0) == shifted.vertices(t0 + s)
    return CouplingResult(path, shifted, float(s), t0, bool(prefix), coupled_at if t0 is not None else None)


def check_coupling(res: CouplingResult) -> tuple[bool, bool]:
    """Verify properties (a) and (b) of a coupled pair exactly.

    (a) after the coupling index every jump of X' is the matching jump of X
        delayed by exactly the shift, to the same vertex;
    (b) the visited-site sequences up to t0 and t0 + s coincide.
    """
    if res.coupling_time is None:
        return False, False
    p, q, s, k = res.path, res.shifted_path, res.shift, res.coupling_index
    n = min(p.n_jumps, q.n_jumps)
    tail_ok = bool(
        np.array_equal(q.jump_times[k:n], p.jump_times[k:n] + s)
        and np.array_equal(q.positions[k:n], p.positions[k:n])
        and np.array_equal(q.signs[k:n], p.signs[k:n])
    )
    # X' jumps beyond X's horizon-s window have no partner; X jumps after horizon - s
    # have none either
    tail_ok &= bool(np.all(p.jump_times[n:] > p.horizon - s)) and q.n_jumps <= p.n_jumps
    t0 = res.coupling_time
    prefix_ok = p.vertices(t0) == q.vertices(t0 + s) and p.jumps_until(t0) == k
    return tail_ok, bool(prefix_ok)


# ---------------------------------------------------------------------------
# coalescing walks


def coalescing_walks(graph: SignedGraph, starts: Sequence[int], horizon: float, seed: int) -> CoalescenceResult:
    """Independent rate-1 walks that merge on meeting.

    Returns pairwise first-meeting times (NaN where the pair never met before
    ``horizon``) and one signed path per tag.
    """
    starts = [int(x) for x in starts]
    if not starts:
        raise ValueError("need at least one walker")
    if horizon <= 0:
        raise ValueError("horizon must be positive")
    rng = keyed_rng(seed, COALESCE, 0)
    nb, sg = graph.neighbor_table()
    k = len(starts)
    meet = np.full((k, k), np.nan)
    np.fill_diagonal(meet, 0.0)
    # clusters keyed by site: list of tags
    where: dict[int, list[int]] = {}
    for tag, x in enumerate(starts):
        if x in where:
            for other in where[x]:
                meet[tag, other] = meet[other, tag] = 0.0
        where.setdefault(x, []).append(tag)
    sign = [1] * k
    traj = [([], [], []) for _ in range(k)]
    t = 0.0
    while True:
        sites = sorted(where)
        t += rng.exponential(1.0 / len(sites))
        if t > horizon:
            break
        x = sites[int(rng.random() * len(sites))]
        j = int(rng.random() * graph.degree[x])
        y, e = int(nb[x, j]), int(sg[x, j])
        movers = where.pop(x)
        for tag in movers:
            sign[tag] *= e
            tt, pp, ss = traj[tag]
            tt.append(t)
            pp.append(y)
            ss.append(sign[tag])
        if y in where:
            for a in movers:
                for b in where[y]:
                    if np.isnan(meet[a, b]):
                        meet[a, b] = meet[b, a] = t
            where[y] = where[y] + movers
        else:
            where[y] = movers
    paths = [SignedWalkPath(starts[i], *traj[i], float(horizon)) for i in range(k)]
    return CoalescenceResult(starts, meet, paths)


# ---------------------------------------------------------------------------
# CSV dumps


def walk_csv(path: SignedWalkPath) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["t", "vertex", "sign"])
    w.writerow([repr(0.0), path.start, 1])
    for t, v, c in zip(path.jump_times.tolist(), path.positions.tolist(), path.signs.tolist()):
        w.writerow([repr(t), v, c])
    return buf.getvalue()


def loops_csv(rec: LoopRecord) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["s_i", "t_i"])
    for a, b in rec.intervals:
        w.writerow([repr(a), repr(b)])
    return buf.getvalue()
