"""Harris graphical construction of the signed voter model.

One :class:`EventStream` (a Poisson clock of rate 1/d(x) per ordered neighbor
pair) drives everything: forward evolution reads it left to right, the dual
walks read the same stored events right to left.  Nothing is re-sampled, so
forward and dual quantities agree path by path.
"""
from __future__ import annotations

import csv
import io
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .rng import CANONICAL, EVENTS, RawStreams, derive_seed, keyed_rng
from .signed_graph import SignedGraph, path_sign
from .walkers import SignedWalkPath

__all__ = [
    "EventStream",
    "EventTieError",
    "DualEnsemble",
    "CanonicalSample",
    "sample_events",
    "evolve",
    "trajectory",
    "dual_walk",
    "dual_ensemble",
    "reconstruct_spins",
    "meeting_sign",
    "sample_canonical_equilibrium",
    "empirical_distribution",
    "spins_to_state",
    "ensemble_csv",
]


class EventTieError(RuntimeError):
    """Two Poisson clocks fired at exactly the same time."""


@dataclass
class EventStream:
    """Seeded Poisson event times per ordered neighbor pair on (0, horizon].

    ``pair_src[p] -> pair_dst[p]`` is ordered pair ``p`` (CSR entry order of
    the graph); ``pair_times[p]`` its sorted event times.  ``times``, ``src``
    and ``dst`` hold all events merged in increasing time order.
    """

    horizon: float
    seed: int
    n: int
    pair_src: np.ndarray
    pair_dst: np.ndarray
    pair_times: list
    times: np.ndarray
    src: np.ndarray
    dst: np.ndarray
    _by_src: dict | None = field(default=None, repr=False)

    @property
    def n_events(self) -> int:
        return len(self.times)

    def events_of(self, x: int, y: int) -> np.ndarray:
        """Event times of the clock N^{x,y}."""
        hit = np.flatnonzero((self.pair_src == x) & (self.pair_dst == y))
        if len(hit) == 0:
            raise KeyError(f"({x}, {y}) is not an ordered neighbor pair")
        return self.pair_times[int(hit[0])]

    def check_graph(self, graph: SignedGraph) -> None:
        if graph.n != self.n or not (
            np.array_equal(graph.indices, self.pair_dst)
            and np.array_equal(graph.entry_src, self.pair_src)
        ):
            raise ValueError("event stream was sampled for a different graph topology")

    def by_source(self):
        """Per-vertex (times, destinations) of the clocks leaving that vertex."""
        if self._by_src is None:
            order = np.argsort(self.src, kind="stable")
            src = self.src[order]
            cut = np.searchsorted(src, np.arange(self.n + 1))
            t, d = self.times[order], self.dst[order]
            self._by_src = {
                v: (t[cut[v]:cut[v + 1]], d[cut[v]:cut[v + 1]]) for v in range(self.n)
            }
        return self._by_src


def sample_events(graph: SignedGraph, horizon: float, seed: int) -> EventStream:
    """Independent rate-1/d(x) Poisson clocks for every ordered pair (x, y).

    Clock N^{x,y} is drawn from the keyed stream (seed, x*n + y) by exponential
    gaps, so it does not depend on how many other pairs exist or their order.
    """
    if not horizon > 0:
        raise ValueError("horizon must be positive")
    n = graph.n
    src = graph.entry_src
    dst = graph.indices
    streams = RawStreams(seed, EVENTS)
    deg = graph.degree[src].astype(np.float64)
    mean = horizon / float(graph.degree.min())
    chunk = int(mean + 5 * math.sqrt(mean) + 4)
    keys = (src * n + dst).tolist()
    gaps = np.empty((len(keys), chunk))
    for p, key in enumerate(keys):
        streams.open(key)
        gaps[p] = streams.exponentials(chunk)
    arrivals = np.cumsum(gaps, axis=1) * deg[:, None]
    short = np.flatnonzero(arrivals[:, -1] <= horizon)
    if len(short):
        # rare: clock not yet past the horizon, keep extending the same stream
        pair_times = [row[row <= horizon] for row in arrivals]
        for p in short.tolist():
            streams.open(keys[p])
            streams.exponentials(chunk)
            acc, last = [arrivals[p]], float(arrivals[p, -1])
            while last <= horizon:
                more = last + np.cumsum(streams.exponentials(chunk)) * deg[p]
                acc.append(more)
                last = float(more[-1])
            row = np.concatenate(acc)
            pair_times[p] = row[row <= horizon]
        counts = np.array([len(a) for a in pair_times])
        times = np.concatenate(pair_times)
    else:
        inside = arrivals <= horizon
        counts = inside.sum(axis=1)
        times = arrivals[inside]
        pair_times = np.split(times, np.cumsum(counts)[:-1])
    all_src = np.repeat(src, counts)
    all_dst = np.repeat(dst, counts)
    order = np.argsort(times, kind="stable")
    times, all_src, all_dst = times[order], all_src[order], all_dst[order]
    if len(times) > 1 and np.any(np.diff(times) == 0):
        raise EventTieError("two Poisson clocks share an event time; rerun with another seed")
    return EventStream(float(horizon), int(seed), n, src, dst, pair_times, times, all_src, all_dst)


def _check_t(events: EventStream, t: float) -> None:
    if t < 0:
        raise ValueError("time must be non-negative")
    if t > events.horizon:
        raise ValueError(f"t={t} lies beyond the event horizon {events.horizon}")


def evolve(graph: SignedGraph, eta0, events: EventStream, t: float) -> np.ndarray:
    """Spin configuration at time ``t``.

    At every event of N^{x,y} up to ``t`` the spin at x becomes s(x,y) times
    the current spin at y.
    """
    _check_t(events, t)
    events.check_graph(graph)
    eta = np.array(eta0, dtype=np.int8)
    if eta.shape != (graph.n,):
        raise ValueError("eta0 must have one spin per vertex")
    k = int(np.searchsorted(events.times, t, side="right"))
    if k == 0:
        return eta
    sg = graph.sign(events.src[:k], events.dst[:k]).tolist()
    e = eta.tolist()
    for x, y, s in zip(events.src[:k].tolist(), events.dst[:k].tolist(), sg):
        e[x] = s * e[y]
    return np.array(e, dtype=np.int8)


def trajectory(graph: SignedGraph, eta0, events: EventStream, t: float) -> tuple[np.ndarray, np.ndarray]:
    """Event times up to ``t`` and the configuration right after each.

    Row 0 of the configuration array is ``eta0`` at time 0.
    """
    _check_t(events, t)
    events.check_graph(graph)
    k = int(np.searchsorted(events.times, t, side="right"))
    out = np.empty((k + 1, graph.n), dtype=np.int8)
    out[0] = eta0
    if k:
        sg = graph.sign(events.src[:k], events.dst[:k])
        cur = out[0].copy()
        for i in range(k):
            cur[events.src[i]] = sg[i] * cur[events.dst[i]]
            out[i + 1] = cur
    return np.concatenate([[0.0], events.times[:k]]), out


def dual_walk(graph: SignedGraph, events: EventStream, x: int, t: float) -> SignedWalkPath:
    """Backward walk X^{x,t} on dual time [0, t] with its running sign.

    The walk at y jumps to z at dual time u when t - u is an event of N^{y,z}.
    """
    _check_t(events, t)
    events.check_graph(graph)
    by_src = events.by_source()
    cur, sign = int(x), 1
    real = t
    side = "right"
    jt, jp, js = [], [], []
    while True:
        times, dsts = by_src[cur]
        k = int(np.searchsorted(times, real, side=side)) - 1
        if k < 0:
            break
        real = float(times[k])
        nxt = int(dsts[k])
        sign *= graph.sign(cur, nxt)
        cur = nxt
        side = "left"
        jt.append(t - real)
        jp.append(cur)
        js.append(sign)
    return SignedWalkPath(int(x), jt, jp, js, float(t))


@dataclass
class DualEnsemble:
    """Tagged coalescing dual walkers run to dual time ``t``.

    ``merges`` lists ``(u, a, b)``: tags ``a`` and ``b`` first share a site
    at dual time ``u``.
    """

    t: float
    sites: list
    paths: list
    merges: list

    @property
    def final_positions(self) -> np.ndarray:
        return np.array([p.end for p in self.paths], dtype=np.int64)

    @property
    def final_signs(self) -> np.ndarray:
        return np.array([p.sign for p in self.paths], dtype=np.int8)

    def meeting_time(self, a: int, b: int) -> float | None:
        if a == b:
            return 0.0
        for u, i, j in self.merges:
            if {i, j} == {a, b}:
                return u
        return None

    def classes(self) -> list[list[int]]:
        """Tags grouped by shared final position, ordered by smallest tag."""
        groups: dict[int, list[int]] = {}
        for tag, v in enumerate(self.final_positions.tolist()):
            groups.setdefault(v, []).append(tag)
        return sorted(groups.values())


def dual_ensemble(graph: SignedGraph, events: EventStream, sites: Sequence[int], t: float) -> DualEnsemble:
    """Run tagged dual walkers jointly on the reversed event stream.

    All tags sitting on the source of an event jump together, so tags that
    meet stay together from then on.
    """
    _check_t(events, t)
    events.check_graph(graph)
    sites = [int(x) for x in sites]
    if not sites:
        raise ValueError("sites must be non-empty")
    k = len(sites)
    where: dict[int, list[int]] = {}
    merges = []
    for tag, x in enumerate(sites):
        for other in where.get(x, []):
            merges.append((0.0, other, tag))
        where.setdefault(x, []).append(tag)
    sign = [1] * k
    traj = [([], [], []) for _ in range(k)]
    n_ev = int(np.searchsorted(events.times, t, side="right"))
    src = events.src[:n_ev].tolist()
    dst = events.dst[:n_ev].tolist()
    tim = events.times[:n_ev].tolist()
    for i in range(n_ev - 1, -1, -1):
        a = src[i]
        movers = where.get(a)
        if movers is None:
            continue
        b = dst[i]
        e = graph.sign(a, b)
        u = t - tim[i]
        del where[a]
        for tag in movers:
            sign[tag] *= e
            tt, pp, ss = traj[tag]
            tt.append(u)
            pp.append(b)
            ss.append(sign[tag])
        if b in where:
            for p in movers:
                for q in where[b]:
                    merges.append((u, min(p, q), max(p, q)))
            where[b] = where[b] + movers
        else:
            where[b] = movers
    paths = [SignedWalkPath(sites[i], *traj[i], float(t)) for i in range(k)]
    return DualEnsemble(float(t), sites, paths, merges)


def reconstruct_spins(eta0, ensemble: DualEnsemble) -> np.ndarray:
    """eta_t at each tagged site: eta0(dual endpoint) times the dual sign."""
    eta0 = np.asarray(eta0, dtype=np.int8)
    return (eta0[ensemble.final_positions] * ensemble.final_signs).astype(np.int8)


def meeting_sign(graph: SignedGraph, events: EventStream, x: int, y: int, t: float) -> int | None:
    """Sign of the loop formed by the duals of x and y up to their first meeting.

    Returns None if the duals have not met by dual time ``t``.  When defined
    the value equals eta_t(x) eta_t(y) whatever eta0 is.
    """
    ens = dual_ensemble(graph, events, [x, y], t)
    s0 = ens.meeting_time(0, 1)
    if s0 is None:
        return None
    px, py = ens.paths
    vx = px.vertices(s0)
    vy = py.vertices(s0)
    return path_sign(graph, vx + vy[::-1][1:])


@dataclass
class CanonicalSample:
    spins: np.ndarray
    classes: list
    relative_signs: np.ndarray
    last_meeting: float | None
    converged: bool


def sample_canonical_equilibrium(graph: SignedGraph, sites: Sequence[int], horizon: float, seed: int) -> CanonicalSample:
    """One draw from the canonical equilibrium at ``sites``.

    Coalescing signed duals run to ``horizon``; each coalesced class gets one
    fair spin and every member takes that spin times its sign relative to the
    class's first tag.  ``converged`` is True when every tag ended in one
    class or no meeting happened in the second half of the run; otherwise
    further coalescence was still likely and the sample may be biased.
    """
    events = sample_events(graph, horizon, seed)
    ens = dual_ensemble(graph, events, sites, horizon)
    classes = ens.classes()
    signs = ens.final_signs.astype(np.int64)
    rng = keyed_rng(seed, CANONICAL, 0)
    class_spin = np.where(rng.random(len(classes)) < 0.5, 1, -1)
    spins = np.empty(len(sites), dtype=np.int8)
    rel = np.empty(len(sites), dtype=np.int8)
    for c, members in enumerate(classes):
        ref = signs[members[0]]
        for tag in members:
            rel[tag] = signs[tag] * ref
            spins[tag] = class_spin[c] * rel[tag]
    later = [u for u, _, _ in ens.merges if u > 0]
    last = max(later) if later else None
    quiet = last is None or last <= horizon / 2
    return CanonicalSample(spins, classes, rel, last, bool(len(classes) == 1 or quiet))


def spins_to_state(eta) -> int:
    """Bitmask with bit x set iff eta(x) = +1."""
    out = 0
    for i, v in enumerate(np.asarray(eta).tolist()):
        if v > 0:
            out |= 1 << i
    return out


def _distribution_block(args):
    graph, eta0, t, seed, start, stop = args
    counts = np.zeros(1 << graph.n, dtype=np.int64)
    weights = 1 << np.arange(graph.n)
    for r in range(start, stop):
        ev = sample_events(graph, t, derive_seed(seed, r))
        eta = evolve(graph, eta0, ev, t)
        counts[int(np.dot(eta > 0, weights))] += 1
    return counts


def empirical_distribution(graph: SignedGraph, eta0, t: float, n_replicas: int, seed: int,
                           workers: int = 1, block: int = 2000) -> np.ndarray:
    """Empirical law of eta_t over ``n_replicas`` independent Harris systems.

    Replica ``r`` uses seed ``derive_seed(seed, r)``; counts are summed, so the
    result does not depend on ``workers``.
    """
    if graph.n > 20:
        raise ValueError("state histogram needs |V| <= 20")
    jobs = [(graph, np.asarray(eta0), t, seed, a, min(a + block, n_replicas))
            for a in range(0, n_replicas, block)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            parts = list(ex.map(_distribution_block, jobs))
    else:
        parts = [_distribution_block(j) for j in jobs]
    total = np.sum(parts, axis=0) if parts else np.zeros(1 << graph.n, dtype=np.int64)
    return total / max(n_replicas, 1)


def ensemble_csv(ens: DualEnsemble) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["tag", "u", "vertex", "sign"])
    for tag, p in enumerate(ens.paths):
        w.writerow([tag, repr(0.0), p.start, 1])
        for u, v, s in zip(p.jump_times.tolist(), p.positions.tolist(), p.signs.tolist()):
            w.writerow([tag, repr(u), v, s])
    return buf.getvalue()
