"""Command-line experiment runner.

A run is described by an INI file with three sections::

    [run]
    experiment = exact
    seed = 12345
    samples = 1000
    output_dir = out/exact

    [graph]
    builder = cycle
    n = 3
    negatives = 1

    [params]
    t_grid = 1, 5

Every key is checked against a typed schema before anything runs.  Unknown
sections or keys are errors.  Exit codes: 0 success, 2 configuration error,
3 numerical failure, 4 starved estimate (outputs are still written and the
starved rows listed).
"""
from __future__ import annotations

import argparse
import configparser
import hashlib
import json
import math
import sys
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable

import numpy as np

from . import __version__
from . import diagnostics as dg
from . import exact_solver as ex
from . import harris_engine as he
from . import signed_graph as sgm
from . import walkers as wk
from .rng import CANONICAL, derive_seed, keyed_rng

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_STARVED = 4

EXPERIMENTS = ("duality-check", "balance", "exact", "parity", "shells", "mu-gap", "loops",
               "couple", "canonical-eq")


class StarvedEstimate(RuntimeError):
    pass


# ---------------------------------------------------------------------------
# typed values


def _int(s: str) -> int:
    return int(s.strip(), 0)


def _float(s: str) -> float:
    v = float(s)
    if not math.isfinite(v):
        raise ValueError("not finite")
    return v


def _bool(s: str) -> bool:
    t = s.strip().lower()
    if t in ("1", "true", "yes", "on"):
        return True
    if t in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {s!r}")


def _ints(s: str) -> list[int]:
    return [_int(p) for p in s.replace(",", " ").split()]


def _floats(s: str) -> list[float]:
    return [_float(p) for p in s.replace(",", " ").split()]


def _str(s: str) -> str:
    return s.strip()


def _pairs(s: str) -> list[tuple[int, int]]:
    """``"0-1, 2-3"`` -> [(0, 1), (2, 3)]."""
    out = []
    for tok in s.replace(",", " ").split():
        a, b = tok.split("-")
        out.append((_int(a), _int(b)))
    return out


def _triples(s: str) -> list[tuple[int, int, int]]:
    """``"0 1 +1; 1 2 -1"`` -> edge triples."""
    out = []
    for part in s.split(";"):
        if part.strip():
            a, b, c = part.split()
            out.append((_int(a), _int(b), _int(c)))
    return out


def _vertex(s: str):
    """A vertex id, or a coordinate written ``(i, j, ...)``."""
    s = s.strip()
    if s.startswith("("):
        return tuple(_ints(s.strip("()")))
    return _int(s)


REQUIRED = object()

GRAPH_SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "cycle": {"n": (_int, REQUIRED), "negatives": (_int, 1)},
    "lattice": {
        "dimension": (_int, REQUIRED), "extent": (_ints, REQUIRED), "boundary": (_str, "periodic"),
        "signs": (_str, "all-positive"), "p": (_float, 0.5), "sign_seed": (_int, 0),
        "negative_edges": (_pairs, []),
    },
    "tree": {"children": (_ints, REQUIRED), "pairing": (_ints, []), "depth": (_int, REQUIRED)},
    "z4": {"scales": (_ints, []), "count": (_int, 0), "kappa": (_float, 2.0), "first": (_int, 1),
           "window": (_int, REQUIRED)},
    "edges": {"n": (_int, REQUIRED), "edges": (_triples, REQUIRED)},
    "file": {"path": (_str, REQUIRED)},
}

RUN_SCHEMA = {
    "experiment": (_str, REQUIRED), "seed": (_int, REQUIRED), "samples": (_int, REQUIRED),
    "output_dir": (_str, REQUIRED), "workers": (_int, 1),
}

PARAM_SCHEMA: dict[str, dict[str, tuple[Callable, Any]]] = {
    "duality-check": {"t_grid": (_floats, [0.5, 1.0, 2.0, 5.0])},
    "balance": {},
    "exact": {"cap": (_int, ex.DEFAULT_CAP), "t_grid": (_floats, []), "eta0": (_ints, [])},
    "parity": {"x": (_vertex, REQUIRED), "stop": (_str, REQUIRED), "min_hits": (_int, dg.MIN_HITS),
               "allow_starved": (_bool, False)},
    "shells": {"n_max": (_int, REQUIRED), "center": (_vertex, None), "radii": (_floats, []),
               "levels": (_ints, []), "min_hits": (_int, dg.MIN_HITS), "allow_starved": (_bool, False)},
    "mu-gap": {"x": (_vertex, 0), "t_grid": (_floats, [1.0, 2.0, 5.0, 10.0, 20.0, 50.0])},
    "loops": {"x": (_vertex, 0), "horizon": (_float, 1000.0)},
    "couple": {"x": (_vertex, 0), "shifts": (_floats, [0, 1, 2, 3, 4, 5]), "horizon": (_float, 400.0),
               "t0": (_float, 200.0), "window": (_float, -1.0)},
    "canonical-eq": {"horizon": (_float, 200.0), "sites": (_ints, [])},
}


@dataclass
class ExperimentConfig:
    experiment: str
    seed: int
    samples: int
    output_dir: str
    workers: int
    builder: str
    graph_params: dict
    params: dict
    raw: dict = field(default_factory=dict)


# ---------------------------------------------------------------------------
# parsing and validation


def _read_ini(path: str) -> dict:
    text = Path(path).read_text()
    if path.endswith(".json"):
        doc = json.loads(text)
        return doc["config"] if "config" in doc else doc
    cp = configparser.ConfigParser(interpolation=None, delimiters=("=",))
    cp.optionxform = str
    cp.read_string(text)
    return {s: dict(cp[s]) for s in cp.sections()}


def _typed(section: str, raw: dict, schema: dict, errors: list) -> dict:
    out = {}
    for key in raw:
        if key not in schema:
            errors.append(f"[{section}] unknown key {key!r}")
    for key, (conv, default) in schema.items():
        if key in raw:
            try:
                out[key] = conv(str(raw[key]))
            except Exception as exc:  # noqa: BLE001
                errors.append(f"[{section}] bad value for {key!r}: {exc}")
        elif default is REQUIRED:
            errors.append(f"[{section}] missing required key {key!r}")
        else:
            out[key] = default
    return out


def parse_config(raw: dict, overrides: dict | None = None) -> tuple[ExperimentConfig | None, list[str]]:
    """Typed config plus the list of problems found (empty iff runnable)."""
    errors: list[str] = []
    raw = {s: dict(v) for s, v in raw.items()}
    for key, val in (overrides or {}).items():
        if val is not None:
            raw.setdefault("run", {})[key] = str(val)
    for sec in raw:
        if sec not in ("run", "graph", "params"):
            errors.append(f"unknown section [{sec}]")
    run = _typed("run", raw.get("run", {}), RUN_SCHEMA, errors)
    exp = run.get("experiment")
    if exp is not None and exp not in EXPERIMENTS:
        errors.append(f"unknown experiment {exp!r}")
        exp = None
    graw = dict(raw.get("graph", {}))
    builder = graw.pop("builder", None)
    if builder is None:
        errors.append("[graph] missing required key 'builder'")
    elif builder not in GRAPH_SCHEMA:
        errors.append(f"unknown graph builder {builder!r}")
        builder = None
    gparams = _typed("graph", graw, GRAPH_SCHEMA[builder], errors) if builder else {}
    params = _typed("params", raw.get("params", {}), PARAM_SCHEMA[exp], errors) if exp else {}
    if "seed" in run and not 0 <= run["seed"] < 2 ** 64:
        errors.append("seed must be a 64-bit unsigned integer")
    if "samples" in run and run["samples"] <= 0:
        errors.append("samples must be positive")
    if run.get("workers", 1) < 1:
        errors.append("workers must be >= 1")
    for key in ("t_grid", "shifts"):
        if any(v < 0 for v in params.get(key, [])):
            errors.append(f"{key} must be non-negative")
    for key in ("horizon", "t0"):
        if key in params and params[key] <= 0:
            errors.append(f"{key} must be positive")
    if exp == "mu-gap" and any(v <= 0 for v in params.get("t_grid", [])):
        errors.append("mu-gap times must be positive")
    if errors:
        return None, errors
    cfg = ExperimentConfig(exp, run["seed"], run["samples"], run["output_dir"], run["workers"],
                           builder, gparams, params, raw)
    try:
        graph = build_graph(cfg)
    except Exception as exc:  # noqa: BLE001
        return None, [f"graph construction failed: {exc}"]
    if exp == "exact" and graph.n > params["cap"]:
        errors.append(f"|V|={graph.n} exceeds the exact-solver cap {params['cap']}")
    if exp == "exact" and params["eta0"] and len(params["eta0"]) != graph.n:
        errors.append("eta0 needs one spin per vertex")
    if exp == "duality-check" and not params["t_grid"]:
        errors.append("t_grid must not be empty")
    for key in ("x",):
        if key in params:
            try:
                _resolve(graph, params[key])
            except Exception as exc:  # noqa: BLE001
                errors.append(f"bad vertex {params[key]!r}: {exc}")
    return (None if errors else cfg), errors


def validate(raw: dict, overrides: dict | None = None) -> list[str]:
    return parse_config(raw, overrides)[1]


def _resolve(graph: sgm.SignedGraph, v) -> int:
    if isinstance(v, tuple):
        return graph.vertex_at(v)
    if not 0 <= v < graph.n:
        raise ValueError("vertex out of range")
    return int(v)


def build_graph(cfg: ExperimentConfig) -> sgm.SignedGraph:
    p = cfg.graph_params
    b = cfg.builder
    if b == "cycle":
        return sgm.build_frustrated_cycle(p["n"], p["negatives"])
    if b == "lattice":
        extent = p["extent"][0] if len(p["extent"]) == 1 else p["extent"]
        if p["signs"] == "iid":
            signs = sgm.IIDSigns(p["p"], p["sign_seed"])
        elif p["signs"] == "all-positive":
            signs = p["negative_edges"] or "all-positive"
        else:
            raise ValueError("lattice signs must be 'all-positive' or 'iid'")
        return sgm.build_lattice_window(p["dimension"], extent, p["boundary"], signs)
    if b == "tree":
        return sgm.build_paired_tree(p["children"], p["pairing"], p["depth"])
    if b == "z4":
        scales = p["scales"] or sgm.staircase_scales(p["count"], p["kappa"], p["first"])
        return sgm.build_z4_staircase(scales, p["window"])
    if b == "edges":
        return sgm.SignedGraph(p["n"], p["edges"])
    return sgm.read_graph(p["path"])


# ---------------------------------------------------------------------------
# experiments; each returns (files, summary, replica_seeds)


def _f(v) -> str:
    return repr(float(v))


def _csv(header, rows) -> str:
    lines = [",".join(header)]
    lines += [",".join(str(c) for c in r) for r in rows]
    return "\n".join(lines) + "\n"


def _exp_duality(g, cfg):
    grid = sorted(cfg.params["t_grid"])
    tmax = max(grid) if max(grid) > 0 else 1.0
    rows, seeds, total = [], [], 0
    for r in range(cfg.samples):
        s = derive_seed(cfg.seed, r)
        seeds.append(s)
        eta0 = np.where(keyed_rng(s, CANONICAL, 1).random(g.n) < 0.5, 1, -1)
        ev = he.sample_events(g, tmax, s)
        for t in grid:
            fwd = he.evolve(g, eta0, ev, t)
            back = he.reconstruct_spins(eta0, he.dual_ensemble(g, ev, range(g.n), t))
            m = int(np.sum(fwd != back))
            total += m
            rows.append([r, _f(t), m])
    files = {"duality.csv": _csv(["replica", "t", "mismatches"], rows)}
    return files, {"mismatches": total}, seeds


def _exp_balance(g, cfg):
    cyc = sgm.find_unsatisfied_cycle(g)
    files = {}
    if cyc is None:
        side = sgm.gauge_partition(g)
        files["gauge.csv"] = _csv(["vertex", "side"], [[v, int(s)] for v, s in enumerate(side)])
    summary = {"balanced": cyc is None, "certificate": cyc}
    return files, summary, []


def _exp_exact(g, cfg):
    gen = ex.build_generator(g, cap=cfg.params["cap"])
    res = ex.stationary_analysis(gen)
    files = {"verdict.json": ex.verdict_json(res) + "\n"}
    for k in range(res.n_closed_classes):
        files[f"stationary_{k}.csv"] = ex.stationary_csv(res, k)
    h = ex.one_point_function(res)
    files["one_point.csv"] = _csv(["class", "vertex", "h"],
                                  [[k, v, _f(h[k, v])] for k in range(len(h)) for v in range(g.n)])
    if cfg.params["t_grid"]:
        eta0 = np.array(cfg.params["eta0"] or [1] * g.n)
        rows = []
        for t in sorted(cfg.params["t_grid"]):
            p = ex.transient_distribution(gen, eta0, t)
            rows += [[_f(t), s, _f(p[s])] for s in np.flatnonzero(p > 1e-15).tolist()]
        files["transient.csv"] = _csv(["t", "state_bitmask", "probability"], rows)
    summary = json.loads(files["verdict.json"])
    summary["max_harmonic_residual"] = max(dg.signed_harmonic_residual(g, row) for row in h)
    return files, summary, []


def _stop_set(g, spec: str) -> list[int]:
    # "shell:<radius>" or a vertex list
    if spec.startswith("shell:"):
        sh = dg.ShellSystem.from_window(g, radii=[_float(spec.split(":", 1)[1])])
        return sh.shells[0].tolist()
    return _ints(spec)


def _exp_parity(g, cfg):
    x = _resolve(g, cfg.params["x"])
    stop = _stop_set(g, cfg.params["stop"])
    est = dg.estimate_parity(g, x, stop, cfg.samples, cfg.seed, cfg.workers, cfg.params["min_hits"])
    ok = [(0, x, y, e) for y, e in sorted(est.items()) if not e.starved]
    starved = [[x, y, e.n_samples] for y, e in sorted(est.items()) if e.starved]
    files = {"parity.csv": dg.parity_csv(ok),
             "starved.csv": _csv(["x", "y", "hits"], starved)}
    summary = {"endpoints": len(est), "starved": len(starved),
               "max_N": max((e.N for _, _, _, e in ok), default=0.0)}
    if starved and not cfg.params["allow_starved"]:
        raise StarvedEstimate(files, summary)
    return files, summary, []


def _exp_shells(g, cfg):
    p = cfg.params
    center = None if p["center"] is None else _resolve(g, p["center"])
    sh = dg.ShellSystem.from_window(g, center, levels=p["levels"] or None, radii=p["radii"] or None)
    st = dg.estimate_shell_statistics(sh, p["n_max"], cfg.samples, cfg.seed, workers=cfg.workers,
                                      min_hits=p["min_hits"])
    skip = set(st.starved)
    files = {
        "shells.csv": dg.shell_csv(st),
        "parity.csv": dg.parity_csv([r for r in st.pairs if r[:3] not in skip]),
        "starved.csv": _csv(["n", "x", "y"], [list(t) for t in st.starved]),
    }
    summary = {"I_trunc": st.I_trunc, "H_trunc": st.H_trunc, "I_halfwidth": st.I_halfwidth,
               "starved": len(st.starved)}
    if st.starved and not p["allow_starved"]:
        raise StarvedEstimate(files, summary)
    return files, summary, []


def _exp_mu_gap(g, cfg):
    x = _resolve(g, cfg.params["x"])
    files, rows = {}, []
    for i, t in enumerate(sorted(cfg.params["t_grid"])):
        pair = dg.estimate_mu_pm(g, x, t, cfg.samples, derive_seed(cfg.seed, i), cfg.workers)
        files[f"occupation_{i}.csv"] = dg.occupation_csv(pair)
        mp, mm = ex.parity_occupation(g, x, t)
        rows.append([_f(t), _f(dg.tv_gap(pair)), _f(np.abs(mp - mm).sum())])
    files["gap.csv"] = _csv(["t", "tv_gap", "exact_gap"], rows)
    summary = {"final_gap": float(rows[-1][1]), "final_exact_gap": float(rows[-1][2])}
    return files, summary, [derive_seed(cfg.seed, i) for i in range(len(rows))]


def _exp_loops(g, cfg):
    x = _resolve(g, cfg.params["x"])
    T = cfg.params["horizon"]
    rows, seeds = [], []
    for r in range(cfg.samples):
        s = derive_seed(cfg.seed, r)
        seeds.append(s)
        rows.append([r, len(wk.count_unsatisfied_loops(wk.simulate_walk(g, x, T, s)))])
    counts = np.array([c for _, c in rows])
    files = {"loops.csv": _csv(["replica", "n_loops"], rows)}
    summary = {"fraction_positive": float(np.mean(counts > 0)), "mean_loops": float(counts.mean())}
    return files, summary, seeds


def _exp_couple(g, cfg):
    p = cfg.params
    x = _resolve(g, p["x"])
    window = None if p["window"] < 0 else p["window"]
    rows, seeds, summary = [], [], {"coupled_fraction": {}}
    for i, s in enumerate(p["shifts"]):
        hits = 0
        for r in range(cfg.samples):
            seed = derive_seed(cfg.seed, i, r)
            seeds.append(seed)
            res = wk.timeshift_couple(g, x, s, p["horizon"], seed, window=window)
            a, b = wk.check_coupling(res) if res.coupling_time is not None else (False, False)
            ct = res.coupling_time
            hits += ct is not None and ct <= p["t0"]
            rows.append([_f(s), r, "" if ct is None else _f(ct), int(a), int(b)])
        summary["coupled_fraction"][repr(float(s))] = hits / cfg.samples
    files = {"couple.csv": _csv(["s", "replica", "coupling_time", "prop_a", "prop_b"], rows)}
    return files, summary, seeds


def _exp_canonical(g, cfg):
    sites = cfg.params["sites"] or list(range(g.n))
    counts = np.zeros(len(sites))
    seeds, unconverged = [], 0
    for r in range(cfg.samples):
        s = derive_seed(cfg.seed, r)
        seeds.append(s)
        smp = he.sample_canonical_equilibrium(g, sites, cfg.params["horizon"], s)
        counts += smp.spins > 0
        unconverged += not smp.converged
    rows = [[v, _f(c / cfg.samples)] for v, c in zip(sites, counts)]
    files = {"marginals.csv": _csv(["vertex", "p_plus"], rows)}
    return files, {"unconverged": unconverged}, seeds


DISPATCH = {
    "duality-check": _exp_duality, "balance": _exp_balance, "exact": _exp_exact,
    "parity": _exp_parity, "shells": _exp_shells, "mu-gap": _exp_mu_gap, "loops": _exp_loops,
    "couple": _exp_couple, "canonical-eq": _exp_canonical,
}


# ---------------------------------------------------------------------------
# run


def _emit(cfg: ExperimentConfig, files: dict, summary: dict, seeds: list, wall: float, status: str):
    out = Path(cfg.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    files = dict(files)
    files["summary.json"] = json.dumps(summary, sort_keys=True) + "\n"
    if seeds:
        files["replica_seeds.csv"] = _csv(["index", "seed"], [[i, s] for i, s in enumerate(seeds)])
    digests = {}
    for name in sorted(files):
        data = files[name].encode()
        (out / name).write_bytes(data)
        digests[name] = hashlib.sha256(data).hexdigest()
    manifest = {
        "config": cfg.raw,
        "effective": {"experiment": cfg.experiment, "seed": cfg.seed, "samples": cfg.samples,
                      "workers": cfg.workers},
        "version": __version__,
        "wall_clock_seconds": wall,
        "replica_seeds_file": "replica_seeds.csv" if seeds else None,
        "status": status,
        "digests": digests,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def run(cfg: ExperimentConfig) -> int:
    g = build_graph(cfg)
    t0 = time.perf_counter()
    try:
        files, summary, seeds = DISPATCH[cfg.experiment](g, cfg)
        code, status = EXIT_OK, "ok"
    except StarvedEstimate as exc:
        files, summary = exc.args
        seeds, code, status = [], EXIT_STARVED, "starved"
    except (ex.NumericalError, np.linalg.LinAlgError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (dg.ConfigurationError, dg.ShellMembershipError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    _emit(cfg, files, summary, seeds, time.perf_counter() - t0, status)
    print(json.dumps(summary, sort_keys=True))
    return code


# ---------------------------------------------------------------------------
# argument parsing


def _graph_parser(sub):
    gp = sub.add_parser("graph", help="build a graph and write it to a file")
    gsub = gp.add_subparsers(dest="builder", required=True)
    c = gsub.add_parser("cycle")
    c.add_argument("--n", type=int, required=True)
    c.add_argument("--negatives", type=int, default=1)
    lat = gsub.add_parser("lattice")
    lat.add_argument("--dimension", type=int, required=True)
    lat.add_argument("--extent", type=int, nargs="+", required=True)
    lat.add_argument("--boundary", choices=["periodic", "open"], default="periodic")
    lat.add_argument("--iid", type=float, default=None, metavar="P", help="iid negative probability")
    lat.add_argument("--sign-seed", type=int, default=0)
    t = gsub.add_parser("tree")
    t.add_argument("--children", type=int, nargs="+", required=True)
    t.add_argument("--pairing", type=int, nargs="*", default=[])
    t.add_argument("--depth", type=int, required=True)
    z = gsub.add_parser("z4")
    z.add_argument("--scales", type=int, nargs="+", required=True)
    z.add_argument("--window", type=int, required=True)
    for p in (c, lat, t, z):
        p.add_argument("--out", required=True)


def _build_from_args(a) -> sgm.SignedGraph:
    if a.builder == "cycle":
        return sgm.build_frustrated_cycle(a.n, a.negatives)
    if a.builder == "lattice":
        signs = "all-positive" if a.iid is None else sgm.IIDSigns(a.iid, a.sign_seed)
        extent = a.extent[0] if len(a.extent) == 1 else a.extent
        return sgm.build_lattice_window(a.dimension, extent, a.boundary, signs)
    if a.builder == "tree":
        return sgm.build_paired_tree(a.children, a.pairing, a.depth)
    return sgm.build_z4_staircase(a.scales, a.window)


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="signedvoter", description="Signed voter model laboratory")
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("run", "validate"):
        p = sub.add_parser(name)
        p.add_argument("config", help="INI config, or a manifest.json from an earlier run")
        p.add_argument("--seed", type=int)
        p.add_argument("--samples", type=int)
        p.add_argument("--workers", type=int)
    _graph_parser(sub)
    a = ap.parse_args(argv)

    if a.command == "graph":
        try:
            g = _build_from_args(a)
        except ValueError as exc:
            print(f"configuration error: {exc}", file=sys.stderr)
            return EXIT_CONFIG
        sgm.write_graph(g, a.out)
        print(f"wrote {a.out}: |V|={g.n} |E|={g.edge_count} negative={len(g.negative_edges())}")
        return EXIT_OK

    try:
        raw = _read_ini(a.config)
    except (OSError, configparser.Error, json.JSONDecodeError, KeyError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    overrides = {"seed": a.seed, "samples": a.samples, "workers": a.workers}
    cfg, errors = parse_config(raw, overrides)
    if a.command == "validate":
        for e in errors:
            print(e)
        return EXIT_OK if not errors else EXIT_CONFIG
    if errors:
        for e in errors:
            print(f"configuration error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    return run(cfg)


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
