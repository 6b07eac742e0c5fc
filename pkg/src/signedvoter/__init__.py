"""Simulation and exact analysis of signed voter models on finite graphs."""
from __future__ import annotations

__version__ = "0.1.0"

from .signed_graph import (
    IIDSigns,
    NotAdjacentError,
    SignedGraph,
    build_frustrated_cycle,
    build_lattice_window,
    build_paired_tree,
    build_z4_staircase,
    find_unsatisfied_cycle,
    gauge_partition,
    path_sign,
    read_graph,
    staircase_scales,
    switch,
    write_graph,
)
from .harris_engine import (
    EventStream,
    dual_ensemble,
    dual_walk,
    empirical_distribution,
    evolve,
    meeting_sign,
    reconstruct_spins,
    sample_canonical_equilibrium,
    sample_events,
    trajectory,
)
from .walkers import (
    SignedWalkPath,
    coalescing_walks,
    count_unsatisfied_loops,
    hitting_time,
    segment_sign,
    simulate_walk,
    timeshift_couple,
)
from .exact_solver import (
    NumericalError,
    build_generator,
    one_point_function,
    parity_absorption,
    parity_occupation,
    stationary_analysis,
    transient_distribution,
)
from .diagnostics import (
    ShellSystem,
    assign_site_signs,
    check_compatibility,
    classify_sign,
    estimate_mu_pm,
    estimate_parity,
    estimate_shell_statistics,
    signed_harmonic_residual,
    tv_gap,
)
