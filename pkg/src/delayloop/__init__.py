"""Exact reduced dynamics of a quantum system driving itself through a delayed
coherent feedback loop, with independent brute-force and delay-ODE oracles."""

from .cascade import (FeedbackSystem, PiecewiseGenerator, build_generator,
                      chain_liouvillian, pair_hamiltonian, pair_lindblad,
                      window_index)
from .gtrace import LeggedPropagator, contract_chain, gen_trace
from .models import (CavityParams, TwoLevelParams, cavity, coherent_state,
                     excited_state, ground_state, two_level)
from .oracles import collision_model, dde_single_excitation, mean_field_cavity_dde
from .propagator import (MemoryBudgetError, PropagatorMatrix, evolve_propagator,
                         flow)
from .sim import Trajectory, expectation, no_feedback_reference, simulate

__version__ = "0.1.0"

__all__ = [
    "FeedbackSystem", "PiecewiseGenerator", "build_generator",
    "chain_liouvillian", "pair_hamiltonian", "pair_lindblad", "window_index",
    "LeggedPropagator", "contract_chain", "gen_trace",
    "CavityParams", "TwoLevelParams", "cavity", "coherent_state",
    "excited_state", "ground_state", "two_level",
    "collision_model", "dde_single_excitation", "mean_field_cavity_dde",
    "MemoryBudgetError", "PropagatorMatrix", "evolve_propagator", "flow",
    "Trajectory", "expectation", "no_feedback_reference", "simulate",
    "__version__",
]
