"""Discounted optimal control of noise-free partially observed finite-state
chains: exact filtering, belief-space value iteration, residual verification,
and Monte Carlo closure."""

from .controls import FeedbackPolicy, PiecewiseConstantControl
from .filter import (
    Belief,
    FlowResult,
    continuity_probe,
    h_jump,
    integrate_flow,
    jump_kernel,
    jump_rate,
    replay_filter,
    vector_field,
)
from .grid import SimplexGrid, ValueTable, build_grid, constant_table
from .hjb import HjbReport, check_hjb, face_gradient, hamiltonian
from .model import (
    Action,
    ConvexityReport,
    InitialLaw,
    ModelSpec,
    check_convexity_conditions,
    load_model,
    model_from_dict,
)
from .simulate import (
    ChainTrajectory,
    PdpTrajectory,
    compare_laws,
    estimate_cost,
    simulate_chain,
    simulate_pdp,
)
from .solver import (
    StageValue,
    assemble_V,
    bellman_step,
    dpp_mismatch,
    evaluate_stage,
    extract_policy,
    solve_value,
)

__version__ = "0.1.0"

__all__ = [
    "Action", "Belief", "ChainTrajectory", "ConvexityReport", "FeedbackPolicy",
    "FlowResult", "HjbReport", "InitialLaw", "ModelSpec", "PdpTrajectory",
    "PiecewiseConstantControl", "SimplexGrid", "StageValue", "ValueTable",
    "assemble_V", "bellman_step", "build_grid", "check_convexity_conditions",
    "check_hjb", "compare_laws", "constant_table", "continuity_probe",
    "dpp_mismatch", "estimate_cost", "evaluate_stage", "extract_policy",
    "face_gradient", "h_jump", "hamiltonian", "integrate_flow", "jump_kernel",
    "jump_rate", "load_model", "model_from_dict", "replay_filter",
    "simulate_chain", "simulate_pdp", "solve_value", "vector_field",
]
