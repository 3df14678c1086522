"""Numerical optimization engine: sparse LP and barrier log-likelihood maximization."""
from .lp import (
    INFEASIBLE,
    ITERATION_LIMIT,
    NEAR_OPTIMAL,
    OPTIMAL,
    UNBOUNDED,
    LinearProgram,
    LPError,
    LPSolution,
    solve_lp,
)
from .barrier import BarrierError, BarrierResult, Cone, LogTerms, solve_log_barrier_mle
