"""Minimum average-cost operating policy and state values from the state-action LP pair.

The primal LP chooses a stationary state-action distribution ``y``; its dual
gives the gain ``u`` and relative values ``v``. The interior-point solution
is purified to a vertex by policy iteration: the argmax-``y`` policy is
evaluated exactly and improved until no action has negative reduced cost,
which yields a basic optimal ``y`` (one action per recurrent state) and the
matching basic dual.
"""
from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from .convex_core import NEAR_OPTIMAL, OPTIMAL, LinearProgram, LPSolution, solve_lp
from .mdp import MDPModel

log = logging.getLogger(__name__)

SUPPORT_TOL = 1e-9
UNSUPPORTED = "unsupported"


class PricingError(RuntimeError):
    pass


@dataclass
class PolicySolution:
    y: np.ndarray  # (S, A)
    u: float  # per week
    policy: np.ndarray  # (S,) action index, -1 where unsupported
    support: np.ndarray  # (S,) bool
    actions: np.ndarray  # (S,) optimal action for every state (incl. transient)
    ipm_objective: float = math.nan
    ipm_iterations: int = 0
    pivots: int = 0
    residuals: dict = field(default_factory=dict)
    basic_dual: tuple | None = field(default=None, repr=False)  # (u, v) of the final vertex

    @property
    def u_annual(self) -> float:
        return 52.0 * self.u


@dataclass
class ValueSolution:
    u: float
    v: np.ndarray  # (S,) anchored at the anchor state
    anchor: int
    supported: np.ndarray  # (S,) bool
    method: str = "primal-duals"
    min_slack: float = math.nan

    @property
    def u_annual(self) -> float:
        return 52.0 * self.u


def anchor_state(model: MDPModel) -> int:
    """Full reservoir, median regime, week 1 (state 0 for models without a reservoir config)."""
    if model.config is None:
        return 0
    return int(model.index(model.config.storage_blocks, (model.n_regimes + 1) // 2, 1))


def state_action_lp(model: MDPModel) -> LinearProgram:
    """Stationarity row per state, then the normalization row; column ``s * A + a``."""
    S, A = model.n_states, model.n_actions
    E = sp.csr_matrix((np.ones(S * A), (np.repeat(np.arange(S), A), np.arange(S * A))), shape=(S, S * A))
    Aeq = sp.vstack([E - model.P.T.tocsr(), sp.csr_matrix(np.ones((1, S * A)))], format="csr")
    b = np.zeros(S + 1)
    b[S] = 1.0
    return LinearProgram(model.costs.ravel(), Aeq, b)


def value_lp(model: MDPModel, anchor: int | None = None) -> LinearProgram:
    """Explicit dual: ``max u  s.t.  u + v_s - P v <= c_sa``, with ``v[anchor] = 0``.

    Variables ``[u, v_1..v_S, slack_sa]``; minimize ``-u``.
    """
    S, A = model.n_states, model.n_actions
    anchor = anchor_state(model) if anchor is None else anchor
    E = sp.csr_matrix((np.ones(S * A), (np.arange(S * A), np.repeat(np.arange(S), A))), shape=(S * A, S))
    D = E - model.P
    ones = sp.csr_matrix(np.ones((S * A, 1)))
    top = sp.hstack([ones, D, sp.identity(S * A, format="csr")], format="csr")
    pin = sp.csr_matrix(([1.0], ([0], [1 + anchor])), shape=(1, 1 + S + S * A))
    Aeq = sp.vstack([top, pin], format="csr")
    c = np.zeros(1 + S + S * A)
    c[0] = -1.0
    lb = np.concatenate([np.full(1 + S, -np.inf), np.zeros(S * A)])
    return LinearProgram(c, Aeq, np.concatenate([model.costs.ravel(), [0.0]]), lb=lb)


def _policy_matrix(model: MDPModel, actions: np.ndarray) -> sp.csr_matrix:
    rows = np.arange(model.n_states) * model.n_actions + actions
    return model.P[rows]


def evaluate_policy(model: MDPModel, actions: np.ndarray, anchor: int | None = None):
    """Gain, relative values and stationary distribution of a deterministic policy.

    Solves ``u + v - P_pi v = c_pi`` with ``v[anchor] = 0`` and
    ``pi (I - P_pi) = 0, sum(pi) = 1``. Requires a single recurrent class.
    """
    S = model.n_states
    anchor = anchor_state(model) if anchor is None else anchor
    Ppi = _policy_matrix(model, actions)
    cpi = model.costs[np.arange(S), actions]
    I = sp.identity(S, format="csr")
    G = (I - Ppi).tocsr()
    # [G 1; e_anchor 0] [v; u] = [c; 0]
    K = sp.bmat([[G, sp.csr_matrix(np.ones((S, 1)))], [sp.csr_matrix(([1.0], ([0], [anchor])), shape=(1, S)), None]], format="csc")
    try:
        lu = spla.splu(K)
    except RuntimeError:
        raise PricingError("policy evaluation is singular; the policy has several recurrent classes (model not unichain)") from None
    sol = lu.solve(np.concatenate([cpi, [0.0]]))
    v, u = sol[:S] - sol[anchor], float(sol[S])
    # stationary distribution: replace the anchor equation by normalization
    Gt = G.T.tolil()
    Gt[anchor, :] = np.ones(S)
    rhs = np.zeros(S)
    rhs[anchor] = 1.0
    pi = spla.splu(Gt.tocsc()).solve(rhs)
    if not (np.all(np.isfinite(pi)) and np.all(np.isfinite(v))):
        raise PricingError("policy evaluation failed; the policy may have several recurrent classes")
    pi[np.abs(pi) < 1e-15] = 0.0
    return u, v, pi


def _q_values(model: MDPModel, v: np.ndarray) -> np.ndarray:
    return model.costs + (model.P @ v).reshape(model.n_states, model.n_actions)


def purify(model: MDPModel, start: np.ndarray, *, anchor: int | None = None, max_pivots: int = 200, rtol: float = 1e-10):
    """Policy-iteration crossover from ``start`` to an optimal vertex.

    A state switches only when some action beats the incumbent by more than
    ``rtol * max|c|``, and then moves to the lowest-index action within that
    tolerance of the minimum (a strict improvement, so the loop terminates).
    One final pass moves every state to its lowest tight action; it is kept
    only if the resulting policy is itself optimal, which avoids cycling on
    heavily degenerate models.
    """
    anchor = anchor_state(model) if anchor is None else anchor
    tol = rtol * max(1.0, float(np.max(np.abs(model.costs))))
    actions = np.asarray(start, dtype=np.int64).copy()
    S = model.n_states
    rows = np.arange(S)
    pivots = 0

    def lowest_tight(Q):
        return np.argmax(Q <= (Q.min(axis=1) + tol)[:, None], axis=1)

    while True:
        u, v, pi = evaluate_policy(model, actions, anchor)
        Q = _q_values(model, v)
        improve = Q[rows, actions] > Q.min(axis=1) + tol
        if not np.any(improve):
            break
        pivots += 1
        if pivots > max_pivots:
            raise PricingError("policy iteration did not converge")
        actions = np.where(improve, lowest_tight(Q), actions)
    canon = lowest_tight(Q)
    if not np.array_equal(canon, actions):
        try:
            cu, cv, cpi = evaluate_policy(model, canon, anchor)
        except PricingError:  # canonical choice is multichain; keep the incumbent
            return actions, u, v, pi, pivots
        CQ = _q_values(model, cv)
        if not np.any(CQ[rows, canon] > CQ.min(axis=1) + tol):
            actions, u, v, pi = canon, cu, cv, cpi
    return actions, u, v, pi, pivots


def _solve_ipm(model: MDPModel, anchor: int, tol: float) -> LPSolution:
    lp = state_action_lp(model)
    S = model.n_states
    # the stationarity rows sum to zero, so the anchor row is redundant;
    # dropping it pins v[anchor] = 0. The normalization is scaled to S.
    keep = np.delete(np.arange(S + 1), anchor)
    b = lp.b[keep] * S
    red = LinearProgram(lp.c, lp.A[keep], b)
    sol = solve_lp(red, tol=tol, accept_tol=1e-5)
    if sol.status not in (OPTIMAL, NEAR_OPTIMAL):
        raise PricingError(f"state-action LP: {sol.status} ({sol.residuals})")
    duals = np.insert(sol.duals, anchor, 0.0)
    return LPSolution(sol.x / S, sol.objective / S, duals, sol.status, sol.reduced_costs, sol.iterations, sol.residuals)


def solve_primal(model: MDPModel, *, tol: float = 1e-9, support_tol: float = SUPPORT_TOL) -> PolicySolution:
    """Optimal state-action distribution, gain and deterministic policy."""
    S, A = model.n_states, model.n_actions
    anchor = anchor_state(model)
    ipm = _solve_ipm(model, anchor, tol)
    y_ipm = ipm.x.reshape(S, A)
    start = np.argmax(y_ipm, axis=1)
    actions, u, v, pi, pivots = purify(model, start, anchor=anchor)
    y = np.zeros((S, A))
    y[np.arange(S), actions] = pi
    y[y < 0] = 0.0
    support = y.sum(axis=1) > support_tol
    policy = np.where(support, actions, -1)
    lp = state_action_lp(model)
    flat = y.ravel()
    resid = lp.A @ flat - lp.b
    residuals = dict(
        stationarity=float(np.max(np.abs(resid[:S]))),
        normalization=float(abs(resid[S])),
        ipm=ipm.residuals,
    )
    obj = float(model.costs.ravel() @ flat)
    log.info("gain %.6f/week (ipm %.6f), %d pivots, support %d/%d", obj, ipm.objective, pivots, support.sum(), S)
    return PolicySolution(y, obj, policy, support, actions, ipm.objective, ipm.iterations, pivots, residuals, (u, v))


def solve_dual(model: MDPModel, psol: PolicySolution | None = None, *, method: str = "primal-duals", tol: float = 1e-9) -> ValueSolution:
    """Gain and anchored relative values.

    ``method="primal-duals"`` reads the basic dual of the purified primal
    vertex; ``method="explicit"`` solves the value LP directly (intended for
    small models: it has one row per state-action pair).
    """
    anchor = anchor_state(model)
    if method == "primal-duals":
        psol = psol or solve_primal(model, tol=tol)
        u, v = psol.basic_dual
        supported = psol.support
    elif method == "explicit":
        sol = solve_lp(value_lp(model, anchor), tol=tol, accept_tol=1e-6)
        if sol.status not in (OPTIMAL, NEAR_OPTIMAL):
            raise PricingError(f"value LP: {sol.status} ({sol.residuals})")
        u = float(sol.x[0])
        v = sol.x[1:1 + model.n_states].copy()
        v -= v[anchor]
        supported = psol.support if psol is not None else np.ones(model.n_states, dtype=bool)
    else:
        raise ValueError(f"unknown method {method!r}")
    slack = model.costs + (model.P @ v).reshape(model.costs.shape) - u - v[:, None]
    scale = max(1.0, float(np.max(np.abs(model.costs))))
    return ValueSolution(float(u), np.asarray(v, dtype=float), anchor, supported, method, float(slack.min()) / scale)


def duality_gap(psol: PolicySolution, vsol: ValueSolution) -> float:
    return abs(psol.u - vsol.u) / (1.0 + abs(psol.u))


@dataclass
class OfferCurve:
    week: int
    regime: int
    levels: np.ndarray  # lower level of each adjacent pair
    marginal_value: np.ndarray  # $/MWh
    extrapolated: np.ndarray  # bool, either end unsupported
    monotone: bool  # marginal value non-increasing in level


def offer_curves(vsol: ValueSolution, model: MDPModel, weeks: Sequence[int], regimes: Sequence[int]) -> list[OfferCurve]:
    """Marginal water value ``(v[l] - v[l+1]) / block_energy`` along storage."""
    L = model.config.n_levels
    energy = model.config.block_energy_mwh
    out = []
    for w in weeks:
        for r in regimes:
            idx = model.index(np.arange(L), r, w)
            v = vsol.v[idx]
            mv = (v[:-1] - v[1:]) / energy
            sup = vsol.supported[idx]
            extrap = ~(sup[:-1] & sup[1:])
            monotone = bool(np.all(np.diff(mv) <= 1e-9 * max(1.0, float(np.max(np.abs(mv), initial=0.0)))))
            out.append(OfferCurve(int(w), int(r), np.arange(L - 1), mv, extrap, monotone))
    return out


def policy_table(psol: PolicySolution, model: MDPModel) -> np.ndarray:
    """Release in MW indexed ``[week - 1, regime - 1, level]``; NaN marks unsupported states."""
    L = model.config.n_levels
    R = model.n_regimes
    rel = np.where(psol.policy >= 0, psol.policy * model.config.block_mw, np.nan)
    # flat index order is (week, regime, level)
    return rel.reshape(52, R, L)


def write_policy_csv(psol: PolicySolution, model: MDPModel, path) -> None:
    table = policy_table(psol, model)
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["week", "regime", "level", "release_mw", "supported"])
        for w in range(table.shape[0]):
            for r in range(table.shape[1]):
                for lvl in range(table.shape[2]):
                    val = table[w, r, lvl]
                    sup = not math.isnan(val)
                    wr.writerow([w + 1, r + 1, lvl, f"{val:g}" if sup else UNSUPPORTED, int(sup)])


def write_values_csv(vsol: ValueSolution, model: MDPModel, path) -> None:
    L = model.config.n_levels
    R = model.n_regimes
    v = vsol.v.reshape(52, R, L)
    sup = vsol.supported.reshape(52, R, L)
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["week", "regime", "level", "v_dollars", "supported"])
        for w in range(52):
            for r in range(R):
                for lvl in range(L):
                    wr.writerow([w + 1, r + 1, lvl, repr(float(v[w, r, lvl])), int(sup[w, r, lvl])])


def write_offer_curves_csv(curves: Sequence[OfferCurve], path) -> None:
    with Path(path).open("w", newline="") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["week", "regime", "level", "marginal_value_per_mwh", "extrapolated"])
        for cv in curves:
            for lvl, mv, ex in zip(cv.levels, cv.marginal_value, cv.extrapolated):
                wr.writerow([cv.week, cv.regime, int(lvl), repr(float(mv)), int(ex)])
