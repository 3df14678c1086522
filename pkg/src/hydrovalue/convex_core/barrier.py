"""Log-barrier Newton method for concave log-likelihoods under cone constraints.

Maximizes ``sum_i w_i log(a_i @ g + b_i)`` subject to ``E @ g == e`` and
second-order cones ``||P @ g + p|| <= q @ g + d``. Equalities are eliminated
by working in a null-space parametrization, cones enter through the
standard barrier ``-log((q@g + d)^2 - ||P@g + p||^2)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np
import scipy.linalg as la


class BarrierError(RuntimeError):
    """Raised when no strictly feasible start exists or Newton stalls."""

    def __init__(self, msg: str, last_iterate=None, residuals=None):
        super().__init__(msg)
        self.last_iterate = last_iterate
        self.residuals = residuals or {}


@dataclass
class LogTerms:
    """Affine arguments ``A @ g + b`` of the summed logs, with weights."""

    A: np.ndarray
    b: np.ndarray
    weights: np.ndarray | None = None

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.weights = np.ones(self.b.size) if self.weights is None else np.asarray(self.weights, dtype=float).ravel()


@dataclass
class Cone:
    """``||P @ g + p|| <= q @ g + d``."""

    P: np.ndarray
    q: np.ndarray
    d: float = 0.0
    p: np.ndarray | None = None

    def __post_init__(self):
        self.P = np.atleast_2d(np.asarray(self.P, dtype=float))
        self.q = np.asarray(self.q, dtype=float).ravel()
        self.p = np.zeros(self.P.shape[0]) if self.p is None else np.asarray(self.p, dtype=float).ravel()

    def slack(self, g: np.ndarray) -> float:
        return float(self.q @ g + self.d - np.linalg.norm(self.P @ g + self.p))


@dataclass
class BarrierResult:
    x: np.ndarray
    objective: float
    kkt_residual: float
    newton_steps: int
    outer_iterations: int
    history: list = field(default_factory=list)


def _strictly_feasible(terms: LogTerms, cones: Sequence[Cone], g: np.ndarray) -> bool:
    if terms.b.size and np.any(terms.A @ g + terms.b <= 0):
        return False
    for cn in cones:
        t = float(cn.q @ g + cn.d)
        w = cn.P @ g + cn.p
        if t <= 0 or t * t - float(w @ w) <= 0:
            return False
    return True


def _loglik(terms: LogTerms, g: np.ndarray) -> float:
    if not terms.b.size:
        return 0.0
    return float(terms.weights @ np.log(terms.A @ g + terms.b))


def _derivatives(terms: LogTerms, cones: Sequence[Cone], g: np.ndarray, mu: float):
    """Value, gradient and Hessian of ``-loglik + mu * barrier`` at ``g``."""
    n = g.size
    val = 0.0
    grad = np.zeros(n)
    hess = np.zeros((n, n))
    if terms.b.size:
        phi = terms.A @ g + terms.b
        w = terms.weights
        val -= float(w @ np.log(phi))
        grad -= terms.A.T @ (w / phi)
        hess += (terms.A * (w / phi**2)[:, None]).T @ terms.A
    for cn in cones:
        t = float(cn.q @ g + cn.d)
        v = cn.P @ g + cn.p
        nv = float(np.linalg.norm(v))
        D = (t - nv) * (t + nv)
        dD = 2.0 * t * cn.q - 2.0 * cn.P.T @ v
        d2D = 2.0 * np.outer(cn.q, cn.q) - 2.0 * cn.P.T @ cn.P
        val -= mu * math.log(D)
        grad -= mu * dD / D
        hess += mu * (np.outer(dD, dD) / D**2 - d2D / D)
    return val, grad, hess


def solve_log_barrier_mle(
    terms: LogTerms,
    eq: tuple[np.ndarray, np.ndarray] | None,
    cones: Sequence[Cone],
    x0: np.ndarray | None = None,
    *,
    mu0: float = 1.0,
    mu_factor: float = 10.0,
    gap_tol: float = 1e-7,
    kkt_tol: float = 1e-6,
    max_newton: int = 200,
) -> BarrierResult:
    """Maximize a sum of weighted logs of affine forms over a conic set.

    ``x0`` must satisfy the equalities and lie strictly inside every cone
    and log domain; without it the least-norm equality solution is tried.
    The barrier weight starts at ``mu0`` and shrinks by ``mu_factor`` after
    each centering until ``nu * mu`` (``nu = 2`` per cone) drops below
    ``gap_tol``.
    """
    nvar = terms.A.shape[1] if terms.b.size else (cones[0].q.size if cones else 0)
    if eq is not None and np.asarray(eq[0]).size:
        E = np.atleast_2d(np.asarray(eq[0], dtype=float))
        e = np.asarray(eq[1], dtype=float).ravel()
        nvar = E.shape[1]
    else:
        E = np.zeros((0, nvar))
        e = np.zeros(0)
    if x0 is None:
        x0 = la.lstsq(E, e)[0] if E.shape[0] else np.zeros(nvar)
    g = np.asarray(x0, dtype=float).copy()
    if E.shape[0] and np.max(np.abs(E @ g - e)) > 1e-9 * (1 + np.max(np.abs(e))):
        raise BarrierError("starting point violates the equality constraints", g)
    if not _strictly_feasible(terms, cones, g):
        raise BarrierError("no strictly feasible starting point", g)
    N = la.null_space(E) if E.shape[0] else np.eye(nvar)
    scale = 1.0 + float(np.sum(np.abs(terms.weights))) if terms.b.size else 1.0
    nu = 2.0 * len(cones)

    mu = mu0 if cones else 0.0
    steps = 0
    outer = 0
    history = []
    kkt = math.inf
    while True:
        outer += 1
        # centering
        for _ in range(max_newton):
            val, grad, hess = _derivatives(terms, cones, g, mu)
            gz = N.T @ grad
            kkt = float(np.linalg.norm(gz)) / scale
            Hz = N.T @ hess @ N
            try:
                dz = -la.solve(Hz, gz, assume_a="sym")
            except la.LinAlgError:
                dz = -la.lstsq(Hz, gz)[0]
            dec = float(-gz @ dz)
            if kkt <= kkt_tol * 1e-3 or dec <= 1e-24 * scale:
                break
            dg = N @ dz
            step = 1.0
            while not _strictly_feasible(terms, cones, g + step * dg):
                step *= 0.5
                if step < 1e-16:
                    raise BarrierError("line search lost feasibility", g, dict(kkt=kkt, mu=mu))
            # near the center the decrement is below float resolution of val
            while dec > 1e-10 * (1.0 + abs(val)):
                trial = _derivatives(terms, cones, g + step * dg, mu)[0]
                if trial <= val - 0.25 * step * dec or step < 1e-12:
                    break
                step *= 0.5
            g_new = g + step * dg
            steps += 1
            if np.array_equal(g_new, g):
                break
            g = g_new
        else:
            raise BarrierError(
                f"Newton centering did not converge at mu={mu:g}", g, dict(kkt=kkt, mu=mu, steps=steps)
            )
        history.append((mu, _loglik(terms, g), kkt))
        if nu * mu <= gap_tol:
            break
        mu /= mu_factor

    val, grad, _ = _derivatives(terms, cones, g, mu)
    kkt = float(np.linalg.norm(N.T @ grad)) / scale
    if kkt > kkt_tol:
        raise BarrierError(f"KKT residual {kkt:.3e} above tolerance", g, dict(kkt=kkt, mu=mu))
    return BarrierResult(g, _loglik(terms, g), kkt, steps, outer, history)
