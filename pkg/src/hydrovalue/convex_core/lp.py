"""Primal-dual interior-point solver for sparse linear programs.

Problems are posed as::

    minimize    c @ x
    subject to  A @ x == b
                lb <= x <= ub

and reduced internally to ``A x = b, 0 <= x <= u`` (shifted, flipped or
split columns). The Newton systems are solved through the normal equations
``A diag(theta) A^T``, dense for few rows and sparse LU otherwise.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as la
import scipy.sparse as sp
import scipy.sparse.linalg as spla

log = logging.getLogger(__name__)

OPTIMAL = "optimal"
INFEASIBLE = "infeasible"
UNBOUNDED = "unbounded"
ITERATION_LIMIT = "iteration-limit"
NEAR_OPTIMAL = "near-optimal"
_STALL_ITERS = 8

_DENSE_ROWS = 1500


class LPError(RuntimeError):
    """Raised for malformed programs or numerical breakdown."""


@dataclass
class LinearProgram:
    """``min c@x  s.t.  A@x == b,  lb <= x <= ub`` with sparse ``A``."""

    c: np.ndarray
    A: sp.spmatrix
    b: np.ndarray
    lb: np.ndarray | None = None
    ub: np.ndarray | None = None

    def __post_init__(self):
        self.c = np.asarray(self.c, dtype=float).ravel()
        self.b = np.asarray(self.b, dtype=float).ravel()
        self.A = sp.csr_matrix(self.A, dtype=float)
        m, n = self.A.shape
        if self.c.size != n or self.b.size != m:
            raise LPError(f"inconsistent dimensions: A {self.A.shape}, c {self.c.size}, b {self.b.size}")
        self.lb = np.zeros(n) if self.lb is None else np.asarray(self.lb, dtype=float).ravel()
        self.ub = np.full(n, np.inf) if self.ub is None else np.asarray(self.ub, dtype=float).ravel()
        if self.lb.size != n or self.ub.size != n:
            raise LPError("bound vectors must have one entry per variable")
        if not (np.all(np.isfinite(self.c)) and np.all(np.isfinite(self.b)) and np.all(np.isfinite(self.A.data))):
            raise LPError("objective, matrix and right-hand side must be finite")
        if np.any(self.lb == np.inf) or np.any(self.ub == -np.inf) or np.any(self.lb > self.ub):
            raise LPError("invalid variable bounds")

    @property
    def shape(self) -> tuple[int, int]:
        return self.A.shape

    def to_lp_format(self) -> str:
        """CPLEX LP text, for cross-checking with external solvers."""
        m, n = self.A.shape

        def term(coef, j, first):
            sign = "-" if coef < 0 else ("" if first else "+")
            return f"{sign} {abs(coef):.17g} x{j}"

        lines = ["\\ hydrovalue debug dump", "Minimize", " obj: " + " ".join(
            term(v, j, k == 0) for k, (j, v) in enumerate((j, v) for j, v in enumerate(self.c) if v != 0)
        ) or " obj: 0 x0", "Subject To"]
        csr = self.A.tocsr()
        for i in range(m):
            lo, hi = csr.indptr[i], csr.indptr[i + 1]
            body = " ".join(term(v, j, k == 0) for k, (j, v) in enumerate(zip(csr.indices[lo:hi], csr.data[lo:hi])))
            lines.append(f" r{i}: {body or '0 x0'} = {self.b[i]:.17g}")
        lines.append("Bounds")
        for j in range(n):
            lo, hi = self.lb[j], self.ub[j]
            if lo == -np.inf and hi == np.inf:
                lines.append(f" x{j} free")
            else:
                lo_s = "-inf" if lo == -np.inf else f"{lo:.17g}"
                hi_s = "+inf" if hi == np.inf else f"{hi:.17g}"
                lines.append(f" {lo_s} <= x{j} <= {hi_s}")
        lines.append("End")
        return "\n".join(lines) + "\n"


@dataclass
class LPSolution:
    x: np.ndarray
    objective: float
    duals: np.ndarray
    status: str
    reduced_costs: np.ndarray | None = None
    iterations: int = 0
    residuals: dict = field(default_factory=dict)
    certificate: np.ndarray | None = None

    @property
    def optimal(self) -> bool:
        return self.status == OPTIMAL


@dataclass
class _Standard:
    """``A x = b, 0 <= x <= u`` together with the map back to user variables."""

    A: sp.csc_matrix
    b: np.ndarray
    c: np.ndarray
    u: np.ndarray
    col: np.ndarray  # user variable of each standard column
    sign: np.ndarray  # +1 / -1 orientation of each standard column
    offset: np.ndarray  # user-space shift

    def to_user(self, xs: np.ndarray, n: int) -> np.ndarray:
        x = self.offset.copy()
        np.add.at(x, self.col, self.sign * xs)
        return x


def _standardize(lp: LinearProgram) -> _Standard:
    n = lp.A.shape[1]
    lb, ub = lp.lb, lp.ub
    offset = np.zeros(n)
    has_lb = np.isfinite(lb)
    has_ub = np.isfinite(ub)
    flip = ~has_lb & has_ub
    free = ~has_lb & ~has_ub
    offset[has_lb] = lb[has_lb]
    offset[flip] = ub[flip]
    sign = np.where(flip, -1.0, 1.0)
    u = np.where(has_lb & has_ub, ub - np.where(has_lb, lb, 0.0), np.inf)
    free_idx = np.flatnonzero(free)
    col = np.concatenate([np.arange(n), free_idx])
    sign = np.concatenate([sign, -np.ones(free_idx.size)])
    u = np.concatenate([u, np.full(free_idx.size, np.inf)])
    Acsc = lp.A.tocsc()
    A = Acsc[:, col] @ sp.diags(sign)
    c = lp.c[col] * sign
    b = lp.b - lp.A @ offset
    return _Standard(sp.csc_matrix(A), b, c, u, col, sign, offset)


class _NormalSolver:
    """Factor and solve ``A diag(theta) A^T dy = r`` with light regularization."""

    def __init__(self, A: sp.csc_matrix, dense: bool):
        self.A = A
        self.At = A.T.tocsr()
        self.dense = dense
        self.refine = 5
        if dense:
            self.Ad = A.toarray()

    def factor(self, theta: np.ndarray, reg: float):
        self.theta = theta
        if self.dense:
            M = (self.Ad * theta) @ self.Ad.T
        else:
            As = self.A @ sp.diags(np.sqrt(theta))
            M = (As @ As.T).tocsc()
        self.M = M
        scale = max(1.0, float(np.max(M.diagonal()))) if M.shape[0] else 1.0
        self.reg = reg * scale
        for attempt in range(6):
            try:
                if self.dense:
                    Mr = M + self.reg * np.eye(M.shape[0])
                    fac = la.cho_factor(Mr, lower=False, check_finite=False)
                    self._solve = lambda r: la.cho_solve(fac, r, check_finite=False)
                else:
                    Mr = (M + self.reg * sp.eye(M.shape[0], format="csc")).tocsc()
                    lu = spla.splu(
                        Mr,
                        permc_spec="MMD_AT_PLUS_A",
                        diag_pivot_thresh=0.0,
                        options=dict(SymmetricMode=True),
                    )
                    self._solve = lu.solve
                return
            except (la.LinAlgError, RuntimeError):
                self.reg *= 100.0
        raise LPError("normal equations could not be factored")

    def solve(self, r: np.ndarray) -> np.ndarray:
        # the regularized factor preconditions refinement on the exact matrix
        dy = self._solve(r)
        rnorm = float(np.max(np.abs(r), initial=0.0))
        for _ in range(self.refine):
            res = r - self.M @ dy
            if not np.all(np.isfinite(res)) or float(np.max(np.abs(res), initial=0.0)) <= 1e-15 * rnorm:
                break
            dy = dy + self._solve(res)
        return dy


def _max_step(v: np.ndarray, dv: np.ndarray) -> float:
    neg = dv < 0
    if not np.any(neg):
        return math.inf
    return float(np.min(-v[neg] / dv[neg]))


def _ipm(st: _Standard, tol: float, max_iter: int):
    A, b, c, u = st.A, st.b, st.c, st.u
    m, n = A.shape
    bnd = np.isfinite(u)
    ub = u[bnd]
    solver = _NormalSolver(A, dense=m <= _DENSE_ROWS)

    # Mehrotra-style starting point
    solver.factor(np.ones(n), 1e-8)
    x = A.T @ solver.solve(b)
    y = solver.solve(A @ c)
    z = c - A.T @ y
    dx0 = max(-1.5 * float(np.min(x)) if n else 0.0, 0.0)
    dz0 = max(-1.5 * float(np.min(z)) if n else 0.0, 0.0)
    x = x + dx0
    z = z + dz0
    xz = float(x @ z)
    x = x + 0.5 * xz / max(float(np.sum(z)), 1e-300)
    z = z + 0.5 * xz / max(float(np.sum(x)), 1e-300)
    x = np.maximum(x, 1e-4)
    z = np.maximum(z, 1e-4)
    # bounded columns start strictly inside their box
    xb = x[bnd]
    xb = np.where(xb >= ub, 0.5 * ub, xb)
    x[bnd] = np.maximum(xb, 1e-3 * ub)
    w = ub - x[bnd]
    s = np.full(ub.size, max(float(np.mean(z)), 1.0)) if ub.size else np.zeros(0)
    z[bnd] = np.maximum(z[bnd], 1e-4) + s
    nbar = n + ub.size

    bnorm = 1.0 + float(np.max(np.abs(b), initial=0.0))
    cnorm = 1.0 + float(np.max(np.abs(c), initial=0.0))
    status = ITERATION_LIMIT
    it = 0
    res = {}
    # late iterates can lose accuracy once mu underflows the normal-equation
    # precision, so the best iterate seen is kept and returned on a stall
    best = (math.inf, None, 0)
    stalled = False
    for it in range(max_iter + 1):
        rp = b - A @ x
        rd = c - A.T @ y - z
        rd[bnd] += s
        ru = ub - x[bnd] - w
        pobj = float(c @ x)
        dobj = float(b @ y - ub @ s)
        mu = (float(x @ z) + float(w @ s)) / nbar if nbar else 0.0
        pres = max(float(np.max(np.abs(rp), initial=0.0)), float(np.max(np.abs(ru), initial=0.0))) / bnorm
        dres = float(np.max(np.abs(rd), initial=0.0)) / cnorm
        gap = abs(pobj - dobj) / (1.0 + abs(pobj))
        res = dict(primal=pres, dual=dres, gap=gap, mu=mu)
        if pres <= tol and dres <= tol and gap <= tol:
            status = OPTIMAL
            break
        worst = max(pres, dres, gap)
        if worst < best[0]:
            best = (worst, (x.copy(), y.copy(), z.copy(), s.copy(), dict(res)), it)
        elif it - best[2] >= _STALL_ITERS:
            log.debug("ipm stalled at it=%d; best residual %.2e at it=%d", it, best[0], best[2])
            stalled = True
            break
        xmax = float(np.max(np.abs(x), initial=0.0))
        ymax = float(np.max(np.abs(y), initial=0.0))
        if xmax > 1e12 or ymax > 1e12 or it == max_iter:
            break

        theta_inv = z / x
        theta_inv[bnd] += s / w
        theta = 1.0 / theta_inv
        solver.factor(theta, 1e-13)

        def direction(rxz, rws):
            rhat = rd - rxz / x
            if ub.size:
                rhat[bnd] += (rws - s * ru) / w
            dy = solver.solve(rp + A @ (theta * rhat))
            dx = theta * (A.T @ dy - rhat)
            dz = (rxz - z * dx) / x
            dw = ru - dx[bnd]
            ds = (rws - s * dw) / w if ub.size else np.zeros(0)
            return dx, dy, dz, dw, ds

        def steps(dx, dz, dw, ds):
            ap = min(1.0, _max_step(x, dx), _max_step(w, dw))
            ad = min(1.0, _max_step(z, dz), _max_step(s, ds))
            return ap, ad

        # predictor
        dx, dy, dz, dw, ds = direction(-x * z, -w * s)
        ap, ad = steps(dx, dz, dw, ds)
        mu_aff = (float((x + ap * dx) @ (z + ad * dz)) + float((w + ap * dw) @ (s + ad * ds))) / nbar
        sigma = min(1.0, (mu_aff / mu) ** 3) if mu > 0 else 0.0
        # corrector
        dx2, dy2, dz2, dw2, ds2 = direction(sigma * mu - x * z - dx * dz, sigma * mu - w * s - dw * ds)
        ap, ad = steps(dx2, dz2, dw2, ds2)
        eta = max(0.9, 1.0 - 10.0 * mu) if mu < 0.01 else 0.9
        eta = min(eta, 0.99995)
        ap = min(1.0, eta * ap)
        ad = min(1.0, eta * ad)
        x = x + ap * dx2
        w = w + ap * dw2
        y = y + ad * dy2
        z = z + ad * dz2
        s = s + ad * ds2
        log.debug("ipm it=%d pres=%.2e dres=%.2e gap=%.2e mu=%.2e", it, pres, dres, gap, mu)
    if stalled:
        x, y, z, s, res = best[1]
    return x, y, z, s, status, it, res


def _certificates(st: _Standard, x, y, s, tol):
    """Return (status, ray) when the divergent iterate certifies trouble."""
    A, b, c, u = st.A, st.b, st.c, st.u
    bnd = np.isfinite(u)
    ynorm = float(np.max(np.abs(y), initial=0.0))
    if ynorm > 0:
        yr = y / ynorm
        sr = s / ynorm
        lhs = A.T @ yr
        lhs[bnd] -= sr
        if float(b @ yr - u[bnd] @ sr) > tol and float(np.max(lhs, initial=-1.0)) <= 1e-6:
            return INFEASIBLE, yr
    xnorm = float(np.max(np.abs(x), initial=0.0))
    if xnorm > 0:
        xr = x / xnorm
        if float(c @ xr) < -tol and float(np.max(np.abs(A @ xr), initial=0.0)) <= 1e-6:
            return UNBOUNDED, xr
    return ITERATION_LIMIT, None


def _purify(st: _Standard, x: np.ndarray, y: np.ndarray, tol: float):
    """Move an optimal interior point to a vertex of the optimal face.

    Repeatedly steps along a null-space direction of the free columns,
    never increasing the objective, until the free columns are
    independent. Direction signs are fixed so that the lowest-index
    moving variable decreases, giving reproducible vertices.
    """
    A = st.A.toarray()
    b, c, u = st.b, st.c, st.u
    x = x.copy()
    scale = np.maximum(1.0, np.where(np.isfinite(u), u, 1.0))
    eps = 1e-9 * scale
    x[x < eps] = 0.0
    up = np.isfinite(u) & (u - x < eps)
    x[up] = u[up]
    while True:
        free = np.flatnonzero((x > 0) & ~(np.isfinite(u) & (x >= u)))
        if free.size == 0:
            break
        N = la.null_space(A[:, free], rcond=1e-10)
        if N.shape[1] == 0:
            break
        d = N[:, 0]
        cd = float(c[free] @ d)
        if abs(cd) > 1e-12 * (1.0 + float(np.abs(c[free]).max())):
            if cd > 0:
                d = -d
        else:
            lead = np.flatnonzero(np.abs(d) > 1e-12)[0]
            if d[lead] > 0:
                d = -d
        xf = x[free]
        uf = u[free]
        with np.errstate(divide="ignore", invalid="ignore"):
            t_lo = np.where(d < -1e-14, -xf / d, np.inf)
            t_hi = np.where(d > 1e-14, (uf - xf) / d, np.inf)
        t = float(min(np.min(t_lo), np.min(t_hi)))
        if not math.isfinite(t):
            break
        xf = xf + t * d
        k = int(np.argmin(np.minimum(t_lo, t_hi)))
        xf[k] = 0.0 if t_lo[k] <= t_hi[k] else uf[k]
        xf = np.clip(xf, 0.0, uf)
        xf[xf < eps[free]] = 0.0
        x[free] = xf
    # polish the free block against the equality rows
    free = np.flatnonzero((x > 0) & ~(np.isfinite(u) & (x >= u)))
    fixed = np.setdiff1d(np.arange(x.size), free)
    if free.size:
        rhs = b - A[:, fixed] @ x[fixed]
        xf, *_ = la.lstsq(A[:, free], rhs)
        if np.all(xf >= -tol) and np.all(xf <= u[free] + tol):
            x[free] = np.clip(xf, 0.0, u[free])
        # duals: smallest change to y making free columns exactly priced
        Af = A[:, free]
        r = c[free] - Af.T @ y
        dy, *_ = la.lstsq(Af.T, r)
        y = y + dy
    return x, y


def solve_lp(
    lp: LinearProgram, *, tol: float = 1e-9, max_iter: int = 200, basic: bool = False, accept_tol: float | None = None
) -> LPSolution:
    """Solve ``lp`` by a Mehrotra predictor-corrector interior-point method.

    Parameters
    ----------
    lp : LinearProgram
    tol : float
        Relative primal, dual and gap tolerance of the interior-point phase.
    max_iter : int
    accept_tol : float, optional
        If the method stalls or hits ``max_iter`` with every residual below
        ``accept_tol``, the iterate is returned with status ``near-optimal``.
    basic : bool
        Purify the interior solution to a vertex. Uses dense linear algebra,
        so it is meant for small and mid-sized programs.

    Returns
    -------
    LPSolution
        ``duals`` are the equality multipliers ``y`` with ``A^T y + r = c``,
        where ``r`` are the reduced costs.
    """
    m, n = lp.A.shape
    st = _standardize(lp)
    cs = max(1.0, float(np.max(np.abs(st.c), initial=0.0)))
    finite_u = st.u[np.isfinite(st.u)]
    bs = max(1.0, float(np.max(np.abs(st.b), initial=0.0)), float(np.max(finite_u, initial=0.0)))
    scaled = _Standard(st.A, st.b / bs, st.c / cs, st.u / bs, st.col, st.sign, st.offset)
    xs, y, z, s, status, it, res = _ipm(scaled, tol, max_iter)
    if status != OPTIMAL and accept_tol is not None and max(res["primal"], res["dual"], res["gap"]) <= accept_tol:
        status = NEAR_OPTIMAL
    if status not in (OPTIMAL, NEAR_OPTIMAL):
        status, ray = _certificates(scaled, xs, y, s, tol)
        if status != ITERATION_LIMIT:
            return LPSolution(np.full(n, np.nan), math.nan, np.full(m, np.nan), status, None, it, res, ray)
    if basic and status == OPTIMAL:
        xs, y = _purify(scaled, xs, y, tol)
    xs = xs * bs
    y = y * cs
    x = st.to_user(xs, n)
    reduced = lp.c - lp.A.T @ y
    objective = float(lp.c @ x)
    return LPSolution(x, objective, y, status, reduced, it, res)
