"""Periodic quantile curves by Fourier-basis quantile regression."""
from __future__ import annotations

import json
import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Sequence

import numpy as np
import scipy.sparse as sp

from .convex_core import LinearProgram, solve_lp
from .ingest import DAYS_PER_WEEK, OMEGA_YEAR, WEEKS_PER_YEAR, InflowSeries

log = logging.getLogger(__name__)


class QuantileCrossingWarning(UserWarning):
    pass


@dataclass(frozen=True)
class FourierBasis:
    """``[1, cos(wt), sin(wt), ..., cos(Mwt), sin(Mwt)]``."""

    omega: float = OMEGA_YEAR
    harmonics: int = 2

    def __post_init__(self):
        if self.harmonics < 1:
            raise ValueError("harmonics must be >= 1")
        if not (math.isfinite(self.omega) and self.omega > 0):
            raise ValueError("omega must be positive")

    @property
    def dim(self) -> int:
        return 1 + 2 * self.harmonics

    @property
    def period(self) -> float:
        return 2.0 * math.pi / self.omega

    def __call__(self, t) -> np.ndarray:
        return fourier_basis_eval(self, t)


def fourier_basis_eval(basis: FourierBasis, t) -> np.ndarray:
    """Basis vector at scalar ``t`` or design matrix (rows = times) for an array."""
    t_arr = np.asarray(t, dtype=float)
    scalar = t_arr.ndim == 0
    t_arr = np.atleast_1d(t_arr)
    out = np.empty((t_arr.size, basis.dim))
    out[:, 0] = 1.0
    for k in range(1, basis.harmonics + 1):
        ang = k * basis.omega * t_arr
        out[:, 2 * k - 1] = np.cos(ang)
        out[:, 2 * k] = np.sin(ang)
    return out[0] if scalar else out


def pinball_loss(residual, alpha: float) -> np.ndarray:
    """``max(alpha * x, (alpha - 1) * x)`` elementwise."""
    x = np.asarray(residual, dtype=float)
    return np.maximum(alpha * x, (alpha - 1.0) * x)


@dataclass(frozen=True)
class QuantileModel:
    alpha: float
    beta: np.ndarray
    basis: FourierBasis

    def __call__(self, t) -> np.ndarray:
        return fourier_basis_eval(self.basis, t) @ self.beta

    def loss(self, t, f) -> float:
        return float(np.sum(pinball_loss(np.asarray(f) - self(t), self.alpha)))


@dataclass(frozen=True)
class QuantileFamily:
    """Quantile curves at increasing levels; regimes lie between adjacent curves.

    With ``sorted_values`` set (after :func:`enforce_noncrossing`), evaluated
    values are sorted pointwise across levels.
    """

    levels: tuple[float, ...]
    models: tuple[QuantileModel, ...]
    sorted_values: bool = False
    crossings: int = 0

    def __post_init__(self):
        lv = list(self.levels)
        if any(not 0 < a < 1 for a in lv) or any(b <= a for a, b in zip(lv, lv[1:])):
            raise ValueError(f"levels must be strictly increasing in (0, 1): {lv}")
        if len(self.models) != len(lv):
            raise ValueError("one model per level required")

    @property
    def n_regimes(self) -> int:
        return len(self.levels) + 1

    @property
    def basis(self) -> FourierBasis:
        return self.models[0].basis

    def values(self, t) -> np.ndarray:
        """Curve values, shape ``(n_levels, len(t))``."""
        vals = np.vstack([np.atleast_1d(m(t)) for m in self.models]) if self.models else np.zeros((0, np.size(t)))
        if self.sorted_values:
            vals = np.sort(vals, axis=0)
        return vals

    def to_dict(self) -> dict:
        return {
            "omega": self.basis.omega,
            "harmonics": self.basis.harmonics,
            "levels": list(self.levels),
            "beta": [m.beta.tolist() for m in self.models],
            "sorted_values": self.sorted_values,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QuantileFamily":
        basis = FourierBasis(float(d["omega"]), int(d["harmonics"]))
        models = tuple(
            QuantileModel(float(a), np.asarray(b, dtype=float), basis) for a, b in zip(d["levels"], d["beta"])
        )
        return cls(tuple(float(a) for a in d["levels"]), models, bool(d.get("sorted_values", False)))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2)


def weekly_grid(weeks: int = WEEKS_PER_YEAR) -> np.ndarray:
    """Week-start times ``7 * (week - 1)`` of one model year."""
    return DAYS_PER_WEEK * np.arange(weeks)


def quantile_lp(t, f, alpha: float, basis: FourierBasis) -> LinearProgram:
    """Residual-split primal: ``min sum(alpha u+ + (1 - alpha) u-)``, ``Phi beta + u+ - u- = f``.

    Variables are ordered ``[beta (free), u+, u-]``.
    """
    Phi = fourier_basis_eval(basis, np.asarray(t, dtype=float))
    n, k = Phi.shape
    eye = sp.identity(n, format="csr")
    A = sp.hstack([sp.csr_matrix(Phi), eye, -eye], format="csr")
    c = np.concatenate([np.zeros(k), np.full(n, alpha), np.full(n, 1.0 - alpha)])
    lb = np.concatenate([np.full(k, -np.inf), np.zeros(2 * n)])
    return LinearProgram(c, A, np.asarray(f, dtype=float), lb=lb)


def fit_quantile(series: InflowSeries, alpha: float, basis: FourierBasis | None = None, *, tol: float = 1e-10) -> QuantileModel:
    """Minimize total pinball loss of ``f - phi(t) @ beta`` over ``beta``.

    The residual-split LP is solved through its bounded dual
    ``max f@a  s.t.  Phi^T a = (1 - alpha) Phi^T 1,  0 <= a <= 1``, which has
    only ``dim`` equality rows; ``beta`` is read off the equality multipliers.
    """
    basis = basis or FourierBasis()
    if len(series) == 0:
        raise ValueError("cannot fit a quantile to an empty series")
    if not 0.0 < alpha < 1.0:
        raise ValueError(f"alpha must lie in (0, 1), got {alpha}")
    t, f = series.t_days, series.inflow
    return _fit_arrays(t, f, alpha, basis, tol)


def _fit_arrays(t, f, alpha, basis, tol=1e-10) -> QuantileModel:
    t = np.asarray(t, dtype=float)
    f = np.asarray(f, dtype=float)
    if np.all(f == f[0]):
        beta = np.zeros(basis.dim)
        beta[0] = f[0]
        return QuantileModel(alpha, beta, basis)
    Phi = fourier_basis_eval(basis, t)
    lp = LinearProgram(
        -f,
        sp.csr_matrix(Phi.T),
        (1.0 - alpha) * Phi.sum(axis=0),
        lb=np.zeros(f.size),
        ub=np.ones(f.size),
    )
    sol = solve_lp(lp, tol=tol)
    if not sol.optimal:
        raise RuntimeError(f"quantile LP failed with status {sol.status}: {sol.residuals}")
    beta = -sol.duals
    primal = float(np.sum(pinball_loss(f - Phi @ beta, alpha)))
    dual = float(f @ sol.x) - (1.0 - alpha) * float(f.sum())
    log.debug("alpha=%.3f pinball=%.6g dual=%.6g", alpha, primal, dual)
    return QuantileModel(alpha, beta, basis)


def fit_family(series: InflowSeries, levels: Sequence[float], basis: FourierBasis | None = None) -> QuantileFamily:
    basis = basis or FourierBasis()
    levels = tuple(float(a) for a in levels)
    models = tuple(fit_quantile(series, a, basis) for a in levels)
    return QuantileFamily(levels, models)


def enforce_noncrossing(family: QuantileFamily, grid=None) -> QuantileFamily:
    """Sort curve values pointwise wherever fitted curves cross on ``grid``."""
    grid = weekly_grid() if grid is None else np.asarray(grid, dtype=float)
    raw = replace(family, sorted_values=False).values(grid)
    crossed = int(np.sum(np.any(np.diff(raw, axis=0) < 0, axis=0))) if raw.shape[0] > 1 else 0
    if crossed == 0:
        return family
    warnings.warn(
        f"quantile curves cross at {crossed} of {grid.size} grid points; values sorted pointwise",
        QuantileCrossingWarning,
        stacklevel=2,
    )
    return replace(family, sorted_values=True, crossings=crossed)


def coverage(family: QuantileFamily, series: InflowSeries) -> np.ndarray:
    """Fraction of observations at or below each curve."""
    vals = family.values(series.t_days)
    return np.mean(series.inflow[None, :] <= vals, axis=1)
