"""Inflow regimes, their Fourier-parameterized Markov chain, and within-regime inflow histograms."""
from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass

import numpy as np

from .convex_core import Cone, LogTerms, solve_log_barrier_mle
from .ingest import DAYS_PER_WEEK, OMEGA_YEAR, WEEKS_PER_YEAR, InflowSeries
from .quantile_fit import FourierBasis, QuantileFamily, fourier_basis_eval

log = logging.getLogger(__name__)


class RegimeWarning(UserWarning):
    pass


@dataclass(frozen=True)
class RegimeSeries:
    t_days: np.ndarray
    week: np.ndarray
    inflow: np.ndarray
    regime: np.ndarray  # 1-based
    n_regimes: int

    def __len__(self) -> int:
        return self.regime.size

    def counts(self) -> np.ndarray:
        return np.bincount(self.regime - 1, minlength=self.n_regimes)

    def transitions(self):
        """``(t_origin, r, r_next)`` for consecutive weekly records."""
        consecutive = np.isclose(np.diff(self.t_days), DAYS_PER_WEEK)
        idx = np.flatnonzero(consecutive)
        return self.t_days[idx], self.regime[idx], self.regime[idx + 1]


def assign_regimes(series: InflowSeries, family: QuantileFamily) -> RegimeSeries:
    """Regime ``r`` holds ``q[r-1](t) < f <= q[r](t)``, with ``q[0] = 0`` and ``q[|R|] = inf``."""
    t = series.t_days
    f = series.inflow
    q = family.values(t)
    regime = 1 + np.sum(q < f[None, :], axis=0).astype(int)
    out = RegimeSeries(t, series.weeks, f, regime, family.n_regimes)
    log.info("regime counts: %s", out.counts().tolist())
    return out


@dataclass(frozen=True)
class TransitionModel:
    """``P(r' | r, t) = phi(t) @ gamma[r, r']`` with ``phi = [1, cos wt, sin wt, ...]``."""

    gamma: np.ndarray  # (R, R, 1 + 2M)
    basis: FourierBasis
    loglik: float = math.nan

    @property
    def n_regimes(self) -> int:
        return self.gamma.shape[0]

    def matrix(self, t: float) -> np.ndarray:
        return transition_matrix(self, t)

    def to_dict(self) -> dict:
        return {
            "omega": self.basis.omega,
            "harmonics": self.basis.harmonics,
            "gamma": self.gamma.tolist(),
            "loglik": self.loglik,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "TransitionModel":
        return cls(
            np.asarray(d["gamma"], dtype=float),
            FourierBasis(float(d["omega"]), int(d["harmonics"])),
            float(d.get("loglik", math.nan)),
        )

    def loglikelihood(self, regimes: RegimeSeries) -> float:
        t, r, r2 = regimes.transitions()
        phi = fourier_basis_eval(self.basis, t)
        p = np.einsum("nk,nk->n", phi, self.gamma[r - 1, r2 - 1])
        return float(np.sum(np.log(p)))

    def soc_margins(self) -> np.ndarray:
        """``min(g0, 1 - g0) / sqrt(M) - ||harmonics||`` per regime pair; nonnegative when valid."""
        g0 = self.gamma[..., 0]
        h = np.linalg.norm(self.gamma[..., 1:], axis=-1)
        return np.minimum(g0, 1.0 - g0) / math.sqrt(self.basis.harmonics) - h


def transition_matrix(model: TransitionModel, t: float) -> np.ndarray:
    return model.gamma @ fourier_basis_eval(model.basis, float(t))


def homogeneous_loglik(regimes: RegimeSeries) -> float:
    """Log-likelihood of the empirical time-homogeneous transition matrix."""
    _, r, r2 = regimes.transitions()
    R = regimes.n_regimes
    C = np.zeros((R, R))
    np.add.at(C, (r - 1, r2 - 1), 1.0)
    rows = C.sum(axis=1, keepdims=True)
    with np.errstate(divide="ignore", invalid="ignore"):
        P = np.where(rows > 0, C / rows, 0.0)
        terms = np.where(C > 0, C * np.log(np.where(P > 0, P, 1.0)), 0.0)
    return float(terms.sum())


def _row_problem(t: np.ndarray, dest: np.ndarray, R: int, basis: FourierBasis):
    K = basis.dim
    M = basis.harmonics
    phi = fourier_basis_eval(basis, t)
    A = np.zeros((t.size, R * K))
    for j in range(R):
        sel = dest == j
        A[sel, j * K:(j + 1) * K] = phi[sel]
    # collapse duplicate rows (same time and destination)
    A_u, inv = np.unique(A, axis=0, return_inverse=True)
    w = np.bincount(inv.ravel(), minlength=A_u.shape[0]).astype(float)
    terms = LogTerms(A_u, np.zeros(A_u.shape[0]), w)
    E = np.zeros((K, R * K))
    e = np.zeros(K)
    for k in range(K):
        E[k, k::K] = 1.0
    e[0] = 1.0
    cones = []
    sq = math.sqrt(M)
    for j in range(R):
        P = np.zeros((2 * M, R * K))
        P[:, j * K + 1:(j + 1) * K] = sq * np.eye(2 * M)
        lo = np.zeros(R * K)
        lo[j * K] = 1.0
        cones.append(Cone(P, lo, 0.0))  # sqrt(M) ||h|| <= g0
        cones.append(Cone(P, -lo, 1.0))  # sqrt(M) ||h|| <= 1 - g0
    return terms, (E, e), cones


def fit_transition_mle(regimes: RegimeSeries, basis: FourierBasis | None = None, **solver_opts) -> TransitionModel:
    """Maximum-likelihood Fourier transition probabilities.

    Each origin regime is an independent program: weighted log-likelihood
    of its observed successors, rows summing to one at every ``t`` and the
    cone bound ``sqrt(M) ||harmonics|| <= min(g0, 1 - g0)`` per successor,
    which keeps every probability inside [0, 1] for all ``t``.
    """
    basis = basis or FourierBasis(OMEGA_YEAR, 1)
    R = regimes.n_regimes
    K = basis.dim
    if len(regimes) < 2:
        raise ValueError("need at least two regime observations")
    gamma = np.zeros((R, R, K))
    if R == 1:
        gamma[0, 0, 0] = 1.0
        return TransitionModel(gamma, basis, 0.0)
    t, r, r2 = regimes.transitions()
    total = 0.0
    for i in range(R):
        sel = r == i + 1
        if not np.any(sel):
            warnings.warn(f"regime {i + 1} never visited; using a uniform transition row", RegimeWarning, stacklevel=2)
            gamma[i, :, 0] = 1.0 / R
            continue
        dest = r2[sel] - 1
        terms, eq, cones = _row_problem(t[sel], dest, R, basis)
        counts = np.bincount(dest, minlength=R).astype(float)
        x0 = np.zeros(R * K)
        x0[0::K] = (counts + 1.0) / (counts.sum() + R)
        res = solve_log_barrier_mle(terms, eq, cones, x0, **solver_opts)
        gamma[i] = res.x.reshape(R, K)
        total += res.objective
        log.debug("row %d: loglik %.6f, %d newton steps", i + 1, res.objective, res.newton_steps)
    return TransitionModel(gamma, basis, total)


@dataclass(frozen=True)
class ConditionalInflowDist:
    """Histogram of inflow per ``(regime, week)`` on multiples of ``bin_mw``."""

    bin_mw: float
    n_regimes: int
    support: dict  # (r, week) -> np.ndarray of bin centers (MW)
    probs: dict  # (r, week) -> np.ndarray
    counts: dict  # (r, week) -> np.ndarray of raw counts

    def cell(self, r: int, week: int):
        key = (int(r), int(week))
        if key not in self.support:
            raise KeyError(f"no inflow histogram for regime {r}, week {week}")
        return self.support[key], self.probs[key]

    def to_dict(self) -> dict:
        cells = []
        for (r, w) in sorted(self.support):
            cells.append({
                "regime": r,
                "week": w,
                "support": self.support[(r, w)].tolist(),
                "counts": self.counts[(r, w)].tolist(),
            })
        return {"bin_mw": self.bin_mw, "n_regimes": self.n_regimes, "cells": cells}

    @classmethod
    def from_dict(cls, d: dict) -> "ConditionalInflowDist":
        support, probs, counts = {}, {}, {}
        for c in d["cells"]:
            key = (int(c["regime"]), int(c["week"]))
            support[key] = np.asarray(c["support"], dtype=float)
            cnt = np.asarray(c["counts"], dtype=float)
            counts[key] = cnt
            probs[key] = cnt / cnt.sum()
        return cls(float(d["bin_mw"]), int(d["n_regimes"]), support, probs, counts)


def bin_center(f, bin_mw: float) -> np.ndarray:
    """Nearest multiple of ``bin_mw``; exact halves round up."""
    return bin_mw * np.floor(np.asarray(f, dtype=float) / bin_mw + 0.5)


def _circular_distance(a, b, period=WEEKS_PER_YEAR):
    d = np.abs(np.asarray(a) - b) % period
    return np.minimum(d, period - d)


def fit_conditional_hist(regimes: RegimeSeries, bin_mw: float = 100.0, pool_weeks: int = 2) -> ConditionalInflowDist:
    """Pool each regime's observations within +-``pool_weeks`` (circular) and bin them.

    A cell left empty widens its own window by doubling until data appear.
    """
    if bin_mw <= 0:
        raise ValueError("bin_mw must be positive")
    if pool_weeks < 0:
        raise ValueError("pool_weeks must be >= 0")
    centers = bin_center(regimes.inflow, bin_mw)
    support, probs, counts = {}, {}, {}
    for r in range(1, regimes.n_regimes + 1):
        in_r = regimes.regime == r
        if not np.any(in_r):
            raise ValueError(f"regime {r} never observed; cannot build its inflow histogram")
        wk = regimes.week[in_r]
        cr = centers[in_r]
        for w in range(1, WEEKS_PER_YEAR + 1):
            window = pool_weeks
            sel = _circular_distance(wk, w) <= window
            while not np.any(sel):
                window = max(1, 2 * window)
                sel = _circular_distance(wk, w) <= window
                if np.any(sel):
                    warnings.warn(
                        f"regime {r}, week {w}: empty cell, pooling widened to +-{window} weeks",
                        RegimeWarning,
                        stacklevel=2,
                    )
            vals, cnt = np.unique(cr[sel], return_counts=True)
            support[(r, w)] = vals
            counts[(r, w)] = cnt.astype(float)
            probs[(r, w)] = cnt / cnt.sum()
    return ConditionalInflowDist(float(bin_mw), regimes.n_regimes, support, probs, counts)


def sample_inflow(dist: ConditionalInflowDist, r: int, week: int, rng: np.random.Generator) -> float:
    support, p = dist.cell(r, week)
    return float(support[rng.choice(support.size, p=p)])
