"""Monte-Carlo evaluation of an operating policy on sampled regime and inflow paths.

Every simulated year is an independent replicate: it starts at half capacity
in the median regime, runs ``warmup_years`` unrecorded years and then the
recorded year. Replicate ``i`` draws all of its random numbers from its own
Philox stream keyed by ``(seed, i)``, so results do not depend on how
replicates are batched or ordered.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .bundle import InflowBundle
from .ingest import DAYS_PER_WEEK, WEEKS_PER_YEAR
from .mdp import SystemConfig, delivered_hydro, state_index, step
from .regime_chain import transition_matrix

WARMUP_YEARS = 5
_BATCH = 2048


@dataclass
class SimulationResult:
    year_costs: np.ndarray  # $ per recorded year, one per replicate
    mean_weekly: float
    mean_annual: float
    stderr_weekly: float
    curtailment_events: int
    spill_events: int
    level_mean: np.ndarray  # (52,) blocks at the start of each week
    level_min: np.ndarray
    level_max: np.ndarray
    fallback_events: int = 0
    seed: int = 0
    occupancy: np.ndarray | None = field(default=None, repr=False)  # visits per flat state
    trajectory: list | None = field(default=None, repr=False)

    @property
    def years(self) -> int:
        return int(self.year_costs.size)

    def within(self, u_weekly: float, n_se: float = 3.0) -> bool:
        return abs(self.mean_weekly - u_weekly) <= n_se * self.stderr_weekly + 1e-9 * max(1.0, abs(u_weekly))

    def to_dict(self) -> dict:
        return {
            "years": self.years,
            "seed": self.seed,
            "mean_weekly_cost": self.mean_weekly,
            "mean_annual_cost": self.mean_annual,
            "stderr_weekly": self.stderr_weekly,
            "curtailment_events": self.curtailment_events,
            "spill_events": self.spill_events,
            "fallback_events": self.fallback_events,
            "level_mean": self.level_mean.tolist(),
            "level_min": self.level_min.tolist(),
            "level_max": self.level_max.tolist(),
            "year_costs": self.year_costs.tolist(),
        }

    def save_json(self, path, extra: dict | None = None) -> None:
        d = self.to_dict()
        if extra:
            d.update(extra)
        Path(path).write_text(json.dumps(d, indent=1, sort_keys=True), encoding="utf-8")

    def save_trajectory_csv(self, path) -> None:
        if not self.trajectory:
            raise ValueError("no trajectory recorded")
        with Path(path).open("w", newline="") as fh:
            wr = csv.DictWriter(fh, fieldnames=list(self.trajectory[0]), lineterminator="\n")
            wr.writeheader()
            wr.writerows(self.trajectory)


def complete_policy(policy, n_regimes: int, config: SystemConfig):
    """Fill unsupported (``-1``) entries and return ``(table, filled_mask)`` shaped ``(52, R, L)``.

    An unsupported level takes the action of the nearest supported level in
    the same regime and week (the lower one on ties), or 0 if there is none.
    Actions above the available water are capped when applied, as in the
    model build.
    """
    L = config.n_levels
    table = np.asarray(policy, dtype=np.int64).reshape(WEEKS_PER_YEAR, n_regimes, L).copy()
    if np.any(table >= config.n_actions):
        raise ValueError("policy action outside the turbine range")
    filled = table < 0
    levels = np.arange(L)
    for w in range(WEEKS_PER_YEAR):
        for r in range(n_regimes):
            row = table[w, r]
            sup = np.flatnonzero(row >= 0)
            miss = np.flatnonzero(row < 0)
            if miss.size == 0:
                continue
            if sup.size == 0:
                row[miss] = 0
                continue
            nearest = sup[np.argmin(np.abs(levels[miss][:, None] - sup[None, :]), axis=1)]
            row[miss] = row[nearest]
    return table, filled


def _tables(bundle: InflowBundle, config: SystemConfig):
    """Padded inverse-CDF tables for regime transitions and inflow cells."""
    R = bundle.n_regimes
    Pcum = np.empty((WEEKS_PER_YEAR, R, R))
    for w in range(1, WEEKS_PER_YEAR + 1):
        Pr = np.clip(transition_matrix(bundle.transition, DAYS_PER_WEEK * (w - 1)), 0.0, None)
        Pr /= Pr.sum(axis=1, keepdims=True)
        Pcum[w - 1] = np.cumsum(Pr, axis=1)
    Pcum[..., -1] = 1.0
    K = max(bundle.inflow_dist.cell(r, w)[0].size for r in range(1, R + 1) for w in range(1, WEEKS_PER_YEAR + 1))
    Fcum = np.ones((WEEKS_PER_YEAR, R, K))
    Fmw = np.zeros((WEEKS_PER_YEAR, R, K))
    for w in range(1, WEEKS_PER_YEAR + 1):
        for r in range(1, R + 1):
            sup, p = bundle.inflow_dist.cell(r, w)
            Fmw[w - 1, r - 1, :sup.size] = sup
            Fmw[w - 1, r - 1, sup.size:] = sup[-1]
            Fcum[w - 1, r - 1, :sup.size] = np.cumsum(p)
            Fcum[w - 1, r - 1, sup.size - 1:] = 1.0
    return Pcum, Fmw, Fcum


def _inverse_cdf(cum: np.ndarray, u: np.ndarray) -> np.ndarray:
    return np.sum(cum <= u[:, None], axis=1)


def _override(overrides: dict | None, key: str, default: float, rep: np.ndarray, week: int):
    if not overrides or key not in overrides:
        return default
    series = np.asarray(overrides[key], dtype=float)
    if series.ndim == 1:
        return series[week]
    return series[rep, week]


def simulate_policy(
    policy,
    bundle: InflowBundle,
    config: SystemConfig,
    years: int,
    seed: int,
    overrides: dict | None = None,
    *,
    warmup_years: int = WARMUP_YEARS,
    record_trajectory: bool = False,
) -> SimulationResult:
    """Simulate ``years`` recorded years of operation under ``policy``.

    Parameters
    ----------
    policy : array_like
        Action index per state, flat in model order or shaped ``(52, R, L)``;
        ``-1`` marks unsupported states, which fall back to the nearest
        supported level.
    overrides : dict, optional
        ``demand_mw`` and/or ``fuel_price`` series of shape ``(52,)`` or
        ``(years, 52)`` replacing the config constants during the recorded year.
    record_trajectory : bool
        Keep the recorded year of replicate 0 as per-week rows.
    """
    if years < 1:
        raise ValueError("years must be >= 1")
    if warmup_years < 0:
        raise ValueError("warmup_years must be >= 0")
    if overrides:
        unknown = set(overrides) - {"demand_mw", "fuel_price"}
        if unknown:
            raise ValueError(f"unknown overrides: {sorted(unknown)}")
        for k, v in overrides.items():
            shape = np.shape(v)
            if shape not in ((WEEKS_PER_YEAR,), (years, WEEKS_PER_YEAR)):
                raise ValueError(f"override {k} has shape {shape}")
    R = bundle.n_regimes
    L = config.n_levels
    table, filled = complete_policy(policy, R, config)
    Pcum, Fmw, Fcum = _tables(bundle, config)
    n_weeks = (warmup_years + 1) * WEEKS_PER_YEAR
    rec0 = warmup_years * WEEKS_PER_YEAR

    year_costs = np.zeros(years)
    occupancy = np.zeros(WEEKS_PER_YEAR * R * L, dtype=np.int64)
    lvl_sum = np.zeros(WEEKS_PER_YEAR)
    lvl_min = np.full(WEEKS_PER_YEAR, L, dtype=np.int64)
    lvl_max = np.zeros(WEEKS_PER_YEAR, dtype=np.int64)
    curtail = spill_ev = fallback = 0
    trajectory = [] if record_trajectory else None

    for lo in range(0, years, _BATCH):
        rep = np.arange(lo, min(years, lo + _BATCH))
        n = rep.size
        # counter-based stream per replicate: key (seed, replicate)
        U = np.stack([
            np.random.Generator(np.random.Philox(key=np.array([seed, i], dtype=np.uint64))).random((n_weeks, 2))
            for i in rep
        ])
        level = np.full(n, config.storage_blocks // 2, dtype=np.int64)
        regime = np.full(n, (R + 1) // 2, dtype=np.int64)
        for k in range(n_weeks):
            w = k % WEEKS_PER_YEAR
            recording = k >= rec0
            cell = Fcum[w, regime - 1]
            f_mw = Fmw[w, regime - 1][np.arange(n), _inverse_cdf(cell, U[:, k, 0])]
            f_blk = np.rint(f_mw / config.block_mw).astype(np.int64)
            action = table[w, regime - 1, level]
            nxt, release, spill = step(level, action, f_blk, config)
            if np.any(nxt - level != f_blk - release - spill):
                raise AssertionError("water balance violated")
            nxt_regime = 1 + _inverse_cdf(Pcum[w, regime - 1], U[:, k, 1])
            if recording:
                demand = _override(overrides, "demand_mw", config.demand_mw, rep, w)
                fuel = _override(overrides, "fuel_price", config.fuel_price, rep, w)
                h = delivered_hydro(f_mw, release, config)
                net = demand - h
                thermal = np.clip(net, 0.0, config.thermal_capacity_mw)
                shed = np.maximum(net - config.thermal_capacity_mw, 0.0)
                cost = (thermal * fuel + shed * config.curtailment_price) * config.hours_per_step
                year_costs[rep] += cost
                curtail += int(np.count_nonzero(shed > 0))
                spill_ev += int(np.count_nonzero(spill > 0))
                fallback += int(np.count_nonzero(filled[w, regime - 1, level]))
                np.add.at(occupancy, state_index(level, regime, w + 1, L, R), 1)
                lvl_sum[w] += level.sum()
                lvl_min[w] = min(lvl_min[w], int(level.min()))
                lvl_max[w] = max(lvl_max[w], int(level.max()))
                if trajectory is not None and lo == 0:
                    trajectory.append({
                        "week": w + 1,
                        "regime": int(regime[0]),
                        "level": int(level[0]),
                        "inflow_mw": float(f_mw[0]),
                        "release_mw": float(release[0] * config.block_mw),
                        "spill_blocks": int(spill[0]),
                        "cost": float(cost[0]),
                    })
            level = nxt
            regime = nxt_regime

    weekly = year_costs / WEEKS_PER_YEAR
    se = float(np.std(weekly, ddof=1) / math.sqrt(years)) if years > 1 else math.nan
    return SimulationResult(
        year_costs=year_costs,
        mean_weekly=float(weekly.mean()),
        mean_annual=float(year_costs.mean()),
        stderr_weekly=se,
        curtailment_events=curtail,
        spill_events=spill_ev,
        level_mean=lvl_sum / years,
        level_min=lvl_min,
        level_max=lvl_max,
        fallback_events=fallback,
        seed=int(seed),
        occupancy=occupancy,
        trajectory=trajectory,
    )


def occupancy_tv(result: SimulationResult, y: np.ndarray) -> float:
    """Total-variation distance between simulated state occupancy and the state marginals of ``y``."""
    emp = result.occupancy / result.occupancy.sum()
    marg = np.asarray(y).sum(axis=1)
    return 0.5 * float(np.abs(emp - marg / marg.sum()).sum())
