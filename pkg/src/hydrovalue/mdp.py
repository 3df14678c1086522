"""Reservoir operating MDP: states (level, regime, week), release actions, kernel and costs."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .bundle import InflowBundle
from .ingest import DAYS_PER_WEEK, WEEKS_PER_YEAR
from .regime_chain import transition_matrix

log = logging.getLogger(__name__)

HOURS_PER_WEEK = 168.0


class ModelError(ValueError):
    pass


@dataclass(frozen=True)
class SystemConfig:
    """Reservoir and system parameters; defaults are the Waitaki-like case study."""

    storage_blocks: int = 50
    block_mw: float = 100.0
    turbine_blocks: int = 9
    run_of_river_mw: float = 500.0
    demand_mw: float = 1400.0
    thermal_capacity_mw: float = 900.0
    fuel_price: float = 50.0
    curtailment_price: float = 1000.0
    hours_per_step: float = HOURS_PER_WEEK
    weeks_per_year: int = WEEKS_PER_YEAR

    def __post_init__(self):
        for name in ("block_mw", "run_of_river_mw", "demand_mw", "thermal_capacity_mw", "fuel_price", "hours_per_step"):
            if getattr(self, name) < 0:
                raise ModelError(f"{name} must be >= 0")
        if self.block_mw <= 0:
            raise ModelError("block_mw must be positive")
        if self.storage_blocks < 0 or self.turbine_blocks < 0:
            raise ModelError("block counts must be >= 0")
        if self.curtailment_price < self.fuel_price:
            raise ModelError("curtailment_price must be >= fuel_price")
        if self.weeks_per_year != WEEKS_PER_YEAR:
            raise ModelError("the model year has 52 weeks")

    @property
    def n_levels(self) -> int:
        return self.storage_blocks + 1

    @property
    def n_actions(self) -> int:
        return self.turbine_blocks + 1

    @property
    def block_energy_mwh(self) -> float:
        return self.block_mw * HOURS_PER_WEEK

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(asdict(self), sort_keys=True).encode()).hexdigest()[:16]


@dataclass(frozen=True)
class State:
    level: int
    regime: int  # 1-based
    week: int  # 1-based


def state_index(level, regime, week, n_levels: int, n_regimes: int):
    """Flat index ``((week-1) R + (regime-1)) (L+1) + level``."""
    return ((np.asarray(week) - 1) * n_regimes + (np.asarray(regime) - 1)) * n_levels + np.asarray(level)


def state_of(index, n_levels: int, n_regimes: int):
    """Inverse of :func:`state_index`; returns ``(level, regime, week)`` arrays."""
    index = np.asarray(index)
    level = index % n_levels
    rest = index // n_levels
    return level, rest % n_regimes + 1, rest // n_regimes + 1


def hydro_cost(h_mw, config: SystemConfig):
    """Cost per step of meeting demand when hydro delivers ``h_mw``.

    ``thermal = clip(demand - h, 0, thermal_cap)``; the remainder beyond
    thermal capacity is curtailed.
    """
    h = np.asarray(h_mw, dtype=float)
    net = config.demand_mw - h
    thermal = np.clip(net, 0.0, config.thermal_capacity_mw)
    curtailed = np.maximum(net - config.thermal_capacity_mw, 0.0)
    return (thermal * config.fuel_price + curtailed * config.curtailment_price) * config.hours_per_step


def step(level, action, inflow_blocks, config: SystemConfig):
    """Water accounting for one week, all quantities in blocks.

    Returns ``(next_level, release, spill)``; release is capped at the water
    available after inflow and storage above capacity spills.
    """
    level = np.asarray(level)
    available = level + inflow_blocks
    release = np.minimum(action, available)
    raw = available - release
    nxt = np.minimum(raw, config.storage_blocks)
    return nxt, release, raw - nxt


def delivered_hydro(inflow_mw, release_blocks, config: SystemConfig):
    return np.minimum(inflow_mw, config.run_of_river_mw) + release_blocks * config.block_mw


@dataclass
class MDPModel:
    """Kernel ``P[(s * A + a), s']`` (CSR) and expected costs ``costs[s, a]`` in $ per week.

    ``config`` is None for generic models that do not come from a reservoir.
    """

    config: SystemConfig | None
    n_regimes: int
    P: sp.csr_matrix
    costs: np.ndarray
    source: str = ""

    @property
    def n_states(self) -> int:
        return self.costs.shape[0]

    @property
    def n_actions(self) -> int:
        return self.costs.shape[1]

    @property
    def nnz(self) -> int:
        return int(self.P.nnz)

    def dimensions(self) -> tuple[int, int, int]:
        return self.n_states, self.n_actions, self.nnz

    def successors(self, s: int, a: int):
        row = s * self.n_actions + a
        lo, hi = self.P.indptr[row], self.P.indptr[row + 1]
        return self.P.indices[lo:hi], self.P.data[lo:hi]

    def index(self, level, regime, week):
        return state_index(level, regime, week, self.config.n_levels, self.n_regimes)

    def state(self, index):
        return state_of(index, self.config.n_levels, self.n_regimes)

    def digest(self) -> str:
        h = hashlib.sha256()
        if self.config is not None:
            h.update(self.config.digest().encode())
        h.update(self.P.indptr.tobytes())
        h.update(self.P.indices.tobytes())
        h.update(self.P.data.tobytes())
        h.update(self.costs.tobytes())
        return h.hexdigest()[:16]

    def with_costs(self, costs: np.ndarray) -> "MDPModel":
        return MDPModel(self.config, self.n_regimes, self.P, np.asarray(costs, dtype=float), self.source)

    def check(self, tol: float = 1e-10) -> None:
        """Row-stochasticity and week-to-week structure of the kernel."""
        sums = np.asarray(self.P.sum(axis=1)).ravel()
        if np.any(np.abs(sums - 1.0) > tol) or np.any(self.P.data < 0):
            bad = int(np.argmax(np.abs(sums - 1.0)))
            raise ModelError(f"kernel row {bad} sums to {sums[bad]!r}")
        if self.config is not None and self.n_regimes:
            rows = np.repeat(np.arange(self.P.shape[0]), np.diff(self.P.indptr))
            _, _, w = self.state(rows // self.n_actions)
            _, _, w2 = self.state(self.P.indices)
            if np.any(w2 != w % WEEKS_PER_YEAR + 1):
                raise ModelError("kernel links states outside consecutive weeks")

    # dump format: one JSON header line, then raw little-endian arrays
    def save(self, path) -> None:
        rows = np.repeat(np.arange(self.P.shape[0], dtype=np.int64), np.diff(self.P.indptr))
        quads = np.empty(rows.size, dtype=[("s", "<i4"), ("a", "<i4"), ("s2", "<i4"), ("p", "<f8")])
        quads["s"] = rows // self.n_actions
        quads["a"] = rows % self.n_actions
        quads["s2"] = self.P.indices
        quads["p"] = self.P.data
        header = {
            "format": "hydrovalue-mdp/1",
            "n_states": self.n_states,
            "n_actions": self.n_actions,
            "n_regimes": self.n_regimes,
            "nnz": int(rows.size),
            "config": asdict(self.config) if self.config is not None else None,
            "config_hash": self.config.digest() if self.config is not None else None,
            "source": self.source,
        }
        with Path(path).open("wb") as fh:
            fh.write((json.dumps(header) + "\n").encode())
            fh.write(np.ascontiguousarray(self.costs, dtype="<f8").tobytes())
            fh.write(quads.tobytes())

    @classmethod
    def load(cls, path) -> "MDPModel":
        with Path(path).open("rb") as fh:
            header = json.loads(fh.readline())
            if header.get("format") != "hydrovalue-mdp/1":
                raise ModelError(f"{path}: not a model dump")
            nS, nA, nnz = header["n_states"], header["n_actions"], header["nnz"]
            costs = np.frombuffer(fh.read(8 * nS * nA), dtype="<f8").reshape(nS, nA).copy()
            dt = np.dtype([("s", "<i4"), ("a", "<i4"), ("s2", "<i4"), ("p", "<f8")])
            quads = np.frombuffer(fh.read(dt.itemsize * nnz), dtype=dt)
        P = sp.csr_matrix(
            (quads["p"], (quads["s"].astype(np.int64) * nA + quads["a"], quads["s2"])), shape=(nS * nA, nS)
        )
        config = SystemConfig(**header["config"]) if header["config"] is not None else None
        return cls(config, header["n_regimes"], P, costs, header.get("source", ""))


def _cell_blocks(bundle: InflowBundle, r: int, week: int, config: SystemConfig):
    try:
        support, probs = bundle.inflow_dist.cell(r, week)
    except KeyError:
        raise ModelError(f"unpopulated inflow cell: regime {r}, week {week}") from None
    return support, np.rint(support / config.block_mw).astype(np.int64), probs


def build_model(config: SystemConfig, bundle: InflowBundle) -> MDPModel:
    """Enumerate ``(inflow bin, next regime)`` outcomes for every state and release.

    Regime and inflow probabilities are taken at ``t = 7 (week - 1)`` days.
    """
    if abs(bundle.bin_mw - config.block_mw) > 1e-9:
        raise ModelError(f"bundle bin width {bundle.bin_mw} MW differs from block size {config.block_mw} MW")
    R = bundle.n_regimes
    L = config.n_levels
    nA = config.n_actions
    nS = L * R * WEEKS_PER_YEAR
    lev = np.arange(L)[:, None, None]
    act = np.arange(nA)[None, :, None]
    costs = np.zeros((nS, nA))
    rows_all, cols_all, vals_all = [], [], []
    for w in range(1, WEEKS_PER_YEAR + 1):
        Pr = transition_matrix(bundle.transition, DAYS_PER_WEEK * (w - 1))
        Pr = np.clip(Pr, 0.0, None)
        Pr /= Pr.sum(axis=1, keepdims=True)
        w2 = w % WEEKS_PER_YEAR + 1
        for r in range(1, R + 1):
            f_mw, f_blk, pf = _cell_blocks(bundle, r, w, config)
            fb = f_blk[None, None, :]
            nxt, release, _ = step(lev, act, fb, config)  # (L, A, K)
            s0 = int(state_index(0, r, w, L, R))
            h = delivered_hydro(f_mw[None, None, :], release, config)
            costs[s0:s0 + L] = np.sum(hydro_cost(h, config) * pf, axis=2)
            # outcomes (L, A, K, R')
            p = pf[None, None, :, None] * Pr[r - 1][None, None, None, :]
            shape = (L, nA, f_blk.size, R)
            keep = np.broadcast_to(p > 0, shape)
            s_next = state_index(nxt[..., None], np.arange(1, R + 1)[None, None, None, :], w2, L, R)
            row = ((s0 + lev) * nA + act)[..., None]
            rows_all.append(np.broadcast_to(row, shape)[keep])
            cols_all.append(np.broadcast_to(s_next, shape)[keep])
            vals_all.append(np.broadcast_to(p, shape)[keep])
    rows = np.concatenate(rows_all)
    cols = np.concatenate(cols_all)
    vals = np.concatenate(vals_all)
    P = sp.csr_matrix((vals, (rows, cols)), shape=(nS * nA, nS))
    P.sum_duplicates()
    P.sort_indices()
    model = MDPModel(config, R, P, costs, source=bundle.digest())
    model.check()
    log.info("model: |S|=%d |A|=%d nnz=%d", nS, nA, P.nnz)
    return model


def model_dimensions(config: SystemConfig, bundle: InflowBundle) -> tuple[int, int, int]:
    """``(|S|, |A|, kernel nonzeros)`` for ``config`` and ``bundle``."""
    return build_model(config, bundle).dimensions()
