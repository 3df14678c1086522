"""Run configuration: one JSON file whose defaults reproduce the case study."""
from __future__ import annotations

import hashlib
import json
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

from .mdp import SystemConfig


class ConfigError(ValueError):
    pass


@dataclass
class RunConfig:
    inflow_csv: str = "inflow.csv"
    output_dir: str = "out"
    inflow_units: str = "mw"
    levels: list = field(default_factory=lambda: [0.1, 0.5, 0.9])
    quantile_harmonics: int = 2
    transition_harmonics: int = 1
    bin_mw: float = 100.0
    pool_weeks: int = 2
    system: SystemConfig = field(default_factory=SystemConfig)
    lp_tol: float = 1e-9
    sim_years: int = 10000
    sim_seed: int = 20240601
    offer_weeks: list = field(default_factory=lambda: [1, 14, 27, 32, 40])

    def __post_init__(self):
        if isinstance(self.system, dict):
            try:
                self.system = SystemConfig(**self.system)
            except TypeError as exc:
                raise ConfigError(f"system: {exc}") from None
        if not self.levels or any(not 0.0 < a < 1.0 for a in self.levels):
            raise ConfigError("levels must be a non-empty list inside (0, 1)")
        if sorted(set(self.levels)) != list(self.levels):
            raise ConfigError("levels must be strictly increasing")
        if self.quantile_harmonics < 0 or self.transition_harmonics < 0:
            raise ConfigError("harmonics must be >= 0")
        if self.transition_harmonics == 0:
            raise ConfigError("transition_harmonics must be >= 1")
        if self.bin_mw <= 0 or self.pool_weeks < 0:
            raise ConfigError("bin_mw must be positive and pool_weeks >= 0")
        if self.sim_years < 1:
            raise ConfigError("sim_years must be >= 1")
        if any(not 1 <= w <= 52 for w in self.offer_weeks):
            raise ConfigError("offer_weeks must lie in 1..52")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["system"] = asdict(self.system)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"config not found: {path}")
        try:
            d = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: {exc}") from None
        return cls.from_dict(d)

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    def digest(self) -> str:
        return hashlib.sha256(json.dumps(self.to_dict(), sort_keys=True).encode()).hexdigest()[:16]
