"""The inflow model bundle: quantile family, regime chain and inflow histograms in one JSON file."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

from .quantile_fit import QuantileFamily
from .regime_chain import ConditionalInflowDist, TransitionModel

BUNDLE_VERSION = 1


@dataclass(frozen=True)
class InflowBundle:
    family: QuantileFamily
    transition: TransitionModel
    inflow_dist: ConditionalInflowDist
    meta: dict = field(default_factory=dict)

    @property
    def n_regimes(self) -> int:
        return self.transition.n_regimes

    @property
    def bin_mw(self) -> float:
        return self.inflow_dist.bin_mw

    def to_dict(self) -> dict:
        return {
            "version": BUNDLE_VERSION,
            "quantiles": self.family.to_dict(),
            "transition": self.transition.to_dict(),
            "inflow_hist": self.inflow_dist.to_dict(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "InflowBundle":
        if d.get("version") != BUNDLE_VERSION:
            raise ValueError(f"unsupported bundle version {d.get('version')}")
        return cls(
            QuantileFamily.from_dict(d["quantiles"]),
            TransitionModel.from_dict(d["transition"]),
            ConditionalInflowDist.from_dict(d["inflow_hist"]),
            dict(d.get("meta", {})),
        )

    def digest(self) -> str:
        body = {k: v for k, v in self.to_dict().items() if k != "meta"}
        return hashlib.sha256(json.dumps(body, sort_keys=True).encode()).hexdigest()[:16]

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1), encoding="utf-8")

    @classmethod
    def load(cls, path) -> "InflowBundle":
        path = Path(path)
        if not path.is_file():
            raise FileNotFoundError(f"bundle not found: {path}")
        return cls.from_dict(json.loads(path.read_text(encoding="utf-8")))
