"""One object describing "which estimator, which models, how many replicates"."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

from .imputer import Replicates, Strategy, run_replicates
from .models import ModelSpec
from .panel import ExposureProfile, PanelDataset
from .pencomp import pencomp_replicates
from .pooling import DF_CONVENTIONS, PooledEstimate, pool

ESTIMATORS = ("sequential", "pencomp")


def parse_profiles(text: str | None, horizon: int) -> tuple[ExposureProfile, ExposureProfile]:
    """``"101 vs 000"`` -> two profiles; ``None`` means all-ones versus all-zeros."""
    if text is None:
        return ExposureProfile.constant(1, horizon), ExposureProfile.constant(0, horizon)
    parts = [p.strip() for p in str(text).lower().split("vs")]
    if len(parts) != 2 or not all(parts):
        raise ValueError(f"profiles must look like '101 vs 000', got {text!r}")
    out = tuple(ExposureProfile.parse(p) for p in parts)
    if any(len(p) != horizon for p in out):
        raise ValueError(f"profiles {text!r} do not match horizon {horizon}")
    return out


@dataclass(frozen=True)
class EstimatorConfig:
    estimator: str = "sequential"
    family: str = "mlr"
    hyperparameters: Mapping = field(default_factory=dict)
    B: int = 50
    horizon: int | None = None
    profiles: str | None = None
    strategy: Strategy = field(default_factory=Strategy)
    df_convention: str = "bplus1"

    def __post_init__(self):
        if self.estimator not in ESTIMATORS:
            raise ValueError(f"estimator must be one of {ESTIMATORS}")
        if self.B < 2:
            raise ValueError("B must be at least 2")
        if self.df_convention not in DF_CONVENTIONS:
            raise ValueError(f"df_convention must be one of {DF_CONVENTIONS}")
        if self.estimator == "sequential":
            self.model_spec()  # validates family and hyperparameters
        if isinstance(self.strategy, Mapping):
            object.__setattr__(self, "strategy", Strategy.from_dict(self.strategy))

    def model_spec(self) -> ModelSpec:
        return ModelSpec(self.family, dict(self.hyperparameters))

    def resolve_horizon(self, data: PanelDataset) -> int:
        H = data.n_times if self.horizon is None else int(self.horizon)
        if not 1 <= H <= data.n_times:
            raise ValueError(f"horizon {H} outside 1..{data.n_times}")
        return H

    def replicates(self, data: PanelDataset, seed, threads: int = 1) -> Replicates:
        H = self.resolve_horizon(data)
        profiles = parse_profiles(self.profiles, H)
        if self.estimator == "pencomp":
            return pencomp_replicates(data, H, profiles, self.B, seed, threads, self.strategy)
        return run_replicates(data, self.model_spec(), H, profiles, self.B, seed, threads, self.strategy)

    def run(self, data: PanelDataset, seed, threads: int = 1) -> PooledEstimate:
        return pool(self.replicates(data, seed, threads), df_convention=self.df_convention)

    def to_dict(self) -> dict:
        out = {"estimator": self.estimator, "B": self.B, "horizon": self.horizon, "profiles": self.profiles,
               "strategy": self.strategy.to_dict(), "df_convention": self.df_convention}
        if self.estimator == "sequential":
            out.update(self.model_spec().to_dict())
        else:
            out.update({"family": self.family, "hyperparameters": dict(self.hyperparameters)})
        return out

    @classmethod
    def from_dict(cls, d: Mapping) -> "EstimatorConfig":
        d = dict(d)
        d["strategy"] = Strategy.from_dict(d.get("strategy"))
        d["hyperparameters"] = dict(d.get("hyperparameters") or {})
        return cls(**d)
