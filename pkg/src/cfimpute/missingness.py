"""Scenarios for intermittently missing exposure indicators.

Missing exposure cells can be filled as all exposed, all unexposed, or by
chained-equations multiple imputation (MICE). In the MICE case every
completed data set gets its own bootstrap chain and all ``B * M`` replicates
are pooled together by Rubin's rules.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import models as _models
from .errors import CfImputeError, PanelError
from .estimators import EstimatorConfig
from .imputer import Replicates
from .models import ModelSpec
from .panel import SHORT, PanelDataset
from .pooling import PooledEstimate, pool
from .rng import ESTIMATE, MICE, child, generator

SCENARIOS = ("all_complied", "all_not_complied", "mice")
NESTING_NOTE = ("mice: one bootstrap chain per completed data set; replicate estimates from all "
                "completed sets are pooled together by Rubin's rules")


@dataclass(frozen=True)
class Scenario:
    """``cycles`` and ``M`` are set for ``mice`` only (defaults 10 and 10)."""

    kind: str = "all_complied"
    cycles: int | None = None
    M: int | None = None
    lags: int = 1

    def __post_init__(self):
        if self.kind not in SCENARIOS:
            raise ValueError(f"scenario must be one of {SCENARIOS}")
        if self.kind == "mice":
            object.__setattr__(self, "cycles", 10 if self.cycles is None else int(self.cycles))
            object.__setattr__(self, "M", 10 if self.M is None else int(self.M))
            if self.cycles < 1 or self.M < 1:
                raise ValueError("mice needs cycles >= 1 and M >= 1")
        elif self.cycles is not None or self.M is not None:
            raise ValueError(f"cycles/M apply to the mice scenario only, not {self.kind}")
        if self.lags < 0:
            raise ValueError("lags must be nonnegative")

    def to_dict(self):
        out = {"kind": self.kind}
        if self.kind == "mice":
            out.update(cycles=self.cycles, M=self.M, lags=self.lags)
        return out


def _check_only_exposure_missing(data: PanelDataset):
    for role in data.roles:
        block = data.block(role)
        if np.isnan(block).any():
            i, t = np.argwhere(np.isnan(block))[0]
            raise PanelError(f"only exposure cells may be missing; subject {data.ids[i]!r} is missing "
                             f"{SHORT[role]}({t + 1})")
    if np.isnan(data.V).any():
        raise PanelError("baseline covariates may not be missing")


def mice_design(data: PanelDataset, A: np.ndarray, t: int, lags: int = 1) -> np.ndarray:
    """Predictors of ``A(t)`` (0-based ``t``): V, the other exposures, and C1/C2/M/Y at ``t`` and its lags."""
    others = np.delete(A, t, axis=1)
    cols = [data.V, others]
    for role in data.roles:
        block = data.block(role)
        for s in range(max(0, t - lags), t + 1):
            cols.append(block[:, s : s + 1])
    return np.hstack(cols)


def mice_complete(data: PanelDataset, cycles: int, seed, lags: int = 1) -> PanelDataset:
    """One completed data set from a chained logistic imputation of the missing exposures."""
    rng = generator(seed)
    miss = data.missing_exposure()
    A = data.A.copy()
    for t in range(data.n_times):
        m = miss[:, t]
        if not m.any():
            continue
        if m.all():
            raise CfImputeError(f"A({t + 1}) is missing for every subject; nothing to impute from")
        A[m, t] = (rng.random(m.sum()) < A[~m, t].mean()).astype(float)
    spec = ModelSpec("logistic")
    for _ in range(cycles):
        for t in range(data.n_times):
            m = miss[:, t]
            if not m.any():
                continue
            X = mice_design(data, A, t, lags)
            model = _models.fit(spec, X[~m], A[~m, t], rng)
            A[m, t] = _models.predictive_draw(model, X[m], rng).label
    return data.replace(A=A)


def apply_scenario(data: PanelDataset, scenario: Scenario, seed=0) -> list[PanelDataset]:
    """Completed data sets for ``scenario``; non-exposure cells are never touched."""
    _check_only_exposure_missing(data)
    miss = data.missing_exposure()
    if not miss.any():
        return [data]
    if scenario.kind in ("all_complied", "all_not_complied"):
        fill = 1.0 if scenario.kind == "all_complied" else 0.0
        return [data.replace(A=np.where(miss, fill, data.A))]
    return [mice_complete(data, scenario.cycles, child(seed, MICE, j), scenario.lags) for j in range(scenario.M)]


@dataclass(frozen=True)
class ScenarioResult:
    scenario: Scenario
    pooled: PooledEstimate
    n_sets: int
    failures: tuple

    def rows(self):
        return [{**row, "scenario": self.scenario.kind} for row in self.pooled.rows()]


def analyze_with_scenarios(data: PanelDataset, scenario: Scenario, config: EstimatorConfig, seed=0,
                           threads: int = 1) -> ScenarioResult:
    """Complete the exposures under ``scenario``, estimate on every completed set, pool all replicates.

    Completed set ``j`` is analysed with stream ``child(seed, ESTIMATE, j)``,
    so a data set without missing exposures gives the same answer under every
    scenario.
    """
    sets = apply_scenario(data, scenario, seed)
    reps, failures = Replicates(), []
    for j, completed in enumerate(sets):
        r = config.replicates(completed, child(seed, ESTIMATE, j), threads)
        reps.extend(r)
        failures.extend((j, i, msg) for i, msg in r.failures)
    return ScenarioResult(scenario, pool(reps, df_convention=config.df_convention), len(sets), tuple(failures))
