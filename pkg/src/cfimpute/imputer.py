"""Sequential counterfactual imputation of confounders, mediator and outcome.

For each time ``t`` and each variable in the order ``C1, C2, M, Y`` a model is
fit to the observed data conditioning on every variable that precedes it in
time (baseline ``V``, exposures ``A(1..t)`` and the full histories of the other
variables). Potential trajectories under a target exposure profile are then
drawn forward in the same order, feeding drawn values into later designs.
A subject whose observed exposures agree with the profile up to ``t`` keeps
its observed values at ``t``.
"""
from __future__ import annotations

import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import models as _models
from .errors import CfImputeError, ReplicateError, annotate
from .models import ModelSpec
from .panel import ROLES, SHORT, ExposureProfile, PanelDataset
from .rng import REPLICATE, child, generator

log = logging.getLogger(__name__)

MAX_FAIL_FRACTION = 0.10


def role_specs(spec: ModelSpec | Mapping[str, ModelSpec], roles: Sequence[str]) -> dict[str, ModelSpec]:
    """Model spec for each role. The ``zip`` family applies to the outcome only."""
    if isinstance(spec, Mapping):
        return {r: spec[r] for r in roles}
    if spec.family == "zip":
        return {r: spec if r == "outcome" else ModelSpec("linear") for r in roles}
    return {r: spec for r in roles}


HISTORIES = ("full", "lag1")


def predecessors(t: int, role: str, roles: Sequence[str], history: str = "full") -> list[tuple[int, str]]:
    """Time-varying variables observed before ``role`` at time ``t`` (1-based), in temporal order.

    ``history="full"`` uses every earlier time; ``"lag1"`` keeps only ``t - 1``
    and the current time.
    """
    if history not in HISTORIES:
        raise ValueError(f"history must be one of {HISTORIES}")
    order = ("exposure",) + tuple(roles)
    if role not in order:
        raise ValueError(f"role {role!r} not in {order}")
    first = 1 if history == "full" else max(1, t - 1)
    out = []
    for s in range(first, t + 1):
        for r in order:
            if s == t and r == role:
                return out
            out.append((s, r))
    raise AssertionError("unreachable")


def column_names(baseline_names, preds):
    return tuple(baseline_names) + tuple(f"{SHORT[r]}({s})" for s, r in preds)


def build_design(V: np.ndarray, blocks: Mapping[str, np.ndarray], preds) -> np.ndarray:
    cols = [V] + [blocks[r][:, s - 1 : s] for s, r in preds]
    return np.hstack(cols)


@dataclass
class SequentialModelSet:
    """Fitted models keyed by ``(t, role)``.

    With ``shared=True`` every ``t > 1`` key points at one model fit to the
    stacked ``t = 2..horizon`` rows (requires ``history="lag1"``).
    """

    horizon: int
    roles: tuple[str, ...]
    baseline_names: tuple[str, ...]
    models: dict[tuple[int, str], _models.FittedModel] = field(default_factory=dict)
    history: str = "full"
    shared: bool = False

    def conditioning_set(self, t: int, role: str) -> tuple[str, ...]:
        names = column_names(self.baseline_names, predecessors(t, role, self.roles, self.history))
        if self.shared and t > 1:
            return tuple(_relative(n, t) for n in names)
        return names

    def __len__(self):
        return len(self.models)

    def __getitem__(self, key):
        return self.models[key]


def _relative(name: str, t: int) -> str:
    if name.endswith(")") and "(" in name:
        stem, s = name[:-1].split("(")
        lag = t - int(s)
        return f"{stem}(t)" if lag == 0 else f"{stem}(t-{lag})"
    return name


def fit_sequence(data: PanelDataset, spec, horizon: int, seed, history: str = "full",
                 shared: bool = False) -> SequentialModelSet:
    """Fit one model per (time, variable) on the observed data up to ``horizon``."""
    if shared and history != "lag1":
        raise ValueError("shared coefficients across time need history='lag1'")
    data.require_complete(horizon, "sequential imputation")
    roles = data.roles
    specs = role_specs(spec, roles)
    blocks = {r: data.block(r) for r in ("exposure",) + roles}
    out = SequentialModelSet(horizon, roles, data.baseline_names, history=history, shared=shared)
    for t in range(1, horizon + 1):
        if shared and t > 2:
            for role in roles:
                out.models[(t, role)] = out.models[(2, role)]
            continue
        times = range(2, horizon + 1) if shared and t == 2 else (t,)
        for ri, role in enumerate(roles):
            X = np.vstack([build_design(data.V, blocks, predecessors(s, role, roles, history)) for s in times])
            y = np.concatenate([blocks[role][:, s - 1] for s in times])
            try:
                out.models[(t, role)] = _models.fit(
                    specs[role], X, y, child(seed, t, ri), names=out.conditioning_set(t, role)
                )
            except CfImputeError as exc:
                raise annotate(exc, f"{SHORT[role]}({t}) model")
            except (ValueError, np.linalg.LinAlgError) as exc:
                raise CfImputeError(f"{SHORT[role]}({t}) model: {exc}") from exc
    return out


@dataclass
class ImputedPanel:
    """Potential values per profile: ``values[profile][role]`` is ``(n, horizon)``.

    ``carried[profile]`` is ``(n, horizon)``: True where the cell was carried
    from observed data, False where it was drawn.
    """

    profiles: tuple[ExposureProfile, ...]
    values: dict[str, dict[str, np.ndarray]]
    carried: dict[str, np.ndarray]

    @property
    def horizon(self) -> int:
        return len(self.profiles[0])

    def provenance(self, profile, role=None) -> np.ndarray:
        """``"observed-carried"`` / ``"drawn"`` label for each (subject, time)."""
        return np.where(self.carried[str(profile)], "observed-carried", "drawn")


def impute_profiles(models: SequentialModelSet, data: PanelDataset,
                    profiles: Sequence[ExposureProfile], seed, draws: str = "posterior") -> ImputedPanel:
    """Draw ``C1, C2, M, Y`` forward in time under each profile.

    ``draws`` is passed to :func:`cfimpute.models.predictive_draw` as ``parameters``.
    """
    profiles = tuple(profiles)
    H = len(profiles[0])
    if any(len(p) != H for p in profiles):
        raise ValueError("profiles must share one length")
    if H > models.horizon:
        raise ValueError(f"profile length {H} exceeds model horizon {models.horizon}")
    roles = models.roles
    n = data.n
    unique = list(dict.fromkeys(str(p) for p in profiles))
    prof = {key: ExposureProfile.parse(key).as_array() for key in unique}

    obs_A = data.A[:, :H]
    values, carried, blocks = {}, {}, {}
    for key in unique:
        values[key] = {r: np.full((n, H), np.nan) for r in roles}
        matched = np.cumprod(obs_A == prof[key][None, :], axis=1).astype(bool)
        carried[key] = matched
        blocks[key] = {"exposure": np.broadcast_to(prof[key], (n, H)), **values[key]}

    for t in range(1, H + 1):
        for ri, role in enumerate(roles):
            preds = predecessors(t, role, roles, models.history)
            designs, rows = [], []
            for key in unique:
                keep = carried[key][:, t - 1]
                values[key][role][keep, t - 1] = data.block(role)[keep, t - 1]
                need = np.flatnonzero(~keep)
                rows.append(need)
                if need.size:
                    designs.append(build_design(data.V[need], {r: b[need] for r, b in blocks[key].items()}, preds))
            if not any(r.size for r in rows):
                continue
            draw = _models.predictive_draw(models[(t, role)], np.vstack(designs), child(seed, t, ri), draws)
            if isinstance(draw, _models.BinaryDraw):
                draw = draw.label
            start = 0
            for key, need in zip(unique, rows):
                values[key][role][need, t - 1] = draw[start : start + need.size]
                start += need.size
    return ImputedPanel(profiles, values, carried)


@dataclass(frozen=True)
class AceEstimate:
    """Per-time mean difference ``Y_a(t) - Y_a'(t)`` and the variance of that mean."""

    estimate: np.ndarray
    variance: np.ndarray
    profiles: tuple[ExposureProfile, ExposureProfile]

    @property
    def horizon(self) -> int:
        return len(self.estimate)


def ace_from_panel(panel: ImputedPanel, pair: tuple[int, int] = (0, 1)) -> AceEstimate:
    a, b = (panel.profiles[i] for i in pair)
    diff = panel.values[str(a)]["outcome"] - panel.values[str(b)]["outcome"]
    n = diff.shape[0]
    if n < 2:
        raise ValueError("need at least two subjects")
    est = diff.mean(axis=0)
    var = diff.var(axis=0, ddof=1) / n
    return AceEstimate(est, var, (a, b))


class Replicates(list):
    """Successful per-replicate estimates; ``failures`` lists ``(index, message)``."""

    def __init__(self, items=(), failures=()):
        super().__init__(items)
        self.failures = list(failures)


def bootstrap_indices(n: int, seed) -> np.ndarray:
    return generator(seed).integers(0, n, size=n)


@dataclass(frozen=True)
class Strategy:
    """How a bootstrap replicate is built.

    ``history``/``shared``: model structure (see :func:`fit_sequence`).
    ``draws``: ``"plugin"`` samples noise around the fitted parameters, letting
    the bootstrap carry parameter uncertainty; ``"posterior"`` also draws the
    parameters. ``impute_on``: ``"original"`` imputes the analysed data with
    models fit to the resample; ``"bootstrap"`` imputes the resample itself.
    """

    history: str = "full"
    shared: bool = False
    draws: str = "plugin"
    impute_on: str = "original"

    def __post_init__(self):
        if self.history not in HISTORIES:
            raise ValueError(f"history must be one of {HISTORIES}")
        if self.shared and self.history != "lag1":
            raise ValueError("shared coefficients across time need history='lag1'")
        if self.draws not in _models.DRAW_MODES:
            raise ValueError(f"draws must be one of {_models.DRAW_MODES}")
        if self.impute_on not in ("original", "bootstrap"):
            raise ValueError("impute_on must be 'original' or 'bootstrap'")

    @classmethod
    def from_dict(cls, d: Mapping | None) -> "Strategy":
        return cls(**dict(d or {}))

    def to_dict(self):
        return {"history": self.history, "shared": self.shared, "draws": self.draws, "impute_on": self.impute_on}


def _sequential_replicate(args):
    data, spec, horizon, profiles, strategy, seed = args
    boot = data.take(bootstrap_indices(data.n, child(seed, 0)))
    fitted = fit_sequence(boot, spec, horizon, child(seed, 1), strategy.history, strategy.shared)
    target = data if strategy.impute_on == "original" else boot
    panel = impute_profiles(fitted, target, profiles, child(seed, 2), strategy.draws)
    return ace_from_panel(panel)


def collect_replicates(worker, payloads, threads: int = 1) -> Replicates:
    """Run ``worker`` over ``payloads``; results are kept in payload order."""
    results = [None] * len(payloads)
    errors = []

    def record(i, fut_or_exc):
        if isinstance(fut_or_exc, Exception):
            errors.append((i, f"{type(fut_or_exc).__name__}: {fut_or_exc}"))
            log.warning("replicate %d failed: %s", i, fut_or_exc)
        else:
            results[i] = fut_or_exc

    if threads and threads > 1:
        with ProcessPoolExecutor(max_workers=threads) as pool:
            futures = [pool.submit(_guarded, worker, p) for p in payloads]
            for i, fut in enumerate(futures):
                record(i, fut.result())
    else:
        for i, p in enumerate(payloads):
            record(i, _guarded(worker, p))
    if len(errors) > MAX_FAIL_FRACTION * len(payloads):
        detail = "; ".join(f"#{i}: {msg}" for i, msg in errors[:5])
        raise ReplicateError(f"{len(errors)} of {len(payloads)} replicates failed ({detail})")
    return Replicates([r for r in results if r is not None], errors)


def _guarded(worker, payload):
    try:
        return worker(payload)
    except (CfImputeError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return exc


def run_replicates(data: PanelDataset, spec, horizon: int, profiles: Sequence[ExposureProfile],
                   B: int, seed, threads: int = 1, strategy: Strategy | None = None) -> Replicates:
    """``B`` bootstrap replicates of fit -> impute -> ACE.

    Replicate ``r`` resamples subjects with replacement using stream
    ``child(seed, REPLICATE, r)``; at most 10% of replicates may fail.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    data.require_complete(horizon, "sequential imputation")
    profiles = tuple(profiles)
    strategy = strategy or Strategy()
    payloads = [(data, spec, horizon, profiles, strategy, child(seed, REPLICATE, r)) for r in range(B)]
    return collect_replicates(_sequential_replicate, payloads, threads)
