"""PENCOMP: propensity-spline imputation of counterfactual outcomes.

Only the baseline block, the exposures and the outcome are used. Within each
bootstrap sample and for each time ``t``:

1. a logistic model for ``A(t)`` given ``V``, ``A(1..t-1)``, ``Y(1..t-1)``
   gives the probability of the exposure actually received; the running
   product over time is the probability of the received exposure history;
2. for every target profile, the subjects whose received history matches it
   up to ``t`` form a group, and ``Y(t)`` is regressed on a penalized spline
   of the logit of that probability plus linear terms in ``V`` and
   ``Y(1..t-1)``;
3. counterfactual ``Y(t)`` is drawn for everyone else, with the spline
   evaluated at the probability of the target history given the subject's
   (partly imputed) outcome history.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import linalg, optimize

from . import models as _models
from .errors import CfImputeError, KnotWarning, ModelFitError, annotate
from .imputer import AceEstimate, ImputedPanel, Replicates, Strategy, ace_from_panel, bootstrap_indices, \
    collect_replicates
from .models import ModelSpec
from .panel import ExposureProfile, PanelDataset
from .pooling import PooledEstimate, pool
from .rng import REPLICATE, child, generator

CLIP = 1e-6
MAX_KNOTS = 20
LOG_LAMBDA_BOUNDS = (-12.0, 18.0)


def propensity_design(V: np.ndarray, A: np.ndarray, Y: np.ndarray, t: int) -> np.ndarray:
    """Covariates of the exposure model at time ``t`` (1-based)."""
    return np.hstack([V, A[:, : t - 1], Y[:, : t - 1]])


def propensity_names(baseline_names, t):
    return tuple(baseline_names) + tuple(f"A({s})" for s in range(1, t)) + tuple(f"Y({s})" for s in range(1, t))


def fit_propensity_model(data: PanelDataset, t: int, seed) -> _models.FittedLogistic:
    data.require_complete(t, "propensity estimation")
    X = propensity_design(data.V, data.A, data.Y, t)
    return _models.fit(ModelSpec("logistic"), X, data.A[:, t - 1], seed, names=propensity_names(data.baseline_names, t))


def prob_of(model, X, a) -> np.ndarray:
    """Clipped probability that the exposure equals ``a`` (scalar or per-row)."""
    p1 = model.predict_proba(X)
    p = np.where(np.asarray(a) == 1, p1, 1.0 - p1)
    return np.clip(p, CLIP, 1.0 - CLIP)


def fit_propensity(data: PanelDataset, t: int, seed) -> np.ndarray:
    """Per-subject fitted probability of the exposure each subject received at ``t``."""
    model = fit_propensity_model(data, t, seed)
    return prob_of(model, propensity_design(data.V, data.A, data.Y, t), data.A[:, t - 1])


def logit(p):
    p = np.clip(p, CLIP, 1.0 - CLIP)
    return np.log(p) - np.log1p(-p)


@dataclass(frozen=True)
class PropensityTrajectory:
    """``per_time[i, t]``: fitted probability of subject ``i``'s exposure at ``t + 1``."""

    per_time: np.ndarray

    def __post_init__(self):
        p = np.asarray(self.per_time, dtype=float)
        if p.ndim != 2 or np.any((p <= 0) | (p >= 1)):
            raise ValueError("propensities must be an (n, T) array inside (0, 1)")
        object.__setattr__(self, "per_time", p)

    @property
    def cumulative(self) -> np.ndarray:
        return np.cumprod(self.per_time, axis=1)

    @property
    def logit(self) -> np.ndarray:
        return logit(self.cumulative)

    @classmethod
    def estimate(cls, data: PanelDataset, horizon: int, seed) -> "PropensityTrajectory":
        return cls(np.column_stack([fit_propensity(data, t, child(seed, t)) for t in range(1, horizon + 1)]))


def knot_positions(x: np.ndarray, n_knots: int | None = None) -> np.ndarray:
    """Interior knots at equally spaced quantiles, deduplicated and below ``max(x)``."""
    n = x.shape[0]
    K = min(MAX_KNOTS, n // 10) if n_knots is None else int(n_knots)
    if K <= 0:
        return np.empty(0)
    knots = np.unique(np.quantile(x, np.arange(1, K + 1) / (K + 1)))
    knots = knots[knots < x.max()]
    if knots.size < K:
        warnings.warn(f"spline knots reduced from {K} to {knots.size}: too few distinct propensity values",
                      KnotWarning, stacklevel=3)
    return knots


def _independent_columns(X: np.ndarray, tol: float = 1e-8) -> np.ndarray:
    """Greedy left-to-right selection of columns not in the span of earlier kept ones."""
    keep = []
    Q = np.empty((X.shape[0], 0))
    for j in range(X.shape[1]):
        x = X[:, j]
        r = x - Q @ (Q.T @ x)
        nr = np.linalg.norm(r)
        if nr > tol * max(np.linalg.norm(x), 1.0) and nr > tol * np.sqrt(X.shape[0]):
            keep.append(j)
            Q = np.column_stack([Q, r / nr])
    return np.array(keep, dtype=int)


class PsppModel:
    """Penalized truncated-linear spline in the propensity logit plus linear covariate terms.

    The spline covariate is standardized; ``knots`` are on that scale. The
    design is ``[1, l, X, (l - k_1)_+, ..., (l - k_K)_+]`` with a ridge
    penalty ``lam`` on the truncated terms only. Aliased unpenalized columns
    are dropped (``kept`` indexes the survivors of ``[1, l, X]``).
    """

    def __init__(self, center, scale, x_center, x_scale, knots, kept, lam, coef, chol, sigma2, prss, df, names):
        self.center, self.scale = center, scale
        self.x_center, self.x_scale = x_center, x_scale
        self.knots = knots
        self.kept = kept
        self.lam = lam
        self.coef = coef
        self.chol = chol  # lower Cholesky factor of (C'C + D)
        self.sigma2 = sigma2
        self.prss = prss
        self.df = df
        self.names = names

    @property
    def n_knots(self) -> int:
        return self.knots.size

    @property
    def spline_coef(self) -> np.ndarray:
        return self.coef[self.kept.size :]

    def design(self, ell, X) -> np.ndarray:
        ell = np.asarray(ell, dtype=float)
        X = np.asarray(X, dtype=float).reshape(ell.shape[0], -1)
        if X.shape[1] != self.x_center.shape[0]:
            raise ValueError(f"PSPP model expects {self.x_center.shape[0]} covariates, got {X.shape[1]}")
        z = (ell - self.center) / self.scale
        U = np.column_stack([np.ones_like(z), z, (X - self.x_center) / self.x_scale])[:, self.kept]
        return np.column_stack([U, np.maximum(z[:, None] - self.knots[None, :], 0.0)])

    def mean(self, ell, X) -> np.ndarray:
        return self.design(ell, X) @ self.coef

    def plugin_draw(self, ell, X, rng) -> np.ndarray:
        mu = self.mean(ell, X)
        return mu + np.sqrt(self.sigma2) * rng.standard_normal(mu.shape[0])

    def draw(self, ell, X, rng) -> np.ndarray:
        sigma2 = self.prss / rng.chisquare(self.df)
        z = linalg.solve_triangular(self.chol.T, rng.standard_normal(self.coef.size), lower=False)
        theta = self.coef + np.sqrt(sigma2) * z
        mu = self.design(ell, X) @ theta
        return mu + np.sqrt(sigma2) * rng.standard_normal(mu.shape[0])


def _reml_pieces(G, b, yy, p, K, log_lam):
    lam = np.exp(log_lam)
    M = G.copy()
    idx = np.arange(p, p + K)
    M[idx, idx] += lam
    L = linalg.cholesky(M, lower=True)
    theta = linalg.cho_solve((L, True), b)
    prss = max(float(yy - theta @ b), 1e-300)
    return L, theta, prss


def fit_pspp(ell, X, y, names: Sequence[str] | None = None, n_knots: int | None = None) -> PsppModel:
    """Fit a PSPP mean model with the smoothing parameter chosen by REML."""
    ell = np.asarray(ell, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    n = ell.shape[0]
    X = np.asarray(X, dtype=float).reshape(n, -1)
    if y.shape[0] != n or not (np.all(np.isfinite(ell)) and np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
        raise ValueError("PSPP inputs must be finite and of equal length")
    center, scale = float(ell.mean()), float(ell.std())
    scale = scale if scale > 0 else 1.0
    z = (ell - center) / scale
    x_center = X.mean(axis=0)
    x_scale = X.std(axis=0)
    x_scale = np.where(x_scale > 0, x_scale, 1.0)
    U = np.column_stack([np.ones(n), z, (X - x_center) / x_scale])
    kept = _independent_columns(U)
    p = kept.size
    knots = knot_positions(z, n_knots)
    K = knots.size
    if n - p < 2:
        raise ModelFitError(f"PSPP needs more than {p + 1} subjects, got {n}")
    C = np.column_stack([U[:, kept], np.maximum(z[:, None] - knots[None, :], 0.0)])
    G = C.T @ C
    b = C.T @ y
    yy = float(y @ y)

    def neg_reml(log_lam):
        L, _, prss = _reml_pieces(G, b, yy, p, K, log_lam)
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        return 0.5 * ((n - p) * np.log(prss / (n - p)) + logdet - K * log_lam)

    try:
        if K:
            res = optimize.minimize_scalar(neg_reml, bounds=LOG_LAMBDA_BOUNDS, method="bounded",
                                           options={"xatol": 1e-4})
            log_lam = float(res.x)
        else:
            log_lam = 0.0
        L, theta, prss = _reml_pieces(G, b, yy, p, K, log_lam)
    except linalg.LinAlgError as exc:
        raise ModelFitError(f"PSPP system is singular: {exc}") from exc
    all_names = ("intercept", "logit_propensity") + tuple(names or (f"x{j}" for j in range(X.shape[1])))
    kept_names = tuple(all_names[j] for j in kept) + tuple(f"knot{k + 1}" for k in range(K))
    return PsppModel(center, scale, x_center, x_scale, knots, kept, float(np.exp(log_lam)) if K else 0.0,
                     theta, L, prss / (n - p), prss, n - p, kept_names)


# --------------------------------------------------------------------------- pipeline

@dataclass(frozen=True)
class PencompFit:
    """Everything fit on one bootstrap sample."""

    propensity: tuple  # FittedLogistic per time
    outcome: dict  # (t, profile key) -> PsppModel
    horizon: int


def _history(V, Yhist, t):
    return np.hstack([V, Yhist[:, : t - 1]])


def fit_pencomp(data: PanelDataset, horizon: int, profiles: Sequence[ExposureProfile], seed,
                n_knots: int | None = None, min_group: int | None = None) -> PencompFit:
    """Fit the exposure models and one PSPP outcome model per (time, target profile)."""
    data.require_complete(horizon, "PENCOMP")
    props = []
    for t in range(1, horizon + 1):
        try:
            props.append(fit_propensity_model(data, t, child(seed, t)))
        except CfImputeError as exc:
            raise annotate(exc, f"A({t}) propensity model")
    received = np.column_stack([prob_of(props[t - 1], propensity_design(data.V, data.A, data.Y, t),
                                        data.A[:, t - 1]) for t in range(1, horizon + 1)])
    ell_obs = logit(np.cumprod(received, axis=1))
    outcome = {}
    for key in dict.fromkeys(str(p) for p in profiles):
        a = ExposureProfile.parse(key).as_array()
        matched = np.cumprod(data.A[:, : len(a)] == a[None, :], axis=1).astype(bool)
        for t in range(1, len(a) + 1):
            rows = np.flatnonzero(matched[:, t - 1])
            X = _history(data.V, data.Y, t)
            need = max(min_group or 0, X.shape[1] + 4)
            if rows.size < need:
                raise ModelFitError(
                    f"only {rows.size} subjects follow profile {key[:t]} through t={t}; PSPP needs {need}")
            names = tuple(data.baseline_names) + tuple(f"Y({s})" for s in range(1, t))
            try:
                outcome[(t, key)] = fit_pspp(ell_obs[rows, t - 1], X[rows], data.Y[rows, t - 1], names, n_knots)
            except CfImputeError as exc:
                raise annotate(exc, f"Y({t}) PSPP model for profile {key[:t]}")
    return PencompFit(tuple(props), outcome, horizon)


def impute_pencomp(fitted: PencompFit, data: PanelDataset, profiles: Sequence[ExposureProfile], seed,
                   draws: str = "posterior") -> ImputedPanel:
    """Counterfactual outcomes under each profile; matching subjects keep their observed values."""
    if draws not in _models.DRAW_MODES:
        raise ValueError(f"draws must be one of {_models.DRAW_MODES}")
    profiles = tuple(profiles)
    H = len(profiles[0])
    if any(len(p) != H for p in profiles):
        raise ValueError("profiles must share one length")
    if H > fitted.horizon:
        raise ValueError(f"profile length {H} exceeds fitted horizon {fitted.horizon}")
    n = data.n
    values, carried = {}, {}
    for pi, key in enumerate(dict.fromkeys(str(p) for p in profiles)):
        a = ExposureProfile.parse(key).as_array()
        Aprof = np.broadcast_to(a, (n, H))
        matched = np.cumprod(data.A[:, :H] == a[None, :], axis=1).astype(bool)
        Y = np.full((n, H), np.nan)
        cum = np.ones(n)
        for t in range(1, H + 1):
            cum = cum * prob_of(fitted.propensity[t - 1], propensity_design(data.V, Aprof, Y, t), a[t - 1])
            keep = matched[:, t - 1]
            Y[keep, t - 1] = data.Y[keep, t - 1]
            need = np.flatnonzero(~keep)
            if need.size:
                model = fitted.outcome[(t, key)]
                rng = generator(child(seed, t, pi))
                ell = logit(cum[need])
                X = _history(data.V[need], Y[need], t)
                Y[need, t - 1] = model.draw(ell, X, rng) if draws == "posterior" else model.plugin_draw(ell, X, rng)
        values[key] = {"outcome": Y}
        carried[key] = matched
    return ImputedPanel(profiles, values, carried)


def _pencomp_replicate(args) -> AceEstimate:
    data, horizon, profiles, strategy, options, seed = args
    boot = data.take(bootstrap_indices(data.n, child(seed, 0)))
    fitted = fit_pencomp(boot, horizon, profiles, child(seed, 1), **options)
    target = data if strategy.impute_on == "original" else boot
    return ace_from_panel(impute_pencomp(fitted, target, profiles, child(seed, 2), strategy.draws))


def pencomp_replicates(data: PanelDataset, horizon: int, profiles: Sequence[ExposureProfile], B: int, seed,
                       threads: int = 1, strategy: Strategy | None = None, n_knots: int | None = None,
                       min_group: int | None = None) -> Replicates:
    """``B`` bootstrap replicates of the PENCOMP fit -> impute -> ACE chain."""
    if B < 2:
        raise ValueError("B must be at least 2")
    data.require_complete(horizon, "PENCOMP")
    profiles = tuple(profiles)
    if len(profiles) != 2:
        raise ValueError("PENCOMP compares exactly two profiles")
    strategy = strategy or Strategy()
    options = {"n_knots": n_knots, "min_group": min_group}
    payloads = [(data, horizon, profiles, strategy, options, child(seed, REPLICATE, r)) for r in range(B)]
    return collect_replicates(_pencomp_replicate, payloads, threads)


def pencomp_ate(data: PanelDataset, horizon: int, profiles: Sequence[ExposureProfile], B: int, seed,
                threads: int = 1, strategy: Strategy | None = None, df_convention: str = "bplus1",
                **options) -> PooledEstimate:
    """Pooled PENCOMP estimate of ``E[Y_a(t) - Y_a'(t)]`` for ``t = 1..horizon``."""
    reps = pencomp_replicates(data, horizon, profiles, B, seed, threads, strategy, **options)
    return pool(reps, df_convention=df_convention)
