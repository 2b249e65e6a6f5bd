"""Rubin's rules for bootstrap-replicate estimates.

Given per-replicate estimates ``d_b`` and within-replicate variances ``w_b``
(``b = 1..B``), the pooled estimate is ``mean(d)``, the between variance ``D``
is the sample variance of ``d`` (divisor ``B - 1``), the total variance is
``mean(w) + (1 + 1/B) D`` and intervals use a t reference.

Two degrees-of-freedom conventions are offered:

* ``bplus1``:   ``(B - 1) (1 + W / (D (B + 1)))^2``
* ``standard``: ``(B - 1) (1 + W / ((1 + 1/B) D))^2``

When ``D == 0`` the df is infinite and the normal quantile is used.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from scipy import stats

from .errors import PoolingWarning

DF_CONVENTIONS = ("bplus1", "standard")
CSV_FIELDS = ("t", "estimate", "se", "df", "ci_lo", "ci_hi", "B")


@dataclass(frozen=True)
class PooledEstimate:
    """Per-time pooled results; every array has one entry per time."""

    estimate: np.ndarray
    within: np.ndarray
    between: np.ndarray
    total: np.ndarray
    df: np.ndarray
    ci_lo: np.ndarray
    ci_hi: np.ndarray
    B: int
    level: float = 0.95
    df_convention: str = "bplus1"

    @property
    def se(self) -> np.ndarray:
        return np.sqrt(self.total)

    @property
    def horizon(self) -> int:
        return len(self.estimate)

    def rows(self) -> list[dict]:
        return [
            {"t": t + 1, "estimate": float(self.estimate[t]), "se": float(self.se[t]), "df": float(self.df[t]),
             "ci_lo": float(self.ci_lo[t]), "ci_hi": float(self.ci_hi[t]), "B": self.B}
            for t in range(self.horizon)
        ]


def _as_pairs(estimates):
    est, var = [], []
    for e in estimates:
        if hasattr(e, "estimate"):
            est.append(np.atleast_1d(np.asarray(e.estimate, dtype=float)))
            var.append(np.atleast_1d(np.asarray(e.variance, dtype=float)))
        else:
            d, w = e
            est.append(np.atleast_1d(np.asarray(d, dtype=float)))
            var.append(np.atleast_1d(np.asarray(w, dtype=float)))
    try:
        return np.vstack(est), np.vstack(var)
    except ValueError as exc:
        raise ValueError("replicates disagree on horizon") from exc


def pool(estimates: Sequence, level: float = 0.95, df_convention: str = "bplus1") -> PooledEstimate:
    """Combine replicates given as ``AceEstimate`` objects or ``(estimate, variance)`` pairs."""
    if df_convention not in DF_CONVENTIONS:
        raise ValueError(f"df_convention must be one of {DF_CONVENTIONS}")
    if not 0 < level < 1:
        raise ValueError("level must lie in (0, 1)")
    d, w = _as_pairs(estimates)
    B = d.shape[0]
    if B < 2:
        raise ValueError("pooling needs at least two replicates")
    if np.any(w < 0) or not np.all(np.isfinite(w)) or not np.all(np.isfinite(d)):
        raise ValueError("replicate variances must be finite and nonnegative")

    est = d.mean(axis=0)
    wbar = w.mean(axis=0)
    D = d.var(axis=0, ddof=1)
    total = wbar + (1.0 + 1.0 / B) * D
    zero = D == 0
    if np.any(zero):
        warnings.warn(
            f"zero between-replicate variance at t={[int(i) + 1 for i in np.flatnonzero(zero)]}; using the normal reference",
            PoolingWarning, stacklevel=2,
        )
    with np.errstate(divide="ignore", invalid="ignore"):
        scale = (B + 1.0) if df_convention == "bplus1" else (1.0 + 1.0 / B)
        df = np.where(zero, np.inf, (B - 1) * (1.0 + wbar / (scale * D)) ** 2)
    q = stats.t.ppf(0.5 + level / 2, df)  # t.ppf with df=inf is the normal quantile
    half = q * np.sqrt(total)
    return PooledEstimate(est, wbar, D, total, df, est - half, est + half, B, level, df_convention)
