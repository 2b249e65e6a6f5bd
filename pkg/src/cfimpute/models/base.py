"""Shared pieces of the outcome models: specs, design bookkeeping, dispatch."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Any, Mapping, Sequence

import numpy as np
from scipy.special import expit as _expit

from ..errors import ColumnMismatchError

FAMILIES = ("linear", "bart", "logistic", "zip")

DEFAULTS: dict[str, dict[str, Any]] = {
    "linear": {"ridge": 1e-6},
    "logistic": {"ridge_fallback": 1.0, "max_iter": 100, "tol": 1e-10, "max_eta": 30.0},
    "zip": {"max_iter": 200},
    "bart": {
        "n_trees": 200,
        "n_burn": 500,
        "n_keep": 500,
        "thin": 1,
        "alpha": 0.95,
        "beta": 2.0,
        "k": 2.0,
        "nu": 3.0,
        "q": 0.9,
        "numcut": 100,
        "max_depth": 10,
        "p_grow": 0.28,
        "p_prune": 0.28,
    },
}

# CLI spelling -> family
ALIASES = {"mlr": "linear", "linear": "linear", "bart": "bart", "zip": "zip", "logistic": "logistic"}


def expit(x):
    """Inverse logit ``1 / (1 + exp(-x))``, stable for large ``|x|``."""
    return _expit(x)


@dataclass(frozen=True)
class ModelSpec:
    family: str
    hyperparameters: Mapping[str, Any] = field(default_factory=dict)

    def __post_init__(self):
        fam = ALIASES.get(self.family)
        if fam is None:
            raise ValueError(f"unknown model family {self.family!r}; expected one of {FAMILIES}")
        unknown = set(self.hyperparameters) - set(DEFAULTS[fam])
        if unknown:
            raise ValueError(f"unknown {fam} hyperparameters: {sorted(unknown)}")
        object.__setattr__(self, "family", fam)

    def resolved(self) -> "ModelSpec":
        """Copy with every family default filled in."""
        hp = dict(DEFAULTS[self.family])
        hp.update(self.hyperparameters)
        return ModelSpec(self.family, hp)

    def to_dict(self):
        return {"family": self.family, "hyperparameters": dict(self.resolved().hyperparameters)}


@dataclass(frozen=True)
class DesignInfo:
    """Covariate names and the standardization constants learned at fit time."""

    names: tuple[str, ...]
    mean: np.ndarray
    scale: np.ndarray

    @classmethod
    def from_data(cls, X: np.ndarray, names: Sequence[str] | None = None) -> "DesignInfo":
        X = check_matrix(X)
        p = X.shape[1]
        if names is None:
            names = tuple(f"x{j}" for j in range(p))
        names = tuple(names)
        if len(names) != p:
            raise ColumnMismatchError(f"{len(names)} names for {p} columns")
        if X.shape[0]:
            mean = X.mean(axis=0)
            scale = X.std(axis=0)
        else:
            mean = np.zeros(p)
            scale = np.ones(p)
        scale = np.where(scale > 0, scale, 1.0)
        return cls(names, mean, scale)

    @property
    def n_features(self) -> int:
        return len(self.names)

    def check(self, X) -> np.ndarray:
        X = check_matrix(X)
        if X.shape[1] != self.n_features:
            raise ColumnMismatchError(
                f"design has {X.shape[1]} columns, model was fit on {self.n_features}: {list(self.names)}"
            )
        return X

    def transform(self, X) -> np.ndarray:
        X = self.check(X)
        return (X - self.mean) / self.scale


def check_matrix(X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[:, None]
    if X.ndim != 2:
        raise ValueError(f"design matrix must be 2-D, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        bad = np.argwhere(~np.isfinite(X))[0]
        raise ValueError(f"non-finite covariate value at row {bad[0]}, column {bad[1]}")
    return X


def check_response(y, n: int) -> np.ndarray:
    y = np.asarray(y, dtype=np.float64).ravel()
    if y.shape[0] != n:
        raise ValueError(f"response has {y.shape[0]} rows, design has {n}")
    if not np.all(np.isfinite(y)):
        raise ValueError("response contains missing or non-finite values")
    return y


class FittedModel:
    """Common interface: ``spec``, ``design_info`` and ``draw(Xnew, rng)``."""

    spec: ModelSpec
    design_info: DesignInfo

    def draw(self, Xnew, rng: np.random.Generator):
        raise NotImplementedError

    def plugin_draw(self, Xnew, rng: np.random.Generator):
        """Observation noise around the posterior point estimate (no parameter draw)."""
        raise NotImplementedError

    def mean(self, Xnew) -> np.ndarray:
        """Posterior-predictive mean at each row."""
        raise NotImplementedError
