"""Logistic regression with an asymptotic-normal posterior around the ML fit."""
from __future__ import annotations

import warnings
from typing import NamedTuple

import numpy as np
from scipy import linalg

from ..errors import ModelFitError, SeparationWarning
from .base import DesignInfo, FittedModel, check_matrix, check_response, expit


class BinaryDraw(NamedTuple):
    prob: np.ndarray
    label: np.ndarray


def _irls(D, y, penalty, max_iter, tol):
    """Penalized IRLS. Returns (beta, converged)."""
    beta = np.zeros(D.shape[1])
    pbar = np.clip(y.mean(), 1e-3, 1 - 1e-3)
    beta[0] = np.log(pbar / (1 - pbar))
    for _ in range(max_iter):
        eta = D @ beta
        p = expit(eta)
        w = np.maximum(p * (1 - p), 1e-12)
        grad = D.T @ (y - p) - penalty * beta
        H = (D * w[:, None]).T @ D + np.diag(penalty)
        step = linalg.solve(H, grad, assume_a="pos")
        beta = beta + step
        if not np.all(np.isfinite(beta)):
            return beta, False
        if np.max(np.abs(step)) < tol * (1 + np.max(np.abs(beta))):
            return beta, True
    return beta, False


class FittedLogistic(FittedModel):
    def __init__(self, spec, design_info, beta_hat, cov_chol, separated):
        self.spec = spec
        self.design_info = design_info
        self.beta_hat = beta_hat
        self.cov_chol = cov_chol
        self.separated = separated

    def _design(self, Xnew):
        Z = self.design_info.transform(Xnew)
        return np.column_stack([np.ones(Z.shape[0]), Z])

    @property
    def coef(self):
        slopes = self.beta_hat[1:] / self.design_info.scale
        return np.concatenate([[self.beta_hat[0] - slopes @ self.design_info.mean], slopes])

    def predict_proba(self, Xnew):
        """P(y = 1) at the ML estimate."""
        return expit(self._design(Xnew) @ self.beta_hat)

    def mean(self, Xnew):
        return self.predict_proba(Xnew)

    def plugin_draw(self, Xnew, rng) -> BinaryDraw:
        prob = self.predict_proba(Xnew)
        return BinaryDraw(prob, (rng.random(prob.shape[0]) < prob).astype(np.float64))

    def draw(self, Xnew, rng) -> BinaryDraw:
        D = self._design(Xnew)
        beta = self.beta_hat + self.cov_chol @ rng.standard_normal(len(self.beta_hat))
        prob = expit(D @ beta)
        label = (rng.random(D.shape[0]) < prob).astype(np.float64)
        return BinaryDraw(prob, label)


def fit_logistic(spec, X, y, rng, names=None) -> FittedLogistic:
    X = check_matrix(X)
    n = X.shape[0]
    y = check_response(y, n)
    if not np.all((y == 0) | (y == 1)):
        raise ValueError("logistic response must be 0/1")
    hp = spec.hyperparameters
    info = DesignInfo.from_data(X, names)
    D = np.column_stack([np.ones(n), info.transform(X)])
    k = D.shape[1]
    penalty = np.zeros(k)
    beta, ok = _irls(D, y, penalty, hp["max_iter"], hp["tol"])
    separated = not ok or np.max(np.abs(D @ beta)) > hp["max_eta"]
    if separated:
        warnings.warn(
            "logistic fit shows (quasi-)separation; refitting with ridge penalty "
            f"{hp['ridge_fallback']}",
            SeparationWarning,
            stacklevel=3,
        )
        penalty = np.full(k, float(hp["ridge_fallback"]))
        beta, ok = _irls(D, y, penalty, hp["max_iter"], hp["tol"])
        if not ok:
            raise ModelFitError("ridge-stabilized logistic fit did not converge")
    p = expit(D @ beta)
    w = np.maximum(p * (1 - p), 1e-12)
    info_mat = (D * w[:, None]).T @ D + np.diag(penalty)
    try:
        cov = linalg.inv(info_mat)
        cov_chol = linalg.cholesky((cov + cov.T) / 2, lower=True)
    except linalg.LinAlgError as exc:
        raise ModelFitError(f"singular logistic information matrix: {exc}") from exc
    return FittedLogistic(spec, info, beta, cov_chol, separated)
