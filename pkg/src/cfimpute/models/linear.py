"""Bayesian linear regression with a conjugate normal / inverse-gamma posterior."""
from __future__ import annotations

import numpy as np
from scipy import linalg

from ..errors import RankDeficientError
from .base import DesignInfo, FittedModel, ModelSpec, check_matrix, check_response


def rank_check(D: np.ndarray, names) -> None:
    """Raise :class:`RankDeficientError` naming columns that add no new direction.

    ``D`` carries the intercept in column 0; ``names`` label the remaining columns.
    """
    if D.shape[0] < D.shape[1]:
        raise RankDeficientError([f"<{D.shape[1]} columns for {D.shape[0]} rows>"])
    R = np.linalg.qr(D, mode="r")
    diag = np.abs(np.diag(R))
    tol = 1e-8 * max(diag.max(initial=0.0), 1.0)
    bad = np.flatnonzero(diag <= tol)
    if bad.size:
        labels = ("(intercept)",) + tuple(names)
        raise RankDeficientError([labels[j] for j in bad])


class FittedLinear(FittedModel):
    """Posterior for ``y = D beta + e`` on standardized covariates.

    With ridge precision ``lam`` on the slopes and ``p(sigma^2) ~ 1/sigma^2``,
    ``sigma^2 | y ~ SSR / chi2(n - k)`` and
    ``beta | sigma^2, y ~ N(beta_hat, sigma^2 (D'D + lam I)^-1)``.
    """

    def __init__(self, spec, design_info, beta_hat, chol, ssr, df):
        self.spec = spec
        self.design_info = design_info
        self.beta_hat = beta_hat
        self.chol = chol
        self.ssr = ssr
        self.df = df

    @property
    def sigma2_hat(self):
        return self.ssr / self.df if self.df > 0 else 0.0

    @property
    def coef(self) -> np.ndarray:
        """Posterior-mean coefficients on the original covariate scale, intercept first."""
        slopes = self.beta_hat[1:] / self.design_info.scale
        intercept = self.beta_hat[0] - slopes @ self.design_info.mean
        return np.concatenate([[intercept], slopes])

    def coef_interval(self, level=0.95):
        """Marginal posterior (Student-t) intervals for :attr:`coef`."""
        from scipy import stats

        k = len(self.beta_hat)
        # covariance of original-scale coefficients is A Cov A' with A the unstandardizing map
        A = np.zeros((k, k))
        A[0, 0] = 1.0
        A[1:, 1:] = np.diag(1.0 / self.design_info.scale)
        A[0, 1:] = -self.design_info.mean / self.design_info.scale
        Linv = linalg.solve_triangular(self.chol, np.eye(k), lower=True)
        cov = self.sigma2_hat * (A @ Linv.T @ Linv @ A.T)
        half = stats.t.ppf(0.5 + level / 2, self.df) * np.sqrt(np.diag(cov))
        return self.coef - half, self.coef + half

    def _design(self, Xnew):
        Z = self.design_info.transform(Xnew)
        return np.column_stack([np.ones(Z.shape[0]), Z])

    def mean(self, Xnew):
        return self._design(Xnew) @ self.beta_hat

    def plugin_draw(self, Xnew, rng):
        D = self._design(Xnew)
        return D @ self.beta_hat + np.sqrt(self.sigma2_hat) * rng.standard_normal(D.shape[0])

    def draw(self, Xnew, rng):
        D = self._design(Xnew)
        if self.ssr <= 0.0:
            return D @ self.beta_hat
        sigma2 = self.ssr / rng.chisquare(self.df)
        z = rng.standard_normal(len(self.beta_hat))
        beta = self.beta_hat + np.sqrt(sigma2) * linalg.solve_triangular(self.chol.T, z, lower=False)
        return D @ beta + np.sqrt(sigma2) * rng.standard_normal(D.shape[0])


def fit_linear(spec: ModelSpec, X, y, rng, names=None) -> FittedLinear:
    X = check_matrix(X)
    n = X.shape[0]
    y = check_response(y, n)
    info = DesignInfo.from_data(X, names)
    D = np.column_stack([np.ones(n), info.transform(X)])
    rank_check(D, info.names)
    k = D.shape[1]
    df = n - k
    if df <= 0:
        raise RankDeficientError([f"<{k} parameters for {n} rows>"])
    prec = D.T @ D
    prec[np.arange(1, k), np.arange(1, k)] += spec.hyperparameters["ridge"]
    chol = linalg.cholesky(prec, lower=True)
    beta_hat = linalg.cho_solve((chol, True), D.T @ y)
    resid = y - D @ beta_hat
    ssr = float(resid @ resid + spec.hyperparameters["ridge"] * beta_hat[1:] @ beta_hat[1:])
    if np.ptp(y) == 0.0:
        # constant response: point-mass predictive
        beta_hat = np.zeros(k)
        beta_hat[0] = y[0]
        ssr = 0.0
    return FittedLinear(spec, info, beta_hat, chol, ssr, df)
