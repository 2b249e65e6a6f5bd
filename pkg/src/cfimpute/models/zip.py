"""Zero-inflated Poisson regression.

Structural-zero probability ``pi = expit(G gamma)`` and Poisson mean
``mu = exp(X beta)``, both on the same standardized design. Fitted by
maximum likelihood; the "posterior" is ``N(theta_hat, I(theta_hat)^-1)``.
"""
from __future__ import annotations

import numpy as np
from scipy import linalg, optimize
from scipy.special import gammaln, log_expit

from ..errors import ModelFitError
from .base import DesignInfo, FittedModel, check_matrix, check_response, expit

_ETA_MAX = 30.0


def _pieces(theta, D, k):
    a = D @ theta[:k]
    b = np.minimum(D @ theta[k:], _ETA_MAX)
    return a, b, np.exp(b)


def negloglik(theta, D, y):
    k = D.shape[1]
    a, b, mu = _pieces(theta, D, k)
    zero = y == 0
    ll = np.where(
        zero,
        np.logaddexp(log_expit(a), log_expit(-a) - mu),
        log_expit(-a) + y * b - mu - gammaln(y + 1),
    )
    return -ll.sum()


def _grad_hess(theta, D, y):
    k = D.shape[1]
    a, b, mu = _pieces(theta, D, k)
    pi = expit(a)
    zero = y == 0
    w = expit(a + mu)  # posterior probability of a structural zero when y == 0
    ga = np.where(zero, w - pi, -pi)
    gb = np.where(zero, -(1 - w) * mu, y - mu)
    haa = np.where(zero, w * (1 - w) - pi * (1 - pi), -pi * (1 - pi))
    hab = np.where(zero, w * (1 - w) * mu, 0.0)
    hbb = np.where(zero, mu * (w * (1 - w) * mu - (1 - w)), -mu)
    g = np.concatenate([D.T @ ga, D.T @ gb])
    H = np.block([
        [(D * haa[:, None]).T @ D, (D * hab[:, None]).T @ D],
        [(D * hab[:, None]).T @ D, (D * hbb[:, None]).T @ D],
    ])
    return -g, -H  # of the negative log-likelihood


class FittedZip(FittedModel):
    def __init__(self, spec, design_info, theta_hat, cov_chol):
        self.spec = spec
        self.design_info = design_info
        self.theta_hat = theta_hat
        self.cov_chol = cov_chol

    def _design(self, Xnew):
        Z = self.design_info.transform(Xnew)
        return np.column_stack([np.ones(Z.shape[0]), Z])

    def mean(self, Xnew):
        D = self._design(Xnew)
        a, _, mu = _pieces(self.theta_hat, D, D.shape[1])
        return (1 - expit(a)) * mu

    def draw(self, Xnew, rng):
        theta = self.theta_hat + self.cov_chol @ rng.standard_normal(len(self.theta_hat))
        return self._sample(theta, Xnew, rng)

    def plugin_draw(self, Xnew, rng):
        return self._sample(self.theta_hat, Xnew, rng)

    def _sample(self, theta, Xnew, rng):
        D = self._design(Xnew)
        a, _, mu = _pieces(theta, D, D.shape[1])
        structural = rng.random(D.shape[0]) < expit(a)
        counts = rng.poisson(mu).astype(np.float64)
        return np.where(structural, 0.0, counts)


def fit_zip(spec, X, y, rng, names=None) -> FittedZip:
    X = check_matrix(X)
    n = X.shape[0]
    y = check_response(y, n)
    if np.any(y < 0) or np.any(y != np.round(y)):
        raise ValueError("zip response must be nonnegative integers")
    info = DesignInfo.from_data(X, names)
    D = np.column_stack([np.ones(n), info.transform(X)])
    k = D.shape[1]
    theta0 = np.zeros(2 * k)
    pos = y[y > 0]
    if pos.size == 0:
        raise ModelFitError("zip response has no positive counts")
    lam = max(pos.mean(), 1e-3)
    excess = (y == 0).mean() - np.exp(-lam)
    p0 = np.clip(excess, 0.05, 0.95)
    theta0[0] = np.log(p0 / (1 - p0))
    theta0[k] = np.log(lam)
    res = optimize.minimize(
        negloglik,
        theta0,
        args=(D, y),
        method="trust-exact",
        jac=lambda t, D, y: _grad_hess(t, D, y)[0],
        hess=lambda t, D, y: _grad_hess(t, D, y)[1],
        options={"maxiter": spec.hyperparameters["max_iter"], "gtol": 1e-8},
    )
    if not np.all(np.isfinite(res.x)):
        raise ModelFitError("zip likelihood optimization produced non-finite estimates")
    _, H = _grad_hess(res.x, D, y)
    try:
        cov = linalg.inv(H)
        cov_chol = linalg.cholesky((cov + cov.T) / 2, lower=True)
    except linalg.LinAlgError as exc:
        raise ModelFitError(f"zip information matrix is not positive definite: {exc}") from exc
    return FittedZip(spec, info, res.x, cov_chol)
