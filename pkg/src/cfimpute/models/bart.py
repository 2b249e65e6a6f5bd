"""Bayesian additive regression trees.

Standard sum-of-trees model with the usual conjugate priors: response scaled to
[-0.5, 0.5], leaf values ``N(0, (0.5 / (k sqrt(m)))^2)``, split probability
``alpha (1 + depth)^-beta``, and ``sigma^2 ~ nu lambda / chi2_nu`` with
``lambda`` chosen so that ``P(sigma < sigma_ols) = q``. Tree moves are grow,
prune and change; the inner loop lives in :mod:`cfimpute.kernels`.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy import stats

from .. import kernels
from ..errors import ModelFitError
from .base import DesignInfo, FittedModel, check_matrix, check_response


def make_cuts(x: np.ndarray, numcut: int) -> np.ndarray:
    u = np.unique(x)
    if u.size <= numcut + 1:
        return (u[:-1] + u[1:]) / 2.0
    probs = np.linspace(0.0, 1.0, numcut + 2)[1:-1]
    return np.unique(np.quantile(x, probs))


def encode(X: np.ndarray, cuts: list[np.ndarray]) -> np.ndarray:
    """Map each covariate to the count of cutpoints strictly below it, shape ``(p, n)``."""
    codes = np.empty((X.shape[1], X.shape[0]), dtype=np.int32)
    for j, c in enumerate(cuts):
        codes[j] = np.searchsorted(c, X[:, j], side="left")
    return codes


@dataclass(frozen=True)
class Forest:
    """One posterior draw of the ensemble, trees flattened heap-wise."""

    var: np.ndarray
    cut: np.ndarray
    mu: np.ndarray
    offsets: np.ndarray
    sigma: float  # on the scaled response

    def predict(self, codes):
        return kernels.predict(self.var, self.cut, self.mu, self.offsets, codes)

    @property
    def n_leaves(self):
        return int(np.count_nonzero(self.var == -1))


def _snapshot(var, cut, mu, top, sigma):
    ends = top.astype(np.int64) + 1
    offsets = np.concatenate([[0], np.cumsum(ends)]).astype(np.int64)
    vf = np.concatenate([var[j, : ends[j]] for j in range(var.shape[0])])
    cf = np.concatenate([cut[j, : ends[j]] for j in range(var.shape[0])])
    mf = np.concatenate([mu[j, : ends[j]] for j in range(var.shape[0])])
    return Forest(np.ascontiguousarray(vf), np.ascontiguousarray(cf), np.ascontiguousarray(mf), offsets, sigma)


class FittedBart(FittedModel):
    def __init__(self, spec, design_info, cuts, forests, y_lo, y_range, accept_rate=None):
        self.spec = spec
        self.design_info = design_info
        self.cuts = cuts
        self.forests = forests
        self.y_lo = y_lo
        self.y_range = y_range
        self.accept_rate = accept_rate

    def _codes(self, Xnew):
        return encode(self.design_info.check(Xnew), self.cuts)

    def _unscale(self, f):
        return self.y_lo + (f + 0.5) * self.y_range

    def mean(self, Xnew):
        X = self.design_info.check(Xnew)
        if not self.forests:
            return np.full(X.shape[0], self.y_lo)
        codes = encode(X, self.cuts)
        f = np.zeros(X.shape[0])
        for forest in self.forests:
            f += forest.predict(codes)
        return self._unscale(f / len(self.forests))

    def plugin_draw(self, Xnew, rng):
        """Posterior-mean surface plus noise at the root-mean-square kept sigma."""
        X = self.design_info.check(Xnew)
        if not self.forests:
            return np.full(X.shape[0], self.y_lo)
        codes = encode(X, self.cuts)
        f = np.zeros(X.shape[0])
        for forest in self.forests:
            f += forest.predict(codes)
        sigma = np.sqrt(np.mean([fo.sigma**2 for fo in self.forests]))
        return self._unscale(f / len(self.forests) + sigma * rng.standard_normal(X.shape[0]))

    def draw(self, Xnew, rng):
        X = self.design_info.check(Xnew)
        if not self.forests:
            return np.full(X.shape[0], self.y_lo)
        forest = self.forests[int(rng.integers(len(self.forests)))]
        f = forest.predict(encode(X, self.cuts))
        noise = forest.sigma * rng.standard_normal(X.shape[0])
        return self._unscale(f + noise)


def fit_bart(spec, X, y, rng, names=None) -> FittedBart:
    X = check_matrix(X)
    n, p = X.shape
    y = check_response(y, n)
    hp = spec.hyperparameters
    info = DesignInfo.from_data(X, names)
    y_lo = float(y.min())
    y_range = float(y.max() - y.min())
    if y_range == 0.0:
        return FittedBart(spec, info, [], [], y_lo, 0.0)

    ys = (y - y_lo) / y_range - 0.5
    cuts = [make_cuts(X[:, j], int(hp["numcut"])) for j in range(p)]
    codes = np.ascontiguousarray(encode(X, cuts))
    ncut = np.array([len(c) for c in cuts], dtype=np.int32)

    m = int(hp["n_trees"])
    max_depth = int(hp["max_depth"])
    cap = 2 ** (max_depth + 1) - 1
    nu = float(hp["nu"])
    if n > p + 1:
        D = np.column_stack([np.ones(n), X])
        coef, *_ = np.linalg.lstsq(D, ys, rcond=None)
        resid = ys - D @ coef
        sigma_hat = np.sqrt(resid @ resid / (n - p - 1))
    else:
        sigma_hat = ys.std()
    sigma_hat = max(sigma_hat, 1e-3)
    lam = sigma_hat**2 * stats.chi2.ppf(1 - hp["q"], nu) / nu
    tau2 = (0.5 / (hp["k"] * np.sqrt(m))) ** 2

    var = np.full((m, cap), -2, dtype=np.int32)
    var[:, 0] = -1
    cut = np.zeros((m, cap), dtype=np.int32)
    mu = np.zeros((m, cap))
    mu[:, 0] = ys.mean() / m
    top = np.zeros(m, dtype=np.int32)
    leaf_of = np.zeros((m, n), dtype=np.int32)
    r = ys.copy()
    for j in range(m):
        r -= mu[j, 0]
    state = np.array([rng.integers(0, 2**64, dtype=np.uint64)], dtype=np.uint64)
    sigma2 = sigma_hat**2

    n_burn, n_keep, thin = int(hp["n_burn"]), int(hp["n_keep"]), int(hp["thin"])
    forests = []
    accepted = 0
    total = n_burn + n_keep * thin
    for it in range(total):
        accepted += kernels.sweep(
            var, cut, mu, top, leaf_of, r, codes, ncut,
            sigma2, tau2, hp["alpha"], hp["beta"], hp["p_grow"], hp["p_prune"], max_depth, state,
        )
        sigma2 = (nu * lam + r @ r) / rng.chisquare(nu + n)
        if not np.isfinite(sigma2):
            raise ModelFitError(f"BART chain produced non-finite values at iteration {it}")
        if it >= n_burn and (it - n_burn) % thin == thin - 1:
            forests.append(_snapshot(var, cut, mu, top, float(np.sqrt(sigma2))))
    if not np.all(np.isfinite(r)):
        raise ModelFitError("BART chain produced non-finite fitted values")
    return FittedBart(spec, info, cuts, forests, y_lo, y_range, accepted / (total * m))
