import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from cfimpute.errors import PoolingWarning
from cfimpute.pooling import pool

import oracles


def test_zero_between_variance_uses_normal_reference():
    with pytest.warns(PoolingWarning):
        p = pool([(5.0, 1.0)] * 3)
    assert p.estimate[0] == 5.0
    assert p.between[0] == 0.0
    assert p.total[0] == 1.0
    assert math.isinf(p.df[0])
    assert p.ci_lo[0] == pytest.approx(5 - 1.959964, abs=1e-6)
    assert p.ci_hi[0] == pytest.approx(5 + 1.959964, abs=1e-6)


def test_two_replicates_hand_arithmetic():
    p = pool([(1.0, 0.0), (3.0, 0.0)])
    assert p.estimate[0] == 2.0
    assert p.between[0] == 2.0
    assert p.total[0] == 3.0
    assert p.df[0] == 1.0
    assert p.ci_hi[0] - 2.0 == pytest.approx(12.706205 * math.sqrt(3), rel=1e-6)


@pytest.mark.parametrize("conv", ["bplus1", "standard"])
def test_matches_stdlib_oracle(conv):
    rng = np.random.default_rng(0)
    d, w = rng.normal(1, 0.3, 40), rng.uniform(0.01, 0.05, 40)
    p = pool(list(zip(d, w)), df_convention=conv)
    qbar, total, nu, lo, hi = oracles.rubin(list(d), list(w), conv)
    assert p.estimate[0] == pytest.approx(qbar, rel=1e-12)
    assert p.total[0] == pytest.approx(total, rel=1e-12)
    assert p.df[0] == pytest.approx(nu, rel=1e-12)
    assert (p.ci_lo[0], p.ci_hi[0]) == pytest.approx((lo, hi), rel=1e-10)


def test_df_conventions_differ():
    reps = [(1.0, 0.5), (2.0, 0.5), (4.0, 0.5)]
    assert pool(reps).df[0] < pool(reps, df_convention="standard").df[0]


def test_rejects_bad_input():
    with pytest.raises(ValueError, match="two"):
        pool([(1.0, 0.1)])
    with pytest.raises(ValueError, match="nonnegative"):
        pool([(1.0, -0.1), (2.0, 0.1)])
    with pytest.raises(ValueError, match="horizon"):
        pool([([1.0, 2.0], [0.1, 0.1]), (1.0, 0.1)])


def test_per_time_columns_are_independent():
    p = pool([([1.0, 10.0], [0.1, 1.0]), ([3.0, 20.0], [0.1, 1.0]), ([2.0, 30.0], [0.1, 1.0])])
    q = pool([(1.0, 0.1), (3.0, 0.1), (2.0, 0.1)])
    assert p.ci_lo[0] == q.ci_lo[0] and p.horizon == 2


# Spread is bounded away from rounding level so D is not cancellation noise.
replicate_sets = st.integers(2, 30).flatmap(lambda B: st.tuples(
    arrays(float, B, elements=st.floats(-100, 100)),
    arrays(float, B, elements=st.floats(0.001, 10)),
)).filter(lambda dw: np.ptp(dw[0]) > 1e-6 * (1 + np.abs(dw[0]).max()))


def _pool(d, w):
    with _quiet():
        return pool(list(zip(d, w)))


class _quiet:
    def __enter__(self):
        import warnings
        self._c = warnings.catch_warnings()
        self._c.__enter__()
        warnings.simplefilter("ignore", PoolingWarning)

    def __exit__(self, *exc):
        return self._c.__exit__(*exc)


@settings(max_examples=1000, deadline=None)
@given(replicate_sets, st.randoms(use_true_random=False))
def test_permutation_invariance(dw, rnd):
    d, w = dw
    idx = list(range(len(d)))
    rnd.shuffle(idx)
    a, b = _pool(d, w), _pool(d[idx], w[idx])
    for f in ("estimate", "total", "df", "ci_lo", "ci_hi"):
        np.testing.assert_allclose(getattr(a, f), getattr(b, f), rtol=1e-9, atol=1e-9)


@settings(max_examples=1000, deadline=None)
@given(replicate_sets, st.floats(0.01, 100), st.floats(-50, 50))
def test_scaling_equivariance(dw, c, shift):
    d, w = dw
    a = _pool(d, w)
    b = _pool(c * d + shift, c * c * w)
    np.testing.assert_allclose(b.estimate, c * a.estimate + shift, rtol=1e-9, atol=1e-7)
    np.testing.assert_allclose(b.total, c * c * a.total, rtol=1e-7, atol=1e-9)
    np.testing.assert_allclose(b.df, a.df, rtol=1e-6)
    np.testing.assert_allclose(b.ci_hi - b.ci_lo, c * (a.ci_hi - a.ci_lo), rtol=1e-6, atol=1e-7)


@settings(max_examples=200, deadline=None)
@given(replicate_sets, st.floats(0.01, 5))
def test_more_within_variance_raises_total_and_df(dw, extra):
    # The interval itself need not widen: a larger df shrinks the t quantile.
    d, w = dw
    a, b = _pool(d, w), _pool(d, w + extra)
    assert b.total[0] > a.total[0]
    assert b.df[0] >= a.df[0]
