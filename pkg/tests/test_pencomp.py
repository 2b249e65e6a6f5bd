import numpy as np
import pytest

from cfimpute.errors import ModelFitError, SeparationWarning
from cfimpute.imputer import Strategy, run_replicates
from cfimpute.models import ModelSpec
from cfimpute.panel import ExposureProfile, PanelDataset
from cfimpute.pencomp import (CLIP, PropensityTrajectory, fit_propensity, fit_propensity_model, fit_pspp,
                              knot_positions, logit, pencomp_ate, pencomp_replicates, prob_of, propensity_design)
from cfimpute.pooling import pool
from cfimpute.simlab import GeneratorSpec, generate, true_ace_curve

ONE, ZERO = ExposureProfile((1,)), ExposureProfile((0,))


def _panel(V, A, Y):
    n = len(A)
    V = np.asarray(V, float).reshape(n, -1)
    names = tuple(f"V{j + 1}" for j in range(V.shape[1]))
    col = lambda x: np.asarray(x, float).reshape(n, -1)
    return PanelDataset(tuple(map(str, range(n))), names, V, col(A), np.zeros((n, col(A).shape[1])), col(Y))


def test_coin_flip_propensity():
    rng = np.random.default_rng(0)
    n = 5000
    d = _panel(rng.random(n), rng.integers(0, 2, n), rng.standard_normal(n))
    p = fit_propensity(d, 1, 0)
    assert abs(p.mean() - 0.5) < 0.02
    assert np.all(np.abs(p - 0.5) < 0.06)


def test_all_exposed_is_flagged_and_clipped():
    n = 200
    d = _panel(np.linspace(0, 1, n), np.ones(n), np.zeros(n))
    with pytest.warns(SeparationWarning):
        m = fit_propensity_model(d, 1, 0)
    p = prob_of(m, propensity_design(d.V, d.A, d.Y, 1), 0)
    assert np.all((p >= CLIP) & (p <= 1 - CLIP))


def test_exposure_model_recovers_baseline_coefficient():
    d = generate(GeneratorSpec("one", n=5000), 0)
    m = fit_propensity_model(d, 1, 0)
    assert abs(m.coef[1] - 1.0) < 0.25


def test_trajectory_is_cumulative_product():
    p = np.array([[0.5, 0.5, 0.2], [0.9, 0.1, 1 - 1e-3]])
    traj = PropensityTrajectory(p)
    np.testing.assert_allclose(traj.cumulative, [[0.5, 0.25, 0.05], [0.9, 0.09, 0.09 * 0.999]])
    np.testing.assert_allclose(traj.logit[:, 0], logit(p[:, 0]))
    with pytest.raises(ValueError):
        PropensityTrajectory(np.array([[0.0, 0.5]]))


def test_knots():
    x = np.random.default_rng(0).standard_normal(1000)
    k = knot_positions(x)
    assert k.size == 20 and np.all(np.diff(k) > 0)
    assert knot_positions(x[:55]).size == 5


def test_spline_nests_a_line():
    rng = np.random.default_rng(1)
    ell = rng.standard_normal(500)
    y = 1.0 + 2.0 * ell + 0.3 * rng.standard_normal(500)
    m = fit_pspp(ell, np.empty((500, 0)), y)
    slope = abs(m.coef[1])
    assert np.max(np.abs(m.spline_coef)) < 0.01 * slope
    exact = fit_pspp(ell, np.empty((500, 0)), 1.0 + 2.0 * ell)
    assert np.max(np.abs(exact.spline_coef)) < 1e-6
    grid = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(m.mean(grid, np.empty((9, 0))), 1 + 2 * grid, atol=0.1)


def test_spline_follows_a_sine():
    rng = np.random.default_rng(2)
    ell = rng.uniform(-2, 2, 2000)
    y = np.sin(3 * ell) + 0.3 * rng.standard_normal(2000)
    m = fit_pspp(ell, np.empty((2000, 0)), y)
    grid = rng.uniform(-2, 2, 1000)
    rmse = np.sqrt(np.mean((m.mean(grid, np.empty((1000, 0))) - np.sin(3 * grid)) ** 2))
    assert rmse < 0.15


def test_aliased_covariate_is_dropped():
    rng = np.random.default_rng(3)
    v = rng.standard_normal(300)
    m = fit_pspp(2 * v + 1, v[:, None], v + rng.standard_normal(300))
    assert "V" not in m.names and len(m.kept) == 2


def _dr_world(n, rng):
    V = rng.standard_normal((n, 2))
    A = (rng.random(n) < 1 / (1 + np.exp(-(0.5 * V[:, 0] + V[:, 1])))).astype(float)
    Y = A + V[:, 0] + V[:, 1] + rng.standard_normal(n)
    return V, A, Y


def test_double_robustness_with_omitted_confounder():
    # The outcome model sees only V1; the spline in the (correct) propensity absorbs V2.
    rng = np.random.default_rng(4)
    spline_err, naive_err = [], []
    for _ in range(40):
        V, A, Y = _dr_world(1000, rng)
        d = _panel(V, A, Y)
        m = fit_propensity_model(d, 1, 0)
        X = propensity_design(d.V, d.A, d.Y, 1)
        arms = []
        for a in (1, 0):
            g = A == a
            fit = fit_pspp(logit(prob_of(m, X[g], a)), V[g, :1], Y[g])
            pred = np.where(g, Y, fit.mean(logit(prob_of(m, X, a)), V[:, :1]))
            arms.append(pred.mean())
        spline_err.append(arms[0] - arms[1] - 1.0)
        D = np.column_stack([np.ones(1000), A, V[:, 0]])
        naive_err.append(np.linalg.lstsq(D, Y, rcond=None)[0][1] - 1.0)
    spline_err = np.array(spline_err)
    assert abs(spline_err.mean()) < 3 * spline_err.std(ddof=1) / np.sqrt(40)
    assert abs(np.mean(naive_err)) > 0.2  # omitting V2 does bias plain regression


def test_identical_profiles_give_exact_zero():
    d = generate(GeneratorSpec("one", n=300), 1).horizon(2)
    p = ExposureProfile((1, 1))
    reps = pencomp_replicates(d, 2, [p, p], 3, seed=0)
    assert all(np.all(r.estimate == 0) for r in reps)


def test_tiny_group_fails_with_named_profile():
    d = generate(GeneratorSpec("one", n=40), 1)
    from cfimpute.pencomp import fit_pencomp
    with pytest.raises(ModelFitError, match="profile"):
        fit_pencomp(d, 5, [ExposureProfile.constant(1, 5), ExposureProfile.constant(0, 5)], 0)


def test_pencomp_requires_two_profiles():
    d = generate(GeneratorSpec("one", n=100), 1)
    with pytest.raises(ValueError, match="two"):
        pencomp_replicates(d, 1, [ONE], 2, 0)


def test_deterministic_and_thread_independent():
    d = generate(GeneratorSpec("null", n=400), 2)
    prof = [ExposureProfile.constant(1, 3), ExposureProfile.constant(0, 3)]
    a = pencomp_ate(d, 3, prof, 4, seed=5)
    b = pencomp_ate(d, 3, prof, 4, seed=5, threads=2)
    np.testing.assert_array_equal(a.estimate, b.estimate)
    np.testing.assert_array_equal(a.total, b.total)


@pytest.mark.slow
def test_unbiased_at_single_time():
    spec = GeneratorSpec("one", n=500)
    truth = true_ace_curve(spec, 200_000, 0)[0][0]
    est = np.array([pencomp_ate(generate(spec, 100 + k).horizon(1), 1, [ONE, ZERO], 20, k).estimate[0]
                    for k in range(200)])
    assert abs(est.mean() - truth) < 3 * est.std(ddof=1) / np.sqrt(len(est))


@pytest.mark.slow
def test_agrees_with_sequential_imputation():
    d = generate(GeneratorSpec("one", n=1000), 7)
    truth = true_ace_curve(GeneratorSpec("one"), 200_000, 0)[0]
    prof = [ExposureProfile.constant(1, 5), ExposureProfile.constant(0, 5)]
    pc = pencomp_ate(d, 5, prof, 30, 1)
    seq = pool(run_replicates(d, ModelSpec("linear"), 5, prof, 30, 1, strategy=Strategy("lag1", True)))
    for p in (pc, seq):
        assert np.all((p.ci_lo <= truth) & (truth <= p.ci_hi))
