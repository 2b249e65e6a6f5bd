import json

import numpy as np
import pytest

from cfimpute.errors import ReplicateError
from cfimpute.panel import ExposureProfile
from cfimpute.simlab import (GeneratorSpec, StudyResult, generate, run_study, table_config, true_ace,
                             true_ace_curve)

import oracles

BIG = 1_000_000


@pytest.fixture(scope="module")
def big_one():
    return generate(GeneratorSpec("one", n=BIG), 0)


def test_first_exposure_rate(big_one):
    assert big_one.A[:, 0].mean() == pytest.approx(oracles.expit_mean_uniform(), abs=0.003)


def _regressors(d, t, terms):
    i = t - 1
    col = {"A": d.A[:, i], "C": d.C1[:, i], "M": d.M[:, i], "V": d.V[:, 0]}
    if t > 1:
        col.update(A_lag=d.A[:, i - 1], C_lag=d.C1[:, i - 1], M_lag=d.M[:, i - 1], Y_lag=d.Y[:, i - 1])
    return np.column_stack([col[k] for k in terms])


@pytest.mark.parametrize("t", [1, 3])
@pytest.mark.parametrize("var", ["C", "M", "Y"])
def test_structural_equations_recovered(big_one, t, var):
    eq = oracles.SITUATION_ONE[1 if t == 1 else 2][var]
    terms = list(eq)
    y = {"C": big_one.C1, "M": big_one.M, "Y": big_one.Y}[var][:, t - 1]
    coef, sd = oracles.ols(_regressors(big_one, t, terms), y)
    np.testing.assert_allclose(coef[1:], [eq[k] for k in terms], atol=0.01 * max(1, sd))
    assert abs(coef[0]) < 0.02 * max(1, sd)
    assert sd == pytest.approx(oracles.SITUATION_ONE_SD[1 if t == 1 else 2][var], rel=0.01)


def test_second_design_has_no_confounder_columns():
    d = generate(GeneratorSpec("two", n=20), 0)
    assert d.C1 is None and d.C2 is None
    assert d.roles == ("mediator", "outcome")


def test_truth_matches_linear_propagation():
    mean, se = true_ace_curve(GeneratorSpec("one"), 100_000, 1)
    np.testing.assert_allclose(mean, oracles.linear_ace(), atol=1e-9)
    assert np.all(se < 1e-6)


def test_truth_anchor_values():
    one = true_ace_curve(GeneratorSpec("one"), 200_000, 2)[0]
    assert one[0] == pytest.approx(0.65, abs=0.01)
    assert one[4] == pytest.approx(3.28, abs=0.02)
    assert true_ace(GeneratorSpec("two"), 1, 200_000, 2) == pytest.approx(0.64, abs=0.01)


def test_count_outcome_truth_reproducible_and_degenerate():
    # Independent runs agree within 2 MC SE of their difference at the nominal ~95% rate.
    spec = GeneratorSpec("zip_check")
    runs = [true_ace_curve(spec, 20_000, k) for k in range(20)]
    agree = [np.abs(a - b) < 2 * np.hypot(sa, sb) for (a, sa), (b, sb) in zip(runs[::2], runs[1::2])]
    assert np.mean(agree) >= 0.85
    zero = GeneratorSpec("zip_check", overrides={"zero_inflation": 1.0})
    assert np.all(true_ace_curve(zero, 10_000, 0)[0] == 0.0)
    d = generate(spec, 0)
    assert np.all(d.Y >= 0) and np.all(d.Y == np.round(d.Y))


def test_forced_profile_truth_other_profiles():
    spec = GeneratorSpec("one")
    prof = (ExposureProfile((1, 0, 1, 1, 1)), ExposureProfile((0, 0, 0, 0, 0)))
    mean, _ = true_ace_curve(spec, 50_000, 0, profiles=prof)
    assert mean[0] == pytest.approx(0.65, abs=1e-9)
    assert mean[1] != pytest.approx(1.02, abs=0.01)


def test_study_structure_and_files(tmp_path):
    res = run_study(GeneratorSpec("one", n=150), table_config("mlr", B=5), 3, seed=1, n_mc=20_000)
    assert isinstance(res, StudyResult) and res.n_ok == 3
    assert len(res.rows()) == 5
    csv_path, side = res.write(tmp_path / "s.csv")
    assert csv_path.read_text().splitlines()[0] == "t,true_ace,bias,rmse,coverage,ail,mc_se,n_ok"
    meta = json.loads(side.read_text())
    assert meta["n_sims"] == 3 and meta["estimator"]["B"] == 5


def test_study_thread_independent(tmp_path):
    args = (GeneratorSpec("one", n=120), table_config("mlr", B=4), 3)
    a = run_study(*args, seed=2, n_mc=10_000)
    b = run_study(*args, seed=2, threads=2, n_mc=10_000)
    a.write(tmp_path / "a.csv")
    b.write(tmp_path / "b.csv")
    assert (tmp_path / "a.csv").read_bytes() == (tmp_path / "b.csv").read_bytes()


def test_study_aborts_when_many_simulations_fail():
    # Twelve subjects cannot support the all-zeros PENCOMP group through t=5.
    with pytest.raises(ReplicateError, match="simulations failed"):
        run_study(GeneratorSpec("one", n=12), table_config("mlr", B=3, estimator="pencomp"), 3, n_mc=1000)
