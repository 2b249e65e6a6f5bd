"""Simulation laboratory: data generators, Monte Carlo truth and study harness.

Generators are sequential: for each time the exposure is drawn first, then the
confounder ``C``, the mediator ``M`` and the outcome ``Y``. Every equation is a
map from term to coefficient. Recognised terms are ``intercept``, ``V``, the
current-time values ``A``, ``C``, ``M``, the lagged values ``A_lag``,
``C_lag``, ``M_lag``, ``Y_lag`` and the interaction ``sin(M*A)``. Equations
named ``*1`` apply at ``t = 1``; those named ``*t`` apply for ``t > 1``.
"""
from __future__ import annotations

import copy
import csv
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Mapping

import numpy as np
from scipy import stats

from .errors import CfImputeError, ReplicateError
from .models.base import expit
from .panel import ExposureProfile, PanelDataset
from .rng import DATA, ESTIMATE, TRUTH, child, generator

log = logging.getLogger(__name__)

EQUATIONS = ("A1", "C1", "M1", "Y1", "At", "Ct", "Mt", "Yt")
TERMS = ("intercept", "V", "A", "C", "M", "A_lag", "C_lag", "M_lag", "Y_lag", "sin(M*A)")
SITUATIONS = ("one", "two", "null", "zip_check", "custom")

_ONE = {
    "A1": {"V": 1.0},
    "C1": {"A": 0.5, "V": 0.3, "sd": 0.9},
    "M1": {"C": 0.2, "A": 0.2, "V": 0.9, "sd": 1.1},
    "Y1": {"M": 0.5, "C": 0.4, "A": 0.3, "V": 0.5, "sd": 1.0},
    "At": {"Y_lag": 0.05, "M_lag": 0.1, "C_lag": 0.1, "A_lag": 1.0, "V": 0.15},
    "Ct": {"A": 0.2, "Y_lag": 0.1, "M_lag": 0.1, "C_lag": 1.0, "A_lag": 0.2, "V": 0.15, "sd": 1.5},
    "Mt": {"C": 0.1, "A": 0.2, "Y_lag": 0.1, "M_lag": 1.0, "C_lag": 0.1, "A_lag": 0.1, "V": 0.2, "sd": 0.75},
    "Yt": {"M": 0.05, "C": 0.05, "A": 0.1, "Y_lag": 1.0, "M_lag": 0.1, "C_lag": 0.1, "A_lag": 0.1, "V": 0.1,
           "sd": 2.0},
}

_TWO = {
    "A1": {"V": 1.0},
    "M1": {"A": 0.5, "V": 0.3, "sd": 0.9},
    "Y1": {"sin(M*A)": 0.35, "M": 0.4, "A": 0.3, "V": 0.5, "sd": 1.0},
    "At": {"Y_lag": 0.05, "M_lag": 0.1, "A_lag": 1.0, "V": 0.15},
    "Mt": {"A": 0.2, "Y_lag": 0.1, "M_lag": 1.0, "A_lag": 0.2, "V": 0.15, "sd": 1.5},
    "Yt": {"sin(M*A)": 0.35, "M": 0.05, "A": 0.1, "Y_lag": 1.0, "M_lag": 0.1, "A_lag": 0.1, "V": 0.1, "sd": 1.0},
}


def _null():
    # Exposure-free outcome world. The exposure depends only on (V, A, Y) history
    # so that propensity-based estimators that ignore C and M stay valid, and
    # intercepts balance it near 1/2 so both constant profiles keep followers.
    eq = copy.deepcopy(_ONE)
    for name in ("C1", "M1", "Y1", "Ct", "Mt", "Yt"):
        eq[name].pop("A", None)
        eq[name].pop("A_lag", None)
    eq["At"].pop("C_lag")
    eq["At"].pop("M_lag")
    eq["A1"]["intercept"] = -0.5
    eq["At"]["intercept"] = -0.6
    return eq


def _zip():
    # Situation-one structure with a count outcome; the outcome equation is the
    # linear predictor eta (its sd is unused) and persistence in Y is damped.
    eq = copy.deepcopy(_ONE)
    eq["Y1"].pop("sd")
    eq["Yt"].pop("sd")
    eq["Yt"]["Y_lag"] = 0.1
    return eq


BUILTIN = {"one": _ONE, "two": _TWO, "null": _null(), "zip_check": _zip()}
ZIP_DEFAULTS = {"zip_scale": 0.5, "zip_shift": 0.5, "zero_inflation": None}


@dataclass(frozen=True)
class GeneratorSpec:
    """A data-generating model.

    ``overrides`` maps equation names to replacement term dictionaries (merged
    over the built-in equation; ``custom`` needs all of them). For
    ``zip_check`` the extra keys ``zip_scale``, ``zip_shift`` and
    ``zero_inflation`` control the count outcome.
    """

    situation: str = "one"
    n: int = 1000
    T: int = 5
    overrides: Mapping = field(default_factory=dict)

    def __post_init__(self):
        if self.situation not in SITUATIONS:
            raise ValueError(f"unknown situation {self.situation!r}; expected one of {SITUATIONS}")
        if self.n < 2 or self.T < 1:
            raise ValueError("need n >= 2 and T >= 1")
        self.equations()  # validate eagerly

    @property
    def has_c(self) -> bool:
        return "C1" in self.equations()

    @property
    def count_outcome(self) -> bool:
        return self.situation == "zip_check"

    def zip_params(self) -> dict:
        out = dict(ZIP_DEFAULTS)
        out.update({k: v for k, v in self.overrides.items() if k in ZIP_DEFAULTS})
        z = out["zero_inflation"]
        if z is not None and not 0.0 <= z <= 1.0:
            raise ValueError("zero_inflation must lie in [0, 1]")
        return out

    def equations(self) -> dict[str, dict[str, float]]:
        eq_over = {k: v for k, v in self.overrides.items() if k not in ZIP_DEFAULTS}
        unknown = set(eq_over) - set(EQUATIONS)
        if unknown:
            raise ValueError(f"unknown equations {sorted(unknown)}")
        if self.situation == "custom":
            base = {}
            required = {"A1", "M1", "Y1", "At", "Mt", "Yt"}
            if "C1" in eq_over or "Ct" in eq_over:
                required |= {"C1", "Ct"}
            missing = required - set(eq_over)
            if missing:
                raise ValueError(f"custom generator lacks equations {sorted(missing)}")
        else:
            base = copy.deepcopy(BUILTIN[self.situation])
        for name, terms in eq_over.items():
            base[name] = {**base.get(name, {}), **{k: float(v) for k, v in terms.items()}}
        for name, terms in base.items():
            bad = set(terms) - set(TERMS) - {"sd"}
            if bad:
                raise ValueError(f"equation {name} has unknown terms {sorted(bad)}")
            needs_sd = name[0] in "CM" or (name[0] == "Y" and self.situation != "zip_check")
            if needs_sd and not terms.get("sd", 0) > 0:
                raise ValueError(f"equation {name} needs a positive sd")
        return base

    def to_dict(self):
        return {"situation": self.situation, "n": self.n, "T": self.T, "overrides": dict(self.overrides)}


def _linpred(terms, cur, lag, V):
    out = np.full(V.shape[0], terms.get("intercept", 0.0))
    for term, b in terms.items():
        if term in ("intercept", "sd"):
            continue
        if term == "V":
            x = V
        elif term == "sin(M*A)":
            x = np.sin(cur["M"] * cur["A"])
        elif term.endswith("_lag"):
            x = lag[term[0]]
        else:
            x = cur[term]
        out = out + b * x
    return out


def simulate(spec: GeneratorSpec, n: int, rng, forced: ExposureProfile | None = None) -> dict[str, np.ndarray]:
    """Draw ``n`` trajectories; returns arrays ``V`` (n,) and ``A, C, M, Y`` (n, T).

    With ``forced`` the exposure follows the profile. Random numbers are consumed
    identically with or without forcing, so runs sharing a seed share noise.
    """
    rng = generator(rng)
    eq = spec.equations()
    has_c = "C1" in eq
    T = spec.T
    if forced is not None and len(forced) < T:
        raise ValueError("forced profile shorter than the generator horizon")
    zp = spec.zip_params() if spec.count_outcome else None
    V = rng.uniform(0.0, 1.0, n)
    out = {k: np.empty((n, T)) for k in ("A", "C", "M", "Y")}
    lag = None
    for t in range(T):
        s = "1" if t == 0 else "t"
        u = rng.uniform(size=(4, n))
        cur = {}
        p = expit(_linpred(eq["A" + s], cur, lag, V))
        cur["A"] = (u[0] < p).astype(float) if forced is None else np.full(n, float(forced.values[t]))
        z = stats.norm.ppf(u[1:])
        if has_c:
            cur["C"] = _linpred(eq["C" + s], cur, lag, V) + eq["C" + s]["sd"] * z[0]
        else:
            cur["C"] = np.zeros(n)
        cur["M"] = _linpred(eq["M" + s], cur, lag, V) + eq["M" + s]["sd"] * z[1]
        eta = _linpred(eq["Y" + s], cur, lag, V)
        if zp is None:
            cur["Y"] = eta + eq["Y" + s]["sd"] * z[2]
        else:
            cur["Y"] = _zip_outcome(eta, u[3], zp)
        for k in out:
            out[k][:, t] = cur[k]
        lag = cur
    out["V"] = V
    if not has_c:
        out["C"] = None
    return out


def _zip_outcome(eta, u, zp):
    pi = expit(-eta + zp["zip_shift"]) if zp["zero_inflation"] is None else np.full(eta.shape, zp["zero_inflation"])
    mu = np.exp(zp["zip_scale"] * eta)
    # One uniform per subject: the lower pi-share is a structural zero, the rest
    # is rescaled and inverted through the Poisson cdf.
    structural = u < pi
    v = np.where(structural, 0.0, (u - pi) / np.where(structural, 1.0, 1.0 - pi))
    counts = stats.poisson.ppf(np.clip(v, 0.0, np.nextafter(1.0, 0.0)), mu)
    return np.where(structural, 0.0, counts)


def generate(spec: GeneratorSpec, seed) -> PanelDataset:
    """One simulated panel with ``spec.n`` subjects and ``spec.T`` times."""
    d = simulate(spec, spec.n, seed)
    ids = tuple(str(i + 1) for i in range(spec.n))
    return PanelDataset(ids, ("V",), d["V"][:, None], d["A"], d["M"], d["Y"], C1=d["C"],
                        meta={"generator": spec.to_dict()})


def true_ace_curve(spec: GeneratorSpec, n_mc: int = 1_000_000, seed=0,
                   profiles: tuple[ExposureProfile, ExposureProfile] | None = None,
                   chunk: int = 250_000) -> tuple[np.ndarray, np.ndarray]:
    """Monte Carlo ``E[Y_a(t) - Y_a'(t)]`` for every ``t`` and its MC standard error.

    Both arms share the same baseline draws and noise (common random numbers).
    """
    if n_mc < 1000:
        raise ValueError("n_mc too small for a truth oracle")
    if profiles is None:
        profiles = (ExposureProfile.constant(1, spec.T), ExposureProfile.constant(0, spec.T))
    s1 = np.zeros(spec.T)
    s2 = np.zeros(spec.T)
    done = 0
    k = 0
    while done < n_mc:
        m = min(chunk, n_mc - done)
        a = simulate(spec, m, child(seed, TRUTH, k), profiles[0])["Y"]
        b = simulate(spec, m, child(seed, TRUTH, k), profiles[1])["Y"]
        d = a - b
        s1 += d.sum(axis=0)
        s2 += (d * d).sum(axis=0)
        done += m
        k += 1
    mean = s1 / n_mc
    var = np.maximum(s2 / n_mc - mean**2, 0.0) * n_mc / (n_mc - 1)
    return mean, np.sqrt(var / n_mc)


def true_ace(spec: GeneratorSpec, t: int, n_mc: int = 1_000_000, seed=0) -> float:
    """Monte Carlo true ACE at time ``t`` (1-based), all-ones versus all-zeros."""
    if n_mc < 100_000:
        raise ValueError("n_mc must be at least 1e5")
    if not 1 <= t <= spec.T:
        raise ValueError(f"t={t} outside 1..{spec.T}")
    return float(true_ace_curve(spec, n_mc, seed)[0][t - 1])


# --------------------------------------------------------------------------- studies

PRESETS = {
    "desk": {"n_sims": 100, "n": 500, "B": 30},
    "paper": {"n_sims": 500, "n": 1000, "B": 50},
}
# Bootstrap replicates used by the table reproductions: lag-one histories with
# one set of coefficients shared by every t > 1, matching the generators.
TABLE_STRATEGY = {"history": "lag1", "shared": True, "draws": "plugin", "impute_on": "original"}
BART_DESK = {"n_trees": 50, "n_burn": 200, "n_keep": 10}
MAX_SIM_FAIL = 0.05
STUDY_FIELDS = ("t", "true_ace", "bias", "rmse", "coverage", "ail", "mc_se", "n_ok")


def table_config(family: str = "mlr", preset: str = "desk", estimator: str = "sequential", **changes):
    """Estimator configuration used for the table reproductions."""
    from .estimators import EstimatorConfig

    if preset not in PRESETS:
        raise ValueError(f"preset must be one of {sorted(PRESETS)}")
    hp = dict(BART_DESK) if family == "bart" else {}
    base = dict(estimator=estimator, family=family, hyperparameters=hp, B=PRESETS[preset]["B"],
                strategy=TABLE_STRATEGY)
    base.update(changes)
    return EstimatorConfig.from_dict(base)


@dataclass(frozen=True)
class StudyResult:
    """Operating characteristics per time plus run metadata."""

    true_ace: np.ndarray
    bias: np.ndarray
    rmse: np.ndarray
    coverage: np.ndarray
    ail: np.ndarray
    mc_se: np.ndarray  # Monte Carlo SE of the bias
    n_ok: int
    failures: tuple
    meta: dict

    def rows(self) -> list[dict]:
        return [
            {"t": t + 1, "true_ace": float(self.true_ace[t]), "bias": float(self.bias[t]),
             "rmse": float(self.rmse[t]), "coverage": float(self.coverage[t]), "ail": float(self.ail[t]),
             "mc_se": float(self.mc_se[t]), "n_ok": self.n_ok}
            for t in range(len(self.bias))
        ]

    def write(self, path) -> tuple[Path, Path]:
        """CSV with one row per time and a JSON sidecar ``<path>.json``."""
        path = Path(path)
        with open(path, "w", newline="") as fh:
            w = csv.DictWriter(fh, fieldnames=STUDY_FIELDS, lineterminator="\n")
            w.writeheader()
            for row in self.rows():
                w.writerow({k: (f"{v:.10g}" if isinstance(v, float) else v) for k, v in row.items()})
        side = path.with_suffix(path.suffix + ".json")
        side.write_text(json.dumps({**self.meta, "failures": list(self.failures)}, indent=2, sort_keys=True) + "\n")
        return path, side


def _one_simulation(args):
    spec, config, seed, k = args
    data = generate(spec, child(seed, DATA, k))
    return config.run(data, child(seed, ESTIMATE, k))


def _guarded_sim(args):
    try:
        return _one_simulation(args)
    except (CfImputeError, ValueError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return exc


def run_study(spec: GeneratorSpec, config, n_sims: int, seed=0, threads: int = 1, n_mc: int = 1_000_000,
              truth: np.ndarray | None = None, progress: Callable[[int, int], None] | None = None) -> StudyResult:
    """Simulate ``n_sims`` data sets, estimate and pool on each, and summarise against the truth.

    Simulation ``k`` draws data from ``child(seed, DATA, k)`` and runs the
    estimator with ``child(seed, ESTIMATE, k)``. The study aborts when more
    than 5% of simulations fail.
    """
    from .estimators import parse_profiles

    if n_sims < 2:
        raise ValueError("n_sims must be at least 2")
    H = spec.T if config.horizon is None else int(config.horizon)
    profiles = parse_profiles(config.profiles, H)
    if truth is None:
        truth = true_ace_curve(spec, n_mc, seed, profiles=_pad(profiles, spec.T))[0][:H]
    truth = np.asarray(truth, dtype=float)[:H]
    payloads = [(spec, config, seed, k) for k in range(n_sims)]
    results = _map(_guarded_sim, payloads, threads, progress)
    failures = [(k, f"{type(r).__name__}: {r}") for k, r in enumerate(results) if isinstance(r, Exception)]
    for k, msg in failures:
        log.warning("simulation %d failed: %s", k, msg)
    if len(failures) > MAX_SIM_FAIL * n_sims:
        raise ReplicateError(f"{len(failures)} of {n_sims} simulations failed; first: {failures[0][1]}")
    ok = [r for r in results if not isinstance(r, Exception)]
    est = np.array([r.estimate for r in ok])
    lo = np.array([r.ci_lo for r in ok])
    hi = np.array([r.ci_hi for r in ok])
    err = est - truth
    meta = {
        "generator": spec.to_dict(), "estimator": config.to_dict(), "n_sims": n_sims, "seed": _seed_repr(seed),
        "n_mc": n_mc, "reconstruction": spec.count_outcome,
    }
    return StudyResult(
        truth, err.mean(axis=0), np.sqrt((err**2).mean(axis=0)), ((lo <= truth) & (truth <= hi)).mean(axis=0),
        (hi - lo).mean(axis=0), err.std(axis=0, ddof=1) / math.sqrt(len(ok)), len(ok), tuple(failures), meta,
    )


def _pad(profiles, T):
    # The truth oracle simulates the full generator horizon; pad with the last value.
    out = []
    for p in profiles:
        v = tuple(p.values) + (p.values[-1],) * (T - len(p))
        out.append(ExposureProfile(v))
    return tuple(out)


def _seed_repr(seed):
    return seed if isinstance(seed, int) else str(seed)


def _map(fn, payloads, threads, progress=None):
    out = []
    if threads and threads > 1:
        from concurrent.futures import ProcessPoolExecutor

        with ProcessPoolExecutor(max_workers=threads) as pool:
            for i, r in enumerate(pool.map(fn, payloads)):
                out.append(r)
                if progress:
                    progress(i + 1, len(payloads))
    else:
        for i, p in enumerate(payloads):
            out.append(fn(p))
            if progress:
                progress(i + 1, len(payloads))
    return out


def zip_check(seed=0, n_sims: int = 100, n: int = 500, B: int = 30, threads: int = 1,
              n_mc: int = 1_000_000, overrides: Mapping | None = None) -> tuple[StudyResult, np.ndarray]:
    """Study of the zip family on the count-outcome generator.

    Returns the study and a per-time flag ``|bias| < 3 MC SE``.
    """
    spec = GeneratorSpec("zip_check", n=n, overrides=dict(overrides or {}))
    res = run_study(spec, table_config("zip", B=B), n_sims, seed, threads, n_mc)
    return res, np.abs(res.bias) < 3 * res.mc_se
