"""Conditional models with a uniform fit / posterior-predictive draw interface.

>>> import numpy as np
>>> m = fit(ModelSpec("linear"), np.empty((4, 0)), [3.0, 3.0, 3.0, 3.0], seed=0)
>>> predictive_draw(m, np.empty((2, 0)), seed=1)
array([3., 3.])
"""
from ..rng import generator
from .bart import FittedBart, fit_bart
from .base import ALIASES, DEFAULTS, FAMILIES, DesignInfo, FittedModel, ModelSpec, expit
from .linear import FittedLinear, fit_linear
from .logistic import BinaryDraw, FittedLogistic, fit_logistic
from .zip import FittedZip, fit_zip

_FITTERS = {"linear": fit_linear, "logistic": fit_logistic, "zip": fit_zip, "bart": fit_bart}


def fit(spec: ModelSpec, X, y, seed, names=None) -> FittedModel:
    """Fit ``spec`` to ``(X, y)``; hyperparameter defaults are filled and kept on the result."""
    spec = spec.resolved()
    return _FITTERS[spec.family](spec, X, y, generator(seed), names)


DRAW_MODES = ("posterior", "plugin")


def predictive_draw(model: FittedModel, Xnew, seed, parameters: str = "posterior"):
    """One posterior-predictive draw per row of ``Xnew``.

    A single parameter draw is shared by all rows of the call. With
    ``parameters="plugin"`` the point estimate replaces the parameter draw and
    only observation noise is sampled. Logistic models return a
    :class:`BinaryDraw` (probability and sampled label); the others return an
    array.
    """
    if parameters not in DRAW_MODES:
        raise ValueError(f"parameters must be one of {DRAW_MODES}")
    rng = generator(seed)
    return model.draw(Xnew, rng) if parameters == "posterior" else model.plugin_draw(Xnew, rng)


__all__ = [
    "ALIASES", "DEFAULTS", "DRAW_MODES", "FAMILIES", "BinaryDraw", "DesignInfo", "FittedBart", "FittedLinear",
    "FittedLogistic", "FittedModel", "FittedZip", "ModelSpec", "expit", "fit", "predictive_draw",
]
