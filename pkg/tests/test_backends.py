import numpy as np
import pytest

from cfimpute import kernels
from cfimpute.kernels import load_backend
from cfimpute.models import ModelSpec, fit
from cfimpute.simlab import GeneratorSpec, generate

try:
    load_backend("compiled")
    HAVE_COMPILED = True
except ImportError:
    HAVE_COMPILED = False


def _fit_with(monkeypatch, name, X, y):
    impl = load_backend(name)
    monkeypatch.setattr(kernels, "sweep", impl.sweep)
    monkeypatch.setattr(kernels, "predict", impl.predict)
    m = fit(ModelSpec("bart", {"n_trees": 20, "n_burn": 30, "n_keep": 10}), X, y, seed=4)
    return m, m.mean(X)


@pytest.mark.skipif(not HAVE_COMPILED, reason="compiled extension not built")
def test_backends_give_identical_chains(monkeypatch):
    d = generate(GeneratorSpec("two", n=300), 0)
    X = np.column_stack([d.M[:, 0], d.A[:, 0], d.V[:, 0]])
    mc, pc = _fit_with(monkeypatch, "compiled", X, d.Y[:, 0])
    mp, pp = _fit_with(monkeypatch, "python", X, d.Y[:, 0])
    assert mc.accept_rate == mp.accept_rate
    np.testing.assert_array_equal(pc, pp)


def test_unknown_backend():
    with pytest.raises(ValueError, match="unknown kernel backend"):
        load_backend("gpu")


def test_backend_is_named():
    assert kernels.BACKEND in kernels.BACKENDS
