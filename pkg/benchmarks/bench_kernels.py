"""Time the BART sweep under the compiled and pure-Python kernels.

    python benchmarks/bench_kernels.py [--n 500 2000] [--trees 50] [--sweeps 40]

Both backends are fed the same data and seed; the script also confirms that
they produce identical predictions.
"""
import argparse
import time

import numpy as np

from cfimpute import kernels
from cfimpute.kernels import load_backend
from cfimpute.models import ModelSpec, fit


def run(backend, X, y, trees, sweeps):
    impl = load_backend(backend)
    kernels.sweep, kernels.predict = impl.sweep, impl.predict
    spec = ModelSpec("bart", {"n_trees": trees, "n_burn": sweeps - 1, "n_keep": 1})
    t0 = time.perf_counter()
    model = fit(spec, X, y, seed=1)
    secs = time.perf_counter() - t0
    return secs, model.mean(X)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, nargs="+", default=[500, 2000])
    ap.add_argument("--p", type=int, default=10)
    ap.add_argument("--trees", type=int, default=50)
    ap.add_argument("--sweeps", type=int, default=40)
    args = ap.parse_args()

    backends = ["python"]
    try:
        load_backend("compiled")
        backends.insert(0, "compiled")
    except ImportError:
        print("compiled extension not available; timing the python kernel only")

    rng = np.random.default_rng(0)
    print(f"{'n':>6} {'backend':>9} {'seconds':>9} {'us/tree-update':>15} {'speedup':>8}")
    for n in args.n:
        X = rng.standard_normal((n, args.p))
        y = X[:, 0] + np.sin(2 * X[:, 1]) + rng.standard_normal(n)
        results = {b: run(b, X, y, args.trees, args.sweeps) for b in backends}
        base = results["python"][0]
        for b, (secs, _) in results.items():
            per = secs / (args.trees * args.sweeps) * 1e6
            print(f"{n:>6} {b:>9} {secs:>9.3f} {per:>15.1f} {base / secs:>7.1f}x")
        if len(results) == 2:
            same = np.array_equal(results["compiled"][1], results["python"][1])
            print(f"{'':>6} identical predictions: {same}")


if __name__ == "__main__":
    main()
