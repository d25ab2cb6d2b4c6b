"""Time the compiled and numpy kernels, and a full fit under each backend.

    python benchmarks/bench_kernels.py [--cells 200000] [--repeat 20]
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from hjarank import kernels
from hjarank.simulation import TruthSpec, allocate_comparisons, generate_truth, sample_outcomes

FIT_SNIPPET = """
import time, numpy as np
from hjarank import kernels
from hjarank.simulation import TruthSpec, allocate_comparisons, generate_truth, sample_outcomes
from hjarank.solver import SolverConfig, fit
rng = np.random.default_rng(0)
truth = generate_truth(TruthSpec(20, 10, 2, 1.0), rng)
counts = sample_outcomes(truth, allocate_comparisons(40000, 10, 20, rng), rng)
t0 = time.perf_counter()
res = fit(counts, SolverConfig(rank=2, max_iters=60))
print(kernels.BACKEND, time.perf_counter() - t0, res.iterations)
"""


def _inputs(n_cells, rng):
    K, N, r = 30, 60, 2
    gamma, mu = rng.standard_normal(K), rng.standard_normal(N)
    u, v = rng.standard_normal((K, r)), rng.standard_normal((N, r))
    k = rng.integers(0, K, n_cells).astype(np.intp)
    i = rng.integers(0, N - 1, n_cells).astype(np.intp)
    j = (i + 1 + rng.integers(0, N - 1 - i)).astype(np.intp)
    n = rng.integers(1, 10, n_cells).astype(float)
    yb = rng.uniform(0, 1, n_cells)
    return dict(gamma=gamma, mu=mu, u=u, v=v, k=k, i=i, j=j, n=n, yb=yb, K=K, N=N)


def bench_backend(mod, a, repeat):
    eta = mod.linear_predictor(a["gamma"], a["mu"], a["u"], a["v"], a["k"], a["i"], a["j"])
    _, resid, w = mod.logistic_terms(eta, a["n"], a["yb"])
    calls = {
        "linear_predictor": lambda: mod.linear_predictor(a["gamma"], a["mu"], a["u"], a["v"],
                                                         a["k"], a["i"], a["j"]),
        "logistic_terms": lambda: mod.logistic_terms(eta, a["n"], a["yb"]),
        "scatter_gradient": lambda: mod.scatter_gradient(resid, a["gamma"], a["mu"], a["u"],
                                                         a["v"], a["k"], a["i"], a["j"]),
        "item_hessian": lambda: mod.item_hessian(w, a["gamma"], a["u"], a["k"], a["i"], a["j"],
                                                 a["N"]),
        "fisher": lambda: mod.fisher(w, a["gamma"], a["mu"], a["u"], a["v"], a["k"], a["i"],
                                     a["j"]),
    }
    return {name: min(timeit.repeat(fn, number=1, repeat=repeat)) for name, fn in calls.items()}


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--cells", type=int, default=200_000)
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()
    a = _inputs(args.cells, np.random.default_rng(0))

    backends = [("numpy", kernels.python_backend)]
    if kernels.compiled_backend is not None:
        backends.append(("compiled", kernels.compiled_backend))
    else:
        print("compiled extension not built; timing numpy only")
    results = {name: bench_backend(mod, a, args.repeat) for name, mod in backends}

    print(f"kernels on {args.cells} cells (best of {args.repeat}, ms)")
    print(f"{'kernel':<18}" + "".join(f"{name:>12}" for name, _ in backends) + "     speedup")
    for kern in results["numpy"]:
        row = [results[name][kern] * 1e3 for name, _ in backends]
        speed = f"{row[0] / row[1]:10.1f}x" if len(row) > 1 else ""
        print(f"{kern:<18}" + "".join(f"{x:12.2f}" for x in row) + speed)

    print("\nfull rank-2 fit, K=10, N=20, 40000 comparisons")
    for flag in ("0", "1"):
        env = {**os.environ, "HJARANK_PURE_PYTHON": flag}
        out = subprocess.run([sys.executable, "-c", FIT_SNIPPET], env=env, capture_output=True,
                             text=True, check=True).stdout.split()
        print(f"  {out[0]:<10} {float(out[1]):8.2f} s  ({out[2]} outer iterations)")


if __name__ == "__main__":
    main()
