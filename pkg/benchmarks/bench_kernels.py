"""Compare the compiled tree kernels with the numpy reference.

Usage: python3 benchmarks/bench_kernels.py [--n 4538] [--trees 5] [--json out.json]

Both backends get identical inputs; outputs are checked for bit equality
before timings are reported.
"""

from __future__ import annotations

import argparse
import json
import time

import numpy as np

from prognostic._kernels import load_backend
from prognostic.boost import cox_grad_hess
from prognostic.features import BinMapper, EncoderSpec, encode_cohort
from prognostic.forest import tree_streams
from prognostic.synth import GeneratorConfig, generate_synthetic


def setup(n, seed=0):
    c = generate_synthetic(GeneratorConfig(n=n), seed).cohort
    X = encode_cohort(c, EncoderSpec.fit(c))
    bins = BinMapper.fit(X, 32)
    codes = np.ascontiguousarray(bins.transform(X))
    nbins = np.array([len(e) for e in bins.edges], dtype=np.int32)
    times, tidx = np.unique(c.time, return_inverse=True)
    g, h = cox_grad_hess(np.zeros(n), c.time, c.event.astype(float))
    return codes, nbins, tidx.astype(np.int64), c.event.astype(np.int64), g, h


def _time(fn, repeat):
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def _same(a, b):
    return all(np.array_equal(np.asarray(a[k]), np.asarray(b[k])) for k in a)


def run(n=4538, trees=5, repeat=3):
    codes, nbins, tidx, event, g, h = setup(n)
    p = codes.shape[1]
    results = {}
    for name in ("cython", "python"):
        k = load_backend(name)

        def surv():
            out = []
            for i in range(trees):
                boot, gs = tree_streams(0, i, n)
                rows = boot[np.argsort(tidx[boot], kind="stable")]
                out.append(k.grow_survival_tree(codes, nbins, rows, tidx, event, 3, 15, 0, gs))
            return out

        def boost():
            return [k.grow_boost_tree(codes, nbins, np.arange(n), g, h, np.arange(p, dtype=np.int32),
                                      5, 0.1, 1.0, 0.1) for _ in range(trees)]

        ts, st = _time(surv, repeat)
        tb, bt = _time(boost, repeat)
        tr = st[0]
        ta, ap = _time(lambda: k.apply_trees(codes, tr["feature"], tr["cut"], tr["missing_left"],
                                             tr["left"], tr["right"], np.zeros(1, dtype=np.int64)), repeat)
        results[name] = {"survival_tree_s": ts / trees, "boost_tree_s": tb / trees, "apply_s": ta,
                         "_out": (st, bt, ap)}
    c, py = results["cython"].pop("_out"), results["python"].pop("_out")
    identical = (all(_same(a, b) for a, b in zip(c[0], py[0])) and all(_same(a, b) for a, b in zip(c[1], py[1]))
                 and np.array_equal(c[2], py[2]))
    speedup = {k: results["python"][k] / results["cython"][k] for k in results["cython"]}
    return {"n": n, "features": p, "trees": trees, "identical": bool(identical), "seconds": results,
            "speedup": speedup}


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=4538)
    ap.add_argument("--trees", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=3)
    ap.add_argument("--json", help="Also write the result here.")
    args = ap.parse_args()
    r = run(args.n, args.trees, args.repeat)
    print(f"n={r['n']} features={r['features']} outputs identical: {r['identical']}")
    print(f"{'kernel':<18}{'cython (s)':>14}{'python (s)':>14}{'speedup':>10}")
    for k in r["speedup"]:
        print(f"{k:<18}{r['seconds']['cython'][k]:>14.5f}{r['seconds']['python'][k]:>14.5f}{r['speedup'][k]:>9.1f}x")
    if args.json:
        with open(args.json, "w") as fh:
            json.dump(r, fh, indent=1)


if __name__ == "__main__":
    main()
