"""Compiled vs pure-Python kernels: timing and output agreement.

    python3 benchmarks/bench_kernels.py [--paths 20000] [--repeat 3]

Both backends are fed identical inputs; the script reports the best of
``--repeat`` wall times and checks that the outputs are identical.
"""

import argparse
import time

import numpy as np

from difflab import _fallback, ctmc
from difflab.categorical import NoiseDistribution
from difflab.schedule import NoiseSchedule

try:
    from difflab import _kernels
except ImportError:  # extension not built
    _kernels = None


def thinning_inputs(n_paths, d=8, seed=0):
    rate = ctmc.interpolation_rate(NoiseSchedule("cosine"), NoiseDistribution.uniform(6))
    bound = float(np.max(-np.diag(rate.M)))
    end = float(rate.clock(1.0))
    per = [ctmc._draw_candidates(ctmc.path_rng(seed, i), bound, d, end) for i in range(n_paths)]
    counts = np.array([len(p[0]) for p in per], dtype=np.int64)
    ptr = np.concatenate([[0], np.cumsum(counts)]).astype(np.int64)
    coords = np.concatenate([p[1] for p in per]).astype(np.int64)
    thresh = np.concatenate([p[2] for p in per])
    dest = np.concatenate([p[3] for p in per])
    states = np.zeros((n_paths, d), dtype=np.int64)
    return states, ptr, coords, thresh, dest, np.ones(len(coords)), np.ascontiguousarray(rate.M)


def best_of(fn, repeat):
    times = []
    out = None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--paths", type=int, default=20000)
    ap.add_argument("--rows", type=int, default=200000)
    ap.add_argument("--repeat", type=int, default=3)
    args = ap.parse_args()
    if _kernels is None:
        print("compiled extension not available; build with `pip install -e . --no-build-isolation`")
        return 1

    inputs = thinning_inputs(args.paths)
    print(f"thin_walk: {args.paths} paths, {len(inputs[2])} candidate events")
    rows = []
    for name, mod in (("python", _fallback), ("compiled", _kernels)):
        t, (acc, sym) = best_of(lambda m=mod: m.thin_walk(inputs[0].copy(), *inputs[1:]), args.repeat)
        rows.append((name, t, np.asarray(acc), np.asarray(sym)))
    same = all(np.array_equal(rows[0][k], rows[1][k]) for k in (2, 3))
    for name, t, _, _ in rows:
        print(f"  {name:9s} {t * 1e3:9.1f} ms")
    print(f"  speedup {rows[0][1] / rows[1][1]:.1f}x, identical output: {same}")

    rng = np.random.default_rng(0)
    P = rng.random((args.rows, 7))
    P /= P.sum(axis=1, keepdims=True)
    u = rng.random(args.rows)
    print(f"sample_rows: {args.rows} rows of 7 categories")
    res = []
    for name, mod in (("python", _fallback), ("compiled", _kernels)):
        t, out = best_of(lambda m=mod: np.asarray(m.sample_rows(P, u)), args.repeat)
        res.append((name, t, out))
        print(f"  {name:9s} {t * 1e3:9.1f} ms")
    print(f"  speedup {res[0][1] / res[1][1]:.1f}x, identical output: {np.array_equal(res[0][2], res[1][2])}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
