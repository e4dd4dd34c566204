"""Benchmark the compiled kernels against the pure-numpy fallback.

Times the two hot loops on workloads matching a K=5 exhaustive association
solve: the damped Gauss-Newton batch over all 625 per-target range problems,
and the minimum-cost scan over the 120^3 permutation triples.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

import argparse
import itertools
import math
import time

import numpy as np

from irsloc._kernels import _ref

try:
    from irsloc._kernels import _core
except ImportError:
    _core = None


def gn_workload(k=5, seed=0):
    rng = np.random.default_rng(seed)
    anchors = np.array([[-100.0, 0.0], [100.0, 0.0], [0.0, 40.0]])
    p = k**4
    true_pos = rng.uniform(-40.0, 80.0, size=(p, 2))
    centers = anchors[[0, 1, 2, 2]]
    meas = np.linalg.norm(true_pos[:, None, :] - centers[None, :, :], axis=2)
    meas += 0.3 * rng.standard_normal(meas.shape)
    weights = rng.uniform(2.0, 10.0, size=(p, 4))
    starts = np.stack(
        [
            true_pos + rng.uniform(-15, 15, size=(p, 2)),
            true_pos * [1, -1],
            np.broadcast_to(anchors[2], (p, 2)),
        ],
        axis=1,
    )
    return anchors, meas, weights, starts


def scan_workload(k=5, seed=1):
    rng = np.random.default_rng(seed)
    table = rng.standard_normal((k,) * 4) ** 2
    perms = np.array(list(itertools.permutations(range(k))), dtype=np.int64)
    return table, perms


def timeit(fn, args, repeats):
    best = np.inf
    out = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        out = fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best, out


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=5)
    parser.add_argument("--k", type=int, default=5)
    args = parser.parse_args()

    gn_args = gn_workload(args.k)
    scan_args = scan_workload(args.k)

    print(f"workload: K={args.k} -> {args.k ** 4} GN problems, "
          f"{math.factorial(args.k) ** 3:,} scan candidates")
    print(f"{'kernel':<22}{'backend':<10}{'best time':>12}")
    rows = {}
    for name, fn_pair, wl in (
        ("gn_localize_batch", (_ref.gn_localize_batch,
                               _core.gn_localize_batch if _core else None), gn_args),
        ("association_scan", (_ref.association_scan,
                              _core.association_scan if _core else None), scan_args),
    ):
        t_ref, out_ref = timeit(fn_pair[0], wl, args.repeats)
        print(f"{name:<22}{'python':<10}{t_ref * 1e3:>10.2f} ms")
        rows[name] = [t_ref]
        if fn_pair[1] is not None:
            t_nat, out_nat = timeit(fn_pair[1], wl, args.repeats)
            print(f"{name:<22}{'native':<10}{t_nat * 1e3:>10.2f} ms")
            rows[name].append(t_nat)
            if name == "gn_localize_batch":
                assert np.allclose(out_ref[1], out_nat[1], rtol=1e-9)
            else:
                assert out_ref[1:] == out_nat[1:]

    if _core is None:
        print("\ncompiled backend not built; only the fallback was timed")
    else:
        for name, (t_ref, t_nat) in rows.items():
            print(f"{name}: native speedup {t_ref / t_nat:.1f}x")


if __name__ == "__main__":
    main()
