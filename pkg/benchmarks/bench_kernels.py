"""Compare the compiled kernels with their pure-Python twins.

Run ``python3 benchmarks/bench_kernels.py [--level N] [--repeat K]``. Each
kernel runs on the distance matrices of two consecutive scaled gasket levels;
the script checks that both backends agree bit for bit and prints the best
wall time of each.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

import hkelab
from hkelab import _core_py
from hkelab._backend import as_index, as_matrix
from hkelab.cubes import build_approx_isometry
from hkelab.metric import geodesic_space
from hkelab.models import GASKET_ALPHA, GASKET_BETA, gasket_cable, rescale

try:
    from hkelab import _core as _compiled
except ImportError:
    _compiled = None


def best_time(fn, repeat: int) -> tuple[float, object]:
    best, out = np.inf, None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        best = min(best, time.perf_counter() - t0)
    return best, out


def same(a, b) -> bool:
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return bool(np.array_equal(np.asarray(a), np.asarray(b)))


def cases(level: int):
    spaces = [geodesic_space(rescale(gasket_cable(n), 2, GASKET_ALPHA, GASKET_BETA, n))
              for n in (level, level + 1)]
    da, db = as_matrix(spaces[0].dist), as_matrix(spaces[1].dist)
    rng = np.random.default_rng(0)
    prio = as_index(rng.permutation(len(db)))
    f = as_index(rng.integers(0, len(db), len(da)))
    ia = as_index(np.arange(len(da)))
    anchors = as_index(np.arange(0, len(da), 3))
    small = as_matrix(da[:120, :120])

    def search(mod):
        g = f.copy()
        return mod.local_search(da, db, g, 0, 20), g

    return spaces, {
        "farthest_point_order": lambda m: m.farthest_point_order(db, 0, prio),
        "pair_distortion": lambda m: m.pair_distortion(da, db, ia, f),
        "assignment_costs": lambda m: m.assignment_costs(as_matrix(da[5]), db, f, anchors),
        "local_search": search,
        "triangle_violation": lambda m: m.triangle_violation(small),
    }


def main(argv=None) -> None:
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--level", type=int, default=4, help="coarser gasket level (default 4)")
    p.add_argument("--repeat", type=int, default=3)
    args = p.parse_args(argv)
    if _compiled is None:
        raise SystemExit("compiled kernels are not built; run `pip install -e . --no-build-isolation`")
    spaces, kernels = cases(args.level)
    print(f"gasket levels {args.level}->{args.level + 1}: {spaces[0].size} -> {spaces[1].size} points")
    print(f"{'kernel':22s} {'python [s]':>12s} {'compiled [s]':>13s} {'speedup':>8s}  identical")
    for name, fn in kernels.items():
        tp, outp = best_time(lambda: fn(_core_py), args.repeat)
        tc, outc = best_time(lambda: fn(_compiled), args.repeat)
        print(f"{name:22s} {tp:12.4f} {tc:13.4f} {tp / tc:8.1f}  {same(outp, outc)}")
    for backend in ("python", "compiled"):
        hkelab.set_backend(backend)
        t, iso = best_time(lambda: build_approx_isometry(*spaces), 1)
        print(f"build_approx_isometry [{backend}] {t:.3f} s, eps {iso.eps!r}")


if __name__ == "__main__":
    main()
