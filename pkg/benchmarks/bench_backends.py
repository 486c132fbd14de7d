"""Timing comparison of the numpy and compiled network kernels.

Measures the shapes the trainers actually hit: single-observation policy
evaluation during rollout, and minibatch forward/backward/optimizer
cycles during updates.  Run as:

    python benchmarks/bench_backends.py [--repeats N]
"""

from __future__ import annotations

import argparse
import time

import numpy as np

from brakesim.nn import _kernels_py as py_kernels

try:
    from brakesim.nn import _kernels_cy as cy_kernels
except ImportError:
    cy_kernels = None

IDENT, TANH = py_kernels.IDENTITY, py_kernels.TANH


def make_case(rng, sizes, batch):
    ws = [
        rng.normal(size=(sizes[i + 1], sizes[i])) / np.sqrt(sizes[i])
        for i in range(len(sizes) - 1)
    ]
    bs = [rng.normal(size=sizes[i + 1]) * 0.1 for i in range(len(sizes) - 1)]
    acts = [TANH] * (len(sizes) - 2) + [IDENT]
    x = rng.normal(size=(batch, sizes[0]))
    gy = rng.normal(size=(batch, sizes[-1]))
    return ws, bs, acts, x, gy


def time_op(fn, repeats):
    fn()  # warm caches and any lazy setup
    start = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - start) / repeats


def bench_forward(kernels, case, repeats):
    ws, bs, acts, x, _ = case
    return time_op(lambda: kernels.forward(x, ws, bs, acts), repeats)


def bench_update(kernels, case, repeats):
    ws, bs, acts, x, gy = case
    pres, posts = kernels.forward(x, ws, bs, acts)
    flat = np.concatenate([w.ravel() for w in ws])
    zeros = np.zeros_like(flat)

    def step():
        pres, posts = kernels.forward(x, ws, bs, acts)
        kernels.backward(x, ws, acts, pres, posts, gy)
        kernels.adam_update(flat, flat, zeros, zeros, 1, 1e-3, 0.9, 0.999, 1e-8)

    return time_op(step, repeats)


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeats", type=int, default=200, help="iterations per timing")
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args()

    rng = np.random.default_rng(args.seed)
    cases = [
        ("policy forward, batch 1", "forward", make_case(rng, [7, 256, 256, 256, 1], 1)),
        ("policy update, batch 64", "update", make_case(rng, [7, 256, 256, 256, 1], 64)),
        ("critic update, batch 128", "update", make_case(rng, [8, 256, 128, 1], 128)),
    ]

    backends = [("py", py_kernels)]
    if cy_kernels is not None:
        backends.append(("cy", cy_kernels))
    else:
        print("compiled backend not built; timing numpy reference only")

    print(f"{'case':<28}" + "".join(f"{name + ' (us)':>12}" for name, _ in backends) + "     speedup")
    for label, kind, case in cases:
        bench = bench_forward if kind == "forward" else bench_update
        times = [bench(kernels, case, args.repeats) for _, kernels in backends]
        row = f"{label:<28}" + "".join(f"{t * 1e6:>12.1f}" for t in times)
        if len(times) == 2:
            row += f"{times[0] / times[1]:>11.2f}x"
        print(row)
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
