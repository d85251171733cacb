"""Time the segmented kernels under each available backend.

    python3 benchmarks/bench_kernels.py [--lists 2000] [--repeat 5]

Lists have 10 items each, matching a training batch of displayed
top-10 lists.
"""
from __future__ import annotations

import argparse
import timeit

import numpy as np

from vecultr import kernels


def make_inputs(n_lists: int, length: int, dim: int, seed: int = 0):
    rng = np.random.default_rng(seed)
    n = n_lists * length
    offsets = np.arange(0, n + 1, length)
    return {
        "scores": rng.normal(size=n),
        "targets": (rng.random(n) < 0.2).astype(np.float64),
        "labels": rng.integers(0, 5, size=n).astype(np.float64),
        "mu": rng.normal(size=(n, dim)),
        "log_var": rng.normal(size=(n, dim)),
        "offsets": offsets,
    }


def cases(x):
    return {
        "softmax_ce": lambda: kernels.softmax_ce(x["scores"], x["targets"], x["offsets"]),
        "base_vectors": lambda: kernels.base_vectors(x["mu"], x["log_var"], x["offsets"]),
        "segment_argsort": lambda: kernels.segment_argsort(x["scores"], x["offsets"]),
        "segment_ndcg@10": lambda: kernels.segment_ndcg(x["scores"], x["labels"], x["offsets"], 10),
    }


def run(n_lists: int = 2000, length: int = 10, dim: int = 5, repeat: int = 5) -> dict:
    x = make_inputs(n_lists, length, dim)
    results = {}
    previous = kernels.backend_name()
    try:
        for backend in kernels.available_backends():
            kernels.use_backend(backend)
            for name, fn in cases(x).items():
                number = 3
                best = min(timeit.repeat(fn, number=number, repeat=repeat)) / number
                results[(name, backend)] = best
    finally:
        kernels.use_backend(previous)
    return results


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--lists", type=int, default=2000)
    ap.add_argument("--length", type=int, default=10)
    ap.add_argument("--dim", type=int, default=5)
    ap.add_argument("--repeat", type=int, default=5)
    args = ap.parse_args()
    res = run(args.lists, args.length, args.dim, args.repeat)
    backends = kernels.available_backends()
    print(f"{args.lists} lists x {args.length} items, d={args.dim}; best of {args.repeat}, ms per call")
    print("kernel".ljust(18) + "".join(b.rjust(12) for b in backends) + ("speedup".rjust(10) if len(backends) > 1 else ""))
    for name in cases(make_inputs(1, 1, 1)):
        row = name.ljust(18) + "".join(f"{res[(name, b)] * 1e3:12.3f}" for b in backends)
        if "compiled" in backends and "python" in backends:
            row += f"{res[(name, 'python')] / res[(name, 'compiled')]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
