#!/usr/bin/env python3
"""Benchmark the numba kernel lane against the pure-Python fallback.

Covers the two hot paths: the fuzzy-match window search that dominates
citation grounding, and density-cluster labeling for deduplication. Both
lanes are imported directly, so this runs regardless of DOCBENCH_NO_NUMBA.

Usage: python benchmarks/bench_kernels.py [--repeats N]
"""

from __future__ import annotations

import argparse
import random
import time

import numpy as np

from docbench._kernels import pure

try:
    from docbench._kernels import accel
except ImportError:
    accel = None

WORDS = (
    "ridge basin ferry dish quartz survey panel wind tern mica channel "
    "plateau receiver archive sample terrace vessel crossing timetable"
).split()


def _text(rng: random.Random, n_words: int) -> str:
    return " ".join(rng.choice(WORDS) for _ in range(n_words))


def build_grounding_workload(rng: random.Random, n_cases: int = 24):
    # exact quotes and mangled quotes, the two shapes real citations take;
    # a fully unrelated citation makes the exact search quadratic and is
    # pathological for the pure lane, so it is not part of the benchmark
    cases = []
    for _ in range(n_cases):
        source = _text(rng, 80)
        words = source.split()
        lo = rng.randrange(0, len(words) - 18)
        span = words[lo : lo + rng.randint(8, 14)]
        if rng.random() < 0.5:
            for i in range(0, len(span), 3):
                span[i] = rng.choice(WORDS)
        cases.append((" ".join(span), source))
    return cases


def build_clustering_workload(rng: np.random.Generator, n_points: int = 1200):
    base = rng.normal(size=(n_points // 6, 16))
    rows = [
        base[int(rng.integers(len(base)))] + rng.normal(scale=float(rng.choice([0.02, 0.8])), size=16)
        for _ in range(n_points)
    ]
    vectors = np.array(rows)
    vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
    sim = vectors @ vectors.T
    adjacency = sim > 0.9
    np.fill_diagonal(adjacency, True)
    core = adjacency.sum(axis=1) >= 2
    return adjacency, core


def time_fn(fn, repeats: int) -> float:
    best = float("inf")
    for _ in range(repeats):
        started = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - started)
    return best


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=2)
    args = parser.parse_args()

    grounding = build_grounding_workload(random.Random(1))
    adjacency, core = build_clustering_workload(np.random.default_rng(2))

    benches = {
        "partial-ratio window search (24 citations, 0.5kB sources)": (
            lambda lane: [lane.best_window_score(c, s) for c, s in grounding]
        ),
        "density-cluster labeling (1200 points)": (
            lambda lane: lane.dbscan_labels(adjacency, core)
        ),
    }

    if accel is not None:
        # trigger JIT compilation outside the timed region
        accel.best_window_score("warm", "warm up")
        accel.dbscan_labels(adjacency[:4, :4], core[:4])

    print(f"{'benchmark':<58} {'pure':>10} {'accel':>10} {'speedup':>9}")
    print("-" * 90)
    for name, runner in benches.items():
        pure_result = runner(pure)
        pure_time = time_fn(lambda: runner(pure), args.repeats)
        if accel is None:
            print(f"{name:<58} {pure_time*1000:>8.1f}ms {'n/a':>10} {'n/a':>9}")
            continue
        accel_result = runner(accel)
        accel_time = time_fn(lambda: runner(accel), args.repeats)
        if isinstance(pure_result, list):
            assert pure_result == accel_result, "lane results diverged"
        else:
            assert np.array_equal(pure_result, accel_result), "lane results diverged"
        print(
            f"{name:<58} {pure_time*1000:>8.1f}ms {accel_time*1000:>8.1f}ms {pure_time/accel_time:>8.1f}x"
        )
    if accel is None:
        print("\nnumba unavailable; only the pure lane was timed")


if __name__ == "__main__":
    main()
