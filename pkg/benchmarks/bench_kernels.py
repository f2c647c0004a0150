"""Compare the compiled and pure-Python kernel backends.

Run with ``python3 benchmarks/bench_kernels.py``; prints one line per kernel
with the median wall time of each backend and the speedup.  Both backends
are checked to agree before timing.
"""
from __future__ import annotations

import argparse
import statistics
import time

import numpy as np

from optclust import kernels
from optclust.core import two_block_labels
from optclust.posterior import PartitionScorer
from optclust.simgen import generate_instance, mcar_mask, standard_model


def _median_time(fn, repeat: int) -> float:
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t0)
    return statistics.median(times)


def _cases(n: int, seed: int):
    rng = np.random.default_rng(seed)
    model = standard_model("gaussian_mean")
    S, _ = generate_instance(model, n // 2, n - n // 2, rng)
    S = mcar_mask(S, 0.2, rng)
    scorer = PartitionScorer(S, model)
    st = scorer._stats[0][0]
    rows = two_block_labels(n, (n // 2, n - n // 2))
    members = np.ascontiguousarray(rows == 0, dtype=np.uint8)
    w = rng.dirichlet(np.ones(rows.shape[0]))
    cand = kernels.pack_labels(two_block_labels(n)[: 4096])
    ref = kernels.pack_labels(rows)
    x = rng.standard_normal(1 << n)
    return {
        "gaussian_subset_logml": lambda b: kernels.gaussian_subset_logml(members, *st[1:], backend=b),
        "cost_sums": lambda b: kernels.cost_sums(cand, ref, w, n, backend=b),
        "argmin_cost": lambda b: kernels.argmin_cost(cand, ref, w, n, backend=b)[1],
        "fwht": lambda b: kernels.fwht(x, backend=b),
    }


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=16, help="points per instance")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    try:
        kernels.get_backend("compiled")
    except ImportError:
        print("compiled backend unavailable; build the extension first")
        return 1
    compiled, python = "compiled", "python"
    print(f"n={args.n}, median of {args.repeat} runs")
    print(f"{'kernel':<24}{'compiled [s]':>14}{'python [s]':>14}{'speedup':>10}")
    for name, fn in _cases(args.n, args.seed).items():
        a, b = np.asarray(fn(compiled)), np.asarray(fn(python))
        if not np.allclose(a, b, rtol=1e-9, atol=1e-9):
            raise SystemExit(f"{name}: backends disagree")
        tc = _median_time(lambda: fn(compiled), args.repeat)
        tp = _median_time(lambda: fn(python), args.repeat)
        print(f"{name:<24}{tc:>14.5f}{tp:>14.5f}{tp / tc:>10.1f}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
