"""Time the numba kernels against their pure-numpy fallbacks.

Run as: python benchmarks/bench_kernels.py [repeats]

Shapes mirror the hot paths of training at desk scale: wide-but-short
softmax matrices from the slot attention, a full score matrix for the
log-softmax, an interaction graph's edge sweep, and one pairwise-ranking
epoch. The jit path is warmed up before timing so compilation is excluded.
"""

import sys
import time

import numpy as np

from bundlecraft.kernels import IMPLEMENTATIONS


def bench(fn, args, repeats):
    fn(*[a.copy() if isinstance(a, np.ndarray) else a for a in args])  # warmup
    best = float("inf")
    for _ in range(repeats):
        copies = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
        t0 = time.perf_counter()
        fn(*copies)
        best = min(best, time.perf_counter() - t0)
    return best


def main():
    repeats = int(sys.argv[1]) if len(sys.argv) > 1 else 20
    rng = np.random.default_rng(0)

    slot_logits = rng.normal(size=(20000, 3)).astype(np.float32)
    slot_grad = rng.normal(size=slot_logits.shape).astype(np.float32)
    scores = rng.normal(size=(128, 2000)).astype(np.float32)
    score_grad = rng.normal(size=scores.shape).astype(np.float32)

    n_users, n_items, n_edges, d = 2000, 8000, 120_000, 64
    u_idx = rng.integers(0, n_users, size=n_edges)
    i_idx = rng.integers(0, n_items, size=n_edges)
    coeff = rng.uniform(0.05, 1.0, size=n_edges)
    user = rng.normal(size=(n_users, d))
    item = rng.normal(size=(n_items, d))
    neg = rng.integers(0, n_items, size=n_edges)

    cases = [
        ("softmax_rows 20000x3", "softmax_rows", (slot_logits,)),
        ("softmax_grad 20000x3", "softmax_rows_grad", (slot_logits, slot_grad)),
        ("log_softmax 128x2000", "log_softmax_rows", (scores,)),
        ("log_softmax_grad", "log_softmax_rows_grad", (scores, score_grad)),
        ("propagate 120k edges", "propagate_step", (u_idx, i_idx, coeff, user, item)),
        ("bpr_epoch 120k", "bpr_epoch", (user, item, u_idx, i_idx, neg, 0.05, 1e-4)),
    ]

    names = sorted(IMPLEMENTATIONS)
    print(f"{'kernel':24s} " + " ".join(f"{n:>12s}" for n in names) + f" {'speedup':>9s}")
    for label, key, args in cases:
        times = {}
        for impl_name in names:
            fn = IMPLEMENTATIONS[impl_name][key]
            times[impl_name] = bench(fn, args, repeats)
        row = " ".join(f"{times[n] * 1e3:10.2f}ms" for n in names)
        if "numba" in times and times["numba"] > 0:
            ratio = times["numpy"] / times["numba"]
            print(f"{label:24s} {row} {ratio:8.1f}x")
        else:
            print(f"{label:24s} {row}")


if __name__ == "__main__":
    main()
