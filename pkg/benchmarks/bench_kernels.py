"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat N] [--json]

Both implementations are imported directly, so the environment flag has no
effect here. The first numba call (compilation) is excluded from timings.
"""

import argparse
import json
import timeit

import numpy as np

from grouplatent import _kernels


def _cases(rng):
    B = rng.standard_normal((192, 32))
    lab = rng.integers(0, 2, 192)
    pos = lab[:, None] == lab[None, :]
    np.fill_diagonal(pos, False)
    neg = lab[:, None] != lab[None, :]
    X = rng.standard_normal((5000, 32))
    means = rng.standard_normal((16, 32))
    var = rng.uniform(0.5, 2.0, (16, 32))
    A = rng.standard_normal((400, 64))
    C = rng.standard_normal((300, 64))
    cur = np.full(5000, np.inf)
    return {
        "lifted_loss (n=192, q=32)": ("lifted_loss", (B, pos, neg, 1.0)),
        "diag_log_gauss (n=5000, M=16, q=32)": ("diag_log_gauss", (X, means, var)),
        "cosine_within (n=400, d=64)": ("cosine_within", (A,)),
        "cosine_between (400x300, d=64)": ("cosine_between", (A, C)),
        "min_sq_dist_update (n=5000, q=32)": ("min_sq_dist_update", (X, X[0].copy(), cur)),
    }


def _time(fn, args, repeat):
    fn(*args)  # warm-up / compile
    number = max(1, int(0.2 / max(timeit.timeit(lambda: fn(*args), number=1), 1e-6)))
    best = min(timeit.repeat(lambda: fn(*args), number=number, repeat=repeat))
    return best / number


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--json", action="store_true")
    args = ap.parse_args()
    rng = np.random.default_rng(0)
    rows = []
    for label, (name, inputs) in _cases(rng).items():
        t_np = _time(getattr(_kernels.numpy_impl, name), inputs, args.repeat)
        t_nb = None
        if _kernels.numba_impl is not None:
            t_nb = _time(getattr(_kernels.numba_impl, name), inputs, args.repeat)
        rows.append({"kernel": label, "numpy_ms": t_np * 1e3, "numba_ms": None if t_nb is None else t_nb * 1e3})
    if args.json:
        print(json.dumps(rows, indent=2))
        return
    print(f"{'kernel':40s} {'numpy ms':>10s} {'numba ms':>10s} {'speedup':>8s}")
    for r in rows:
        nb = r["numba_ms"]
        sp = f"{r['numpy_ms'] / nb:7.1f}x" if nb else "      -"
        print(f"{r['kernel']:40s} {r['numpy_ms']:10.3f} {nb if nb else float('nan'):10.3f} {sp}")
    if _kernels.numba_impl is None:
        print("numba unavailable: only the numpy fallback was timed")


if __name__ == "__main__":
    main()
