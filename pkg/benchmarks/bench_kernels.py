"""Time the compiled and pure-Python CRF kernels on random problems.

    python benchmarks/bench_kernels.py [--labels 15] [--length 40] [--reps 200]
"""
import argparse
import timeit

import numpy as np

from methodtagger import crf


def _problem(k, n, seed):
    rng = np.random.default_rng(seed)
    em = rng.normal(size=(n, k))
    tm = crf.TransitionMatrix(rng.normal(size=(k + 2, k + 2)), crf.structural_mask(k))
    return em, tm


def bench(backend, k, n, reps):
    crf.set_backend(backend)
    em, tm = _problem(k, n, 0)
    gold = [int(i) for i in np.random.default_rng(1).integers(k, size=n)]
    out = {}
    for name, fn in (("log_partition", lambda: crf.log_partition(em, tm)),
                     ("viterbi", lambda: crf.viterbi(em, tm)),
                     ("crf_nll", lambda: crf.crf_nll(em, tm, gold))):
        out[name] = min(timeit.repeat(fn, number=reps, repeat=3)) / reps
    return out


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--labels", type=int, default=15)
    ap.add_argument("--length", type=int, default=40)
    ap.add_argument("--reps", type=int, default=200)
    args = ap.parse_args()
    previous = crf.BACKEND
    results = {b: bench(b, args.labels, args.length, args.reps) for b in crf.available_backends()}
    crf.set_backend(previous)
    print(f"K={args.labels} n={args.length}  (microseconds per call)")
    print(f"{'kernel':<14}" + "".join(f"{b:>12}" for b in results) +
          ("   speedup" if "compiled" in results else ""))
    for name in ("log_partition", "viterbi", "crf_nll"):
        row = f"{name:<14}" + "".join(f"{results[b][name] * 1e6:12.1f}" for b in results)
        if "compiled" in results:
            row += f"{results['python'][name] / results['compiled'][name]:9.1f}x"
        print(row)


if __name__ == "__main__":
    main()
