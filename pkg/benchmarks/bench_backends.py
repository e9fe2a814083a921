"""Benchmark the numba kernels against the pure-numpy fallback.

Each hot kernel is timed on training-shaped inputs with both
implementations in one process (the package-level ESSOIL_BACKEND flag
selects which one the pipeline uses; here both are called explicitly).
Also reports the max absolute difference so backend drift would show up
immediately.

Run:  python benchmarks/bench_backends.py [--train]
"""

import argparse
import time

import numpy as np

from essoil import kernels


def timeit(fn, *args, repeat=200):
    fn(*args)  # warmup / JIT
    best = float("inf")
    for _ in range(5):
        start = time.perf_counter()
        for _ in range(repeat):
            fn(*args)
        best = min(best, (time.perf_counter() - start) / repeat)
    return best


def diff(a, b):
    if isinstance(a, tuple):
        return max(np.abs(x - y).max() for x, y in zip(a, b))
    return np.abs(a - b).max()


def bench_kernels(label, n, f_in, f_out, width, n_mols):
    rng = np.random.default_rng(0)

    x = rng.normal(size=(n, f_in))
    w = rng.normal(size=(3, f_in, f_out))
    b = rng.normal(size=f_out)
    gy = rng.normal(size=(n, f_out))
    bits = (rng.random((n_mols, width)) < 0.1).astype(np.uint8)
    p, g = rng.normal(size=8192), rng.normal(size=8192)
    m, v = np.zeros(8192), np.zeros(8192)

    cases = [
        ("conv1d_forward", kernels.conv1d_forward_numba,
         kernels.conv1d_forward_numpy, (x, w, b)),
        ("conv1d_backward", kernels.conv1d_backward_numba,
         kernels.conv1d_backward_numpy, (x, w, gy)),
        ("pairwise_tanimoto", kernels.pairwise_tanimoto_numba,
         kernels.pairwise_tanimoto_numpy, (bits,)),
        ("adam_update", kernels.adam_update_numba,
         kernels.adam_update_numpy, (p, g, m, v, 1e-3, 0.9, 0.999, 1e-8, 1)),
    ]

    print(f"\n{label}")
    print(f"{'kernel':<20} {'numba':>10} {'numpy':>10} {'speedup':>8} {'max diff':>10}")
    print("-" * 64)
    for name, numba_fn, numpy_fn, args in cases:
        if name == "adam_update":
            # updates are in-place; give each backend its own state
            state_a = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
            state_b = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
            t_numba = timeit(numba_fn, *state_a) if kernels.HAVE_NUMBA else float("nan")
            t_numpy = timeit(numpy_fn, *state_b)
            check_a = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
            check_b = [a.copy() if isinstance(a, np.ndarray) else a for a in args]
            if kernels.HAVE_NUMBA:
                numba_fn(*check_a)
            numpy_fn(*check_b)
            delta = diff(tuple(a for a in check_a if isinstance(a, np.ndarray)),
                         tuple(b for b in check_b if isinstance(b, np.ndarray))) \
                if kernels.HAVE_NUMBA else float("nan")
        else:
            t_numba = timeit(numba_fn, *args) if kernels.HAVE_NUMBA else float("nan")
            t_numpy = timeit(numpy_fn, *args)
            delta = diff(numba_fn(*args), numpy_fn(*args)) \
                if kernels.HAVE_NUMBA else float("nan")
        speedup = t_numpy / t_numba if kernels.HAVE_NUMBA else float("nan")
        print(f"{name:<20} {t_numba * 1e6:>8.1f}us {t_numpy * 1e6:>8.1f}us "
              f"{speedup:>7.2f}x {delta:>10.2e}")


def bench_training():
    from essoil.evaluation import run_cv
    from essoil.models import ModelConfig
    from essoil.synth import make_planted_dataset

    dataset = make_planted_dataset(n_samples=60, n_labels=3, n_bits=64, seed=7)
    print(f"\nend-to-end training epoch cost (backend = {kernels.BACKEND})")
    for arch in ("cnn", "gcn", "gat"):
        cfg = ModelConfig(architecture=arch, loss_design="bce_linear",
                          n_labels=3, hidden_dim=16, layers=2)
        start = time.perf_counter()
        run_cv(dataset, cfg, k=2, seed=0, epochs=10, lr=0.01, n_max=8)
        per_epoch = (time.perf_counter() - start) / (2 * 10)
        print(f"  {arch}: {per_epoch * 1e3:.1f} ms/epoch "
              f"(2 folds x 10 epochs, 60 samples)")


if __name__ == "__main__":
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--train", action="store_true",
                        help="also time a small end-to-end training run "
                             "with the active backend")
    args = parser.parse_args()
    if not kernels.HAVE_NUMBA:
        print("numba not installed: numba columns will be nan")
    bench_kernels("per-sample training shapes (n_max 8, 64-bit fingerprints)",
                  n=8, f_in=65, f_out=16, width=64, n_mols=6)
    bench_kernels("full-width shapes (n_max 64, 2048-bit fingerprints)",
                  n=64, f_in=2049, f_out=64, width=2048, n_mols=48)
    if args.train:
        bench_training()
