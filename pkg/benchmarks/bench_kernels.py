#!/usr/bin/env python3
"""Benchmark the recurrent-scan backends (compiled vs numpy fallback).

Times the forward and backward scan across batch/hidden sizes, plus one
end-to-end training epoch, and prints the speedup table. Usage:

    python benchmarks/bench_kernels.py [--repeats 30]
"""

import argparse
import time

import numpy as np

from losxfer._kernels import available_backends, get_backend
from losxfer.model import Hyperparams, forward_many_to_one, init_model
from losxfer.features import FeatureSpace
from losxfer.training import TrainConfig, train


def time_call(fn, repeats):
    best = float("inf")
    for _ in range(repeats):
        t0 = time.perf_counter()
        fn()
        best = min(best, time.perf_counter() - t0)
    return best


def bench_scans(repeats):
    cases = [(16, 24, 8), (64, 24, 16), (64, 24, 64), (256, 24, 64),
             (128, 24, 128)]
    print(f"{'m':>5} {'T':>3} {'H':>4} | {'numpy fwd':>10} {'cython fwd':>10} "
          f"{'speedup':>7} | {'numpy bwd':>10} {'cython bwd':>10} {'speedup':>7}")
    for m, steps, hidden in cases:
        rng = np.random.default_rng(m + hidden)
        x_proj = rng.normal(size=(m, steps, 4 * hidden))
        limit = np.sqrt(6.0 / (5 * hidden))
        wh = rng.uniform(-limit, limit, size=(hidden, 4 * hidden))
        dhseq = rng.normal(size=(m, steps, hidden))

        rows = {}
        for name in available_backends():
            backend = get_backend(name)
            fwd = time_call(lambda: backend.scan_forward(x_proj, wh), repeats)
            hseq, cseq, gates = backend.scan_forward(x_proj, wh)
            bwd = time_call(lambda: backend.scan_backward(wh, gates, cseq, dhseq),
                            repeats)
            rows[name] = (fwd, bwd)
        nf, nb = rows["numpy"]
        cf, cb = rows.get("cython", (float("nan"), float("nan")))
        print(f"{m:>5} {steps:>3} {hidden:>4} | {nf * 1e3:>9.2f}m {cf * 1e3:>9.2f}m "
              f"{nf / cf:>6.1f}x | {nb * 1e3:>9.2f}m {cb * 1e3:>9.2f}m {nb / cb:>6.1f}x")


def bench_training_epoch():
    rng = np.random.default_rng(0)
    m, n, hidden = 160, 51, 16
    x = rng.normal(size=(m, 24, n))
    y = rng.uniform(1, 9, size=m)
    space = FeatureSpace(names=tuple(f"f{i}" for i in range(n)), domain="bench")
    hyper = Hyperparams(num_layers=1, hidden_units=hidden, learning_rate=3e-3,
                        dropout=0.1, batch_size=16)
    config = TrainConfig(learning_rate=hyper.learning_rate, batch_size=16,
                         max_epochs=5, patience=100)

    print("\nfive training epochs (m=160, n=51, H=16, batch 16):")
    # backend override via the module-level dispatch
    import losxfer._kernels as kernels
    for name in available_backends():
        backend = get_backend(name)
        old_fwd, old_bwd = kernels.scan_forward, kernels.scan_backward
        kernels.scan_forward, kernels.scan_backward = (backend.scan_forward,
                                                       backend.scan_backward)
        try:
            model = init_model(space, hyper, np.random.default_rng(1))
            t0 = time.perf_counter()
            train(model, (x[:120], y[:120]), (x[120:], y[120:]), config, 7)
            dt = time.perf_counter() - t0
            print(f"  {name:>7}: {dt:.3f}s")
        finally:
            kernels.scan_forward, kernels.scan_backward = old_fwd, old_bwd


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--repeats", type=int, default=30)
    args = parser.parse_args()
    print("available backends:", ", ".join(available_backends()))
    bench_scans(args.repeats)
    if "cython" in available_backends():
        bench_training_epoch()


if __name__ == "__main__":
    main()
