#!/usr/bin/env python3
"""Benchmark the numba kernels against their pure-numpy fallbacks.

The active path is whatever REPCL_BACKEND selects (numba by default); the
numpy reference implementations are always importable, so both sides run in
one process. A short end-to-end training-step timing shows the aggregate
effect.

Usage: python benchmarks/bench_kernels.py [--repeats 200]
"""

import argparse
import time

import numpy as np

from repcl import backend


def timeit(fn, repeats):
    fn()  # warmup / JIT compile
    t0 = time.perf_counter()
    for _ in range(repeats):
        fn()
    return (time.perf_counter() - t0) / repeats


def bench_scatter_add(repeats):
    rng = np.random.default_rng(0)
    rows = []
    for n_idx, dim in ((512, 64), (4096, 64), (4096, 256)):
        idx = rng.integers(0, 256, size=n_idx).astype(np.int64)
        src = rng.normal(size=(n_idx, dim))
        out = np.zeros((256, dim))
        t_active = timeit(lambda: backend.scatter_add_rows(out, idx, src), repeats)
        t_numpy = timeit(lambda: backend.numpy_scatter_add_rows(out, idx, src), repeats)
        rows.append(("scatter_add", f"{n_idx}x{dim}", t_active, t_numpy))
    return rows


def bench_gelu(repeats):
    rng = np.random.default_rng(1)
    rows = []
    for shape in ((16, 16, 128), (64, 32, 128), (256, 128)):
        x = rng.normal(size=shape)
        g = rng.normal(size=shape)
        _, t = backend.numpy_gelu_forward(x)
        t_active = timeit(lambda: backend.gelu_forward(x), repeats)
        t_numpy = timeit(lambda: backend.numpy_gelu_forward(x), repeats)
        rows.append(("gelu_fwd", "x".join(map(str, shape)), t_active, t_numpy))
        t_active = timeit(lambda: backend.gelu_backward(x, t, g), repeats)
        t_numpy = timeit(lambda: backend.numpy_gelu_backward(x, t, g), repeats)
        rows.append(("gelu_bwd", "x".join(map(str, shape)), t_active, t_numpy))
    return rows


def bench_kmeans_assign(repeats):
    rng = np.random.default_rng(2)
    rows = []
    for n, k, d in ((200, 10, 64), (2000, 10, 64), (2000, 50, 128)):
        pts = rng.normal(size=(n, d))
        cents = rng.normal(size=(k, d))
        t_active = timeit(lambda: backend.kmeans_assign(pts, cents), repeats)
        t_numpy = timeit(lambda: backend.numpy_kmeans_assign(pts, cents), repeats)
        rows.append(("kmeans_assign", f"{n}pts/{k}k/{d}d", t_active, t_numpy))
    return rows


def bench_train_step(repeats):
    """One optimizer step of the combined initial-stage loss on a small batch."""
    from repcl import autograd as ag
    from repcl.corpus import make_synthetic_corpus, split_tasks
    from repcl.model import EncoderConfig, SequenceClassifier, make_batch
    from repcl.optim import Adam

    instances, vocab, _ = make_synthetic_corpus(4, 20, 12, 24, seed=0)
    stream = split_tasks(instances, 1, 4, seed=0)
    config = EncoderConfig(vocab_size=vocab.size)
    model = SequenceClassifier(config, np.random.default_rng(0))
    model.expand_head([0, 1, 2, 3], np.random.default_rng(1))
    batch = make_batch(stream.tasks[0].train[:16], config)
    targets = np.asarray([model.class_row(l) for l in batch.labels])
    opt = Adam([(list(model.params.values()), 1e-4)])

    def step():
        opt.zero_grad()
        loss = ag.cross_entropy(model.classify(model.representations(batch)), targets)
        loss.backward()
        opt.step()

    return [("train_step(ce)", "batch16/seq12", timeit(step, max(5, repeats // 20)), float("nan"))]


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--repeats", type=int, default=200)
    args = parser.parse_args()

    print(f"active backend: {backend.BACKEND}")
    header = f"{'kernel':16s} {'size':16s} {'active (ms)':>12s} {'numpy (ms)':>12s} {'speedup':>8s}"
    print(header)
    print("-" * len(header))
    rows = []
    rows += bench_scatter_add(args.repeats)
    rows += bench_gelu(args.repeats)
    rows += bench_kmeans_assign(max(20, args.repeats // 10))
    rows += bench_train_step(args.repeats)
    for kernel, size, t_active, t_numpy in rows:
        speed = t_numpy / t_active if t_active and not np.isnan(t_numpy) else float("nan")
        print(
            f"{kernel:16s} {size:16s} {t_active * 1e3:12.4f} {t_numpy * 1e3:12.4f} "
            f"{speed:7.2f}x"
        )


if __name__ == "__main__":
    main()
