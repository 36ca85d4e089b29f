"""Benchmark the compiled kernel backend against the numpy fallback.

Times each hot kernel on a realistic workload (hashed bag-of-words corpus,
pairwise distances and MST at clustering scale, one SGD training epoch) and
reports the speedup plus the worst numeric deviation between backends.

Usage: python benchmarks/bench_kernels.py [--points N] [--repeats K]
"""

import argparse
import time

import numpy as np

from bdbench.kernels import _pykernels as pk

try:
    from bdbench.kernels import _ckernels as ck
except ImportError:
    ck = None


def timeit(fn, repeats):
    best = float("inf")
    result = None
    for _ in range(repeats):
        t0 = time.perf_counter()
        result = fn()
        best = min(best, time.perf_counter() - t0)
    return best, result


def build_corpus(rng, n_docs, doc_len, vocab=400):
    words = [f"token{i:04d}" for i in range(vocab)]
    return [[words[j] for j in rng.integers(vocab, size=doc_len)] for _ in range(n_docs)]


def build_csr(corpus, dims):
    rows = []
    for doc in corpus:
        idx, cnt = np.unique(pk.fnv1a_buckets(doc, dims), return_counts=True)
        rows.append((idx, cnt.astype(np.float64)))
    return rows


def batch_csr(rows, order):
    lengths = np.array([len(rows[i][0]) for i in order], dtype=np.int64)
    indptr = np.zeros(len(order) + 1, dtype=np.int64)
    np.cumsum(lengths, out=indptr[1:])
    idx = np.concatenate([rows[i][0] for i in order])
    val = np.concatenate([rows[i][1] for i in order])
    return indptr, idx, val


def sgd_epoch(backend, rows, labels, dims, hidden, batch_size, seed=0):
    rng = np.random.default_rng(seed)
    W1 = np.zeros((dims, hidden))
    b1 = np.zeros(hidden)
    W2 = rng.normal(0.0, 0.5, size=(hidden, 2))
    b2 = np.zeros(2)
    n = len(rows)
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        order = perm[start : start + batch_size]
        indptr, idx, val = batch_csr(rows, order)
        backend.sgd_batch_step(indptr, idx, val, labels[order], W1, b1, W2, b2, 0.5, 1e-4)
    return W1, W2


def main():
    parser = argparse.ArgumentParser()
    parser.add_argument("--points", type=int, default=2000)
    parser.add_argument("--repeats", type=int, default=3)
    args = parser.parse_args()

    if ck is None:
        print("compiled backend not built; run `pip install -e . --no-build-isolation`")
        return

    rng = np.random.default_rng(0)
    n = args.points
    dims = 2**14
    corpus = build_corpus(rng, n, 15)
    flat = [t for doc in corpus for t in doc]
    rows = build_csr(corpus, dims)
    labels = rng.integers(2, size=n).astype(np.int64)
    Y = rng.normal(size=(n, 10))

    benches = []

    t_py, h_py = timeit(lambda: pk.fnv1a_buckets(flat, dims), args.repeats)
    t_c, h_c = timeit(lambda: ck.fnv1a_buckets(flat, dims), args.repeats)
    benches.append(("fnv1a_buckets (%dk tokens)" % (len(flat) // 1000), t_py, t_c,
                    float(np.max(np.abs(h_py - h_c)))))

    t_py, d_py = timeit(lambda: pk.pairwise_distances(Y), args.repeats)
    t_c, d_c = timeit(lambda: ck.pairwise_distances(Y), args.repeats)
    benches.append((f"pairwise_distances ({n}x10)", t_py, t_c,
                    float(np.max(np.abs(d_py - d_c)))))

    core = np.sort(d_py, axis=1)[:, 25]
    t_py, m_py = timeit(lambda: pk.prim_mst(d_py, core), args.repeats)
    t_c, m_c = timeit(lambda: ck.prim_mst(d_c, core), args.repeats)
    benches.append((f"prim_mst ({n} points)", t_py, t_c,
                    abs(float(m_py[1].sum()) - float(m_c[1].sum()))))

    indptr, idx, val = batch_csr(rows, np.arange(n))
    W1 = rng.normal(0.0, 0.05, size=(dims, 64))
    b1 = np.zeros(64)
    t_py, hid_py = timeit(lambda: pk.mlp_hidden(indptr, idx, val, W1, b1), args.repeats)
    t_c, hid_c = timeit(lambda: ck.mlp_hidden(indptr, idx, val, W1, b1), args.repeats)
    benches.append((f"mlp_hidden ({n} docs)", t_py, t_c,
                    float(np.max(np.abs(hid_py - hid_c)))))

    t_py, (w1p, w2p) = timeit(lambda: sgd_epoch(pk, rows, labels, dims, 64, 32), args.repeats)
    t_c, (w1c, w2c) = timeit(lambda: sgd_epoch(ck, rows, labels, dims, 64, 32), args.repeats)
    dev = max(float(np.max(np.abs(w1p - w1c))), float(np.max(np.abs(w2p - w2c))))
    benches.append((f"sgd epoch ({n} docs, batch 32)", t_py, t_c, dev))

    width = max(len(b[0]) for b in benches)
    print(f"{'kernel':<{width}}  {'numpy':>9}  {'cython':>9}  {'speedup':>7}  {'max dev':>9}")
    for name, t_py, t_c, dev in benches:
        print(f"{name:<{width}}  {t_py * 1e3:8.2f}ms  {t_c * 1e3:8.2f}ms  "
              f"{t_py / t_c:6.1f}x  {dev:9.2e}")


if __name__ == "__main__":
    main()
