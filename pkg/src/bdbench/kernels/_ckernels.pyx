# cython: boundscheck=False, wraparound=False, cdivision=True
"""Cython kernel backend. Mirrors ``_pykernels`` function by function."""

import numpy as np

cimport numpy as cnp
from libc.math cimport exp, log, sqrt, tanh

cnp.import_array()


def fnv1a_buckets(tokens, long dims):
    """Hash each token to a bucket in [0, dims) via 64-bit FNV-1a over UTF-8."""
    cdef Py_ssize_t n = len(tokens)
    cdef cnp.ndarray[cnp.int64_t, ndim=1] out = np.empty(n, dtype=np.int64)
    cdef cnp.uint64_t h, prime = 0x100000001B3
    cdef cnp.uint64_t mask = <cnp.uint64_t> (dims - 1)
    cdef Py_ssize_t i, j, m
    cdef const unsigned char[:] raw
    for i in range(n):
        raw = tokens[i].encode("utf-8")
        h = 0xCBF29CE484222325
        m = raw.shape[0]
        for j in range(m):
            h = (h ^ <cnp.uint64_t> raw[j]) * prime
        out[i] = <cnp.int64_t> (h & mask)
    return out


def pairwise_distances(X):
    """Full N x N Euclidean distance matrix for an (N, D) float array."""
    cdef double[:, ::1] x = np.ascontiguousarray(X, dtype=np.float64)
    cdef Py_ssize_t n = x.shape[0], d = x.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.zeros((n, n), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, j, k
    cdef double acc, diff
    with nogil:
        for i in range(n):
            for j in range(i + 1, n):
                acc = 0.0
                for k in range(d):
                    diff = x[i, k] - x[j, k]
                    acc += diff * diff
                acc = sqrt(acc)
                o[i, j] = acc
                o[j, i] = acc
    return out


def prim_mst(dists, core):
    """Minimum spanning tree of the implicit mutual-reachability graph.

    Edge weight between a and b is max(core[a], core[b], dists[a, b]).
    Equal-weight candidates are resolved toward the lexicographically
    smallest (min(u, v), max(u, v)) pair. Returns (edges, weights) with
    edges in the order Prim's algorithm added them.
    """
    cdef double[:, ::1] dm = np.ascontiguousarray(dists, dtype=np.float64)
    cdef double[::1] cd = np.ascontiguousarray(core, dtype=np.float64)
    cdef Py_ssize_t n = dm.shape[0]
    cdef cnp.ndarray[cnp.int64_t, ndim=2] edges = np.empty((n - 1, 2), dtype=np.int64)
    cdef cnp.ndarray[cnp.float64_t, ndim=1] weights = np.empty(n - 1, dtype=np.float64)
    cdef cnp.int64_t[:, ::1] ev = edges
    cdef double[::1] wv = weights

    cdef cnp.ndarray in_tree_a = np.zeros(n, dtype=np.uint8)
    cdef cnp.uint8_t[::1] in_tree = in_tree_a
    cdef cnp.ndarray best_w_a = np.full(n, np.inf)
    cdef double[::1] best_w = best_w_a
    cdef cnp.ndarray best_u_a = np.full(n, -1, dtype=np.int64)
    cdef cnp.int64_t[::1] best_u = best_u_a

    cdef Py_ssize_t step, v, current = 0, pick
    cdef double w, cc, pw
    cdef cnp.int64_t lo_new, hi_new, lo_old, hi_old, plo, phi
    in_tree[0] = 1

    with nogil:
        for step in range(n - 1):
            cc = cd[current]
            pick = -1
            pw = 0.0
            plo = 0
            phi = 0
            for v in range(n):
                if in_tree[v]:
                    continue
                w = dm[current, v]
                if cc > w:
                    w = cc
                if cd[v] > w:
                    w = cd[v]
                if current < v:
                    lo_new = current
                    hi_new = v
                else:
                    lo_new = v
                    hi_new = current
                if best_u[v] < v:
                    lo_old = best_u[v]
                    hi_old = v
                else:
                    lo_old = v
                    hi_old = best_u[v]
                if w < best_w[v] or (w == best_w[v] and (lo_new < lo_old or (lo_new == lo_old and hi_new < hi_old))):
                    best_w[v] = w
                    best_u[v] = current
                    lo_old = lo_new
                    hi_old = hi_new
                if pick < 0 or best_w[v] < pw or (best_w[v] == pw and (lo_old < plo or (lo_old == plo and hi_old < phi))):
                    pick = v
                    pw = best_w[v]
                    plo = lo_old
                    phi = hi_old
            ev[step, 0] = best_u[pick]
            ev[step, 1] = pick
            wv[step] = pw
            in_tree[pick] = 1
            current = pick
    return edges, weights


def mlp_hidden(indptr, idx, val, W1, b1):
    """tanh hidden activations for a CSR batch of hashed token counts."""
    cdef cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[::1] vl = np.ascontiguousarray(val, dtype=np.float64)
    cdef double[:, ::1] w1 = W1
    cdef double[::1] bias1 = b1
    cdef Py_ssize_t n = ip.shape[0] - 1, hd = w1.shape[1]
    cdef cnp.ndarray[cnp.float64_t, ndim=2] out = np.empty((n, hd), dtype=np.float64)
    cdef double[:, ::1] o = out
    cdef Py_ssize_t i, t, k, row
    cdef double c
    with nogil:
        for i in range(n):
            for k in range(hd):
                o[i, k] = bias1[k]
            for t in range(ip[i], ip[i + 1]):
                row = ix[t]
                c = vl[t]
                for k in range(hd):
                    o[i, k] += c * w1[row, k]
            for k in range(hd):
                o[i, k] = tanh(o[i, k])
    return out


def sgd_batch_step(indptr, idx, val, y, W1, b1, W2, b2, double lr, double l2):
    """One in-place minibatch SGD step on the two-layer softmax classifier.

    Minimizes mean cross-entropy plus 0.5 * l2 * (|W1|^2 + |W2|^2); the L2
    term enters the update as weight decay on W1/W2 (biases excluded).
    Returns the objective value at the pre-update parameters.
    """
    cdef cnp.int64_t[::1] ip = np.ascontiguousarray(indptr, dtype=np.int64)
    cdef cnp.int64_t[::1] ix = np.ascontiguousarray(idx, dtype=np.int64)
    cdef double[::1] vl = np.ascontiguousarray(val, dtype=np.float64)
    cdef cnp.int64_t[::1] yy = np.ascontiguousarray(y, dtype=np.int64)
    cdef double[:, ::1] w1 = W1
    cdef double[::1] bias1 = b1
    cdef double[:, ::1] w2 = W2
    cdef double[::1] bias2 = b2
    cdef Py_ssize_t n = ip.shape[0] - 1
    cdef Py_ssize_t dims = w1.shape[0], hd = w1.shape[1], nc = w2.shape[1]

    cdef cnp.ndarray h_a = mlp_hidden(indptr, idx, val, W1, b1)
    cdef double[:, ::1] h = h_a
    cdef cnp.ndarray g_a = np.empty((n, nc), dtype=np.float64)
    cdef double[:, ::1] g = g_a
    cdef cnp.ndarray dz_a = np.empty((n, hd), dtype=np.float64)
    cdef double[:, ::1] dz = dz_a

    cdef Py_ssize_t i, j, k, t, row
    cdef double m, s, loss = 0.0, acc, c, decay

    with nogil:
        # softmax row by row; g holds (p - onehot) / n afterwards
        for i in range(n):
            m = -1e300
            for j in range(nc):
                acc = bias2[j]
                for k in range(hd):
                    acc += h[i, k] * w2[k, j]
                g[i, j] = acc
                if acc > m:
                    m = acc
            s = 0.0
            for j in range(nc):
                g[i, j] = exp(g[i, j] - m)
                s += g[i, j]
            for j in range(nc):
                g[i, j] /= s
            loss += -log(g[i, yy[i]])
            for j in range(nc):
                g[i, j] /= n
            g[i, yy[i]] -= 1.0 / n
        loss /= n

        if l2 > 0.0:
            acc = 0.0
            for k in range(dims):
                for j in range(hd):
                    acc += w1[k, j] * w1[k, j]
            for k in range(hd):
                for j in range(nc):
                    acc += w2[k, j] * w2[k, j]
            loss += 0.5 * l2 * acc

        # dz = (1 - h^2) * (g @ W2^T)
        for i in range(n):
            for k in range(hd):
                acc = 0.0
                for j in range(nc):
                    acc += g[i, j] * w2[k, j]
                dz[i, k] = (1.0 - h[i, k] * h[i, k]) * acc

        decay = 1.0 - lr * l2
        if l2 > 0.0:
            for k in range(dims):
                for j in range(hd):
                    w1[k, j] *= decay
            for k in range(hd):
                for j in range(nc):
                    w2[k, j] *= decay

        # second-layer and bias updates
        for k in range(hd):
            for j in range(nc):
                acc = 0.0
                for i in range(n):
                    acc += h[i, k] * g[i, j]
                w2[k, j] -= lr * acc
        for j in range(nc):
            acc = 0.0
            for i in range(n):
                acc += g[i, j]
            bias2[j] -= lr * acc
        for k in range(hd):
            acc = 0.0
            for i in range(n):
                acc += dz[i, k]
            bias1[k] -= lr * acc

        # sparse first-layer update, in CSR order
        for i in range(n):
            for t in range(ip[i], ip[i + 1]):
                row = ix[t]
                c = lr * vl[t]
                for k in range(hd):
                    w1[row, k] -= c * dz[i, k]
    return loss
